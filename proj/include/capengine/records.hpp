// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "capengine/geometry.hpp"

namespace capengine {

struct OcrLine {
  std::string text;
  BoxRegion box;
  double confidence = 0.0;
  friend bool operator==(const OcrLine&, const OcrLine&) = default;
};

/// One region of a caption-everything run.
struct DenseCaption {
  std::string mask_id;
  BoxRegion bbox;
  std::size_t area = 0;
  std::string caption;
  RleMask mask;
  friend bool operator==(const DenseCaption&, const DenseCaption&) = default;
};

}  // namespace capengine
