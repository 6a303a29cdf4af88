// SPDX-License-Identifier: Apache-2.0
//
// Plain-file persistence under a store root:
//
//   images/<sha256>.<png|jpg>          content-addressed uploads
//   masks/<image_id>/<mask_id>.rle     RLE textual form, ids m1, m2, ...
//   sessions/<session_id>.log          append-only JSON lines
//
// All whole-file writes go through a temporary file and a rename.
#pragma once

#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "capengine/chat.hpp"
#include "capengine/geometry.hpp"
#include "capengine/image_codec.hpp"

namespace capengine {

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

struct StoredImage {
  std::string id;
  ImageDims dims;
  ImageFormat format = ImageFormat::kPng;
};

class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path root);

  /// Decodes (Undecodable on failure), stores idempotently and returns the
  /// content id.
  StoredImage put(std::span<const std::uint8_t> bytes);

  /// nullptr if the id is unknown.
  std::shared_ptr<const RgbImage> get(const std::string& id);
  bool contains(const std::string& id);

 private:
  std::optional<std::filesystem::path> find_file(const std::string& id) const;

  std::filesystem::path dir_;
  std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<const RgbImage>> decoded_;
};

class MaskStore {
 public:
  explicit MaskStore(std::filesystem::path root);

  /// Returns the existing id when an identical mask is already stored for the
  /// image, otherwise allocates the next sequential id.
  std::string put(const std::string& image_id, const RleMask& mask);
  std::optional<RleMask> get(const std::string& image_id, const std::string& mask_id);

 private:
  struct ImageMasks {
    std::map<std::string, std::string> id_by_text;
    std::map<std::string, RleMask> by_id;
    std::uint64_t next = 1;
  };
  ImageMasks& load(const std::string& image_id);

  std::filesystem::path dir_;
  std::mutex mutex_;
  std::unordered_map<std::string, ImageMasks> images_;
};

class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root);

  /// Replays every session log; returns the highest session number seen.
  std::uint64_t load_all();

  void create(const ChatSession& session);

  /// Marks the session busy and returns a snapshot of it. Throws
  /// UnknownSession (also when it belongs to another image) or SessionBusy.
  ChatSession acquire(const std::string& session_id, const std::string& image_id);
  /// Appends the new messages, stores the session and clears busy.
  void commit(const ChatSession& updated, std::size_t previous_message_count);
  void release(const std::string& session_id);

  std::optional<ChatSession> get(const std::string& session_id);

 private:
  void append_lines(const std::string& session_id, const std::string& lines);

  std::filesystem::path dir_;
  std::mutex mutex_;
  std::unordered_map<std::string, ChatSession> sessions_;
};

/// Least-recently-used map with a fixed capacity.
template <typename Key, typename Value>
class LruCache {
 public:
  explicit LruCache(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  std::optional<Value> get(const Key& key) {
    const auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    entries_.splice(entries_.begin(), entries_, it->second);
    return it->second->second;
  }

  void put(const Key& key, Value value) {
    if (const auto it = index_.find(key); it != index_.end()) {
      it->second->second = std::move(value);
      entries_.splice(entries_.begin(), entries_, it->second);
      return;
    }
    entries_.emplace_front(key, std::move(value));
    index_[key] = entries_.begin();
    if (entries_.size() > capacity_) {
      index_.erase(entries_.back().first);
      entries_.pop_back();
    }
  }

  bool contains(const Key& key) const { return index_.count(key) != 0; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::list<std::pair<Key, Value>> entries_;
  std::unordered_map<Key, typename std::list<std::pair<Key, Value>>::iterator> index_;
};

}  // namespace capengine
