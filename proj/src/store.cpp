// SPDX-License-Identifier: Apache-2.0
#include "capengine/store.hpp"

#include <atomic>
#include <fstream>
#include <regex>
#include <sstream>

#include <unistd.h>

#include "capengine/error.hpp"
#include "capengine/text.hpp"
#include "capengine/wire.hpp"

namespace capengine {

namespace fs = std::filesystem;

namespace {

bool is_image_id(const std::string& id) {
  static const std::regex kPattern("[0-9a-f]{64}");
  return std::regex_match(id, kPattern);
}

bool is_mask_id(const std::string& id) {
  static const std::regex kPattern("m[1-9][0-9]*");
  return std::regex_match(id, kPattern);
}

bool is_session_id(const std::string& id) {
  static const std::regex kPattern("s[0-9]+-[0-9a-f]{1,8}");
  return std::regex_match(id, kPattern);
}

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || ::access(dir.c_str(), W_OK) != 0) {
    throw Error(ErrorCode::kConfig, "directory not writable: " + dir.string());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ojson session_header(const ChatSession& s) {
  ojson h;
  h["type"] = "session";
  h["id"] = s.id;
  h["image_id"] = s.image_id;
  h["mask"] = to_wire(s.mask);
  h["seed_caption"] = s.seed_caption;
  h["system_prompt"] = s.system_prompt.text;
  return h;
}

std::string message_line(const ChatMessage& m) {
  ojson line = to_wire(m);
  line["type"] = "message";
  return line.dump() + "\n";
}

}  // namespace

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<std::uint64_t> counter{0};
  const auto tmp = path.parent_path() /
                   ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()) + "-" +
                    std::to_string(counter++));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kConfig, "cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::kConfig, "cannot move into place: " + path.string());
  }
}

// ---------------------------------------------------------------------------

ImageStore::ImageStore(fs::path root) : dir_(std::move(root) / "images") { ensure_writable_dir(dir_); }

std::optional<fs::path> ImageStore::find_file(const std::string& id) const {
  for (const auto fmt : {ImageFormat::kPng, ImageFormat::kJpeg}) {
    auto p = dir_ / (id + "." + std::string(extension(fmt)));
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

StoredImage ImageStore::put(std::span<const std::uint8_t> bytes) {
  auto decoded = decode_image(bytes);
  StoredImage stored{sha256_hex(bytes), decoded.image.dims(), decoded.format};

  std::lock_guard lock(mutex_);
  const auto path = dir_ / (stored.id + "." + std::string(extension(stored.format)));
  if (!fs::exists(path)) write_file_atomic(path, bytes);
  decoded_.try_emplace(stored.id, std::make_shared<const RgbImage>(std::move(decoded.image)));
  return stored;
}

std::shared_ptr<const RgbImage> ImageStore::get(const std::string& id) {
  if (!is_image_id(id)) return nullptr;
  std::lock_guard lock(mutex_);
  if (const auto it = decoded_.find(id); it != decoded_.end()) return it->second;
  const auto path = find_file(id);
  if (!path) return nullptr;
  auto image = std::make_shared<const RgbImage>(load_image(*path).image);
  decoded_.emplace(id, image);
  return image;
}

bool ImageStore::contains(const std::string& id) { return get(id) != nullptr; }

// ---------------------------------------------------------------------------

MaskStore::MaskStore(fs::path root) : dir_(std::move(root) / "masks") { ensure_writable_dir(dir_); }

MaskStore::ImageMasks& MaskStore::load(const std::string& image_id) {
  if (const auto it = images_.find(image_id); it != images_.end()) return it->second;
  ImageMasks masks;
  const auto dir = dir_ / image_id;
  if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto& p = entry.path();
      const auto id = p.stem().string();
      if (p.extension() != ".rle" || !is_mask_id(id)) continue;
      const auto text = read_text(p);
      auto rle = rle_from_text(text);
      masks.id_by_text.emplace(rle_to_text(rle), id);
      masks.by_id.emplace(id, std::move(rle));
      masks.next = std::max<std::uint64_t>(masks.next, std::stoull(id.substr(1)) + 1);
    }
  }
  return images_.emplace(image_id, std::move(masks)).first->second;
}

std::string MaskStore::put(const std::string& image_id, const RleMask& mask) {
  if (!is_image_id(image_id)) throw Error(ErrorCode::kUnknownImage, image_id);
  validate_rle(mask);
  const auto text = rle_to_text(mask);

  std::lock_guard lock(mutex_);
  auto& masks = load(image_id);
  if (const auto it = masks.id_by_text.find(text); it != masks.id_by_text.end()) return it->second;

  const auto id = "m" + std::to_string(masks.next++);
  fs::create_directories(dir_ / image_id);
  write_file_atomic(dir_ / image_id / (id + ".rle"),
                    std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  masks.id_by_text.emplace(text, id);
  masks.by_id.emplace(id, mask);
  return id;
}

std::optional<RleMask> MaskStore::get(const std::string& image_id, const std::string& mask_id) {
  if (!is_image_id(image_id) || !is_mask_id(mask_id)) return std::nullopt;
  std::lock_guard lock(mutex_);
  auto& masks = load(image_id);
  const auto it = masks.by_id.find(mask_id);
  if (it == masks.by_id.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------

SessionStore::SessionStore(fs::path root) : dir_(std::move(root) / "sessions") { ensure_writable_dir(dir_); }

std::uint64_t SessionStore::load_all() {
  std::lock_guard lock(mutex_);
  std::uint64_t max_number = 0;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    const auto& p = entry.path();
    if (p.extension() != ".log" || !is_session_id(p.stem().string())) continue;

    ChatSession session;
    bool have_header = false;
    for (const auto& line : split_lines(read_text(p))) {
      if (trim(line).empty()) continue;
      const auto rec = ojson::parse(line, nullptr, false);
      // A torn final line from a crash is skipped.
      if (rec.is_discarded() || !rec.is_object()) continue;
      const auto type = rec.value("type", "");
      if (type == "session") {
        session.id = rec.at("id").get<std::string>();
        session.image_id = rec.at("image_id").get<std::string>();
        session.mask = rle_from_wire(rec.at("mask"));
        session.seed_caption = rec.at("seed_caption").get<std::string>();
        session.system_prompt.text = rec.at("system_prompt").get<std::string>();
        have_header = true;
      } else if (type == "message" && have_header) {
        session.messages.push_back(chat_message_from_wire(rec));
      }
    }
    if (!have_header) continue;
    const auto dash = session.id.find('-');
    max_number = std::max<std::uint64_t>(max_number, std::stoull(session.id.substr(1, dash - 1)));
    sessions_[session.id] = std::move(session);
  }
  return max_number;
}

void SessionStore::append_lines(const std::string& session_id, const std::string& lines) {
  std::ofstream out(dir_ / (session_id + ".log"), std::ios::app | std::ios::binary);
  out << lines;
  out.flush();
  if (!out) throw Error(ErrorCode::kConfig, "cannot append to session log " + session_id);
}

void SessionStore::create(const ChatSession& session) {
  std::lock_guard lock(mutex_);
  append_lines(session.id, session_header(session).dump() + "\n");
  auto stored = session;
  stored.busy = false;
  sessions_[session.id] = std::move(stored);
}

ChatSession SessionStore::acquire(const std::string& session_id, const std::string& image_id) {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end() || it->second.image_id != image_id) {
    throw Error(ErrorCode::kUnknownSession, session_id);
  }
  if (it->second.busy) throw Error(ErrorCode::kSessionBusy, session_id);
  it->second.busy = true;
  auto snapshot = it->second;
  snapshot.busy = false;
  return snapshot;
}

void SessionStore::commit(const ChatSession& updated, std::size_t previous_message_count) {
  std::string lines;
  for (std::size_t i = previous_message_count; i < updated.messages.size(); ++i) {
    lines += message_line(updated.messages[i]);
  }
  std::lock_guard lock(mutex_);
  auto& stored = sessions_.at(updated.id);
  try {
    append_lines(updated.id, lines);
  } catch (...) {
    stored.busy = false;
    throw;
  }
  stored.messages = updated.messages;
  stored.busy = false;
}

void SessionStore::release(const std::string& session_id) {
  std::lock_guard lock(mutex_);
  if (const auto it = sessions_.find(session_id); it != sessions_.end()) it->second.busy = false;
}

std::optional<ChatSession> SessionStore::get(const std::string& session_id) {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

}  // namespace capengine
