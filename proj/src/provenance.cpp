#include "advml/provenance.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "advml/data_io.hpp"
#include "advml/error.hpp"

namespace advml {

Digest sha256(std::span<const std::uint8_t> bytes) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size()) {
    throw Error("SHA-256 computation failed");
  }
  return out;
}

std::string to_hex(const Digest& digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (std::uint8_t b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

Digest digest_from_hex(std::string_view hex) {
  if (hex.size() != 64) throw FormatError("digest must be 64 hex characters");
  auto nibble = [](char c) -> std::uint8_t {
    if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
    throw FormatError(std::string("digest has non-lowercase-hex character '") + c + "'");
  };
  Digest d{};
  for (std::size_t i = 0; i < 32; ++i) {
    d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return d;
}

std::string file_digest_hex(const std::filesystem::path& path) {
  return to_hex(sha256(read_file_bytes(path)));
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::match:
      return "match";
    case Verdict::tampered:
      return "tampered";
    case Verdict::unknown:
      return "unknown";
  }
  return "unknown";
}

std::string utc_timestamp_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

HashRegistry::HashRegistry(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::istringstream in(read_text_file(path_));
  std::string line;
  if (!std::getline(in, line) || line != kRegistryHeader) {
    throw FormatError(path_.string() + ": registry header must be '" + std::string(kRegistryHeader) + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    for (std::string field; std::getline(fields, field, ',');) f.push_back(field);
    if (line.back() == ',') f.emplace_back();
    const std::string where = path_.string() + ":" + std::to_string(line_no);
    if (f.size() != 4) throw FormatError(where + ": expected 4 fields");
    if (entries_.contains(f[0])) throw FormatError(where + ": duplicate image_id '" + f[0] + "'");
    entries_.emplace(f[0], RegistryEntry{digest_from_hex(f[1]), f[2], f[3]});
  }
}

void HashRegistry::register_image(const std::string& image_id, std::span<const std::uint8_t> image_bytes,
                                  const std::string& source, std::string timestamp) {
  if (image_id.empty()) throw ValueError("register: empty image_id");
  for (const std::string* field : {&image_id, &source, static_cast<const std::string*>(&timestamp)}) {
    if (field->find_first_of(",\n\r") != std::string::npos) {
      throw ValueError("register: field '" + *field + "' contains a separator");
    }
  }
  if (entries_.contains(image_id)) throw ValueError("image_id '" + image_id + "' is already registered");
  if (timestamp.empty()) timestamp = utc_timestamp_now();
  RegistryEntry entry{sha256(image_bytes), std::move(timestamp), source};

  if (!path_.empty()) {
    const bool fresh = !std::filesystem::exists(path_);
    if (fresh && path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to registry '" + path_.string() + "'");
    if (fresh) out << kRegistryHeader << '\n';
    out << image_id << ',' << to_hex(entry.digest) << ',' << entry.registered_at << ',' << entry.source
        << '\n';
    out.flush();
    if (!out) throw IoError("write failed for registry '" + path_.string() + "'");
  }
  entries_.emplace(image_id, std::move(entry));
}

Verdict HashRegistry::verify(const std::string& image_id, std::span<const std::uint8_t> image_bytes) const {
  const auto it = entries_.find(image_id);
  if (it == entries_.end()) return Verdict::unknown;
  return sha256(image_bytes) == it->second.digest ? Verdict::match : Verdict::tampered;
}

}  // namespace advml
