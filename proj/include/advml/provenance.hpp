#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace advml {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(const Digest& digest);
Digest digest_from_hex(std::string_view hex);

/// Lowercase hex SHA-256 of a file's bytes.
std::string file_digest_hex(const std::filesystem::path& path);

enum class Verdict { match, tampered, unknown };

std::string_view to_string(Verdict v) noexcept;

struct RegistryEntry {
  Digest digest{};
  std::string registered_at;  // ISO-8601 UTC
  std::string source;
};

/// Point-of-capture hash registry: the SHA-256 of each image's canonical
/// encoded bytes, keyed by image id. Backed by an append-only CSV
/// `image_id,hex_digest,timestamp,source`; entries never change once written.
///
/// Writes are single-writer; concurrent `verify` calls on a registry that is
/// not being written are safe.
class HashRegistry {
 public:
  /// In-memory registry with no backing file.
  HashRegistry() = default;

  /// Opens (or starts) the registry file at `path`; existing rows are loaded
  /// and later registrations are appended to it.
  explicit HashRegistry(std::filesystem::path path);

  /// Throws ValueError if `image_id` is already registered. `timestamp`
  /// empty means the current UTC time.
  void register_image(const std::string& image_id, std::span<const std::uint8_t> image_bytes,
                      const std::string& source, std::string timestamp = {});

  Verdict verify(const std::string& image_id, std::span<const std::uint8_t> image_bytes) const;

  bool contains(const std::string& image_id) const { return entries_.contains(image_id); }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<std::string, RegistryEntry>& entries() const noexcept { return entries_; }

 private:
  std::filesystem::path path_;
  std::map<std::string, RegistryEntry> entries_;
};

inline constexpr std::string_view kRegistryHeader = "image_id,hex_digest,timestamp,source";

std::string utc_timestamp_now();

}  // namespace advml
