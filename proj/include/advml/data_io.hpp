#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advml/tensor.hpp"

namespace advml {

/// One image with its label and grouping. Pixels are [C,H,W] in [0,1].
struct LabeledImage {
  Tensor pixels;
  int label = 0;  // 0 = healthy, 1 = diseased
  std::string patient_id;
  std::string image_id;
};

enum class SplitTag { unsplit, train, test };

std::string_view to_string(SplitTag tag) noexcept;

/// Manifest row; `path` is relative to the dataset root.
struct ManifestRow {
  std::string image_id;
  std::string patient_id;
  int label = 0;
  std::string path;

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

/// Immutable-after-construction image collection. `paths[i]` belongs to
/// `images[i]`.
struct Dataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> paths;
  SplitTag split = SplitTag::unsplit;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }
  std::vector<ManifestRow> manifest() const;
  std::size_t count_label(int label) const;
};

/// Throws ValueError on empty ids, duplicate image ids, labels outside
/// {0,1}, pixels outside [0,1], mixed image shapes, or a paths/images
/// length mismatch.
void validate(const Dataset& ds);

/// Stacks images[indices] into [N,C,H,W]; labels in the same order.
Tensor batch_pixels(const Dataset& ds, std::span<const std::size_t> indices);
std::vector<int> batch_labels(const Dataset& ds, std::span<const std::size_t> indices);
Tensor all_pixels(const Dataset& ds);
std::vector<int> all_labels(const Dataset& ds);

// --- synthetic data ---------------------------------------------------------

inline constexpr std::size_t kSyntheticSide = 32;

/// Deterministic two-class 32x32 grayscale set. Each patient has a smooth
/// background texture shared by all of their images; diseased images carry
/// 1-3 soft-edged bright ellipses, healthy ones 1-3 dark ones. Every
/// image gets N(0, 0.05^2) pixel noise.
/// Image j of patient i is diseased iff (i + j) is odd.
Dataset generate_synthetic(std::size_t n_patients, std::size_t images_per_patient,
                           std::uint64_t seed);

/// Assigns each patient to the test side with probability `test_fraction`
/// using a stream from `seed`; a patient's images all follow it. Throws
/// ValueError when either side ends up empty or single-class.
std::pair<Dataset, Dataset> split_by_patient(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed);

// --- PGM / PPM --------------------------------------------------------------

/// Binary PGM (P5, C=1) or PPM (P6, C=3), maxval 255, one space after
/// maxval. Pixel p is stored as round(p * 255).
std::vector<std::uint8_t> encode_pnm(const Tensor& pixels);
Tensor decode_pnm(std::span<const std::uint8_t> bytes);

Tensor load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Tensor& pixels);

/// Snaps every pixel to the 8-bit grid the file encoding would produce.
Tensor quantize(const Tensor& pixels);

// --- manifests --------------------------------------------------------------

inline constexpr std::string_view kManifestHeader = "image_id,patient_id,label,path";

/// Parses a manifest CSV. Paths are checked for existence relative to the
/// manifest's directory.
std::vector<ManifestRow> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows);

/// Reads a manifest and every image it lists.
Dataset load_dataset(const std::filesystem::path& manifest_path, SplitTag split = SplitTag::unsplit);

/// Writes every image to root/paths[i] and the manifest to root/manifest_name.
void save_dataset(const std::filesystem::path& root, const Dataset& ds,
                  const std::string& manifest_name);

// --- small file helpers shared across modules -------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace advml
