#include "advml/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

#include "advml/error.hpp"
#include "advml/rng.hpp"

namespace advml {

namespace fs = std::filesystem;

std::string_view to_string(SplitTag tag) noexcept {
  switch (tag) {
    case SplitTag::train:
      return "train";
    case SplitTag::test:
      return "test";
    case SplitTag::unsplit:
      return "unsplit";
  }
  return "unsplit";
}

std::vector<ManifestRow> Dataset::manifest() const {
  std::vector<ManifestRow> rows;
  rows.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    rows.push_back({im.image_id, im.patient_id, im.label, i < paths.size() ? paths[i] : ""});
  }
  return rows;
}

std::size_t Dataset::count_label(int label) const {
  return static_cast<std::size_t>(std::count_if(
      images.begin(), images.end(), [label](const LabeledImage& im) { return im.label == label; }));
}

void validate(const Dataset& ds) {
  if (!ds.paths.empty() && ds.paths.size() != ds.images.size()) {
    throw ValueError("dataset has " + std::to_string(ds.images.size()) + " images but " +
                     std::to_string(ds.paths.size()) + " manifest paths");
  }
  std::unordered_set<std::string> seen;
  for (const auto& im : ds.images) {
    if (im.image_id.empty() || im.patient_id.empty()) throw ValueError("image with empty id");
    if (!seen.insert(im.image_id).second) throw ValueError("duplicate image_id '" + im.image_id + "'");
    if (im.label != 0 && im.label != 1) {
      throw ValueError("label " + std::to_string(im.label) + " of '" + im.image_id +
                       "' is outside {0,1}");
    }
    if (im.pixels.rank() != 3) {
      throw ShapeError("image '" + im.image_id + "' must be [C,H,W], got " +
                       shape_string(im.pixels.shape()));
    }
    if (im.pixels.shape() != ds.images.front().pixels.shape()) {
      throw ShapeError("image '" + im.image_id + "' has shape " + shape_string(im.pixels.shape()) +
                       ", expected " + shape_string(ds.images.front().pixels.shape()));
    }
    for (double v : im.pixels.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValueError("pixel outside [0,1] in '" + im.image_id + "'");
    }
  }
}

Tensor batch_pixels(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValueError("empty batch");
  const Shape& inner = ds.images.at(indices[0]).pixels.shape();
  Shape shape{indices.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(element_count(shape));
  for (std::size_t i : indices) {
    const auto& px = ds.images.at(i).pixels.storage();
    data.insert(data.end(), px.begin(), px.end());
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<int> batch_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(ds.images.at(i).label);
  return labels;
}

namespace {
std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}
}  // namespace

Tensor all_pixels(const Dataset& ds) { return batch_pixels(ds, iota_indices(ds.size())); }

std::vector<int> all_labels(const Dataset& ds) { return batch_labels(ds, iota_indices(ds.size())); }

// --- synthetic ----------------------------------------------------------------

namespace {

struct Wave {
  double amplitude, fx, fy, phase;
};

constexpr double kHealthySpotGain = 1.5;

struct PatientLook {
  double base;
  std::vector<Wave> waves;
};

PatientLook draw_patient(Rng& rng) {
  PatientLook look;
  look.base = 0.30 + 0.03 * rng.uniform();
  for (int k = 0; k < 3; ++k) {
    look.waves.push_back({0.005 + 0.01 * rng.uniform(), static_cast<double>(1 + rng.uniform_int(3)),
                          static_cast<double>(1 + rng.uniform_int(3)),
                          2.0 * std::numbers::pi * rng.uniform()});
  }
  return look;
}

// Soft-edged ellipse, radii 6..9 px, peak gain * (0.04..0.05).
void paint_blob(std::vector<double>& img, Rng& rng, double gain) {
  const double side = static_cast<double>(kSyntheticSide);
  const double cy = 5.0 + (side - 10.0) * rng.uniform();
  const double cx = 5.0 + (side - 10.0) * rng.uniform();
  const double ry = 6.0 + 3.0 * rng.uniform();
  const double rx = 6.0 + 3.0 * rng.uniform();
  const double angle = std::numbers::pi * rng.uniform();
  const double amplitude = gain * (0.04 + 0.01 * rng.uniform());
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < kSyntheticSide; ++y) {
    for (std::size_t x = 0; x < kSyntheticSide; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double u = (ca * dx + sa * dy) / rx;
      const double v = (-sa * dx + ca * dy) / ry;
      const double r = std::sqrt(u * u + v * v);
      // Logistic falloff gives the soft rim.
      img[y * kSyntheticSide + x] += amplitude / (1.0 + std::exp(6.0 * (r - 1.0)));
    }
  }
}

}  // namespace

Dataset generate_synthetic(std::size_t n_patients, std::size_t images_per_patient,
                           std::uint64_t seed) {
  if (n_patients < 2) throw ValueError("generate_synthetic: need at least 2 patients");
  if (images_per_patient < 1) throw ValueError("generate_synthetic: need at least 1 image per patient");
  Dataset ds;
  ds.images.reserve(n_patients * images_per_patient);
  const std::size_t area = kSyntheticSide * kSyntheticSide;
  for (std::size_t p = 0; p < n_patients; ++p) {
    Rng patient_rng = Rng::stream(seed, "synthetic/patient", p);
    const PatientLook look = draw_patient(patient_rng);
    std::vector<double> background(area);
    for (std::size_t y = 0; y < kSyntheticSide; ++y) {
      for (std::size_t x = 0; x < kSyntheticSide; ++x) {
        double v = look.base;
        for (const Wave& w : look.waves) {
          v += w.amplitude * std::sin(2.0 * std::numbers::pi *
                                          (w.fx * static_cast<double>(x) + w.fy * static_cast<double>(y)) /
                                          static_cast<double>(kSyntheticSide) +
                                      w.phase);
        }
        background[y * kSyntheticSide + x] = v;
      }
    }
    const std::string patient_id = "p" + std::to_string(p);
    for (std::size_t j = 0; j < images_per_patient; ++j) {
      Rng rng = Rng::stream(seed, "synthetic/image", p * images_per_patient + j);
      std::vector<double> img = background;
      const int label = static_cast<int>((p + j) % 2);
      // 1-3 bright lesions (diseased) or darker spots (healthy); total
      // contrast is shared between them.
      const auto blobs = 1 + rng.uniform_int(3);
      const double gain = (label == 1 ? 1.0 : -kHealthySpotGain) / static_cast<double>(blobs);
      for (std::uint64_t k = 0; k < blobs; ++k) paint_blob(img, rng, gain);
      for (double& v : img) v = std::clamp(v + 0.05 * rng.normal(), 0.0, 1.0);
      std::string image_id = patient_id + "_i" + std::to_string(j);
      ds.paths.push_back("images/" + image_id + ".pgm");
      ds.images.push_back({Tensor(Shape{1, kSyntheticSide, kSyntheticSide}, std::move(img)), label,
                           patient_id, std::move(image_id)});
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_by_patient(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValueError("split_by_patient: test_fraction must be in (0,1)");
  }
  // Patients in order of first appearance, so the assignment does not
  // depend on how ids sort.
  std::vector<std::string> patients;
  std::set<std::string> known;
  for (const auto& im : ds.images) {
    if (known.insert(im.patient_id).second) patients.push_back(im.patient_id);
  }
  if (patients.size() < 2) throw ValueError("split_by_patient: need at least 2 patients");

  Rng rng = Rng::stream(seed, "split");
  std::set<std::string> test_patients;
  for (const auto& p : patients) {
    if (rng.bernoulli(test_fraction)) test_patients.insert(p);
  }
  Dataset train, test;
  train.split = SplitTag::train;
  test.split = SplitTag::test;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Dataset& side = test_patients.contains(ds.images[i].patient_id) ? test : train;
    side.images.push_back(ds.images[i]);
    if (i < ds.paths.size()) side.paths.push_back(ds.paths[i]);
  }
  for (const Dataset* side : {&train, &test}) {
    const char* name = side == &train ? "train" : "test";
    if (side->empty()) {
      throw ValueError(std::string("split_by_patient: ") + name + " side is empty; retry with another seed");
    }
    if (side->count_label(0) == 0 || side->count_label(1) == 0) {
      throw ValueError(std::string("split_by_patient: ") + name +
                       " side has a single class; retry with another seed");
    }
  }
  return {std::move(train), std::move(test)};
}

// --- PNM ----------------------------------------------------------------------

namespace {

std::uint8_t to_byte(double p) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0));
}

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      ++pos_;
      if (++digits > 9) throw FormatError(std::string("PNM header: ") + what + " too large");
    }
    if (digits == 0) throw FormatError(std::string("PNM header: missing ") + what);
    return value;
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError("PNM header: expected whitespace after maxval");
    }
    ++pos_;
  }

  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

std::vector<std::uint8_t> encode_pnm(const Tensor& pixels) {
  if (pixels.rank() != 3 || (pixels.dim(0) != 1 && pixels.dim(0) != 3)) {
    throw ShapeError("encode_pnm: expected [1,H,W] or [3,H,W], got " + shape_string(pixels.shape()));
  }
  const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  const std::string header =
      std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + c * h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) out.push_back(to_byte(pixels[ch * h * w + i]));
  }
  return out;
}

Tensor decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("not a binary PGM/PPM file (expected P5 or P6 magic)");
  }
  const std::size_t c = bytes[1] == '5' ? 1 : 3;
  HeaderReader reader(bytes);
  const std::size_t w = reader.number("width");
  const std::size_t h = reader.number("height");
  const std::size_t maxval = reader.number("maxval");
  if (w == 0 || h == 0) throw FormatError("PNM header: zero dimension");
  if (maxval != 255) throw FormatError("unsupported PNM maxval " + std::to_string(maxval) + " (only 255)");
  reader.single_whitespace();
  const std::size_t offset = reader.position();
  const std::size_t need = c * h * w;
  if (bytes.size() - offset < need) {
    throw FormatError("truncated PNM payload: need " + std::to_string(need) + " bytes, have " +
                      std::to_string(bytes.size() - offset));
  }
  Tensor pixels(Shape{c, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      pixels[ch * h * w + i] = bytes[offset + i * c + ch] / 255.0;
    }
  }
  return pixels;
}

Tensor load_image(const fs::path& path) { return decode_pnm(read_file_bytes(path)); }

void save_image(const fs::path& path, const Tensor& pixels) {
  write_file_bytes(path, encode_pnm(pixels));
}

Tensor quantize(const Tensor& pixels) {
  Tensor out = pixels;
  for (double& v : out.storage()) v = to_byte(v) / 255.0;
  return out;
}

// --- manifests ------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::vector<ManifestRow> load_manifest(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty manifest (missing header)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) {
    throw FormatError(path.string() + ": manifest header must be '" + std::string(kManifestHeader) + "'");
  }
  const fs::path root = path.parent_path();
  std::vector<ManifestRow> rows;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (f.size() != 4) throw FormatError(where + ": expected 4 fields");
    if (f[0].empty() || f[1].empty()) throw ValueError(where + ": empty id");
    if (f[2] != "0" && f[2] != "1") throw ValueError(where + ": label '" + f[2] + "' outside {0,1}");
    if (!seen.insert(f[0]).second) throw ValueError(where + ": duplicate image_id '" + f[0] + "'");
    if (!fs::exists(root / f[3])) throw IoError(where + ": missing file '" + f[3] + "'");
    rows.push_back({f[0], f[1], f[2] == "1" ? 1 : 0, f[3]});
  }
  return rows;
}

void save_manifest(const fs::path& path, std::span<const ManifestRow> rows) {
  std::string text(kManifestHeader);
  text += '\n';
  for (const auto& r : rows) {
    for (const std::string* field : {&r.image_id, &r.patient_id, &r.path}) {
      if (field->find_first_of(",\n\r") != std::string::npos) {
        throw ValueError("manifest field '" + *field + "' contains a separator");
      }
    }
    text += r.image_id + ',' + r.patient_id + ',' + std::to_string(r.label) + ',' + r.path + '\n';
  }
  write_text_file(path, text);
}

Dataset load_dataset(const fs::path& manifest_path, SplitTag split) {
  const auto rows = load_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  Dataset ds;
  ds.split = split;
  for (const auto& r : rows) {
    ds.images.push_back({load_image(root / r.path), r.label, r.patient_id, r.image_id});
    ds.paths.push_back(r.path);
  }
  validate(ds);
  return ds;
}

void save_dataset(const fs::path& root, const Dataset& ds, const std::string& manifest_name) {
  if (ds.paths.size() != ds.images.size()) throw ValueError("save_dataset: every image needs a path");
  for (std::size_t i = 0; i < ds.size(); ++i) save_image(root / ds.paths[i], ds.images[i].pixels);
  save_manifest(root / manifest_name, ds.manifest());
}

// --- file helpers -----------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text_file(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const fs::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace advml
