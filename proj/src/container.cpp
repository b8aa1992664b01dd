#include "advml/container.hpp"

#include <bit>
#include <cstring>

#include "advml/data_io.hpp"
#include "advml/error.hpp"

namespace advml {
namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void text(const std::string& s) {
    u32(checked(s.size()));
    bytes(s.data(), s.size());
  }
  static std::uint32_t checked(std::size_t n) {
    if (n > 0xFFFFFFFFu) throw ValueError("container field exceeds 32-bit length");
    return static_cast<std::uint32_t>(n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) throw FormatError(std::string("truncated container while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8, "tensor values");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string text(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 4;
};

}  // namespace

std::vector<std::uint8_t> encode_container(const TensorContainer& c) {
  Writer w;
  w.bytes(kContainerMagic, 4);
  w.text(c.descriptor);
  w.u32(Writer::checked(c.tensors.size()));
  for (const Tensor& t : c.tensors) {
    w.u32(Writer::checked(t.rank()));
    for (std::size_t d : t.shape()) w.u32(Writer::checked(d));
    for (double v : t.data()) w.f64(v);
  }
  w.text(c.metadata);
  return w.take();
}

TensorContainer decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
    throw FormatError("not an AMF1 container (bad magic)");
  }
  Reader r(bytes);
  TensorContainer c;
  c.descriptor = r.text("descriptor");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) throw FormatError("container tensor rank " + std::to_string(rank) + " unsupported");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32("tensor dims"));
      if (shape.back() == 0) throw FormatError("container tensor has a zero dimension");
      n *= shape.back();
      if (n > r.remaining() / 8) throw FormatError("truncated container while reading tensor values");
    }
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    c.tensors.emplace_back(std::move(shape), std::move(values));
  }
  c.metadata = r.text("metadata");
  if (!r.at_end()) throw FormatError("trailing bytes after container metadata");
  return c;
}

void write_container(const std::filesystem::path& path, const TensorContainer& c) {
  write_file_bytes(path, encode_container(c));
}

TensorContainer read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

}  // namespace advml
