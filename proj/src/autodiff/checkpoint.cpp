#include "polyreg/autodiff/checkpoint.hpp"

#include "polyreg/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace polyreg::ad {

namespace {

constexpr char kMagic[8] = {'P', 'O', 'L', 'Y', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(b)])) << (8 * b);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(path_ + ": truncated checkpoint");
  }

  const std::string& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const NamedArray& a : arrays) {
    if (element_count(a.shape) != a.values.size()) {
      throw InvalidArgument("checkpoint entry '" + a.name + "' has shape " + shape_string(a.shape) + " but " +
                            std::to_string(a.values.size()) + " values");
    }
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (int d : a.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : a.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing " + path);
}

std::vector<NamedArray> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader in(bytes, path);
  if (in.text(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw FormatError(path + ": not a checkpoint");
  const auto version = in.uint(4);
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.uint(4);
  std::vector<NamedArray> arrays;
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = in.text(in.uint(4));
    const auto ndim = in.uint(4);
    if (ndim > 8) throw FormatError(path + ": implausible rank for '" + a.name + "'");
    for (std::uint64_t d = 0; d < ndim; ++d) a.shape.push_back(static_cast<int>(static_cast<std::int32_t>(in.uint(4))));
    std::size_t n = 1;
    for (int d : a.shape) {
      if (d < 0) throw FormatError(path + ": negative dimension in '" + a.name + "'");
      n *= static_cast<std::size_t>(d);
    }
    if (n > bytes.size()) throw FormatError(path + ": truncated checkpoint");
    a.values.resize(n);
    for (double& v : a.values) v = std::bit_cast<double>(in.uint(8));
    arrays.push_back(std::move(a));
  }
  if (!in.at_end()) throw FormatError(path + ": trailing bytes after checkpoint");
  return arrays;
}

}  // namespace polyreg::ad
