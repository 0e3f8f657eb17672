#include "polyreg/motion/io.hpp"

#include "polyreg/errors.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace polyreg::motion {

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void dump(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path);
}

std::uint32_t get_u32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + k])) << (8 * k);
  return v;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

}  // namespace

FlowMap::FlowMap(int w, int h) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw InvalidArgument("flow dimensions must be positive");
  data.assign(2 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0f);
}

Image::Image(int w, int h, int c) : width(w), height(h), channels(c) {
  if (w <= 0 || h <= 0) throw InvalidArgument("image dimensions must be positive");
  if (c != 1 && c != 3) throw InvalidArgument("images have 1 or 3 channels");
  pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), 0);
}

FlowMap read_flo(const std::string& path) {
  const std::string b = slurp(path);
  if (b.size() < 12) throw FormatError(path + ": truncated .flo header");
  if (std::bit_cast<float>(get_u32(b, 0)) != kFloTag) throw FormatError(path + ": bad .flo magic");
  const auto w = static_cast<std::int32_t>(get_u32(b, 4));
  const auto h = static_cast<std::int32_t>(get_u32(b, 8));
  if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16)) throw FormatError(path + ": implausible .flo dimensions");
  FlowMap flow(w, h);
  if (b.size() != 12 + 4 * flow.data.size()) throw FormatError(path + ": .flo payload size does not match header");
  for (std::size_t i = 0; i < flow.data.size(); ++i) flow.data[i] = std::bit_cast<float>(get_u32(b, 12 + 4 * i));
  return flow;
}

void write_flo(const FlowMap& flow, const std::string& path) {
  if (flow.width <= 0 || flow.height <= 0 ||
      flow.data.size() != 2 * static_cast<std::size_t>(flow.width) * static_cast<std::size_t>(flow.height)) {
    throw InvalidArgument("flow map size does not match its dimensions");
  }
  std::string out;
  out.reserve(12 + 4 * flow.data.size());
  put_u32(out, std::bit_cast<std::uint32_t>(kFloTag));
  put_u32(out, static_cast<std::uint32_t>(flow.width));
  put_u32(out, static_cast<std::uint32_t>(flow.height));
  for (float f : flow.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  dump(path, out);
}

namespace {

/// Reads the next whitespace-separated header token, skipping comments.
std::string header_token(const std::string& b, std::size_t& pos, const std::string& path) {
  while (pos < b.size()) {
    const char c = b[pos];
    if (c == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos])) && b[pos] != '#') ++pos;
  if (start == pos) throw FormatError(path + ": truncated PNM header");
  return b.substr(start, pos - start);
}

int header_int(const std::string& b, std::size_t& pos, const std::string& path) {
  const std::string t = header_token(b, pos, path);
  if (t.empty() || t.size() > 9 || t.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError(path + ": malformed PNM header value '" + t + "'");
  }
  return std::stoi(t);
}

}  // namespace

Image read_pnm(const std::string& path) {
  const std::string b = slurp(path);
  std::size_t pos = 0;
  const std::string magic = header_token(b, pos, path);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw FormatError(path + ": unsupported PNM variant '" + magic + "' (binary P5/P6 only)");
  const int w = header_int(b, pos, path);
  const int h = header_int(b, pos, path);
  const int maxval = header_int(b, pos, path);
  if (w <= 0 || h <= 0) throw FormatError(path + ": PNM dimensions must be positive");
  if (maxval != 255) throw FormatError(path + ": only maxval 255 is supported");
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) {
    throw FormatError(path + ": PNM header must end with one whitespace byte");
  }
  ++pos;
  Image img(w, h, channels);
  if (b.size() - pos != img.pixels.size()) throw FormatError(path + ": PNM payload size does not match header");
  std::copy(b.begin() + static_cast<std::ptrdiff_t>(pos), b.end(), img.pixels.begin());
  return img;
}

void write_pnm(const Image& image, const std::string& path) {
  if (image.channels != 1 && image.channels != 3) throw InvalidArgument("images have 1 or 3 channels");
  if (image.pixels.size() !=
      static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height) * static_cast<std::size_t>(image.channels)) {
    throw InvalidArgument("image buffer does not match its dimensions");
  }
  std::string out = (image.channels == 1 ? "P5 " : "P6 ") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + " 255\n";
  out.append(image.pixels.begin(), image.pixels.end());
  dump(path, out);
}

}  // namespace polyreg::motion
