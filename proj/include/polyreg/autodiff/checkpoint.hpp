#pragma once

#include "polyreg/autodiff/tensor.hpp"

#include <string>
#include <vector>

namespace polyreg::ad {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

/// Binary layout, little-endian throughout:
///   "POLYCKPT" | u32 version | u32 count |
///   count x (u32 name_len | name | u32 ndim | ndim x i32 dim | f64 data...)
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays);
/// Throws FormatError on a bad magic, unknown version or truncated file.
std::vector<NamedArray> load_checkpoint(const std::string& path);

}  // namespace polyreg::ad
