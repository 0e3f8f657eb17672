#include "polyreg/stats.hpp"

#include <algorithm>
#include <cmath>

namespace polyreg {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const std::size_t mid = values.size() / 2;
  const auto mid_it = values.begin() + static_cast<std::ptrdiff_t>(mid);
  std::nth_element(values.begin(), mid_it, values.end());
  double m = *mid_it;
  if (values.size() % 2 == 0) m = 0.5 * (m + *std::max_element(values.begin(), mid_it));
  return m;
}

double median_absolute_deviation(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const double center = median(values);
  for (double& v : values) v = std::abs(v - center);
  return median(std::move(values));
}

}  // namespace polyreg
