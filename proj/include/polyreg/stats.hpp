#pragma once

#include <vector>

namespace polyreg {

/// Median (mean of the two central values for even counts); 0 for empty input.
double median(std::vector<double> values);

/// Median absolute deviation about the median.
double median_absolute_deviation(std::vector<double> values);

}  // namespace polyreg
