#pragma once

#include <span>

namespace metacpr {

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> x);
/// Standard error of the mean, stddev / sqrt(n).
double std_error(std::span<const double> x);

struct RankTest {
  double u = 0.0;        // Mann-Whitney U of the first sample
  double p_value = 1.0;  // two-sided
  bool exact = false;
};

/// Two-sided Mann-Whitney U test. Small samples use the exact permutation
/// distribution of the (mid-)rank sum; larger ones a normal approximation
/// with tie correction and continuity correction.
RankTest mann_whitney(std::span<const double> a, std::span<const double> b);

}  // namespace metacpr
