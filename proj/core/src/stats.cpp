#include "metacpr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "metacpr/errors.hpp"

namespace metacpr {

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double std_error(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  return stddev(x) / std::sqrt(static_cast<double>(x.size()));
}

namespace {

std::vector<double> midranks(const std::vector<double>& pooled) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<double> ranks(pooled.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

constexpr double kExactLimit = 2e5;

}  // namespace

RankTest mann_whitney(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ContractError("mann_whitney: both samples must be non-empty");
  const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = midranks(pooled);

  double r1 = 0.0;
  for (std::size_t i = 0; i < n1; ++i) r1 += ranks[i];
  const double base = static_cast<double>(n1) * static_cast<double>(n1 + 1) / 2.0;
  RankTest out;
  out.u = r1 - base;
  const double mu = static_cast<double>(n1) * static_cast<double>(n2) / 2.0;
  const double dev = std::abs(out.u - mu);

  if (binomial(n, n1) <= kExactLimit) {
    // Enumerate every assignment of n1 ranks to the first sample.
    std::vector<int> pick(n, 0);
    std::fill(pick.end() - static_cast<std::ptrdiff_t>(n1), pick.end(), 1);
    std::size_t total = 0, extreme = 0;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (pick[i]) s += ranks[i];
      }
      ++total;
      if (std::abs(s - base - mu) >= dev - 1e-9) ++extreme;
    } while (std::next_permutation(pick.begin(), pick.end()));
    out.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    out.exact = true;
    return out;
  }

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie += t * t * t - t;
    i = j;
  }
  const double nn = static_cast<double>(n);
  const double var = static_cast<double>(n1) * static_cast<double>(n2) / 12.0 * ((nn + 1.0) - tie / (nn * (nn - 1.0)));
  if (var <= 0.0) {
    out.p_value = 1.0;
    return out;
  }
  const double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
  out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

}  // namespace metacpr
