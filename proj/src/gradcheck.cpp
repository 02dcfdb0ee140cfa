#include "hmpa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "hmpa/error.hpp"
#include "hmpa/rng.hpp"

namespace hmpa {

namespace {

std::vector<std::size_t> sample_coords(Rng& rng, std::size_t n, std::size_t k) {
  if (k >= n) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  // Partial Fisher-Yates: the first k entries are a uniform k-subset.
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rand_index(rng, n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport finite_diff_check(const LossFn& loss, ParameterSet& params, double eps,
                                  std::uint64_t seed, std::size_t coords_per_array) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw input_error("finite-difference eps must lie in [1e-7, 1e-3]");
  }
  if (coords_per_array == 0) throw input_error("coords_per_array must be positive");

  const double base_a = loss(false);
  const double base_b = loss(false);
  if (std::memcmp(&base_a, &base_b, sizeof(double)) != 0) {
    throw input_error("loss function is non-deterministic: two evaluations at the same "
                      "parameters differed");
  }

  for (auto& [name, p] : params) p->zero_grad();
  loss(true);

  // Snapshot analytic gradients before perturbation runs touch anything.
  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    if (p->grad.size() != p->data.size()) {
      throw input_error("gradient for parameter '" + name + "' was not populated");
    }
    analytic[name] = p->grad;
  }

  GradCheckReport report;
  Rng rng(seed);
  for (auto& [name, p] : params) {
    ArrayCheck ac;
    ac.name = name;
    const auto coords = sample_coords(rng, p->numel(), coords_per_array);
    for (std::size_t c : coords) {
      const double saved = p->data[c];
      p->data[c] = saved + eps;
      const double lp = loss(false);
      p->data[c] = saved - eps;
      const double lm = loss(false);
      p->data[c] = saved;
      const double g_fd = (lp - lm) / (2.0 * eps);
      const double g_ad = analytic[name][c];
      const double denom = std::max({1.0, std::fabs(g_ad), std::fabs(g_fd)});
      const double rel = std::fabs(g_ad - g_fd) / denom;
      ac.max_rel_err = std::max(ac.max_rel_err, rel);
      if (report.coords_checked == 0 || rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = c;
        report.worst_analytic = g_ad;
        report.worst_numeric = g_fd;
      }
      ++report.coords_checked;
      ++ac.coords_checked;
    }
    report.arrays.push_back(std::move(ac));
  }
  return report;
}

}  // namespace hmpa
