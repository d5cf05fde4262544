#include "ssnocc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

#include "ssnocc/error.hpp"

namespace ssnocc {

namespace {

std::size_t common_length(std::span<const std::vector<double>> chains) {
  if (chains.empty()) throw ParameterError("diagnostics need at least one chain");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) throw ParameterError("chains must have equal lengths");
  return n;
}

bool all_equal(std::span<const std::vector<double>> chains) {
  const double first = chains.front().empty() ? 0.0 : chains.front().front();
  for (const auto& c : chains)
    for (double v : c)
      if (v != first) return false;
  return true;
}

// Pooled average ranks mapped through the normal quantile function.
std::vector<std::vector<double>> rank_normalize(std::span<const std::vector<double>> chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  const std::size_t total = m * n;
  std::vector<std::pair<double, std::size_t>> pooled;
  pooled.reserve(total);
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t i = 0; i < n; ++i) pooled.emplace_back(chains[c][i], c * n + i);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& l, const auto& r) { return l.first < r.first; });
  std::vector<double> rank(total);
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && pooled[j + 1].first == pooled[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[pooled[k].second] = avg;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> standard;
  std::vector<std::vector<double>> z(m, std::vector<double>(n));
  const double denom = static_cast<double>(total) + 0.25;
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t i = 0; i < n; ++i)
      z[c][i] = boost::math::quantile(standard, (rank[c * n + i] - 0.375) / denom);
  return z;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(std::span<const double> v) {
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return s / static_cast<double>(v.size() - 1);
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  const std::size_t n = chains.front().size();
  const std::size_t half = n / 2;
  std::vector<std::span<const double>> seqs;
  for (const auto& c : chains) {
    seqs.emplace_back(c.data(), half);
    seqs.emplace_back(c.data() + (n - half), half);
  }
  std::vector<double> means;
  double w = 0.0;
  for (auto s : seqs) {
    means.push_back(mean_of(s));
    w += variance_of(s);
  }
  w /= static_cast<double>(seqs.size());
  const double b_over_n = variance_of(means);
  if (w <= 0.0) return b_over_n > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double nn = static_cast<double>(half);
  const double var_plus = (nn - 1.0) / nn * w + b_over_n;
  return std::sqrt(var_plus / w);
}

std::vector<double> autocovariance(std::span<const double> x) {
  const std::size_t n = x.size();
  const double mu = mean_of(x);
  std::size_t len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> padded(len, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - mu;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::complex<double>(std::norm(f), 0.0);
  std::vector<double> back;
  fft.inv(back, freq);
  std::vector<double> acov(n);
  for (std::size_t t = 0; t < n; ++t) acov[t] = back[t] / static_cast<double>(n);
  return acov;
}

}  // namespace

Diagnostic rhat(std::span<const std::vector<double>> chains) {
  const std::size_t n = common_length(chains);
  if (n < 4) return {std::numeric_limits<double>::quiet_NaN(), true};
  if (all_equal(chains)) return {1.0, true};
  const bool each_constant = std::all_of(chains.begin(), chains.end(), [](const auto& c) {
    return std::all_of(c.begin(), c.end(), [&](double v) { return v == c.front(); });
  });
  if (each_constant) return {std::numeric_limits<double>::infinity(), true};

  const double bulk = split_rhat(rank_normalize(chains));

  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  std::sort(pooled.begin(), pooled.end());
  const double median = quantile_sorted(pooled, 0.5);
  std::vector<std::vector<double>> folded(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    folded[c].reserve(n);
    for (double v : chains[c]) folded[c].push_back(std::abs(v - median));
  }
  const double tail = split_rhat(rank_normalize(folded));
  return {std::max(bulk, tail), false};
}

Diagnostic ess(std::span<const std::vector<double>> chains) {
  const std::size_t n = common_length(chains);
  const std::size_t m = chains.size();
  const double total = static_cast<double>(m * n);
  if (n < 4 || all_equal(chains)) return {total, true};

  std::vector<std::vector<double>> acov(m);
  std::vector<double> chain_mean(m);
  std::vector<double> chain_var(m);
  const double nd = static_cast<double>(n);
  for (std::size_t c = 0; c < m; ++c) {
    acov[c] = autocovariance(chains[c]);
    chain_mean[c] = mean_of(chains[c]);
    chain_var[c] = acov[c][0] * nd / (nd - 1.0);
  }
  const double mean_var = mean_of(chain_var);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += variance_of(chain_mean);
  if (!(var_plus > 0.0)) return {total, true};

  auto mean_acov = [&](std::size_t t) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += acov[c][t];
    return s / static_cast<double>(m);
  };

  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  std::size_t t = 1;
  while (t < n - 5 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[t + 1] = rho_even;
      rho[t + 2] = rho_odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0) rho[max_t + 1] = rho_even;

  // Initial monotone sequence.
  for (std::size_t k = 1; k + 2 <= max_t; k += 2) {
    if (rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k]) {
      rho[k + 1] = 0.5 * (rho[k - 1] + rho[k]);
      rho[k + 2] = rho[k + 1];
    }
  }
  double tau = -1.0 + 2.0 * std::accumulate(rho.begin(), rho.begin() + max_t + 1, 0.0) +
               (max_t + 1 < n ? rho[max_t + 1] : 0.0);
  tau = std::max(tau, 1.0 / std::log10(total));
  return {std::min(total / tau, total), false};
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Moments pooled_moments(std::span<const std::vector<double>> chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  Moments m;
  if (pooled.empty()) return m;
  m.mean = mean_of(pooled);
  m.sd = pooled.size() > 1 ? std::sqrt(variance_of(pooled)) : 0.0;
  std::sort(pooled.begin(), pooled.end());
  m.q025 = quantile_sorted(pooled, 0.025);
  m.q975 = quantile_sorted(pooled, 0.975);
  return m;
}

}  // namespace ssnocc
