#include "stylefuse/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

namespace stylefuse::mcmc {

namespace {

double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

Draws split(const Draws& chains) {
  Draws out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    // Odd lengths drop the middle draw.
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

Draws rank_normalize(const Draws& chains) {
  std::vector<double> flat;
  for (const auto& c : chains) flat.insert(flat.end(), c.begin(), c.end());
  const std::size_t total = flat.size();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return flat[a] < flat[b]; });
  // Average ranks over ties.
  std::vector<double> rank(total);
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && flat[order[j + 1]] == flat[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> normal;
  const double s = static_cast<double>(total);
  Draws out;
  std::size_t k = 0;
  for (const auto& c : chains) {
    std::vector<double> z(c.size());
    for (auto& v : z) v = boost::math::quantile(normal, (rank[k++] - 0.375) / (s + 0.25));
    out.push_back(std::move(z));
  }
  return out;
}

bool usable(const Draws& chains) {
  if (chains.empty()) return false;
  const std::size_t n = chains.front().size();
  if (n < 2) return false;
  return std::all_of(chains.begin(), chains.end(), [&](const auto& c) { return c.size() == n; });
}

std::optional<double> rhat_of(const Draws& chains) {
  if (!usable(chains)) return std::nullopt;
  const double m = static_cast<double>(chains.size());
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    vars.push_back(variance_of(c));
  }
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  if (!(w > 0)) return std::nullopt;
  const double b = m > 1 ? n * variance_of(means) : 0.0;
  const double var_plus = (n - 1) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

}  // namespace

bool Diagnostics::any_flagged() const {
  return std::any_of(scalars.begin(), scalars.end(), [](const auto& s) { return s.flagged; });
}

std::optional<double> split_rhat(const Draws& chains) { return rhat_of(split(chains)); }

std::optional<double> rank_normalized_split_rhat(const Draws& chains) {
  auto s = split(chains);
  if (!usable(s)) return std::nullopt;
  return rhat_of(rank_normalize(s));
}

std::optional<double> effective_sample_size(const Draws& chains) {
  if (!usable(chains)) return std::nullopt;
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<double> means(m), acov0(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = mean_of(chains[c]);
    double s = 0;
    for (double v : chains[c]) s += (v - means[c]) * (v - means[c]);
    acov0[c] = s / static_cast<double>(n);
  }
  const double nn = static_cast<double>(n);
  double w = 0;
  for (double a : acov0) w += a * nn / (nn - 1);
  w /= static_cast<double>(m);
  if (!(w > 0)) return std::nullopt;
  double var_plus = w * (nn - 1) / nn;
  if (m > 1) var_plus += variance_of(means);

  auto rho_at = [&](std::size_t lag) {
    double mean_acov = 0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0;
      for (std::size_t i = 0; i + lag < n; ++i) {
        s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
      }
      mean_acov += s / nn;
    }
    mean_acov /= static_cast<double>(m);
    return 1.0 - (w - mean_acov) / var_plus;
  };

  // Geyer's initial positive and monotone sequence over lag pairs.
  double tau = 0;
  double prev_pair = std::numeric_limits<double>::infinity();
  double rho_even = 1.0;
  for (std::size_t t = 1; t + 1 < n; t += 2) {
    const double rho_odd = rho_at(t);
    double pair = rho_even + rho_odd;
    if (pair <= 0) break;
    pair = std::min(pair, prev_pair);
    tau += pair;
    prev_pair = pair;
    rho_even = rho_at(t + 1);
  }
  tau = -1.0 + 2.0 * tau;
  const double total = static_cast<double>(m) * nn;
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

std::optional<double> bulk_ess(const Draws& chains) {
  auto s = split(chains);
  if (!usable(s)) return std::nullopt;
  // Zero-variance chains make every rank equal.
  if (!rhat_of(s)) return std::nullopt;
  return effective_sample_size(rank_normalize(s));
}

Draws coordinate_draws(const nuts::Chains& chains, std::size_t coordinate) {
  Draws out;
  for (const auto& c : chains) out.push_back(c.column(coordinate));
  return out;
}

Diagnostics diagnose(const nuts::Chains& chains, const std::vector<std::size_t>& coordinates,
                     double rhat_threshold) {
  Diagnostics d;
  d.rhat_threshold = rhat_threshold;
  for (const auto& c : chains) d.divergences += c.divergences();
  std::vector<std::size_t> coords = coordinates;
  if (coords.empty() && !chains.empty()) {
    coords.resize(chains.front().dims);
    std::iota(coords.begin(), coords.end(), 0);
  }
  for (auto k : coords) {
    const auto draws = coordinate_draws(chains, k);
    ScalarDiagnostics s;
    s.rhat = rank_normalized_split_rhat(draws);
    s.ess = bulk_ess(draws);
    s.flagged = !s.rhat || *s.rhat > rhat_threshold;
    d.scalars.push_back(s);
  }
  return d;
}

}  // namespace stylefuse::mcmc
