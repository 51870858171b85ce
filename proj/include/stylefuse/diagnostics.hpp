#ifndef STYLEFUSE_DIAGNOSTICS_HPP
#define STYLEFUSE_DIAGNOSTICS_HPP

#include <cstddef>
#include <optional>
#include <vector>

#include "stylefuse/nuts.hpp"

namespace stylefuse::mcmc {

/// Convergence summary of one scalar across chains.
struct ScalarDiagnostics {
  /// Rank-normalized split R-hat; nullopt when undefined (zero variance).
  std::optional<double> rhat;
  /// Bulk effective sample size; nullopt when undefined.
  std::optional<double> ess;
  bool flagged = false;  // R-hat undefined or above the threshold
};

struct Diagnostics {
  std::vector<ScalarDiagnostics> scalars;
  std::size_t divergences = 0;
  double rhat_threshold = 1.05;
  bool any_flagged() const;
};

/// Per-chain draws of one scalar.
using Draws = std::vector<std::vector<double>>;

/// Classic split R-hat on raw draws.
std::optional<double> split_rhat(const Draws& chains);
/// Split R-hat after pooled rank normalization.
std::optional<double> rank_normalized_split_rhat(const Draws& chains);
/// Multi-chain ESS with Geyer's initial monotone sequence.
std::optional<double> effective_sample_size(const Draws& chains);
/// ESS of the split, rank-normalized draws.
std::optional<double> bulk_ess(const Draws& chains);

/// Diagnostics for the listed coordinates (all when empty).
Diagnostics diagnose(const nuts::Chains& chains, const std::vector<std::size_t>& coordinates = {},
                     double rhat_threshold = 1.05);

Draws coordinate_draws(const nuts::Chains& chains, std::size_t coordinate);

}  // namespace stylefuse::mcmc

#endif  // STYLEFUSE_DIAGNOSTICS_HPP
