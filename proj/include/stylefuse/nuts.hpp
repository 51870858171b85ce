#ifndef STYLEFUSE_NUTS_HPP
#define STYLEFUSE_NUTS_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace stylefuse::nuts {

/// Returns log density at q and writes its gradient into grad.
using LogDensityFn = std::function<double(std::span<const double> q, std::span<double> grad)>;

struct Config {
  std::size_t warmup = 1000;
  std::size_t samples = 1000;
  double target_accept = 0.8;
  std::size_t max_depth = 10;
  std::uint64_t seed = 0;
  std::size_t chains = 4;
  /// Energy error beyond which a trajectory is declared divergent.
  double max_delta_energy = 1000.0;
  /// Worker threads for chains; 0 = hardware concurrency.
  unsigned threads = 0;
  /// Starting point for every chain; zeros when empty.
  std::vector<double> init;
};

struct Chain {
  std::size_t dims = 0;
  std::vector<double> draws;  // samples x dims, row-major
  std::vector<double> log_density;
  std::vector<double> accept_stat;
  std::vector<std::uint32_t> tree_depth;
  std::vector<std::uint32_t> leapfrogs;
  std::vector<bool> divergent;
  double step_size = 0;
  std::vector<double> inv_metric;
  std::size_t warmup_divergences = 0;

  std::size_t size() const noexcept { return dims ? draws.size() / dims : 0; }
  double draw(std::size_t i, std::size_t d) const { return draws[i * dims + d]; }
  std::size_t divergences() const;
  /// Draws of one coordinate.
  std::vector<double> column(std::size_t d) const;
};

using Chains = std::vector<Chain>;

/// Multinomial NUTS with generalized no-U-turn checks, dual-averaging step
/// size adaptation and a diagonal metric estimated during warmup. Chains
/// are seeded from (seed, chain index) and run independently.
Chains sample(const LogDensityFn& log_density, std::size_t dims, const Config& config);

/// Position and momentum after `steps` leapfrog steps of size `step_size`
/// under the inverse metric `inv_metric` (unit when empty).
struct PhasePoint {
  std::vector<double> q;
  std::vector<double> p;
  std::vector<double> grad;
  double log_density = 0;
};

PhasePoint make_phase_point(const LogDensityFn& f, std::vector<double> q, std::vector<double> p);
void leapfrog(const LogDensityFn& f, PhasePoint& z, double step_size,
              std::span<const double> inv_metric, std::size_t steps = 1);
/// Hamiltonian -log p(q) + p' M^-1 p / 2.
double hamiltonian(const PhasePoint& z, std::span<const double> inv_metric);

/// Step-size adaptation by dual averaging on the acceptance statistic.
class DualAveraging {
 public:
  DualAveraging(double initial_step, double target, double gamma = 0.05, double t0 = 10.0,
                double kappa = 0.75);
  void restart(double initial_step);
  /// Feeds one acceptance statistic; returns the next step size.
  double update(double accept_stat);
  double final_step() const;

 private:
  double mu_, target_, gamma_, t0_, kappa_;
  double h_bar_ = 0, log_step_ = 0, log_step_bar_ = 0;
  double counter_ = 0;
};

}  // namespace stylefuse::nuts

#endif  // STYLEFUSE_NUTS_HPP
