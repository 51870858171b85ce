#include "stylefuse/nuts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "stylefuse/common.hpp"

namespace stylefuse::nuts {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void add_into(std::vector<double>& acc, std::span<const double> v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

std::vector<double> sum(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.begin(), a.end());
  add_into(out, b);
  return out;
}

/// Velocity M^-1 p.
std::vector<double> sharp(std::span<const double> p, std::span<const double> inv_metric) {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = inv_metric[i] * p[i];
  return out;
}

bool no_u_turn(std::span<const double> p_sharp_minus, std::span<const double> p_sharp_plus,
               std::span<const double> rho) {
  return dot(p_sharp_plus, rho) > 0 && dot(p_sharp_minus, rho) > 0;
}

double evaluate(const LogDensityFn& f, std::span<const double> q, std::span<double> grad) {
  const double lp = f(q, grad);
  if (std::isfinite(lp)) {
    for (std::size_t k = 0; k < grad.size(); ++k) {
      if (!std::isfinite(grad[k])) {
        throw NumericError("non-finite gradient in coordinate " + std::to_string(k) +
                           " at a point with finite log density");
      }
    }
  }
  return lp;
}

class Transition {
 public:
  Transition(const LogDensityFn& f, std::mt19937_64& rng, const std::vector<double>& inv_metric,
             double step_size, std::size_t max_depth, double max_delta_energy)
      : f_(f),
        rng_(rng),
        inv_metric_(inv_metric),
        step_(step_size),
        max_depth_(max_depth),
        max_delta_(max_delta_energy) {}

  struct Result {
    PhasePoint z;
    double accept_stat = 0;
    std::uint32_t depth = 0;
    std::uint32_t leapfrogs = 0;
    bool divergent = false;
  };

  Result run(const PhasePoint& start) {
    const std::size_t n = start.q.size();
    PhasePoint z = start;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) z.p[i] = normal(rng_) / std::sqrt(inv_metric_[i]);

    const double h0 = hamiltonian(z, inv_metric_);
    PhasePoint z_fwd = z, z_bck = z, z_sample = z, z_propose = z;

    std::vector<double> p_fwd_fwd = z.p, p_fwd_bck = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
    std::vector<double> ps_fwd_fwd = sharp(z.p, inv_metric_);
    std::vector<double> ps_fwd_bck = ps_fwd_fwd, ps_bck_fwd = ps_fwd_fwd, ps_bck_bck = ps_fwd_fwd;
    std::vector<double> rho = z.p;

    double log_sum_weight = 0;
    std::uint32_t depth = 0;
    leapfrogs_ = 0;
    sum_metro_ = 0;
    divergent_ = false;

    while (depth < max_depth_) {
      std::vector<double> rho_fwd(n, 0.0), rho_bck(n, 0.0);
      bool valid = false;
      double log_sum_weight_subtree = -kInf;

      if (uniform_(rng_) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        ps_bck_fwd = ps_fwd_bck;
        PhasePoint cursor = z_fwd;
        valid = build_tree(depth, cursor, z_propose, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck,
                           p_fwd_fwd, h0, 1.0, log_sum_weight_subtree);
        z_fwd = std::move(cursor);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        ps_fwd_bck = ps_bck_fwd;
        PhasePoint cursor = z_bck;
        valid = build_tree(depth, cursor, z_propose, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd,
                           p_bck_bck, h0, -1.0, log_sum_weight_subtree);
        z_bck = std::move(cursor);
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform_(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = sum(rho_bck, rho_fwd);
      bool persist = no_u_turn(ps_bck_bck, ps_fwd_fwd, rho);
      persist = persist && no_u_turn(ps_bck_bck, ps_fwd_bck, sum(rho_bck, p_fwd_bck));
      persist = persist && no_u_turn(ps_bck_fwd, ps_fwd_fwd, sum(rho_fwd, p_bck_fwd));
      if (!persist) break;
    }

    Result r;
    r.z = std::move(z_sample);
    r.accept_stat = leapfrogs_ ? sum_metro_ / static_cast<double>(leapfrogs_) : 0.0;
    r.depth = depth;
    r.leapfrogs = leapfrogs_;
    r.divergent = divergent_;
    return r;
  }

 private:
  bool build_tree(std::size_t depth, PhasePoint& cursor, PhasePoint& z_propose,
                  std::vector<double>& ps_beg, std::vector<double>& ps_end,
                  std::vector<double>& rho, std::vector<double>& p_beg, std::vector<double>& p_end,
                  double h0, double sign, double& log_sum_weight) {
    if (depth == 0) {
      leapfrog(f_, cursor, sign * step_, inv_metric_);
      ++leapfrogs_;
      double h = hamiltonian(cursor, inv_metric_);
      if (std::isnan(h)) h = kInf;
      if (h - h0 > max_delta_) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_ += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
      z_propose = cursor;
      ps_beg = sharp(cursor.p, inv_metric_);
      ps_end = ps_beg;
      add_into(rho, cursor.p);
      p_beg = cursor.p;
      p_end = p_beg;
      return !divergent_;
    }

    const std::size_t n = cursor.q.size();
    double log_sum_weight_init = -kInf;
    std::vector<double> p_init_end(n), ps_init_end(n), rho_init(n, 0.0);
    if (!build_tree(depth - 1, cursor, z_propose, ps_beg, ps_init_end, rho_init, p_beg, p_init_end,
                    h0, sign, log_sum_weight_init)) {
      return false;
    }

    PhasePoint z_propose_final = cursor;
    double log_sum_weight_final = -kInf;
    std::vector<double> p_final_beg(n), ps_final_beg(n), rho_final(n, 0.0);
    if (!build_tree(depth - 1, cursor, z_propose_final, ps_final_beg, ps_end, rho_final,
                    p_final_beg, p_end, h0, sign, log_sum_weight_final)) {
      return false;
    }

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = std::move(z_propose_final);
    } else if (uniform_(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = std::move(z_propose_final);
    }

    const auto rho_subtree = sum(rho_init, rho_final);
    add_into(rho, rho_subtree);
    bool persist = no_u_turn(ps_beg, ps_end, rho_subtree);
    persist = persist && no_u_turn(ps_beg, ps_final_beg, sum(rho_init, p_final_beg));
    persist = persist && no_u_turn(ps_init_end, ps_end, sum(rho_final, p_init_end));
    return persist;
  }

  const LogDensityFn& f_;
  std::mt19937_64& rng_;
  const std::vector<double>& inv_metric_;
  double step_;
  std::size_t max_depth_;
  double max_delta_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::uint32_t leapfrogs_ = 0;
  double sum_metro_ = 0;
  bool divergent_ = false;
};

// Doubles or halves the step until the one-step acceptance crosses 0.8.
double initial_step_size(const LogDensityFn& f, const PhasePoint& start,
                         const std::vector<double>& inv_metric, double step,
                         std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  int direction = 0;
  for (int iter = 0; iter < 100; ++iter) {
    PhasePoint z = start;
    for (std::size_t i = 0; i < z.p.size(); ++i) z.p[i] = normal(rng) / std::sqrt(inv_metric[i]);
    const double h0 = hamiltonian(z, inv_metric);
    leapfrog(f, z, step, inv_metric);
    double h = hamiltonian(z, inv_metric);
    if (std::isnan(h)) h = kInf;
    const double delta = h0 - h;
    const int dir = delta > std::log(0.8) ? 1 : -1;
    if (direction == 0) direction = dir;
    if (dir != direction) break;
    step = direction == 1 ? 2 * step : 0.5 * step;
    if (step > 1e7 || step < 1e-12) break;
  }
  return step;
}

Chain run_chain(const LogDensityFn& f, std::size_t dims, const Config& config, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint64_t>(config.seed), static_cast<std::uint64_t>(index),
                    std::uint64_t{0x5eedULL}};
  std::mt19937_64 rng(seq);

  std::vector<double> q = config.init.empty() ? std::vector<double>(dims, 0.0) : config.init;
  PhasePoint z = make_phase_point(f, q, std::vector<double>(dims, 0.0));
  if (!std::isfinite(z.log_density)) {
    throw NumericError("log density is not finite at the initial point");
  }

  std::vector<double> inv_metric(dims, 1.0);
  double step = initial_step_size(f, z, inv_metric, 1.0, rng);
  DualAveraging adapt(step, config.target_accept);

  // Step size adapts over all of warmup. The metric is re-estimated at the
  // end of doubling windows that follow an initial buffer; a closing buffer
  // lets the step size settle on the final metric.
  const std::size_t warmup = config.warmup;
  std::size_t init_buffer = 75, term_buffer = 50, window = 25;
  const bool adapt_metric = warmup >= 20;
  if (adapt_metric && init_buffer + term_buffer + window > warmup) {
    init_buffer = warmup * 15 / 100;
    term_buffer = warmup / 10;
    window = warmup - init_buffer - term_buffer;
  }
  const std::size_t adapt_end = adapt_metric ? warmup - term_buffer : 0;
  std::size_t window_end = init_buffer + window;
  if (window_end + 2 * window > adapt_end) window_end = adapt_end;
  std::vector<double> mean(dims, 0.0), m2(dims, 0.0);
  std::size_t collected = 0;

  Chain chain;
  chain.dims = dims;
  chain.draws.reserve(config.samples * dims);

  for (std::size_t it = 0; it < warmup + config.samples; ++it) {
    Transition t(f, rng, inv_metric, step, config.max_depth, config.max_delta_energy);
    auto r = t.run(z);
    z = std::move(r.z);

    if (it < warmup) {
      if (r.divergent) ++chain.warmup_divergences;
      step = adapt.update(r.accept_stat);
      if (adapt_metric && it >= init_buffer && it < adapt_end) {
        ++collected;
        for (std::size_t d = 0; d < dims; ++d) {
          const double delta = z.q[d] - mean[d];
          mean[d] += delta / static_cast<double>(collected);
          m2[d] += delta * (z.q[d] - mean[d]);
        }
        if (it + 1 == window_end) {
          const double n = static_cast<double>(collected);
          if (collected >= 3) {
            for (std::size_t d = 0; d < dims; ++d) {
              const double var = m2[d] / (n - 1);
              inv_metric[d] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
            }
          }
          std::fill(mean.begin(), mean.end(), 0.0);
          std::fill(m2.begin(), m2.end(), 0.0);
          collected = 0;
          step = initial_step_size(f, z, inv_metric, step, rng);
          adapt.restart(step);
          if (window_end < adapt_end) {
            window *= 2;
            window_end += window;
            if (window_end + 2 * window > adapt_end) window_end = adapt_end;
          }
        }
      }
      if (it + 1 == warmup) step = adapt.final_step();
      continue;
    }

    chain.draws.insert(chain.draws.end(), z.q.begin(), z.q.end());
    chain.log_density.push_back(z.log_density);
    chain.accept_stat.push_back(r.accept_stat);
    chain.tree_depth.push_back(r.depth);
    chain.leapfrogs.push_back(r.leapfrogs);
    chain.divergent.push_back(r.divergent);
  }
  chain.step_size = step;
  chain.inv_metric = inv_metric;
  return chain;
}

}  // namespace

std::size_t Chain::divergences() const {
  return static_cast<std::size_t>(std::count(divergent.begin(), divergent.end(), true));
}

std::vector<double> Chain::column(std::size_t d) const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = draw(i, d);
  return out;
}

PhasePoint make_phase_point(const LogDensityFn& f, std::vector<double> q, std::vector<double> p) {
  PhasePoint z;
  z.q = std::move(q);
  z.p = std::move(p);
  z.grad.assign(z.q.size(), 0.0);
  z.log_density = evaluate(f, z.q, z.grad);
  return z;
}

void leapfrog(const LogDensityFn& f, PhasePoint& z, double step_size,
              std::span<const double> inv_metric, std::size_t steps) {
  const std::size_t n = z.q.size();
  auto inv = [&](std::size_t i) { return inv_metric.empty() ? 1.0 : inv_metric[i]; };
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * step_size * z.grad[i];
    for (std::size_t i = 0; i < n; ++i) z.q[i] += step_size * inv(i) * z.p[i];
    z.log_density = evaluate(f, z.q, z.grad);
    if (!std::isfinite(z.log_density)) return;
    for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * step_size * z.grad[i];
  }
}

double hamiltonian(const PhasePoint& z, std::span<const double> inv_metric) {
  double kinetic = 0;
  for (std::size_t i = 0; i < z.p.size(); ++i) {
    kinetic += (inv_metric.empty() ? 1.0 : inv_metric[i]) * z.p[i] * z.p[i];
  }
  return -z.log_density + 0.5 * kinetic;
}

DualAveraging::DualAveraging(double initial_step, double target, double gamma, double t0,
                             double kappa)
    : mu_(std::log(10.0 * initial_step)), target_(target), gamma_(gamma), t0_(t0), kappa_(kappa) {
  restart(initial_step);
}

void DualAveraging::restart(double initial_step) {
  mu_ = std::log(10.0 * initial_step);
  h_bar_ = 0;
  log_step_ = std::log(initial_step);
  log_step_bar_ = 0;
  counter_ = 0;
}

double DualAveraging::update(double accept_stat) {
  accept_stat = std::min(1.0, std::isnan(accept_stat) ? 0.0 : accept_stat);
  counter_ += 1;
  const double eta = 1.0 / (counter_ + t0_);
  h_bar_ = (1 - eta) * h_bar_ + eta * (target_ - accept_stat);
  log_step_ = mu_ - std::sqrt(counter_) / gamma_ * h_bar_;
  const double x_eta = std::pow(counter_, -kappa_);
  log_step_bar_ = x_eta * log_step_ + (1 - x_eta) * log_step_bar_;
  return std::exp(log_step_);
}

double DualAveraging::final_step() const {
  return counter_ > 0 ? std::exp(log_step_bar_) : std::exp(log_step_);
}

Chains sample(const LogDensityFn& log_density, std::size_t dims, const Config& config) {
  if (dims == 0) {
    throw InputError("sampler needs at least one dimension");
  }
  if (!config.init.empty() && config.init.size() != dims) {
    throw InputError("initial point has the wrong dimension");
  }
  Chains chains(std::max<std::size_t>(1, config.chains));
  parallel_for(
      chains.size(),
      [&](std::size_t c) { chains[c] = run_chain(log_density, dims, config, c); },
      config.threads);
  return chains;
}

}  // namespace stylefuse::nuts
