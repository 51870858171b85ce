#include "stylefuse/bayes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace stylefuse::bayes {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double normal_lpdf(double x, double sd) {
  return -0.5 * (x / sd) * (x / sd) - std::log(sd) - kLogSqrt2Pi;
}

std::size_t block_offset_beta(const BayesData& d) { return 1 + 2 + d.a_ids.size(); }
std::size_t block_offset_gamma(const BayesData& d) {
  return block_offset_beta(d) + 2 + d.b_ids.size();
}

void check_dimension(std::size_t n, const BayesData& data) {
  if (n != BayesParams::dimension(data)) {
    throw InputError("parameter vector has " + std::to_string(n) + " entries, model needs " +
                     std::to_string(BayesParams::dimension(data)));
  }
}

double quantile(std::vector<double> sorted_or_not, double prob) {
  auto& v = sorted_or_not;
  std::sort(v.begin(), v.end());
  if (v.empty()) return 0;
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string fmt_fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

}  // namespace

void BayesData::validate() const {
  const std::size_t n = outcomes.size();
  if (a_index.size() != n || b_index.size() != n || topic_index.size() != n ||
      feat_diff.size() != n) {
    throw InputError("model arrays have unequal lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (outcomes[i] != 0 && outcomes[i] != 1) throw InputError("outcome must be 0 or 1");
    if (a_index[i] >= a_ids.size() || b_index[i] >= b_ids.size() ||
        topic_index[i] >= topics.size()) {
      throw InputError("observation " + std::to_string(i) + " indexes outside the model");
    }
    if (!std::isfinite(feat_diff[i])) {
      throw InputError("observation " + std::to_string(i) + " has a non-finite feature difference");
    }
  }
}

// Parameters ----------------------------------------------------------------

BayesParams BayesParams::zeros(const BayesData& data) {
  BayesParams p;
  p.alpha.v.assign(data.a_ids.size(), 0.0);
  p.beta.v.assign(data.b_ids.size(), 0.0);
  p.gamma.v.assign(data.topics.size(), 0.0);
  return p;
}

std::size_t BayesParams::dimension(const BayesData& data) {
  return 1 + 3 * 2 + data.a_ids.size() + data.b_ids.size() + data.topics.size();
}

std::vector<double> BayesParams::to_vector() const {
  std::vector<double> x{p_bar};
  for (const Block* b : {&alpha, &beta, &gamma}) {
    x.push_back(b->mean);
    x.push_back(b->sigma_raw);
    x.insert(x.end(), b->v.begin(), b->v.end());
  }
  return x;
}

BayesParams BayesParams::from_vector(std::span<const double> x, const BayesData& data) {
  check_dimension(x.size(), data);
  BayesParams p;
  std::size_t k = 0;
  p.p_bar = x[k++];
  auto read = [&](Block& b, std::size_t n) {
    b.mean = x[k++];
    b.sigma_raw = x[k++];
    b.v.assign(x.begin() + static_cast<std::ptrdiff_t>(k),
               x.begin() + static_cast<std::ptrdiff_t>(k + n));
    k += n;
  };
  read(p.alpha, data.a_ids.size());
  read(p.beta, data.b_ids.size());
  read(p.gamma, data.topics.size());
  return p;
}

double PriorConfig::hyper_sd() const {
  return reading == HyperPriorReading::scale ? hyper : std::sqrt(hyper);
}

// Density -------------------------------------------------------------------

double log_likelihood(const BayesParams& params, const BayesData& data) {
  if (params.alpha.v.size() != data.a_ids.size() || params.beta.v.size() != data.b_ids.size() ||
      params.gamma.v.size() != data.topics.size()) {
    throw InputError("parameter block sizes do not match the data index spaces");
  }
  double ll = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double eta = params.p_bar +
                       (params.alpha.value(data.a_index[i]) - params.beta.value(data.b_index[i])) +
                       params.gamma.value(data.topic_index[i]) * data.feat_diff[i];
    ll += data.outcomes[i] ? log_sigmoid(eta) : log_sigmoid(-eta);
  }
  return ll;
}

double log_posterior(const BayesParams& params, const BayesData& data, const PriorConfig& prior) {
  auto x = params.to_vector();
  std::vector<double> grad(x.size());
  return log_posterior_gradient(x, data, prior, grad);
}

double log_posterior_gradient(std::span<const double> x, const BayesData& data,
                              const PriorConfig& prior, std::span<double> grad) {
  check_dimension(x.size(), data);
  const std::size_t na = data.a_ids.size(), nb = data.b_ids.size(), nt = data.topics.size();
  const std::size_t oa = 1, ob = block_offset_beta(data), og = block_offset_gamma(data);

  const double p_bar = x[0];
  const double sa = std::exp(x[oa + 1]), sb = std::exp(x[ob + 1]), sg = std::exp(x[og + 1]);
  const double* av = x.data() + oa + 2;
  const double* bv = x.data() + ob + 2;
  const double* gv = x.data() + og + 2;

  std::fill(grad.begin(), grad.end(), 0.0);
  double* ga = grad.data() + oa + 2;
  double* gb = grad.data() + ob + 2;
  double* gg = grad.data() + og + 2;

  double lp = 0;
  // The likelihood is accumulated as a running product of sigmoids, with a
  // log taken every kBlock factors; each factor is at least exp(-30).
  constexpr int kBlock = 16;
  double prod = 1.0;
  int in_block = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t a = data.a_index[i], b = data.b_index[i], t = data.topic_index[i];
    const double alpha = x[oa] + av[a] * sa;
    const double beta = x[ob] + bv[b] * sb;
    const double gamma = x[og] + gv[t] * sg;
    const double d = data.feat_diff[i];
    const double eta = p_bar + (alpha - beta) + gamma * d;
    const int y = data.outcomes[i];
    const double e = std::exp(-std::abs(eta));
    const double inv = 1.0 / (1.0 + e);
    const double sig = eta >= 0 ? inv : e * inv;
    // Probability of the observed outcome.
    const bool agrees = (eta >= 0) == (y != 0);
    if (std::abs(eta) > 30) {
      lp += (agrees ? 0.0 : -std::abs(eta)) - std::log1p(e);
    } else {
      prod *= agrees ? inv : e * inv;
      if (++in_block == kBlock) {
        lp += std::log(prod);
        prod = 1.0;
        in_block = 0;
      }
    }
    const double g = static_cast<double>(y) - sig;
    // Accumulate d(lp)/d(value) per index; chain rule applied below.
    grad[0] += g;
    ga[a] += g;
    gb[b] -= g;
    gg[t] += g * d;
  }
  if (in_block > 0) lp += std::log(prod);

  auto finish_block = [&](std::size_t off, std::size_t n, double sigma) {
    const double* v = x.data() + off + 2;
    double* gv_block = grad.data() + off + 2;
    double d_mean = 0, d_raw = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d_value = gv_block[i];
      d_mean += d_value;
      d_raw += d_value * v[i] * sigma;
      gv_block[i] = d_value * sigma;
    }
    grad[off] = d_mean;
    grad[off + 1] = d_raw;
  };
  finish_block(oa, na, sa);
  finish_block(ob, nb, sb);
  finish_block(og, nt, sg);

  if (prior.likelihood_only) return lp;

  const double s = prior.hyper_sd();
  lp += normal_lpdf(p_bar, s);
  grad[0] -= p_bar / (s * s);
  for (std::size_t off : {oa, ob, og}) {
    const std::size_t n = off == oa ? na : off == ob ? nb : nt;
    lp += normal_lpdf(x[off], s);
    grad[off] -= x[off] / (s * s);
    // sigma ~ Exponential(rate) sampled as log sigma, with Jacobian sigma.
    const double raw = x[off + 1];
    const double sigma = std::exp(raw);
    lp += std::log(prior.sigma_rate) - prior.sigma_rate * sigma + raw;
    grad[off + 1] += -prior.sigma_rate * sigma + 1.0;
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x[off + 2 + i];
      ss += v * v;
      grad[off + 2 + i] -= v;
    }
    lp += -0.5 * ss - static_cast<double>(n) * kLogSqrt2Pi;
  }
  return lp;
}

std::vector<double> grad_log_posterior(const BayesParams& params, const BayesData& data,
                                       const PriorConfig& prior) {
  auto x = params.to_vector();
  std::vector<double> grad(x.size());
  log_posterior_gradient(x, data, prior, grad);
  return grad;
}

// Fitting -------------------------------------------------------------------

ProbabilityShift logit_shift_to_probability(double delta) {
  return ProbabilityShift{(sigmoid(delta) - 0.5) * 100.0, std::exp(delta)};
}

Summary summarize(const mcmc::Draws& draws, double interval) {
  std::vector<double> flat;
  for (const auto& c : draws) flat.insert(flat.end(), c.begin(), c.end());
  Summary s;
  if (flat.empty()) return s;
  const double n = static_cast<double>(flat.size());
  s.mean = std::accumulate(flat.begin(), flat.end(), 0.0) / n;
  double ss = 0;
  for (double v : flat) ss += (v - s.mean) * (v - s.mean);
  s.sd = flat.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  const double tail = (1.0 - interval) / 2.0;
  s.lower = quantile(flat, tail);
  s.upper = quantile(flat, 1.0 - tail);
  s.rhat = mcmc::rank_normalized_split_rhat(draws);
  s.ess = mcmc::bulk_ess(draws);
  return s;
}

BayesData make_data(const JudgmentSet& judgments, const FeatureMatrix& matrix,
                    const std::string& feature, std::uint64_t seed) {
  const auto col = matrix.column_of(feature);
  if (!col) throw InputError("feature matrix has no column '" + feature + "'");

  std::map<std::string, std::size_t> row;
  for (std::size_t r = 0; r < matrix.rows(); ++r) row[matrix.ids[r]] = r;

  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  BayesData data;
  std::map<std::string, std::size_t> a_idx, b_idx, t_idx;
  auto intern = [](std::map<std::string, std::size_t>& m, std::vector<std::string>& names,
                   const std::string& key) {
    auto [it, inserted] = m.emplace(key, names.size());
    if (inserted) names.push_back(key);
    return it->second;
  };
  for (const auto& j : judgments) {
    if (j.tie) continue;
    const bool swap = coin(rng);
    auto ra = row.find(j.a_id), rb = row.find(j.b_id);
    if (ra == row.end() || rb == row.end()) {
      throw InputError("judgment '" + j.pair_id + "' references a document without features");
    }
    const double fa = matrix.at(ra->second, *col), fb = matrix.at(rb->second, *col);
    if (std::isnan(fa) || std::isnan(fb)) continue;
    const auto& first = swap ? j.b_id : j.a_id;
    const auto& second = swap ? j.a_id : j.b_id;
    data.outcomes.push_back(swap ? 0 : 1);
    data.a_index.push_back(intern(a_idx, data.a_ids, first));
    data.b_index.push_back(intern(b_idx, data.b_ids, second));
    data.topic_index.push_back(intern(t_idx, data.topics, j.topic));
    data.feat_diff.push_back(swap ? fb - fa : fa - fb);
  }
  return data;
}

CorrelationResult fit(const BayesData& data, const std::string& feature, const FitConfig& config) {
  data.validate();
  std::vector<std::size_t> per_topic(data.topics.size(), 0);
  for (auto t : data.topic_index) ++per_topic[t];
  if (std::none_of(per_topic.begin(), per_topic.end(), [](std::size_t c) { return c >= 2; })) {
    throw InputError("feature '" + feature + "': no topic has at least two observations");
  }

  const std::size_t dims = BayesParams::dimension(data);
  const auto prior = config.prior;
  nuts::LogDensityFn density = [&data, prior](std::span<const double> q, std::span<double> g) {
    return log_posterior_gradient(q, data, prior, g);
  };
  const auto chains = nuts::sample(density, dims, config.sampler);

  const std::size_t og = block_offset_gamma(data);
  const std::size_t nt = data.topics.size();
  mcmc::Draws pooled(chains.size()), hyper(chains.size());
  std::vector<mcmc::Draws> topic_draws(nt, mcmc::Draws(chains.size()));
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& ch = chains[c];
    for (std::size_t i = 0; i < ch.size(); ++i) {
      const double mean = ch.draw(i, og);
      const double sigma = std::exp(ch.draw(i, og + 1));
      double total = 0;
      for (std::size_t t = 0; t < nt; ++t) {
        const double g = mean + ch.draw(i, og + 2 + t) * sigma;
        topic_draws[t][c].push_back(g);
        total += g;
      }
      pooled[c].push_back(total / static_cast<double>(nt));
      hyper[c].push_back(mean);
    }
  }

  CorrelationResult r;
  r.feature = feature;
  r.observations = data.size();
  for (std::size_t t = 0; t < nt; ++t) {
    r.topics.push_back(TopicSummary{data.topics[t], per_topic[t],
                                    summarize(topic_draws[t], config.interval)});
  }
  r.pooled = summarize(pooled, config.interval);
  r.hyper_mean = summarize(hyper, config.interval);
  for (const auto& ch : chains) r.divergences += ch.divergences();
  auto consider = [&](const Summary& s) {
    if (s.rhat && (!r.max_rhat || *s.rhat > *r.max_rhat)) r.max_rhat = s.rhat;
  };
  consider(r.pooled);
  consider(r.hyper_mean);
  for (const auto& t : r.topics) consider(t.gamma);
  r.converged = r.max_rhat && *r.max_rhat <= 1.05;
  r.shift = logit_shift_to_probability(r.pooled.mean);
  return r;
}

CorrelationResult fit_feature_correlation(const JudgmentSet& judgments, const FeatureMatrix& matrix,
                                          const std::string& feature, const FitConfig& config) {
  if (!matrix.standardized) {
    throw InputError("feature matrix must be standardized before fitting");
  }
  const auto col = matrix.column_of(feature);
  if (!col) throw InputError("feature matrix has no column '" + feature + "'");
  if (matrix.constant[*col]) {
    throw InputError("feature '" + feature + "' is constant");
  }
  const auto data = make_data(judgments, matrix, feature, config.sampler.seed);
  return fit(data, feature, config);
}

// Export --------------------------------------------------------------------

void write_correlations_csv(const std::vector<CorrelationResult>& results,
                            const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "feature,topic,mean,sd,q5,q95,rhat,ess\n";
  auto row = [&](const std::string& feature, const std::string& topic, const Summary& s) {
    out << feature << ',' << topic << ',' << format_double(s.mean) << ',' << format_double(s.sd)
        << ',' << format_double(s.lower) << ',' << format_double(s.upper) << ','
        << (s.rhat ? format_double(*s.rhat) : "") << ',' << (s.ess ? format_double(*s.ess) : "")
        << '\n';
  };
  for (const auto& r : results) {
    for (const auto& t : r.topics) row(r.feature, t.topic, t.gamma);
    row(r.feature, "__pooled__", r.pooled);
    row(r.feature, "__hyper__", r.hyper_mean);
  }
}

std::vector<CorrelationResult> read_correlations_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "feature,topic,mean,sd,q5,q95,rhat,ess") {
    throw InputError(path.string() + ": unexpected header");
  }
  std::vector<CorrelationResult> out;
  auto parse = [&](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw InputError(path.string() + ": bad number '" + s + "'");
    }
    return v;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) throw InputError(path.string() + ": expected 8 columns");
    if (out.empty() || out.back().feature != cells[0]) {
      out.emplace_back();
      out.back().feature = cells[0];
    }
    Summary s;
    s.mean = *parse(cells[2]);
    s.sd = *parse(cells[3]);
    s.lower = *parse(cells[4]);
    s.upper = *parse(cells[5]);
    s.rhat = parse(cells[6]);
    s.ess = parse(cells[7]);
    auto& r = out.back();
    if (cells[1] == "__pooled__") {
      r.pooled = s;
      r.shift = logit_shift_to_probability(s.mean);
    } else if (cells[1] == "__hyper__") {
      r.hyper_mean = s;
    } else {
      r.topics.push_back(TopicSummary{cells[1], 0, s});
    }
  }
  return out;
}

void write_diagnostics_csv(const std::vector<CorrelationResult>& results,
                           const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "feature,observations,divergences,max_rhat,converged\n";
  for (const auto& r : results) {
    out << r.feature << ',' << r.observations << ',' << r.divergences << ','
        << (r.max_rhat ? format_double(*r.max_rhat) : "") << ',' << (r.converged ? 1 : 0) << '\n';
  }
}

void read_diagnostics_csv(const std::filesystem::path& path,
                          std::vector<CorrelationResult>& results) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "feature,observations,divergences,max_rhat,converged") {
    throw InputError(path.string() + ": unexpected header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw InputError(path.string() + ": expected 5 columns");
    auto it = std::find_if(results.begin(), results.end(),
                           [&](const CorrelationResult& r) { return r.feature == cells[0]; });
    if (it == results.end()) {
      throw InputError(path.string() + ": diagnostics for unknown feature '" + cells[0] + "'");
    }
    try {
      it->observations = std::stoull(cells[1]);
      it->divergences = std::stoull(cells[2]);
      if (!cells[3].empty()) it->max_rhat = std::stod(cells[3]);
    } catch (const std::exception&) {
      throw InputError(path.string() + ": bad diagnostics row for '" + cells[0] + "'");
    }
    it->converged = cells[4] == "1";
  }
}

std::string forest_plot_svg(const std::vector<CorrelationResult>& results) {
  const double width = 720, row_h = 22, left = 200, right = 40, top = 60, bottom = 50;
  const double height = top + bottom + row_h * static_cast<double>(results.size());
  double extent = 0.5;
  for (const auto& r : results) {
    extent = std::max({extent, std::abs(r.pooled.lower), std::abs(r.pooled.upper)});
  }
  extent = std::ceil(extent * 4.0) / 4.0;
  const double plot_w = width - left - right;
  auto xpos = [&](double v) { return left + (v + extent) / (2 * extent) * plot_w; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double y0 = top, y1 = height - bottom;
  svg << "<line x1=\"" << xpos(0) << "\" y1=\"" << y0 << "\" x2=\"" << xpos(0) << "\" y2=\"" << y1
      << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << y1 << "\" x2=\"" << width - right << "\" y2=\""
      << y1 << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << y0 << "\" x2=\"" << width - right << "\" y2=\""
      << y0 << "\" stroke=\"black\"/>\n";
  const int ticks = 4;
  for (int k = -ticks; k <= ticks; ++k) {
    const double v = extent * k / ticks;
    const double x = xpos(v);
    svg << "<line x1=\"" << x << "\" y1=\"" << y1 << "\" x2=\"" << x << "\" y2=\"" << y1 + 5
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << x << "\" y=\"" << y1 + 18 << "\" text-anchor=\"middle\">"
        << fmt_fixed(v, 2) << "</text>\n";
    svg << "<line x1=\"" << x << "\" y1=\"" << y0 - 5 << "\" x2=\"" << x << "\" y2=\"" << y0
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << x << "\" y=\"" << y0 - 9 << "\" text-anchor=\"middle\">"
        << fmt_fixed(logit_shift_to_probability(v).percentage_points, 1) << "%</text>\n";
  }
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\">slope (logit scale)</text>\n";
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << 18
      << "\" text-anchor=\"middle\">shift in win probability (percentage points)</text>\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const double y = top + row_h * (static_cast<double>(i) + 0.5);
    const char* colour = r.pooled.excludes_zero() ? "#1f4e9c" : "#888888";
    svg << "<text x=\"" << left - 10 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
        << r.feature << "</text>\n";
    svg << "<line x1=\"" << xpos(r.pooled.lower) << "\" y1=\"" << y << "\" x2=\""
        << xpos(r.pooled.upper) << "\" y2=\"" << y << "\" stroke=\"" << colour
        << "\" stroke-width=\"2\"/>\n";
    svg << "<circle cx=\"" << xpos(r.pooled.mean) << "\" cy=\"" << y << "\" r=\"4\" fill=\""
        << colour << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace stylefuse::bayes
