// Acceptance runner. `acceptance [criterion]` runs one criterion, or all of
// them with no argument, printing one PASS/FAIL/SKIP line each. Exit code 0
// when nothing failed, 1 on any failure, 77 when the single requested
// criterion was skipped.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylefuse/augment.hpp"
#include "stylefuse/bayes.hpp"
#include "stylefuse/diagnostics.hpp"
#include "stylefuse/eval.hpp"
#include "stylefuse/features.hpp"
#include "stylefuse/infuse.hpp"
#include "stylefuse/nuts.hpp"
#include "stylefuse/ranker.hpp"
#include "stylefuse/synth.hpp"
#include "support.hpp"

using namespace stylefuse;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::pass : Status::fail, std::move(detail)}; }

double mean_of(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

double correlation_of(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Loss algebra ----------------------------------------------------------------

class ShortDiscriminator : public Discriminator {
 public:
  double score(const Document& a, const Document& b) const override {
    return sigmoid(0.3 * (static_cast<double>(b.tokens().size()) -
                          static_cast<double>(a.tokens().size())));
  }
};

Outcome loss_algebra() {
  using infuse::combined_loss;
  bool ok = true;
  std::string detail;
  const auto ex = combined_loss(2.0, 1.0, 0.5, 0.6);
  const double ex_err = std::max(std::abs(ex.c - 0.2), std::abs(ex.value - 1.2));
  ok = ok && ex_err <= 1e-12;

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0), loss(0.0, 10.0);
  std::size_t identity_failures = 0;
  for (int i = 0; i < 10000; ++i) {
    const double ld = loss(rng), lr = loss(rng), beta = u(rng), alpha = u(rng);
    if (combined_loss(ld, lr, beta, 1.0).value != lr) ++identity_failures;
    if (combined_loss(ld, lr, 0.0, alpha).value != lr) ++identity_failures;
    if (combined_loss(ld, lr, 1.0, 0.0).value != ld) ++identity_failures;
  }
  ok = ok && identity_failures == 0;

  // beta = 0 training against plain maximum likelihood.
  const auto task = synth::infusion_task({}, 3);
  const infuse::ToyLM lm(task.vocabulary, 1, 5);
  infuse::InfusionConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 2;
  const auto mle = infuse::train_mle(lm, task.pairs, cfg);
  cfg.beta = 0.0;
  ShortDiscriminator d;
  const auto sd = infuse::train(lm, infuse::BaselineHead(lm.state_dim), task.pairs, d, cfg);
  double max_diff = 0;
  for (std::size_t i = 0; i < mle.lm.logits.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(mle.lm.logits[i] - sd.lm.logits[i]));
  }
  double curve_diff = 0;
  for (std::size_t e = 0; e < mle.curve.size(); ++e) {
    curve_diff = std::max(curve_diff, std::abs(mle.curve[e].total - sd.curve[e].total));
  }
  ok = ok && max_diff <= 1e-9 && curve_diff <= 1e-9;

  detail = "example C=" + fmt(ex.c, 17) + " L_SD=" + fmt(ex.value, 17) + "; identity failures " +
           std::to_string(identity_failures) + "/30000; beta=0 vs MLE max |dlogit| " + fmt(max_diff) +
           ", max |dloss| " + fmt(curve_diff);
  return verdict(ok, detail);
}

// Gradients -------------------------------------------------------------------

bayes::BayesData random_bayes_data(std::size_t n, std::size_t texts, std::size_t topics,
                                   std::mt19937_64& rng) {
  bayes::BayesData d;
  for (std::size_t i = 0; i < texts; ++i) {
    d.a_ids.push_back("a" + std::to_string(i));
    d.b_ids.push_back("b" + std::to_string(i));
  }
  for (std::size_t t = 0; t < topics; ++t) d.topics.push_back("t" + std::to_string(t));
  std::uniform_int_distribution<std::size_t> text(0, texts - 1), topic(0, topics - 1);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> z;
  for (std::size_t i = 0; i < n; ++i) {
    d.outcomes.push_back(coin(rng) ? 1 : 0);
    d.a_index.push_back(text(rng));
    d.b_index.push_back(text(rng));
    d.topic_index.push_back(topic(rng));
    d.feat_diff.push_back(z(rng));
  }
  return d;
}

infuse::ToyLM random_lm(std::vector<std::string> vocab, int order, std::uint64_t seed) {
  infuse::ToyLM lm(std::move(vocab), order, seed);
  std::mt19937_64 rng(seed + 100);
  lm.logits = testing::normal_vector(lm.logits.size(), rng);
  return lm;
}

Outcome gradients() {
  constexpr int points = 100;
  constexpr double tol = 1e-5;
  std::mt19937_64 rng(12);

  double bayes_worst = 0;
  const auto data = random_bayes_data(80, 6, 4, rng);
  const bayes::PriorConfig prior;
  const std::size_t dims = bayes::BayesParams::dimension(data);
  for (int i = 0; i < points; ++i) {
    const auto x = testing::normal_vector(dims, rng, 0.7);
    std::vector<double> g(dims);
    bayes::log_posterior_gradient(x, data, prior, g);
    const auto fd = testing::numeric_gradient(
        [&](const std::vector<double>& y) {
          return bayes::log_posterior(bayes::BayesParams::from_vector(y, data), data, prior);
        },
        x);
    bayes_worst = std::max(bayes_worst, testing::relative_error(g, fd));
  }

  double ranker_worst = 0;
  std::vector<std::vector<double>> diffs;
  for (int i = 0; i < 150; ++i) diffs.push_back(testing::normal_vector(4, rng));
  for (int i = 0; i < points; ++i) {
    const auto w = testing::normal_vector(4, rng);
    const auto g = ranker_loss_gradient(w, diffs, 0.3);
    const auto fd = testing::numeric_gradient(
        [&](const std::vector<double>& x) { return ranker_loss(x, diffs, 0.3); }, w);
    ranker_worst = std::max(ranker_worst, testing::relative_error(g, fd));
  }

  double logit_worst = 0;
  for (int i = 0; i < points; ++i) {
    const int order = 1 + i % 2;
    const auto lm = random_lm({infuse::kBos, infuse::kEos, "x", "y"}, order, 200 + i);
    std::uniform_int_distribution<int> tok(1, 3), len(1, 5);
    std::vector<int> y(static_cast<std::size_t>(len(rng)));
    for (auto& t : y) t = tok(rng);
    const std::vector<int> prompt = {2};
    const auto g = infuse::reconstruction_gradient(lm, y, prompt);
    auto fd = testing::numeric_gradient(
        [&](const std::vector<double>& x) {
          infuse::ToyLM m = lm;
          m.logits = x;
          return infuse::reconstruction_loss(m, y, prompt);
        },
        lm.logits);
    logit_worst = std::max(logit_worst, testing::relative_error(g, fd));

    const auto b = testing::normal_vector(y.size(), rng);
    const double reward = 0.8;
    const auto pg = infuse::policy_gradient(lm, y, prompt, reward, b);
    fd = testing::numeric_gradient(
        [&](const std::vector<double>& x) {
          infuse::ToyLM m = lm;
          m.logits = x;
          const auto lp = infuse::sequence_log_probs(m, y, prompt);
          double s = 0;
          for (std::size_t k = 0; k < lp.size(); ++k) s += (reward - b[k]) * lp[k];
          return s;
        },
        lm.logits);
    logit_worst = std::max(logit_worst, testing::relative_error(pg, fd));
  }

  double head_worst = 0;
  for (int i = 0; i < points; ++i) {
    const auto lm = random_lm({infuse::kBos, infuse::kEos, "x", "y"}, 1, 400 + i);
    infuse::BaselineHead head(lm.state_dim);
    head.weights = testing::normal_vector(lm.state_dim, rng);
    head.bias = 0.2;
    const std::vector<int> prompt = {2}, y = {3, 3, 2, 1};
    const double reward = 0.65;
    const auto g = infuse::baseline_gradient(lm, head, y, prompt, reward);
    std::vector<double> params = head.weights;
    params.push_back(head.bias);
    params.insert(params.end(), lm.states.begin(), lm.states.end());
    const auto fd = testing::numeric_gradient(
        [&](const std::vector<double>& x) {
          infuse::BaselineHead h(lm.state_dim);
          infuse::ToyLM m = lm;
          std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(lm.state_dim), h.weights.begin());
          h.bias = x[lm.state_dim];
          std::copy(x.begin() + static_cast<std::ptrdiff_t>(lm.state_dim + 1), x.end(), m.states.begin());
          return infuse::baseline_loss(reward, infuse::baselines(m, h, y, prompt));
        },
        params);
    std::vector<double> analytic = g.weights;
    analytic.push_back(g.bias);
    analytic.insert(analytic.end(), g.states.begin(), g.states.end());
    head_worst = std::max(head_worst, testing::relative_error(analytic, fd));
  }

  const bool ok = bayes_worst < tol && ranker_worst < tol && logit_worst < tol && head_worst < tol;
  return verdict(ok, "max relative error over 100 points: bayes " + fmt(bayes_worst) + ", ranker " +
                         fmt(ranker_worst) + ", logits " + fmt(logit_worst) + ", head " +
                         fmt(head_worst));
}

// Policy-gradient unbiasedness --------------------------------------------------

// Every sequence of at most `len` tokens, EOS-terminated or truncated.
std::vector<std::vector<int>> all_sequences(std::size_t vocab, std::size_t len) {
  std::vector<std::vector<int>> done, frontier = {{}};
  for (std::size_t step = 0; step < len; ++step) {
    std::vector<std::vector<int>> next;
    for (const auto& prefix : frontier) {
      for (std::size_t t = 0; t < vocab; ++t) {
        auto y = prefix;
        y.push_back(static_cast<int>(t));
        if (static_cast<int>(t) == infuse::ToyLM::eos() || step + 1 == len) {
          done.push_back(y);
        } else {
          next.push_back(y);
        }
      }
    }
    frontier = std::move(next);
  }
  return done;
}

using Cplx = std::complex<double>;

// E[R] with complex logits, from a direct softmax of each context row.
Cplx expected_reward(const infuse::ToyLM& lm, const std::vector<Cplx>& logits,
                     const std::vector<std::vector<int>>& seqs, const std::vector<double>& rewards) {
  const std::size_t v = lm.vocab_size();
  Cplx total = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    Cplx p = 1;
    std::vector<int> history;
    for (int tok : seqs[s]) {
      const std::size_t ctx = lm.context(history);
      Cplx z = 0;
      for (std::size_t j = 0; j < v; ++j) z += std::exp(logits[ctx * v + j]);
      p *= std::exp(logits[ctx * v + static_cast<std::size_t>(tok)]) / z;
      history.push_back(tok);
    }
    total += p * rewards[s];
  }
  return total;
}

Outcome pg_unbiased() {
  constexpr double tol = 1e-10;
  double worst = 0;
  std::size_t outcomes = 0;
  for (int order : {1, 2}) {
    const auto lm = random_lm({infuse::kBos, infuse::kEos, "a"}, order, 31 + order);
    const auto seqs = all_sequences(lm.vocab_size(), 2);
    outcomes = seqs.size();
    std::vector<double> rewards;
    for (const auto& y : seqs) rewards.push_back(0.1 + 0.3 * y.size() + (y[0] == 2 ? 0.25 : 0.0) -
                                                 (y.back() == 0 ? 0.4 : 0.0));

    // Complex-step derivative, exact to rounding.
    const double h = 1e-30;
    std::vector<double> truth(lm.logits.size());
    for (std::size_t k = 0; k < truth.size(); ++k) {
      std::vector<Cplx> z(lm.logits.begin(), lm.logits.end());
      z[k] += Cplx(0, h);
      truth[k] = expected_reward(lm, z, seqs, rewards).imag() / h;
    }

    std::mt19937_64 rng(5);
    infuse::BaselineHead head(lm.state_dim);
    head.weights = testing::normal_vector(lm.state_dim, rng);
    head.bias = 0.3;
    for (int kind = 0; kind < 3; ++kind) {
      std::vector<double> mean(truth.size(), 0.0);
      for (std::size_t s = 0; s < seqs.size(); ++s) {
        const auto& y = seqs[s];
        std::vector<double> b(y.size(), 0.0);
        if (kind == 1) std::fill(b.begin(), b.end(), 0.4);
        if (kind == 2) b = infuse::baselines(lm, head, y);
        const auto lp = infuse::sequence_log_probs(lm, y);
        const double prob = std::exp(std::accumulate(lp.begin(), lp.end(), 0.0));
        const auto g = infuse::policy_gradient(lm, y, {}, rewards[s], b);
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += prob * g[j];
      }
      double scale = 0, err = 0;
      for (std::size_t j = 0; j < mean.size(); ++j) {
        scale = std::max(scale, std::abs(truth[j]));
        err = std::max(err, std::abs(mean[j] - truth[j]));
      }
      worst = std::max(worst, err / scale);
    }
  }
  return verdict(worst < tol, "orders 1 and 2, " + std::to_string(outcomes) +
                                  " outcomes, baselines none/constant/head: max relative deviation " +
                                  fmt(worst));
}

// NUTS --------------------------------------------------------------------------

std::vector<double> pooled_column(const nuts::Chains& chains, std::size_t d) {
  std::vector<double> out;
  for (const auto& c : chains) {
    const auto x = c.column(d);
    out.insert(out.end(), x.begin(), x.end());
  }
  return out;
}

std::string per_chain(const nuts::Chains& chains, std::size_t d) {
  std::string s;
  for (const auto& c : chains) {
    const auto x = c.column(d);
    s += (s.empty() ? "" : ",") + fmt(mean_of(x), 3) + "/" + fmt(variance_of(x), 3);
  }
  return s;
}

Outcome nuts_normal() {
  nuts::Config cfg;
  cfg.seed = 2024;
  const auto chains = nuts::sample(
      [](std::span<const double> q, std::span<double> g) {
        g[0] = -q[0];
        return -0.5 * q[0] * q[0];
      },
      1, cfg);
  const auto x = pooled_column(chains, 0);
  const double m = mean_of(x), v = variance_of(x);
  const auto rhat = mcmc::split_rhat(mcmc::coordinate_draws(chains, 0));
  std::size_t draws = 0;
  for (const auto& c : chains) draws += c.size();
  const bool ok = chains.size() == 4 && draws == 4000 && std::abs(m) < 0.1 && v >= 0.8 &&
                  v <= 1.2 && rhat && *rhat < 1.05;
  return verdict(ok, "mean " + fmt(m) + ", variance " + fmt(v) + ", split R-hat " +
                         (rhat ? fmt(*rhat) : "undefined") + " over 4 chains x 1000 (per chain mean/var " +
                         per_chain(chains, 0) + ")");
}

Outcome nuts_correlated() {
  constexpr double rho = 0.9;
  const double det = 1 - rho * rho;
  nuts::Config cfg;
  cfg.seed = 2025;
  const auto chains = nuts::sample(
      [&](std::span<const double> q, std::span<double> g) {
        g[0] = -(q[0] - rho * q[1]) / det;
        g[1] = -(q[1] - rho * q[0]) / det;
        return -0.5 * (q[0] * q[0] - 2 * rho * q[0] * q[1] + q[1] * q[1]) / det;
      },
      2, cfg);
  const auto x = pooled_column(chains, 0), y = pooled_column(chains, 1);
  const double r = correlation_of(x, y);
  bool ok = chains.size() == 4 && std::abs(r - rho) <= 0.05;
  std::string detail = "correlation " + fmt(r);
  for (std::size_t d = 0; d < 2; ++d) {
    const auto col = d == 0 ? x : y;
    const double m = mean_of(col), v = variance_of(col);
    const auto rhat = mcmc::split_rhat(mcmc::coordinate_draws(chains, d));
    ok = ok && std::abs(m) < 0.1 && v >= 0.8 && v <= 1.2 && rhat && *rhat < 1.05;
    detail += "; x" + std::to_string(d) + " mean " + fmt(m) + " variance " + fmt(v) + " R-hat " +
              (rhat ? fmt(*rhat) : "undefined") + " (per chain " + per_chain(chains, d) + ")";
  }
  return verdict(ok, detail);
}

// Bayesian recovery -------------------------------------------------------------

struct Replicated {
  int hits = 0;
  int excluded = 0;
  std::size_t divergences = 0;
  double worst_rhat = 0;
};

Replicated replicate(double gamma_for(int), bool want_cover) {
  Replicated out;
  for (int r = 0; r < 100; ++r) {
    synth::BayesScenario s;
    s.gamma = gamma_for(r);
    const auto rep = synth::bayes_replication(s, 1000 + static_cast<std::uint64_t>(r));
    const auto data = bayes::make_data(rep.judgments, rep.matrix, "f", 77 + static_cast<std::uint64_t>(r));
    bayes::FitConfig cfg;
    cfg.sampler.seed = 5 + static_cast<std::uint64_t>(r);
    const auto res = bayes::fit(data, "f", cfg);
    const bool covered = res.pooled.lower <= 0 && res.pooled.upper >= 0;
    if (want_cover) {
      out.hits += covered;
    } else {
      out.hits += res.pooled.mean * s.gamma > 0;
    }
    out.excluded += res.pooled.excludes_zero();
    out.divergences += res.divergences;
    out.worst_rhat = std::max(out.worst_rhat, res.max_rhat.value_or(INFINITY));
  }
  return out;
}

Outcome bayes_recovery() {
  const auto r = replicate([](int i) { return i % 2 == 0 ? 0.5 : -0.5; }, false);
  return verdict(r.hits >= 95, "sign recovered " + std::to_string(r.hits) +
                                   "/100 at |gamma| = 0.5 (500 pairs, 4 topics); intervals excluding 0: " +
                                   std::to_string(r.excluded) + "/100; divergences " +
                                   std::to_string(r.divergences) + "; worst R-hat " + fmt(r.worst_rhat));
}

Outcome bayes_null_coverage() {
  const auto r = replicate([](int) { return 0.0; }, true);
  return verdict(r.hits >= 85, "gamma = 0 inside the 90% interval " + std::to_string(r.hits) +
                                   "/100; divergences " + std::to_string(r.divergences) +
                                   "; worst R-hat " + fmt(r.worst_rhat));
}

// Infusion experiment -----------------------------------------------------------

Outcome infusion_shift() {
  const auto task = synth::infusion_task({}, 11);
  const std::vector<std::string> names = {"length", "circuitousness"};
  FeatureExtractor ex(names, WordLists::bundled());
  ex.set_token_lexicon(task.lexicon);
  const auto m = build_matrix(task.corpus, names, true, &ex);
  const auto ranker = train_ranker(task.judgments, m, {});
  RankerDiscriminator disc(ranker, WordLists::bundled(), nullptr);
  disc.set_token_lexicon(task.lexicon);
  disc.set_impute_missing(true);

  const infuse::ToyLM lm(task.vocabulary, 1, 3);
  infuse::InfusionConfig mle_cfg;
  mle_cfg.epochs = 100;
  const auto base = infuse::train_mle(lm, task.pairs, mle_cfg);
  auto tune = [&](double beta) {
    infuse::InfusionConfig c;
    c.beta = beta;
    c.epochs = 40;
    c.seed = 9;
    return infuse::train(base.lm, infuse::BaselineHead(8), task.pairs, disc, c);
  };
  const auto sd = tune(0.5), control = tune(0.0);

  auto generated = [&](const infuse::ToyLM& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> len, circ;
    for (int i = 0; i < 2000; ++i) {
      const auto y = infuse::sample(model, {}, 100, rng);
      const auto fv = ex.extract(infuse::to_document("g", model.decode(y)));
      len.push_back(*fv.get("length"));
      if (auto c = fv.get("circuitousness")) circ.push_back(*c);
    }
    return std::pair{len, circ};
  };
  const auto [len_base, circ_base] = generated(base.lm, 100);
  const auto [len_sd, circ_sd] = generated(sd.lm, 200);
  const auto [len_ctl, circ_ctl] = generated(control.lm, 300);

  const auto sd_vs_base = eval::welch_t_test(len_sd, len_base);
  const auto sd_vs_ctl = eval::welch_t_test(len_sd, len_ctl);
  const auto ctl_vs_base = eval::welch_t_test(len_ctl, len_base);
  const auto circ_test = eval::welch_t_test(circ_sd, circ_base);
  const bool ok = sd_vs_base.t < 0 && sd_vs_base.p < 0.05 && sd_vs_ctl.t < 0 && sd_vs_ctl.p < 0.05 &&
                  ctl_vs_base.p >= 0.05;
  return verdict(ok, "ranker weights length " + fmt(ranker.weights[0]) + ", circuitousness " +
                         fmt(ranker.weights[1]) + "; mean length base " + fmt(mean_of(len_base)) +
                         ", beta=0.5 " + fmt(mean_of(len_sd)) + ", beta=0 " + fmt(mean_of(len_ctl)) +
                         "; beta=0.5 vs base t " + fmt(sd_vs_base.t) + " p " + fmt(sd_vs_base.p) +
                         "; beta=0.5 vs beta=0 p " + fmt(sd_vs_ctl.p) + "; beta=0 vs base p " +
                         fmt(ctl_vs_base.p) + "; circuitousness beta=0.5 vs base t " +
                         fmt(circ_test.t) + " p " + fmt(circ_test.p));
}

// Oracles -----------------------------------------------------------------------

Outcome rouge_oracle() {
  const auto s = eval::rouge("the cat sat", "the cat");
  const double err = std::max({std::abs(s.rouge1.f1 - 0.8), std::abs(s.rouge1.recall - 2.0 / 3.0),
                               std::abs(s.rouge1.precision - 1.0), std::abs(s.rougeL.f1 - 0.8)});
  return verdict(err <= 1e-12, "ROUGE-1 f1 " + fmt(s.rouge1.f1, 17) + ", ROUGE-L f1 " +
                                   fmt(s.rougeL.f1, 17) + ", max error " + fmt(err));
}

Outcome welch_oracle() {
  const auto r = eval::welch_t_test({1, 2, 3, 4}, {2, 3, 4, 5});
  bool ok = std::abs(r.t + 1.0954) <= 1e-3 && std::abs(r.p - 0.3153) <= 1e-3;
  double frozen = 0;
  const auto cases = nlohmann::json::parse(
      testing::read_text(fs::path(STYLEFUSE_SOURCE_DIR) / "tests/oracles/welch_expected.json"));
  for (const auto& c : cases) {
    const auto w = eval::welch_t_test(c["a"].get<std::vector<double>>(), c["b"].get<std::vector<double>>());
    frozen = std::max({frozen, std::abs(w.t - c["t"].get<double>()), std::abs(w.p - c["p"].get<double>()),
                       std::abs(w.df - c["df"].get<double>())});
  }
  ok = ok && frozen <= 1e-9;
  return verdict(ok, "t " + fmt(r.t, 8) + ", p " + fmt(r.p, 8) + ", df " + fmt(r.df) +
                         "; frozen reference cases max deviation " + fmt(frozen));
}

double brute_force_path(const std::vector<std::vector<double>>& pts) {
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  double best = INFINITY;
  do {
    std::vector<std::vector<double>> ordered;
    for (auto i : order) ordered.push_back(pts[i]);
    best = std::min(best, path_length(ordered));
  } while (std::next_permutation(order.begin(), order.end()));
  return best;
}

Outcome held_karp_oracle() {
  std::mt19937_64 rng(11);
  double worst = 0;
  std::size_t cases = 0;
  bool ok = true;
  for (std::size_t n = 1; n <= 8; ++n) {
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<std::vector<double>> pts;
      for (std::size_t i = 0; i < n; ++i) pts.push_back(testing::normal_vector(3, rng));
      const auto hp = shortest_hamiltonian_path(pts);
      const double bf = brute_force_path(pts);
      worst = std::max(worst, std::abs(hp.length - bf) / std::max(1.0, bf));
      ok = ok && !hp.approximate && hp.order.size() == n;
      ++cases;
    }
  }
  ok = ok && worst <= 1e-12;
  return verdict(ok, std::to_string(cases) + " point sets, n = 1..8; max relative gap " + fmt(worst));
}

Outcome topk_oracle() {
  std::mt19937_64 rng(3);
  std::size_t mismatches = 0, trials = 0;
  for (std::size_t k : {1, 5, 20}) {
    for (int trial = 0; trial < 20; ++trial) {
      augment::EmbeddingPool pool;
      pool.dimension = 6;
      for (int i = 0; i < 200; ++i) {
        pool.ids.push_back("p" + std::to_string(1000 - i));
        pool.vectors.push_back(testing::normal_vector(6, rng));
      }
      const auto q = testing::normal_vector(6, rng);
      std::vector<std::pair<double, std::string>> all;
      for (std::size_t i = 0; i < pool.ids.size(); ++i) {
        all.emplace_back(-augment::cosine_similarity(q, pool.vectors[i]), pool.ids[i]);
      }
      std::sort(all.begin(), all.end());
      const auto got = augment::topk_similar(q, pool, k);
      bool same = got.size() == k;
      for (std::size_t i = 0; same && i < k; ++i) same = got[i].id == all[i].second;
      mismatches += !same;
      ++trials;
    }
  }
  return verdict(mismatches == 0, std::to_string(trials) + " queries against a full sort, k in {1, 5, 20}; " +
                                       std::to_string(mismatches) + " mismatches");
}

// UKPConvArg1 ---------------------------------------------------------------------

Outcome ukp_signs() {
  fs::path dir = fs::path(STYLEFUSE_SOURCE_DIR) / "data" / "ukp";
  if (const char* env = std::getenv("STYLEFUSE_UKP_DIR")) dir = env;
  if (!fs::exists(dir / "documents.jsonl") || !fs::exists(dir / "judgments.jsonl")) {
    return {Status::skip, "no UKPConvArg1 export at " + dir.string() + " (set STYLEFUSE_UKP_DIR)"};
  }
  Corpus corpus = load_documents(dir / "documents.jsonl");
  const auto judgments = load_judgments(dir / "judgments.jsonl", corpus);
  const std::vector<std::string> names = {"length", "flesch", "avg_syllables"};
  FeatureExtractor ex(names, WordLists::bundled());
  const auto m = build_matrix(corpus, names, true, &ex);
  bayes::FitConfig cfg;
  cfg.sampler.seed = 7;
  bool ok = true;
  std::string detail = std::to_string(judgments.size()) + " judgments";
  for (const auto& [name, sign] : std::vector<std::pair<std::string, double>>{
           {"length", -1.0}, {"flesch", 1.0}, {"avg_syllables", -1.0}}) {
    const auto r = bayes::fit_feature_correlation(judgments, m, name, cfg);
    ok = ok && r.pooled.mean * sign > 0 && r.pooled.excludes_zero();
    detail += "; " + name + " " + fmt(r.pooled.mean) + " [" + fmt(r.pooled.lower) + ", " +
              fmt(r.pooled.upper) + "]";
  }
  return verdict(ok, detail);
}

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"loss_algebra", 1, loss_algebra},
      {"gradients", 30, gradients},
      {"pg_unbiased", 10, pg_unbiased},
      {"nuts_normal", 120, nuts_normal},
      {"nuts_correlated", 120, nuts_correlated},
      {"bayes_recovery", 1200, bayes_recovery},
      {"bayes_null_coverage", 1200, bayes_null_coverage},
      {"infusion_shift", 600, infusion_shift},
      {"rouge_oracle", 1, rouge_oracle},
      {"welch_oracle", 1, welch_oracle},
      {"held_karp_oracle", 10, held_karp_oracle},
      {"topk_oracle", 10, topk_oracle},
      {"ukp_signs", 3600, ukp_signs},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<const Criterion*> selected;
  for (const auto& c : criteria()) {
    if (argc < 2 || c.name == argv[1]) selected.push_back(&c);
  }
  if (selected.empty()) {
    std::cerr << "unknown criterion '" << argv[1] << "'; known:";
    for (const auto& c : criteria()) std::cerr << ' ' << c.name;
    std::cerr << '\n';
    return 1;
  }

  bool failed = false, skipped = false;
  for (const auto* c : selected) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c->run();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.status == Status::pass && secs > c->budget_seconds) {
      o.status = Status::fail;
      o.detail += "; exceeded the " + fmt(c->budget_seconds) + " s budget";
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    std::cout << tag << ' ' << c->name << " (" << std::fixed << std::setprecision(2) << secs << " s) "
              << std::defaultfloat << o.detail << std::endl;
    failed = failed || o.status == Status::fail;
    skipped = skipped || o.status == Status::skip;
  }
  if (failed) return 1;
  if (skipped && selected.size() == 1) return 77;
  return 0;
}
