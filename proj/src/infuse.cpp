#include "stylefuse/infuse.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "stylefuse/common.hpp"

namespace stylefuse::infuse {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<double> log_softmax(std::span<const double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double sum = 0;
  for (double x : row) sum += std::exp(x - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] - lse;
  return out;
}

std::vector<int> join(std::span<const int> a, std::span<const int> b) {
  std::vector<int> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void check_ids(const ToyLM& lm, std::span<const int> ids) {
  for (int t : ids) {
    if (t < 0 || static_cast<std::size_t>(t) >= lm.vocab_size()) {
      throw InputError("token id " + std::to_string(t) + " is outside the vocabulary");
    }
  }
}

void check_finite(double v, std::size_t epoch, std::size_t step, const char* what) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite ") + what + " at epoch " + std::to_string(epoch) +
                       ", step " + std::to_string(step));
  }
}

}  // namespace

// ToyLM -----------------------------------------------------------------------

ToyLM::ToyLM(std::vector<std::string> vocab, int order_, std::uint64_t seed, std::size_t dim)
    : vocabulary(std::move(vocab)), order(order_), state_dim(dim) {
  if (order != 1 && order != 2) throw InputError("model order must be 1 or 2");
  if (vocabulary.size() < 2) throw InputError("vocabulary needs at least 2 tokens");
  if (vocabulary[0] != kBos || vocabulary[1] != kEos) {
    throw InputError("vocabulary must start with <bos>, <eos>");
  }
  build_index();
  logits.assign(num_contexts() * vocab_size(), 0.0);
  states.resize(num_contexts() * state_dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (auto& s : states) s = normal(rng);
}

void ToyLM::build_index() const {
  index_.clear();
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    if (!index_.emplace(vocabulary[i], static_cast<int>(i)).second) {
      throw InputError("duplicate vocabulary token '" + vocabulary[i] + "'");
    }
  }
}

std::size_t ToyLM::num_contexts() const {
  std::size_t n = 1;
  for (int k = 0; k < order; ++k) n *= vocab_size();
  return n;
}

int ToyLM::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw InputError("out-of-vocabulary token '" + token + "'");
  return it->second;
}

std::vector<int> ToyLM::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> ToyLM::decode(std::span<const int> ids) const {
  check_ids(*this, ids);
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int t : ids) out.push_back(vocabulary[static_cast<std::size_t>(t)]);
  return out;
}

std::size_t ToyLM::context(std::span<const int> history) const {
  std::size_t ctx = 0;
  for (int k = order; k >= 1; --k) {
    const auto pos = static_cast<std::ptrdiff_t>(history.size()) - k;
    const int tok = pos >= 0 ? history[static_cast<std::size_t>(pos)] : bos();
    ctx = ctx * vocab_size() + static_cast<std::size_t>(tok);
  }
  return ctx;
}

std::span<const double> ToyLM::logit_row(std::size_t ctx) const {
  return {logits.data() + ctx * vocab_size(), vocab_size()};
}
std::span<double> ToyLM::logit_row(std::size_t ctx) {
  return {logits.data() + ctx * vocab_size(), vocab_size()};
}
std::span<const double> ToyLM::state(std::size_t ctx) const {
  return {states.data() + ctx * state_dim, state_dim};
}
std::span<double> ToyLM::state(std::size_t ctx) {
  return {states.data() + ctx * state_dim, state_dim};
}

std::vector<double> ToyLM::probabilities(std::size_t ctx) const {
  auto lp = log_softmax(logit_row(ctx));
  for (auto& x : lp) x = std::exp(x);
  return lp;
}

void ToyLM::validate() const {
  if (order != 1 && order != 2) throw InputError("model order must be 1 or 2");
  if (vocabulary.size() < 2) throw InputError("vocabulary needs at least 2 tokens");
  if (logits.size() != num_contexts() * vocab_size()) {
    throw InputError("logit table has the wrong size");
  }
  if (states.size() != num_contexts() * state_dim) {
    throw InputError("state table has the wrong size");
  }
  for (double x : logits) {
    if (!std::isfinite(x)) throw NumericError("non-finite logit");
  }
}

std::vector<std::string> build_vocabulary(const std::vector<std::vector<std::string>>& sequences) {
  std::set<std::string> distinct;
  for (const auto& s : sequences) {
    for (const auto& t : s) {
      if (t != kBos && t != kEos) distinct.insert(t);
    }
  }
  std::vector<std::string> vocab = {kBos, kEos};
  vocab.insert(vocab.end(), distinct.begin(), distinct.end());
  return vocab;
}

double BaselineHead::predict(std::span<const double> state) const {
  double r = bias;
  for (std::size_t k = 0; k < weights.size(); ++k) r += weights[k] * state[k];
  return r;
}

void TrainingPair::validate() const {
  for (const auto* seq : {&y_s_star, &y_ns_star}) {
    if (seq->empty()) throw InputError("training sequence is empty");
    if (seq->back() != kEos) throw InputError("training sequence is not EOS-terminated");
  }
}

std::vector<TrainingPair> make_training_pairs(const Corpus& corpus, const JudgmentSet& judgments) {
  auto words_of = [&](const std::string& id) {
    std::vector<std::string> out;
    for (const auto& sent : corpus.document(id).sentences)
      for (const auto& t : sent) out.push_back(lower(t));
    return out;
  };
  std::vector<TrainingPair> out;
  for (const auto& j : judgments) {
    if (j.tie) continue;
    TrainingPair p;
    auto styled = words_of(j.a_id);
    if (j.prompt && !j.prompt->empty()) {
      for (const auto& t : tokenize(*j.prompt)) p.prompt.push_back(lower(t));
      p.y_s_star = std::move(styled);
    } else {
      std::size_t cut = 0;
      for (std::size_t i = 0; i < styled.size(); ++i) {
        if (styled[i] == "," || styled[i] == ";" || styled[i] == ":") {
          cut = i + 1;
          break;
        }
      }
      if (cut >= styled.size()) cut = 0;
      p.prompt.assign(styled.begin(), styled.begin() + static_cast<std::ptrdiff_t>(cut));
      p.y_s_star.assign(styled.begin() + static_cast<std::ptrdiff_t>(cut), styled.end());
    }
    p.y_ns_star = words_of(j.b_id);
    if (p.y_s_star.empty() || p.y_ns_star.empty()) continue;
    p.y_s_star.push_back(kEos);
    p.y_ns_star.push_back(kEos);
    out.push_back(std::move(p));
  }
  return out;
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::SD: return "SD";
    case LossMode::SS: return "SS";
    case LossMode::fixed: return "fixed";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& s) {
  const auto l = lower(s);
  if (l == "sd") return LossMode::SD;
  if (l == "ss") return LossMode::SS;
  if (l == "fixed") return LossMode::fixed;
  throw InputError("unknown loss mode '" + s + "' (expected SD, SS or fixed)");
}

void InfusionConfig::validate() const {
  if (!(beta >= 0 && beta <= 1)) throw InputError("beta must lie in [0,1]");
  if (!(w_d >= 0 && w_r >= 0) || std::abs(w_d + w_r - 1.0) > 1e-12) {
    throw InputError("fixed weights must be nonnegative and sum to 1");
  }
  if (!(learning_rate > 0)) throw InputError("learning rate must be positive");
  if (!(head_learning_rate > 0 && head_learning_rate < 1)) {
    throw InputError("head learning rate must lie in (0,1)");
  }
  if (beam_width < 1) throw InputError("beam width must be at least 1");
  if (max_tokens < 1) throw InputError("max tokens must be at least 1");
}

// Losses ----------------------------------------------------------------------

std::vector<std::size_t> sequence_contexts(const ToyLM& lm, std::span<const int> tokens,
                                           std::span<const int> prompt) {
  check_ids(lm, prompt);
  check_ids(lm, tokens);
  const auto history = join(prompt, tokens);
  std::vector<std::size_t> out(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out[i] = lm.context(std::span<const int>(history.data(), prompt.size() + i));
  }
  return out;
}

std::vector<double> sequence_log_probs(const ToyLM& lm, std::span<const int> tokens,
                                       std::span<const int> prompt) {
  const auto ctx = sequence_contexts(lm, tokens, prompt);
  std::vector<double> out(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out[i] = log_softmax(lm.logit_row(ctx[i]))[static_cast<std::size_t>(tokens[i])];
  }
  return out;
}

double reconstruction_loss(const ToyLM& lm, std::span<const int> y_s_star,
                           std::span<const int> prompt) {
  if (y_s_star.empty()) throw InputError("reconstruction loss of an empty sequence");
  const auto lp = sequence_log_probs(lm, y_s_star, prompt);
  return -std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(lp.size());
}

double reconstruction_loss(const ToyLM& lm, const TrainingPair& pair) {
  pair.validate();
  return reconstruction_loss(lm, lm.encode(pair.y_s_star), lm.encode(pair.prompt));
}

double discriminator_loss(double reward, std::span<const double> baselines,
                          std::span<const double> log_probs) {
  if (log_probs.empty()) throw InputError("discriminator loss of an empty sequence");
  if (baselines.size() != log_probs.size()) {
    throw InputError("baseline and log-prob counts differ");
  }
  double s = 0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) s += baselines[i] * log_probs[i];
  return reward - s / static_cast<double>(log_probs.size());
}

Document to_document(const std::string& id, std::span<const std::string> tokens) {
  TokenList words;
  for (const auto& t : tokens) {
    if (t != kBos && t != kEos) words.push_back(t);
  }
  Document doc;
  doc.id = id;
  doc.text = detokenize(words);
  doc.source = DocumentSource::generated;
  segment(doc);
  return doc;
}

namespace {

Document pair_document(const std::string& id, const std::vector<std::string>& prompt,
                       std::span<const std::string> body) {
  std::vector<std::string> all(prompt);
  all.insert(all.end(), body.begin(), body.end());
  return to_document(id, all);
}

double score_generated(const Discriminator& d, const Document& styled, const ToyLM& lm,
                       const std::vector<std::string>& prompt, std::span<const int> y) {
  const auto words = lm.decode(y);
  return d.score(styled, pair_document("<generated>", prompt, words));
}

std::vector<double> prefix_scores(const Discriminator& d, const Document& styled, const ToyLM& lm,
                                  const std::vector<std::string>& prompt, std::span<const int> y) {
  const auto words = lm.decode(y);
  std::vector<double> out(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    out[i] = d.score(styled, pair_document("<generated>", prompt,
                                           std::span<const std::string>(words.data(), i + 1)));
  }
  return out;
}

}  // namespace

double discriminator_loss(const Discriminator& discriminator, const TrainingPair& pair,
                          std::span<const int> y, std::span<const double> baselines,
                          const ToyLM& lm) {
  const auto styled = pair_document("<styled>", pair.prompt, pair.y_s_star);
  const double r = score_generated(discriminator, styled, lm, pair.prompt, y);
  return discriminator_loss(r, baselines, sequence_log_probs(lm, y, lm.encode(pair.prompt)));
}

double baseline_loss(double reward, std::span<const double> baselines) {
  if (baselines.empty()) return 0.0;
  double s = 0;
  for (double b : baselines) s += (reward - b) * (reward - b);
  return s / static_cast<double>(baselines.size());
}

double supervised_loss(std::span<const double> prefix_scores) {
  if (prefix_scores.empty()) throw InputError("supervised loss of an empty sequence");
  return std::accumulate(prefix_scores.begin(), prefix_scores.end(), 0.0) /
         static_cast<double>(prefix_scores.size());
}

double supervised_loss(const Discriminator& discriminator, const TrainingPair& pair,
                       std::span<const int> y, const ToyLM& lm) {
  const auto styled = pair_document("<styled>", pair.prompt, pair.y_s_star);
  return supervised_loss(prefix_scores(discriminator, styled, lm, pair.prompt, y));
}

Combined combined_loss(double l_d, double l_r, double beta, double alpha_s) {
  if (!(beta >= 0 && beta <= 1)) throw InputError("beta must lie in [0,1]");
  if (!(alpha_s >= 0 && alpha_s <= 1)) throw InputError("alpha_S must lie in [0,1]");
  Combined out;
  out.c = beta * (1.0 - alpha_s);
  out.value = out.c * l_d + (1.0 - out.c) * l_r;
  return out;
}

// Gradients -------------------------------------------------------------------

void accumulate_log_prob_gradient(const ToyLM& lm, std::span<const int> tokens,
                                  std::span<const int> prompt, std::span<const double> coef,
                                  LogitGrad& grad) {
  if (coef.size() != tokens.size()) throw InputError("coefficient count differs from tokens");
  grad.resize(lm.logits.size(), 0.0);
  const auto ctx = sequence_contexts(lm, tokens, prompt);
  const std::size_t v = lm.vocab_size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto p = lm.probabilities(ctx[i]);
    double* row = grad.data() + ctx[i] * v;
    for (std::size_t j = 0; j < v; ++j) row[j] -= coef[i] * p[j];
    row[static_cast<std::size_t>(tokens[i])] += coef[i];
  }
}

LogitGrad reconstruction_gradient(const ToyLM& lm, std::span<const int> y_s_star,
                                  std::span<const int> prompt) {
  if (y_s_star.empty()) throw InputError("reconstruction loss of an empty sequence");
  LogitGrad g(lm.logits.size(), 0.0);
  const std::vector<double> coef(y_s_star.size(), -1.0 / static_cast<double>(y_s_star.size()));
  accumulate_log_prob_gradient(lm, y_s_star, prompt, coef, g);
  return g;
}

LogitGrad policy_gradient(const ToyLM& lm, std::span<const int> y, std::span<const int> prompt,
                          double reward, std::span<const double> baselines) {
  if (baselines.size() != y.size()) throw InputError("baseline count differs from tokens");
  LogitGrad g(lm.logits.size(), 0.0);
  std::vector<double> coef(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) coef[i] = reward - baselines[i];
  accumulate_log_prob_gradient(lm, y, prompt, coef, g);
  return g;
}

std::vector<double> baselines(const ToyLM& lm, const BaselineHead& head, std::span<const int> y,
                              std::span<const int> prompt) {
  if (head.weights.size() != lm.state_dim) {
    throw InputError("baseline head width differs from the state dimension");
  }
  const auto ctx = sequence_contexts(lm, y, prompt);
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = head.predict(lm.state(ctx[i]));
  return out;
}

HeadGrad baseline_gradient(const ToyLM& lm, const BaselineHead& head, std::span<const int> y,
                           std::span<const int> prompt, double reward) {
  HeadGrad g;
  g.weights.assign(head.weights.size(), 0.0);
  g.states.assign(lm.states.size(), 0.0);
  if (y.empty()) return g;
  const auto ctx = sequence_contexts(lm, y, prompt);
  const double scale = 2.0 / static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto s = lm.state(ctx[i]);
    const double r = scale * (head.predict(s) - reward);
    for (std::size_t k = 0; k < s.size(); ++k) {
      g.weights[k] += r * s[k];
      g.states[ctx[i] * lm.state_dim + k] += r * head.weights[k];
    }
    g.bias += r;
  }
  return g;
}

// Training --------------------------------------------------------------------

namespace {

struct EncodedPair {
  std::vector<int> prompt;
  std::vector<int> y_s;
  Document styled;
};

std::vector<EncodedPair> encode_pairs(const ToyLM& lm, const std::vector<TrainingPair>& pairs) {
  if (pairs.empty()) throw InputError("no training pairs");
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    p.validate();
    out.push_back({lm.encode(p.prompt), lm.encode(p.y_s_star),
                   pair_document("<styled>", p.prompt, p.y_s_star)});
  }
  return out;
}

}  // namespace

TrainResult train(ToyLM lm, BaselineHead head, const std::vector<TrainingPair>& pairs,
                  const Discriminator& discriminator, const InfusionConfig& config) {
  config.validate();
  lm.validate();
  if (head.weights.size() != lm.state_dim) {
    throw InputError("baseline head width differs from the state dimension");
  }
  const auto enc = encode_pairs(lm, pairs);

  TrainResult result;
  if (config.mode != LossMode::fixed) {
    result.alpha_s.resize(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto& p = pairs[k];
      result.alpha_s[k] = discriminator.score(
          enc[k].styled, pair_document("<non-styled>", p.prompt, p.y_ns_star));
    }
  }

  std::mt19937_64 rng(config.seed);
  const double eta = config.learning_rate;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLosses sums;
    sums.epoch = epoch;
    for (std::size_t k = 0; k < enc.size(); ++k) {
      const auto& e = enc[k];
      const double c = config.mode == LossMode::fixed
                           ? config.w_d
                           : combined_loss(0.0, 0.0, config.beta, result.alpha_s[k]).c;
      const double w_r = config.mode == LossMode::fixed ? config.w_r : 1.0 - c;
      const double l_r = reconstruction_loss(lm, e.y_s, e.prompt);
      check_finite(l_r, epoch, k, "reconstruction loss");
      const auto g_r = reconstruction_gradient(lm, e.y_s, e.prompt);
      double l_d = 0, l_br = 0, total = w_r * l_r;

      if (c > 0) {
        const auto y = sample(lm, e.prompt, config.max_tokens, rng);
        const auto lp = sequence_log_probs(lm, y, e.prompt);
        const auto b = baselines(lm, head, y, e.prompt);
        double reward = 0;
        if (config.mode == LossMode::SS) {
          reward = supervised_loss(prefix_scores(discriminator, e.styled, lm, pairs[k].prompt, y));
          l_d = reward;
        } else {
          reward = score_generated(discriminator, e.styled, lm, pairs[k].prompt, y);
          l_d = discriminator_loss(reward, b, lp);
        }
        check_finite(l_d, epoch, k, "discriminator loss");
        l_br = baseline_loss(reward, b);
        total = c * l_d + w_r * l_r;
        const auto g_d = policy_gradient(lm, y, e.prompt, reward, b);
        const auto g_h = baseline_gradient(lm, head, y, e.prompt, reward);
        for (std::size_t j = 0; j < lm.logits.size(); ++j) {
          lm.logits[j] -= eta * (c * g_d[j] + w_r * g_r[j]);
        }
        const double eta_h = config.head_learning_rate;
        for (std::size_t j = 0; j < head.weights.size(); ++j) {
          head.weights[j] -= eta_h * g_h.weights[j];
        }
        head.bias -= eta_h * g_h.bias;
        for (std::size_t j = 0; j < lm.states.size(); ++j) lm.states[j] -= eta_h * g_h.states[j];
      } else {
        for (std::size_t j = 0; j < lm.logits.size(); ++j) lm.logits[j] -= eta * (w_r * g_r[j]);
      }
      check_finite(total, epoch, k, "loss");
      for (double x : lm.logits) check_finite(x, epoch, k, "logit");

      sums.l_r += l_r;
      sums.l_d += l_d;
      sums.c += c;
      sums.total += total;
      sums.l_br += l_br;
    }
    const double n = static_cast<double>(enc.size());
    sums.l_r /= n;
    sums.l_d /= n;
    sums.c /= n;
    sums.total /= n;
    sums.l_br /= n;
    result.curve.push_back(sums);
  }
  result.lm = std::move(lm);
  result.head = std::move(head);
  return result;
}

TrainResult train_mle(ToyLM lm, const std::vector<TrainingPair>& pairs,
                      const InfusionConfig& config) {
  config.validate();
  lm.validate();
  const auto enc = encode_pairs(lm, pairs);
  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLosses sums;
    sums.epoch = epoch;
    for (std::size_t k = 0; k < enc.size(); ++k) {
      const double l_r = reconstruction_loss(lm, enc[k].y_s, enc[k].prompt);
      check_finite(l_r, epoch, k, "reconstruction loss");
      const auto g = reconstruction_gradient(lm, enc[k].y_s, enc[k].prompt);
      for (std::size_t j = 0; j < lm.logits.size(); ++j) {
        lm.logits[j] -= config.learning_rate * g[j];
      }
      sums.l_r += l_r;
      sums.total += l_r;
    }
    sums.l_r /= static_cast<double>(enc.size());
    sums.total /= static_cast<double>(enc.size());
    result.curve.push_back(sums);
  }
  result.head = BaselineHead(lm.state_dim);
  result.lm = std::move(lm);
  return result;
}

// Decoding --------------------------------------------------------------------

std::vector<int> sample(const ToyLM& lm, std::span<const int> prompt, std::size_t max_tokens,
                        std::mt19937_64& rng) {
  check_ids(lm, prompt);
  std::vector<int> history(prompt.begin(), prompt.end());
  std::vector<int> out;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t t = 0; t < max_tokens; ++t) {
    const auto p = lm.probabilities(lm.context(history));
    const double u = unif(rng);
    double cum = 0;
    std::size_t pick = p.size() - 1;
    for (std::size_t j = 0; j < p.size(); ++j) {
      cum += p[j];
      if (u < cum) {
        pick = j;
        break;
      }
    }
    out.push_back(static_cast<int>(pick));
    history.push_back(static_cast<int>(pick));
    if (static_cast<int>(pick) == ToyLM::eos()) break;
  }
  return out;
}

namespace {

struct Hypothesis {
  std::vector<int> tokens;
  std::vector<double> log_probs;
  double sum = 0;
  bool done = false;

  double score() const {
    return tokens.empty() ? 0.0 : sum / static_cast<double>(tokens.size());
  }
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  const double sa = a.score(), sb = b.score();
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace

Generation generate(const ToyLM& lm, const std::vector<std::string>& prompt,
                    std::size_t beam_width, std::size_t max_tokens) {
  if (beam_width < 1) throw InputError("beam width must be at least 1");
  const auto pids = lm.encode(prompt);
  std::vector<Hypothesis> beams(1);
  for (std::size_t step = 0; step < max_tokens; ++step) {
    std::vector<Hypothesis> cands;
    for (const auto& h : beams) {
      if (h.done) {
        cands.push_back(h);
        continue;
      }
      auto history = pids;
      history.insert(history.end(), h.tokens.begin(), h.tokens.end());
      const auto lp = log_softmax(lm.logit_row(lm.context(history)));
      for (std::size_t j = 0; j < lp.size(); ++j) {
        Hypothesis n = h;
        n.tokens.push_back(static_cast<int>(j));
        n.log_probs.push_back(lp[j]);
        n.sum += lp[j];
        n.done = static_cast<int>(j) == ToyLM::eos();
        cands.push_back(std::move(n));
      }
    }
    const std::size_t keep = std::min(beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), better);
    cands.resize(keep);
    beams = std::move(cands);
    if (std::all_of(beams.begin(), beams.end(), [](const Hypothesis& h) { return h.done; })) {
      break;
    }
  }
  const auto& best = beams.front();
  Generation g;
  g.prompt = prompt;
  g.tokens = best.tokens;
  g.log_probs = best.log_probs;
  g.score = best.score();
  return g;
}

std::vector<std::string> postprocess(const std::vector<std::string>& tokens) {
  constexpr std::size_t w = 4;
  for (std::size_t i = 0; i + 2 * w <= tokens.size(); ++i) {
    if (std::equal(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + w),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + w))) {
      return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(i + w)};
    }
  }
  return tokens;
}

std::string postprocess(const std::string& text) { return detokenize(postprocess(tokenize(text))); }

std::string generation_text(const ToyLM& lm, const Generation& g) {
  std::vector<std::string> words;
  for (const auto& t : lm.decode(g.tokens)) {
    if (t != kBos && t != kEos) words.push_back(t);
  }
  return detokenize(postprocess(words));
}

// Persistence -----------------------------------------------------------------

void save_model(const ToyLM& lm, const BaselineHead& head, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  json j = {{"vocabulary", lm.vocabulary},
            {"order", lm.order},
            {"state_dim", lm.state_dim},
            {"logits", lm.logits},
            {"states", lm.states},
            {"head", {{"weights", head.weights}, {"bias", head.bias}}}};
  out << j.dump() << '\n';
}

std::pair<ToyLM, BaselineHead> load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  try {
    const auto j = json::parse(in);
    ToyLM lm(j.at("vocabulary").get<std::vector<std::string>>(), j.at("order").get<int>(), 0,
             j.at("state_dim").get<std::size_t>());
    lm.logits = j.at("logits").get<std::vector<double>>();
    lm.states = j.at("states").get<std::vector<double>>();
    lm.validate();
    BaselineHead head(lm.state_dim);
    head.weights = j.at("head").at("weights").get<std::vector<double>>();
    head.bias = j.at("head").at("bias").get<double>();
    if (head.weights.size() != lm.state_dim) {
      throw InputError(path.string() + ": baseline head width differs from the state dimension");
    }
    return {std::move(lm), std::move(head)};
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void save_generations(const ToyLM& lm, const std::vector<Generation>& gens,
                      const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& g : gens) {
    json rec = {{"prompt", detokenize(g.prompt)},
                {"text", generation_text(lm, g)},
                {"tokens", lm.decode(g.tokens)},
                {"log_probs", g.log_probs}};
    out << rec.dump() << '\n';
  }
}

void save_loss_curve(const std::vector<EpochLosses>& curve, LossMode mode,
                     const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  const char* d_name = mode == LossMode::SS ? "l_s" : "l_d";
  const char* total_name = mode == LossMode::SD ? "l_sd" : mode == LossMode::SS ? "l_ss" : "l_total";
  out << "epoch,l_r," << d_name << ",c_mean," << total_name << ",l_br\n";
  for (const auto& e : curve) {
    out << e.epoch << ',' << format_double(e.l_r) << ',' << format_double(e.l_d) << ','
        << format_double(e.c) << ',' << format_double(e.total) << ',' << format_double(e.l_br)
        << '\n';
  }
}

}  // namespace stylefuse::infuse
