#include "stylefuse/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <boost/math/special_functions/beta.hpp>

#include "stylefuse/common.hpp"

namespace stylefuse::eval {

namespace {

RougeComponent make_component(double overlap, double hyp_total, double ref_total) {
  RougeComponent c;
  c.precision = hyp_total > 0 ? overlap / hyp_total : 0.0;
  c.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
  return c;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks,
                                                             std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

std::vector<double> raw_column(const FeatureMatrix& m, std::size_t c) {
  std::vector<double> out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double v = m.at(r, c);
    if (std::isnan(v)) continue;
    if (m.standardized && !m.constant[c]) v = v * m.sds[c] + m.means[c];
    out.push_back(v);
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

}  // namespace

// ROUGE -----------------------------------------------------------------------

std::vector<std::string> rouge_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch) || ch >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

RougeComponent rouge_n(const std::vector<std::string>& reference,
                       const std::vector<std::string>& hypothesis, std::size_t n) {
  if (n < 1) throw InputError("ROUGE-N needs n >= 1");
  const auto ref = ngram_counts(reference, n);
  const auto hyp = ngram_counts(hypothesis, n);
  double overlap = 0, ref_total = 0, hyp_total = 0;
  for (const auto& [g, c] : ref) ref_total += static_cast<double>(c);
  for (const auto& [g, c] : hyp) {
    hyp_total += static_cast<double>(c);
    if (auto it = ref.find(g); it != ref.end()) {
      overlap += static_cast<double>(std::min(c, it->second));
    }
  }
  return make_component(overlap, hyp_total, ref_total);
}

RougeComponent rouge_l(const std::vector<std::string>& reference,
                       const std::vector<std::string>& hypothesis) {
  const std::size_t m = reference.size(), n = hypothesis.size();
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = reference[i - 1] == hypothesis[j - 1] ? prev[j - 1] + 1
                                                     : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return make_component(static_cast<double>(prev[n]), static_cast<double>(n),
                        static_cast<double>(m));
}

RougeScores rouge(const std::string& reference, const std::string& hypothesis) {
  const auto ref = rouge_tokens(reference);
  const auto hyp = rouge_tokens(hypothesis);
  RougeScores s;
  if (hyp.empty()) {
    s.empty_hypothesis = true;
    return s;
  }
  s.rouge1 = rouge_n(ref, hyp, 1);
  s.rouge2 = rouge_n(ref, hyp, 2);
  s.rougeL = rouge_l(ref, hyp);
  return s;
}

RougeScores mean_rouge(const std::vector<std::pair<std::string, std::string>>& pairs) {
  RougeScores total;
  if (pairs.empty()) return total;
  auto add = [](RougeComponent& a, const RougeComponent& b) {
    a.precision += b.precision;
    a.recall += b.recall;
    a.f1 += b.f1;
  };
  for (const auto& [ref, hyp] : pairs) {
    const auto s = rouge(ref, hyp);
    add(total.rouge1, s.rouge1);
    add(total.rouge2, s.rouge2);
    add(total.rougeL, s.rougeL);
    total.empty_hypothesis = total.empty_hypothesis || s.empty_hypothesis;
  }
  const double n = static_cast<double>(pairs.size());
  for (auto* c : {&total.rouge1, &total.rouge2, &total.rougeL}) {
    c->precision /= n;
    c->recall /= n;
    c->f1 /= n;
  }
  return total;
}

// Welch -----------------------------------------------------------------------

WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw InputError("Welch test needs at least two values per sample");
  }
  auto moments = [](const std::vector<double>& x) {
    const double m = mean_of(x);
    double ss = 0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::pair{m, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  WelchResult r;
  if (sa + sb == 0) {
    r.degenerate = true;
    r.df = na + nb - 2;
    if (ma == mb) {
      r.t = 0;
      r.p = 1;
    } else {
      r.t = ma > mb ? std::numeric_limits<double>::infinity()
                    : -std::numeric_limits<double>::infinity();
      r.p = 0;
    }
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1) + sb * sb / (nb - 1));
  // Two-sided tail of Student's t: I_{df/(df+t^2)}(df/2, 1/2).
  r.p = boost::math::ibeta(r.df / 2, 0.5, r.df / (r.df + r.t * r.t));
  return r;
}

// Significance ----------------------------------------------------------------

std::string significance_bucket(double p) {
  if (p < 0.0001) return "p<0.0001";
  if (p < 0.001) return "p<0.001";
  if (p < 0.01) return "p<0.01";
  if (p < 0.05) return "p<0.05";
  return "ns";
}

const FeatureShift* SignificanceReport::find(const std::string& feature) const {
  for (const auto& f : features) {
    if (f.feature == feature) return &f;
  }
  return nullptr;
}

SignificanceReport significance_report(const FeatureMatrix& baseline, const FeatureMatrix& model,
                                       const std::vector<bayes::CorrelationResult>& correlations) {
  for (const auto& name : baseline.names) {
    if (!model.column_of(name)) {
      throw InputError("model feature matrix is missing column '" + name + "'");
    }
  }
  for (const auto& name : model.names) {
    if (!baseline.column_of(name)) {
      throw InputError("baseline feature matrix is missing column '" + name + "'");
    }
  }
  std::map<std::string, const bayes::CorrelationResult*> by_feature;
  for (const auto& c : correlations) by_feature[c.feature] = &c;

  SignificanceReport report;
  for (std::size_t cb = 0; cb < baseline.cols(); ++cb) {
    const auto& name = baseline.names[cb];
    const auto xb = raw_column(baseline, cb);
    const auto xm = raw_column(model, *model.column_of(name));
    FeatureShift s;
    s.feature = name;
    s.baseline_mean = mean_of(xb);
    s.model_mean = mean_of(xm);
    if (xb.size() >= 2 && xm.size() >= 2) {
      s.test = welch_t_test(xm, xb);
    } else {
      s.test.degenerate = true;
    }
    s.bucket = significance_bucket(s.test.p);
    if (auto it = by_feature.find(name); it != by_feature.end()) {
      const auto& pooled = it->second->pooled;
      s.gamma = pooled.mean;
      if (pooled.excludes_zero()) {
        const double shift = s.model_mean - s.baseline_mean;
        s.direction_correct = (shift > 0 && pooled.mean > 0) || (shift < 0 && pooled.mean < 0);
      }
    }
    report.features.push_back(std::move(s));
  }
  return report;
}

double agreement_score(const SignificanceReport& report,
                       const std::vector<bayes::CorrelationResult>& correlations) {
  double num = 0, den = 0;
  std::size_t used = 0;
  for (const auto& c : correlations) {
    if (!c.pooled.excludes_zero()) continue;
    const auto* s = report.find(c.feature);
    if (!s) continue;
    const double w = std::abs(c.pooled.mean);
    double a = 0;
    const bool correct = (s->model_mean - s->baseline_mean > 0 && c.pooled.mean > 0) ||
                         (s->model_mean - s->baseline_mean < 0 && c.pooled.mean < 0);
    if (correct) a = s->test.p < 0.05 ? 1.0 : 0.5;
    num += w * a;
    den += w;
    ++used;
  }
  if (used == 0) {
    throw InputError("no features shared by the report and correlations with intervals excluding 0");
  }
  if (den == 0) return 0.0;
  return 100.0 * num / den;
}

// Reports ---------------------------------------------------------------------

std::map<std::string, double> load_bertscores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::map<std::string, double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("model,", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw InputError(path.string() + ":" + std::to_string(lineno) +
                       ": expected <model>,<bertscore_f1>");
    }
    try {
      std::size_t used = 0;
      const auto value = line.substr(comma + 1);
      const double v = std::stod(value, &used);
      if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
      out[line.substr(0, comma)] = v;
    } catch (const std::exception&) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": invalid score");
    }
  }
  return out;
}

void write_rouge_csv(const std::vector<ModelEvaluation>& models, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "model,generations,rouge1_p,rouge1_r,rouge1_f1,rouge2_p,rouge2_r,rouge2_f1,"
         "rougeL_p,rougeL_r,rougeL_f1,bertscore_f1\n";
  for (const auto& m : models) {
    out << m.model << ',' << m.generations;
    for (const auto* c : {&m.rouge.rouge1, &m.rouge.rouge2, &m.rouge.rougeL}) {
      out << ',' << format_double(c->precision) << ',' << format_double(c->recall) << ','
          << format_double(c->f1);
    }
    out << ',' << (m.bertscore ? format_double(*m.bertscore) : "") << '\n';
  }
}

void write_significance_csv(const std::vector<ModelEvaluation>& models,
                            const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "model,feature,baseline_mean,model_mean,t,df,p,bucket,gamma,direction_correct\n";
  for (const auto& m : models) {
    if (!m.significance) continue;
    for (const auto& f : m.significance->features) {
      out << m.model << ',' << f.feature << ',' << format_double(f.baseline_mean) << ','
          << format_double(f.model_mean) << ',' << format_double(f.test.t) << ','
          << format_double(f.test.df) << ',' << format_double(f.test.p) << ',' << f.bucket << ','
          << (f.gamma ? format_double(*f.gamma) : "") << ','
          << (f.direction_correct ? (*f.direction_correct ? "true" : "false") : "") << '\n';
    }
  }
}

std::string rouge_markdown(const std::vector<ModelEvaluation>& models) {
  std::ostringstream md;
  md << "| Model | ROUGE-1 | ROUGE-2 | ROUGE-L | BERTScore |\n";
  md << "|---|---|---|---|---|\n";
  for (const auto& m : models) {
    md << "| " << m.model << " | " << fixed(m.rouge.rouge1.f1, 4) << " | "
       << fixed(m.rouge.rouge2.f1, 4) << " | " << fixed(m.rouge.rougeL.f1, 4) << " | "
       << (m.bertscore ? fixed(*m.bertscore, 4) : "n/a") << " |\n";
  }
  return md.str();
}

std::string significance_markdown(const std::vector<ModelEvaluation>& models) {
  std::vector<std::string> features;
  for (const auto& m : models) {
    if (!m.significance) continue;
    for (const auto& f : m.significance->features) {
      if (std::find(features.begin(), features.end(), f.feature) == features.end()) {
        features.push_back(f.feature);
      }
    }
  }
  std::ostringstream md;
  md << "| Feature |";
  for (const auto& m : models) md << ' ' << m.model << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < models.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& name : features) {
    md << "| " << name << " |";
    for (const auto& m : models) {
      const FeatureShift* f = m.significance ? m.significance->find(name) : nullptr;
      if (!f) {
        md << " |";
        continue;
      }
      std::string mark = "-";
      if (f->direction_correct) mark = *f->direction_correct ? "✓" : "✗";
      md << ' ' << mark << ' ' << f->bucket << " |";
    }
    md << '\n';
  }
  return md.str();
}

std::string agreement_markdown(const std::vector<ModelEvaluation>& models) {
  std::ostringstream md;
  md << "| Model | Agreement (%) |\n|---|---|\n";
  for (const auto& m : models) {
    md << "| " << m.model << " | " << (m.agreement ? fixed(*m.agreement, 2) : "n/a") << " |\n";
  }
  return md.str();
}

}  // namespace stylefuse::eval
