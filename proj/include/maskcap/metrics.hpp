#pragma once

// Evaluation harness: temporal IoU matching, caption metrics (BLEU-N,
// ROUGE-L, CIDEr), dense-captioning scores averaged over tIoU thresholds,
// localization precision/recall/F1, and a SODA-style monotone-matching score
// with ROUGE-L standing in for METEOR (reports label the substitution).

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "maskcap/errors.hpp"
#include "maskcap/types.hpp"

namespace maskcap {

using Caption = std::vector<int>;

inline const std::vector<double>& default_tiou_thresholds() {
  static const std::vector<double> t{0.3, 0.5, 0.7, 0.9};
  return t;
}

// |intersection| / |union|; 0 when the union has zero length.
inline double tiou(const Segment& a, const Segment& b) {
  a.validate();
  b.validate();
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

// Greedy one-to-one matching in descending tIoU order; only pairs with
// tIoU >= threshold are eligible. Ties resolve by prediction index, then
// ground-truth index.
inline std::vector<std::pair<int, int>> greedy_match(const std::vector<Segment>& preds,
                                                     const std::vector<Segment>& gts,
                                                     double threshold) {
  struct Edge {
    double iou;
    int p, g;
  };
  std::vector<Edge> edges;
  for (int p = 0; p < static_cast<int>(preds.size()); ++p)
    for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
      const double v = tiou(preds[static_cast<std::size_t>(p)], gts[static_cast<std::size_t>(g)]);
      if (v >= threshold && v > 0.0) edges.push_back({v, p, g});
    }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });
  std::vector<bool> p_used(preds.size(), false), g_used(gts.size(), false);
  std::vector<std::pair<int, int>> out;
  for (const Edge& e : edges) {
    if (p_used[static_cast<std::size_t>(e.p)] || g_used[static_cast<std::size_t>(e.g)]) continue;
    p_used[static_cast<std::size_t>(e.p)] = true;
    g_used[static_cast<std::size_t>(e.g)] = true;
    out.push_back({e.p, e.g});
  }
  return out;
}

struct LocalizationReport {
  std::vector<double> thresholds;
  std::vector<double> recall_at;
  std::vector<double> precision_at;
  double r_avg = 0.0;
  double p_avg = 0.0;
  double f1 = 0.0;
  bool empty_predictions = false;
};

// Corpus-level recall/precision at each threshold (matched counts summed
// over videos), then averaged over thresholds; F1 = harmonic mean of the
// averages.
inline LocalizationReport localization_prf(const std::vector<std::vector<Segment>>& preds,
                                           const std::vector<std::vector<Segment>>& gts,
                                           const std::vector<double>& thresholds =
                                               default_tiou_thresholds()) {
  if (preds.size() != gts.size())
    throw ContractViolation("localization_prf: per-video lists differ in length");
  LocalizationReport rep;
  rep.thresholds = thresholds;
  std::size_t total_preds = 0, total_gts = 0;
  for (const auto& p : preds) total_preds += p.size();
  for (const auto& g : gts) total_gts += g.size();
  rep.empty_predictions = total_preds == 0;
  for (double thr : thresholds) {
    std::size_t matched = 0;
    for (std::size_t v = 0; v < preds.size(); ++v)
      matched += greedy_match(preds[v], gts[v], thr).size();
    rep.recall_at.push_back(total_gts == 0 ? 0.0
                                           : static_cast<double>(matched) /
                                                 static_cast<double>(total_gts));
    rep.precision_at.push_back(total_preds == 0 ? 0.0
                                                : static_cast<double>(matched) /
                                                      static_cast<double>(total_preds));
  }
  for (double r : rep.recall_at) rep.r_avg += r;
  for (double p : rep.precision_at) rep.p_avg += p;
  rep.r_avg /= static_cast<double>(thresholds.size());
  rep.p_avg /= static_cast<double>(thresholds.size());
  rep.f1 = (rep.r_avg + rep.p_avg) > 0.0 ? 2.0 * rep.r_avg * rep.p_avg / (rep.r_avg + rep.p_avg)
                                         : 0.0;
  return rep;
}

// ---- caption metrics -------------------------------------------------------

namespace detail {

using NgramCounts = std::map<std::vector<int>, int>;

inline NgramCounts ngram_counts(const Caption& c, int n) {
  NgramCounts out;
  if (static_cast<int>(c.size()) < n) return out;
  for (std::size_t i = 0; i + n <= c.size(); ++i)
    out[std::vector<int>(c.begin() + static_cast<std::ptrdiff_t>(i),
                         c.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1;
  return out;
}

}  // namespace detail

// Corpus-level BLEU-n: modified n-gram precision with the geometric mean over
// orders 1..n and the brevity penalty. `references[i]` lists the references
// for candidate i.
inline double bleu_n(const std::vector<Caption>& candidates,
                     const std::vector<std::vector<Caption>>& references, int n,
                     bool* empty_candidate_flag = nullptr) {
  if (n < 1 || n > 4) throw ContractViolation("bleu_n: n must be in 1..4");
  if (candidates.size() != references.size())
    throw ContractViolation("bleu_n: candidate/reference count mismatch");
  if (empty_candidate_flag) *empty_candidate_flag = false;
  double log_sum = 0.0;
  for (int order = 1; order <= n; ++order) {
    long long clipped = 0, total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].empty() && empty_candidate_flag) *empty_candidate_flag = true;
      const auto cand_counts = detail::ngram_counts(candidates[i], order);
      detail::NgramCounts max_ref;
      for (const Caption& r : references[i])
        for (const auto& [g, c] : detail::ngram_counts(r, order))
          max_ref[g] = std::max(max_ref[g], c);
      for (const auto& [g, c] : cand_counts) {
        total += c;
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) clipped += std::min(c, it->second);
      }
    }
    if (total == 0 || clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }
  long long cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<long long>(candidates[i].size());
    // closest reference length; ties go to the shorter one
    long long best = 0;
    long long best_diff = -1;
    for (const Caption& r : references[i]) {
      const long long diff =
          std::llabs(static_cast<long long>(r.size()) - static_cast<long long>(candidates[i].size()));
      if (best_diff < 0 || diff < best_diff ||
          (diff == best_diff && static_cast<long long>(r.size()) < best)) {
        best_diff = diff;
        best = static_cast<long long>(r.size());
      }
    }
    ref_len += best;
  }
  const double bp = cand_len >= ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_sum / n);
}

// LCS-based F-measure with the conventional recall-weighted beta = 1.2.
inline double rouge_l(const Caption& candidate, const Caption& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t m = candidate.size(), n = reference.size();
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      if (candidate[i - 1] == reference[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[n]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(m);
  const double r = lcs / static_cast<double>(n);
  constexpr double beta = 1.2;
  return (1.0 + beta * beta) * r * p / (r + beta * beta * p);
}

// CIDEr over a fixed reference corpus: TF-IDF n-gram vectors for n = 1..4,
// cosine between candidate and each reference averaged, mean over n, times
// 10. Document frequencies count reference documents (one video's reference
// set each) containing the n-gram.
class CiderScorer {
 public:
  explicit CiderScorer(const std::vector<std::vector<Caption>>& documents)
      : n_docs_(documents.size()) {
    for (const auto& doc : documents) {
      for (int n = 1; n <= 4; ++n) {
        detail::NgramCounts seen;
        for (const Caption& c : doc)
          for (const auto& [g, cnt] : detail::ngram_counts(c, n)) seen[g] += cnt;
        for (const auto& [g, cnt] : seen) df_[static_cast<std::size_t>(n - 1)][g] += 1;
      }
    }
  }

  bool degenerate() const { return n_docs_ <= 1; }
  std::size_t document_count() const { return n_docs_; }

  double score_pair(const Caption& candidate, const std::vector<Caption>& refs) const {
    if (degenerate()) return 0.0;
    double total = 0.0;
    for (int n = 1; n <= 4; ++n) {
      const auto cand_vec = tfidf(candidate, n);
      const double cand_norm = norm(cand_vec);
      double sim = 0.0;
      for (const Caption& r : refs) {
        const auto ref_vec = tfidf(r, n);
        const double ref_norm = norm(ref_vec);
        if (cand_norm == 0.0 || ref_norm == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, w] : cand_vec) {
          const auto it = ref_vec.find(g);
          if (it != ref_vec.end()) dot += w * it->second;
        }
        sim += dot / (cand_norm * ref_norm);
      }
      total += refs.empty() ? 0.0 : sim / static_cast<double>(refs.size());
    }
    return 10.0 * total / 4.0;
  }

 private:
  using Vec = std::map<std::vector<int>, double>;

  Vec tfidf(const Caption& c, int n) const {
    Vec out;
    for (const auto& [g, cnt] : detail::ngram_counts(c, n)) {
      const auto& dfn = df_[static_cast<std::size_t>(n - 1)];
      const auto it = dfn.find(g);
      const double df = it == dfn.end() ? 1.0 : std::max(1.0, static_cast<double>(it->second));
      out[g] = static_cast<double>(cnt) * std::log(static_cast<double>(n_docs_) / df);
    }
    return out;
  }

  static double norm(const Vec& v) {
    double s = 0.0;
    for (const auto& [g, w] : v) s += w * w;
    return std::sqrt(s);
  }

  std::size_t n_docs_;
  std::map<std::vector<int>, int> df_[4];
};

// ---- dense-captioning score -------------------------------------------------

struct DvcEvent {
  Segment seg;
  Caption caption;
};

struct ScoreReport {
  std::vector<double> thresholds;
  // metric name -> per-threshold values, same order as thresholds
  std::vector<std::string> metric_names;
  std::vector<std::vector<double>> per_threshold;
  std::vector<double> averaged;
  LocalizationReport localization;
  double soda = 0.0;
  bool cider_degenerate = false;
  bool no_predictions = false;

  double averaged_for(const std::string& name) const {
    for (std::size_t i = 0; i < metric_names.size(); ++i)
      if (metric_names[i] == name) return averaged[i];
    throw ContractViolation("ScoreReport: unknown metric '" + name + "'");
  }

  void write_csv(std::ostream& os) const {
    os << "metric";
    for (double t : thresholds) os << ",tiou_" << t;
    os << ",average\n";
    for (std::size_t i = 0; i < metric_names.size(); ++i) {
      os << metric_names[i];
      for (double v : per_threshold[i]) os << ',' << v;
      os << ',' << averaged[i] << '\n';
    }
    os << "loc_recall";
    for (double v : localization.recall_at) os << ',' << v;
    os << ',' << localization.r_avg << '\n';
    os << "loc_precision";
    for (double v : localization.precision_at) os << ',' << v;
    os << ',' << localization.p_avg << '\n';
    os << "loc_f1";
    for (std::size_t i = 0; i < thresholds.size(); ++i) os << ',';
    os << localization.f1 << '\n';
    os << "soda_lite";
    for (std::size_t i = 0; i < thresholds.size(); ++i) os << ',';
    os << soda << '\n';
  }

  void write_text(std::ostream& os) const {
    os << "tIoU thresholds:";
    for (double t : thresholds) os << ' ' << t;
    os << "\n";
    for (std::size_t i = 0; i < metric_names.size(); ++i) {
      os << metric_names[i] << ":";
      for (double v : per_threshold[i]) os << ' ' << v;
      os << "  avg " << averaged[i] << "\n";
    }
    os << "localization R@Avg " << localization.r_avg << "  P@Avg " << localization.p_avg
       << "  F1 " << localization.f1 << "\n";
    os << "soda_lite (ROUGE-L standing in for METEOR) " << soda << "\n";
    if (cider_degenerate) os << "flag: single-document corpus, CIDEr IDF degenerate\n";
    if (no_predictions) os << "flag: no predictions\n";
  }
};

// Per threshold: greedy one-to-one matching at tIoU >= threshold; each text
// metric is computed per prediction against its matched reference, with
// unmatched predictions scoring 0; values then average across thresholds.
inline ScoreReport dvc_score(const std::vector<std::vector<DvcEvent>>& preds,
                             const std::vector<std::vector<DvcEvent>>& gts,
                             const std::vector<double>& thresholds = default_tiou_thresholds()) {
  if (preds.size() != gts.size())
    throw ContractViolation("dvc_score: per-video lists differ in length");
  ScoreReport rep;
  rep.thresholds = thresholds;
  rep.metric_names = {"bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider"};
  rep.per_threshold.assign(rep.metric_names.size(), {});

  std::vector<std::vector<Caption>> ref_documents;
  for (const auto& video : gts) {
    std::vector<Caption> doc;
    for (const DvcEvent& e : video) doc.push_back(e.caption);
    ref_documents.push_back(std::move(doc));
  }
  CiderScorer cider(ref_documents);
  rep.cider_degenerate = cider.degenerate();

  std::size_t total_preds = 0;
  for (const auto& v : preds) total_preds += v.size();
  rep.no_predictions = total_preds == 0;

  for (double thr : thresholds) {
    std::vector<double> sums(rep.metric_names.size(), 0.0);
    for (std::size_t v = 0; v < preds.size(); ++v) {
      std::vector<Segment> ps, gs;
      for (const DvcEvent& e : preds[v]) ps.push_back(e.seg);
      for (const DvcEvent& e : gts[v]) gs.push_back(e.seg);
      for (const auto& [p, g] : greedy_match(ps, gs, thr)) {
        const Caption& cand = preds[v][static_cast<std::size_t>(p)].caption;
        const Caption& ref = gts[v][static_cast<std::size_t>(g)].caption;
        for (int n = 1; n <= 4; ++n)
          sums[static_cast<std::size_t>(n - 1)] += bleu_n({cand}, {{ref}}, n);
        sums[4] += rouge_l(cand, ref);
        sums[5] += cider.score_pair(cand, {ref});
      }
    }
    for (std::size_t mi = 0; mi < sums.size(); ++mi)
      rep.per_threshold[mi].push_back(total_preds == 0 ? 0.0
                                                       : sums[mi] / static_cast<double>(total_preds));
  }
  for (std::size_t mi = 0; mi < rep.metric_names.size(); ++mi) {
    double s = 0.0;
    for (double v : rep.per_threshold[mi]) s += v;
    rep.averaged.push_back(s / static_cast<double>(thresholds.size()));
  }
  return rep;
}

// SODA-style score for one video: dynamic-programming maximum-score monotone
// matching, pair score = tIoU * ROUGE-L; final value is the F-measure of the
// matched score over |preds| and |gts|.
inline double soda_lite(const std::vector<DvcEvent>& preds, const std::vector<DvcEvent>& gts) {
  if (preds.empty() || gts.empty()) return 0.0;
  const std::size_t m = preds.size(), n = gts.size();
  std::vector<std::vector<double>> dp(m + 1, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 1; i <= m; ++i)
    for (std::size_t j = 1; j <= n; ++j) {
      const double s = tiou(preds[i - 1].seg, gts[j - 1].seg) *
                       rouge_l(preds[i - 1].caption, gts[j - 1].caption);
      dp[i][j] = std::max({dp[i - 1][j], dp[i][j - 1], dp[i - 1][j - 1] + s});
    }
  const double best = dp[m][n];
  const double p = best / static_cast<double>(m);
  const double r = best / static_cast<double>(n);
  return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

// Corpus-level SODA-lite: mean of per-video scores.
inline double soda_lite_corpus(const std::vector<std::vector<DvcEvent>>& preds,
                               const std::vector<std::vector<DvcEvent>>& gts) {
  if (preds.size() != gts.size())
    throw ContractViolation("soda_lite: per-video lists differ in length");
  if (preds.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t v = 0; v < preds.size(); ++v) s += soda_lite(preds[v], gts[v]);
  return s / static_cast<double>(preds.size());
}

}  // namespace maskcap
