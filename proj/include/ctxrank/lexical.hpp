#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctxrank/rng.hpp"
#include "ctxrank/session.hpp"

namespace ctxrank {

// Unigram language-model index over the catalog titles. Collection counts
// are the sums of the per-title counts; the floor probability keeps scores
// finite for terms the collection has never seen.
class LanguageModelIndex {
 public:
  explicit LanguageModelIndex(const Catalog& catalog) {
    for (const auto& [id, product] : catalog.products) {
      auto& tf = item_tf_[id];
      for (const std::string& w : product.title) {
        ++tf[w];
        ++collection_tf_[w];
        ++collection_len_;
      }
      item_len_[id] = static_cast<int>(product.title.size());
    }
    if (collection_len_ == 0) throw std::invalid_argument("language model index: empty collection");
  }

  int item_length(ItemId id) const {
    auto it = item_len_.find(id);
    if (it == item_len_.end()) throw std::out_of_range("unknown item " + std::to_string(id));
    return it->second;
  }
  int term_freq(ItemId id, const std::string& term) const {
    auto it = item_tf_.find(id);
    if (it == item_tf_.end()) throw std::out_of_range("unknown item " + std::to_string(id));
    auto jt = it->second.find(term);
    return jt == it->second.end() ? 0 : jt->second;
  }
  double collection_prob(const std::string& term) const {
    auto it = collection_tf_.find(term);
    if (it == collection_tf_.end()) return 0.0;
    return static_cast<double>(it->second) / static_cast<double>(collection_len_);
  }
  std::int64_t collection_length() const { return collection_len_; }
  double floor_prob() const { return 1.0 / (10.0 * static_cast<double>(collection_len_)); }

  // Dirichlet-smoothed title model, clamped from below at floor_prob so the
  // log stays finite for any term and any mu.
  double smoothed_prob(ItemId id, const std::string& term, double mu) const {
    const double p = (term_freq(id, term) + mu * collection_prob(term)) /
                     (item_length(id) + mu);
    return std::max(p, floor_prob());
  }

 private:
  std::unordered_map<ItemId, std::unordered_map<std::string, int>> item_tf_;
  std::unordered_map<ItemId, int> item_len_;
  std::unordered_map<std::string, std::int64_t> collection_tf_;
  std::int64_t collection_len_ = 0;
};

inline double ql_score(const LanguageModelIndex& index, const Tokens& query, ItemId item,
                       double mu = 200.0) {
  if (!(mu > 0.0)) throw std::invalid_argument("ql_score: mu must be positive");
  double s = 0.0;
  for (const std::string& w : query) s += std::log(index.smoothed_prob(item, w, mu));
  return s;
}

struct Rm3Params {
  double alpha = 0.8;        // feedback weight; 0 reduces to the plain query model
  int n_expansion_terms = 40;
  double mu = 200.0;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("rm3: alpha outside [0,1]");
    if (n_expansion_terms < 1) throw std::invalid_argument("rm3: n_expansion_terms must be >= 1");
    if (!(mu > 0.0)) throw std::invalid_argument("rm3: mu must be positive");
  }
};

using TermDistribution = std::vector<std::pair<std::string, double>>;

namespace lexical_detail {

// Dirichlet-smoothed unigram model of a raw token sequence (a feedback doc,
// which need not be a catalog title).
struct DocModel {
  std::unordered_map<std::string, int> tf;
  int len = 0;

  explicit DocModel(const Tokens& doc) {
    for (const std::string& w : doc) ++tf[w];
    len = static_cast<int>(doc.size());
  }
  double prob(const LanguageModelIndex& index, const std::string& term, double mu) const {
    auto it = tf.find(term);
    const int f = it == tf.end() ? 0 : it->second;
    const double p = (f + mu * index.collection_prob(term)) / (len + mu);
    return std::max(p, index.floor_prob());
  }
};

}  // namespace lexical_detail

// Relevance-model estimate from feedback documents:
//   P(w|R)  proportional to  sum_d P(w|d) P(q|d)
// over the union of the feedback docs' terms, truncated to the n_terms
// heaviest (ties broken lexicographically) and renormalized. P(q|d) enters
// through max-shifted logs, so absolute query likelihood scale cancels.
inline TermDistribution rm1_estimate(const LanguageModelIndex& index, const Tokens& query,
                                     std::span<const Tokens> feedback_docs, double mu = 200.0,
                                     int n_terms = 20) {
  if (feedback_docs.empty()) throw std::invalid_argument("rm1_estimate: empty feedback");
  if (n_terms < 1) throw std::invalid_argument("rm1_estimate: n_terms must be >= 1");

  std::vector<lexical_detail::DocModel> docs;
  docs.reserve(feedback_docs.size());
  for (const auto& d : feedback_docs) docs.emplace_back(d);

  std::vector<double> log_w(docs.size(), 0.0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (const std::string& w : query) log_w[i] += std::log(docs[i].prob(index, w, mu));
  }
  double mx = *std::max_element(log_w.begin(), log_w.end());
  std::vector<double> doc_w(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) doc_w[i] = std::exp(log_w[i] - mx);

  std::vector<std::string> vocab;
  for (const auto& d : feedback_docs) vocab.insert(vocab.end(), d.begin(), d.end());
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());

  TermDistribution dist;
  dist.reserve(vocab.size());
  double total = 0.0;
  for (const std::string& w : vocab) {
    double mass = 0.0;
    for (std::size_t i = 0; i < docs.size(); ++i) mass += docs[i].prob(index, w, mu) * doc_w[i];
    dist.emplace_back(w, mass);
    total += mass;
  }
  for (auto& [w, p] : dist) p /= total;

  std::sort(dist.begin(), dist.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(dist.size()) > n_terms) dist.resize(n_terms);
  double kept = 0.0;
  for (const auto& [w, p] : dist) kept += p;
  for (auto& [w, p] : dist) p /= kept;
  return dist;
}

// KL-divergence style retrieval score under the interpolated query model:
//   score(d) = sum_w [(1-alpha) P_mle(w|q) + alpha P_rm1(w)] log P(w|d)
// Empty feedback drops the expansion part entirely (alpha treated as 0), so
// a user without history scores exactly like the plain query model.
inline double rm3_score(const LanguageModelIndex& index, const Tokens& query,
                        std::span<const Tokens> feedback_docs, const Rm3Params& params,
                        ItemId item) {
  params.validate();
  const double alpha = feedback_docs.empty() ? 0.0 : params.alpha;
  // with no expansion mass the interpolated model is the query model; go
  // through ql_score itself so the scores are bit-identical, not merely
  // order-equivalent up to rounding
  if (alpha == 0.0) return ql_score(index, query, item, params.mu);
  std::unordered_map<std::string, double> model;
  if (alpha < 1.0 && !query.empty()) {
    const double per = (1.0 - alpha) / static_cast<double>(query.size());
    for (const std::string& w : query) model[w] += per;
  }
  if (alpha > 0.0) {
    const auto rm1 = rm1_estimate(index, query, feedback_docs, params.mu, params.n_expansion_terms);
    for (const auto& [w, p] : rm1) model[w] += alpha * p;
  }
  // deterministic summation order
  std::vector<std::pair<std::string, double>> terms(model.begin(), model.end());
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (const auto& [w, p] : terms) s += p * std::log(index.smoothed_prob(item, w, params.mu));
  return s;
}

inline std::vector<ItemId> ql_rank(const LanguageModelIndex& index, const Tokens& query,
                                   std::span<const ItemId> candidates, double mu = 200.0) {
  std::vector<double> scores(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    scores[i] = ql_score(index, query, candidates[i], mu);
  std::vector<int> idx(candidates.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<ItemId> out;
  out.reserve(candidates.size());
  for (int i : idx) out.push_back(candidates[i]);
  return out;
}

inline std::vector<ItemId> rm3_rank(const LanguageModelIndex& index, const Tokens& query,
                                    std::span<const Tokens> feedback_docs, const Rm3Params& params,
                                    std::span<const ItemId> candidates) {
  std::vector<double> scores(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    scores[i] = rm3_score(index, query, feedback_docs, params, candidates[i]);
  std::vector<int> idx(candidates.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<ItemId> out;
  out.reserve(candidates.size());
  for (int i : idx) out.push_back(candidates[i]);
  return out;
}

// Training-split purchase counts, descending; ties keep candidate order.
inline std::vector<ItemId> pop_rank(const Catalog& catalog, std::span<const ItemId> candidates) {
  std::vector<ItemId> out(candidates.begin(), candidates.end());
  std::stable_sort(out.begin(), out.end(), [&](ItemId a, ItemId b) {
    return catalog.purchase_count(a) > catalog.purchase_count(b);
  });
  return out;
}

// Uniform permutation keyed by (seed, entry), independent of everything else.
inline std::vector<ItemId> rand_rank(std::span<const ItemId> candidates, std::uint64_t seed,
                                     std::uint64_t entry_key = 0) {
  std::vector<ItemId> out(candidates.begin(), candidates.end());
  Rng rng(substream_seed(seed, stream::kRandRank, entry_key));
  rng.shuffle(out);
  return out;
}

// Per-user purchase history index over a training split: titles of a user's
// purchases from strictly earlier weeks, one title per purchase, week-ordered
// (ties keep input session order). Anonymous or unseen users get no feedback.
class LongTermHistory {
 public:
  explicit LongTermHistory(std::span<const QuerySession> history) {
    for (const auto& s : history) {
      if (!s.user_id) continue;
      auto& rows = by_user_[*s.user_id];
      for (const auto& page : s.pages) {
        for (ItemId id : page.purchases) rows.emplace_back(s.week, id);
      }
    }
    for (auto& [u, rows] : by_user_) {
      std::stable_sort(rows.begin(), rows.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
    }
  }

  std::vector<Tokens> feedback_docs(std::optional<UserId> user_id, int week,
                                    const Catalog& catalog) const {
    std::vector<Tokens> docs;
    if (!user_id) return docs;
    auto it = by_user_.find(*user_id);
    if (it == by_user_.end()) return docs;
    for (const auto& [w, id] : it->second) {
      if (w >= week) break;
      docs.push_back(catalog.at(id).title);
    }
    return docs;
  }

 private:
  std::unordered_map<UserId, std::vector<std::pair<int, ItemId>>> by_user_;
};

inline std::vector<Tokens> lc_feedback_docs(std::span<const QuerySession> history,
                                            std::optional<UserId> user_id, int week,
                                            const Catalog& catalog) {
  return LongTermHistory(history).feedback_docs(user_id, week, catalog);
}

}  // namespace ctxrank
