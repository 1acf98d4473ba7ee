#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ctxrank/cem.hpp"
#include "ctxrank/harness.hpp"
#include "ctxrank/io.hpp"
#include "ctxrank/lexical.hpp"
#include "ctxrank/metrics.hpp"
#include "ctxrank/rng.hpp"
#include "ctxrank/session.hpp"
#include "ctxrank/stats.hpp"
#include "ctxrank/synth.hpp"

namespace ctxrank {
namespace selftest_detail {

// Small random model instance for gradient and scoring checks: a handful of
// items over a tiny vocabulary, one entry, random mixing weights.
struct SmallInstance {
  Catalog catalog;
  EmbeddingStore store;
  TrainingEntry entry;
  ContextWeights weights;

  explicit SmallInstance(int dim) : store(dim) {}
};

inline SmallInstance random_instance(Rng& rng) {
  const int dim = 2 + static_cast<int>(rng.below(7));  // 2..8
  SmallInstance si(dim);

  const int n_words = 6 + static_cast<int>(rng.below(10));
  std::vector<std::string> vocab;
  for (int i = 0; i < n_words; ++i) vocab.push_back("t" + std::to_string(i));

  const int n_items = 6 + static_cast<int>(rng.below(5));
  std::vector<ItemId> ids;
  for (int i = 0; i < n_items; ++i) {
    const ItemId id = i + 1;
    Tokens title;
    const int len = 1 + static_cast<int>(rng.below(4));
    for (int t = 0; t < len; ++t) title.push_back(vocab[rng.below(vocab.size())]);
    si.catalog.products.emplace(id, Product{id, std::move(title)});
    ids.push_back(id);
  }

  for (const std::string& w : vocab) si.store.add_word(w);
  for (std::size_t r = 0; r < si.store.n_words(); ++r) {
    for (double& x : si.store.word_vec(static_cast<int>(r))) x = 1.6 * rng.next_double() - 0.8;
  }
  si.store.add_user(1);
  for (double& x : si.store.user_vec(0)) x = 1.6 * rng.next_double() - 0.8;

  rng.shuffle(ids);
  const int n_cand = 2 + static_cast<int>(rng.below(5));  // 2..6
  si.entry.candidates.assign(ids.begin(), ids.begin() + n_cand);
  const int n_buy = 1 + static_cast<int>(rng.below(std::min(3, n_cand)));
  si.entry.purchased.assign(si.entry.candidates.begin(), si.entry.candidates.begin() + n_buy);
  detail::sort_unique(si.entry.purchased);
  const int n_click = 1 + static_cast<int>(rng.below(3));
  std::vector<ItemId> pool(ids);
  rng.shuffle(pool);
  si.entry.clicked.assign(pool.begin(), pool.begin() + n_click);
  detail::sort_unique(si.entry.clicked);
  si.entry.session_id = 1 + static_cast<std::int64_t>(rng.below(1000));
  si.entry.week = 1;
  si.entry.t = 1;
  if (rng.bernoulli(0.7)) si.entry.user_id = 1;

  si.weights.lambda_u = rng.bernoulli(0.25) ? 0.0 : rng.next_double();
  si.weights.lambda_c = rng.bernoulli(0.25) ? 0.0 : rng.next_double() * (1.0 - si.weights.lambda_u);
  return si;
}

// Central finite differences over every parameter against the analytic
// gradient; zero entries of the sparse gradient are probed too.
inline double gradient_max_rel_err(SmallInstance& si, double h = 1e-4) {
  const SparseGrad g = entry_gradients(si.store, si.catalog, si.entry, si.weights);
  double worst = 0.0;
  auto probe = [&](std::span<double> theta, int d, double analytic) {
    const double save = theta[d];
    theta[d] = save + h;
    const double lp = entry_loss(si.store, si.catalog, si.entry, si.weights, 0.0);
    theta[d] = save - h;
    const double lm = entry_loss(si.store, si.catalog, si.entry, si.weights, 0.0);
    theta[d] = save;
    const double fd = (lp - lm) / (2.0 * h);
    const double err =
        std::fabs(analytic - fd) / std::max({std::fabs(analytic), std::fabs(fd), 1e-3});
    worst = std::max(worst, err);
  };
  for (std::size_t r = 0; r < si.store.n_words(); ++r) {
    auto it = g.word.find(static_cast<int>(r));
    for (int d = 0; d < si.store.dim(); ++d) {
      probe(si.store.word_vec(static_cast<int>(r)), d, it == g.word.end() ? 0.0 : it->second[d]);
    }
  }
  for (std::size_t r = 0; r < si.store.n_users(); ++r) {
    auto it = g.user.find(static_cast<int>(r));
    for (int d = 0; d < si.store.dim(); ++d) {
      probe(si.store.user_vec(static_cast<int>(r)), d, it == g.user.end() ? 0.0 : it->second[d]);
    }
  }
  return worst;
}

// Literal transcriptions of the metric definitions, linear membership scans.
inline bool brute_contains(const std::vector<ItemId>& v, ItemId x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

inline double brute_ap(const std::vector<ItemId>& ranked, const std::vector<ItemId>& relevant,
                       int cutoff = 100) {
  int present = 0;
  for (ItemId x : ranked)
    if (brute_contains(relevant, x)) ++present;
  if (present == 0) return 0.0;
  double sum = 0.0;
  int hits = 0;
  for (std::size_t k = 1; k <= ranked.size() && k <= static_cast<std::size_t>(cutoff); ++k) {
    if (brute_contains(relevant, ranked[k - 1])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k);
    }
  }
  return sum / present;
}

inline double brute_rr(const std::vector<ItemId>& ranked, const std::vector<ItemId>& relevant) {
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (brute_contains(relevant, ranked[k])) return 1.0 / static_cast<double>(k + 1);
  }
  return 0.0;
}

inline double brute_ndcg(const std::vector<ItemId>& ranked, const std::vector<ItemId>& relevant,
                         int k = 10) {
  int present = 0;
  for (ItemId x : ranked)
    if (brute_contains(relevant, x)) ++present;
  if (present == 0) return 0.0;
  double dcg = 0.0;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i) {
    if (brute_contains(relevant, ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
  }
  double idcg = 0.0;
  for (int i = 0; i < std::min(present, k); ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
  return dcg / idcg;
}

inline GenConfig small_gen_config(std::uint64_t seed) {
  GenConfig g;
  g.seed = seed;
  g.vocab_size = 250;
  g.n_products = 120;
  g.n_users = 30;
  g.n_sessions = 150;
  g.n_weeks = 8;
  g.page_size = 6;
  g.pages_per_session = 4;
  g.latent_dim = 8;
  g.title_len_min = 3;
  g.title_len_max = 6;
  g.query_len_min = 2;
  g.query_len_max = 3;
  return g;
}

inline std::string serialize_log(const std::vector<QuerySession>& log) {
  std::ostringstream ss;
  for (const auto& s : log) ss << session_to_json(s).dump() << '\n';
  return ss.str();
}

// Random word table over exactly the catalog + query vocabulary; stands in
// for a trained model where only ranking consistency matters.
inline EmbeddingStore random_store(const Catalog& catalog,
                                   const std::vector<TrainingEntry>& entries, int dim, Rng& rng) {
  EmbeddingStore store(dim);
  std::vector<std::string> vocab;
  for (const auto& [id, p] : catalog.products) vocab.insert(vocab.end(), p.title.begin(), p.title.end());
  for (const auto& e : entries) vocab.insert(vocab.end(), e.query.begin(), e.query.end());
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  for (const std::string& w : vocab) store.add_word(w);
  for (std::size_t r = 0; r < store.n_words(); ++r) {
    for (double& x : store.word_vec(static_cast<int>(r))) x = 1.6 * rng.next_double() - 0.8;
  }
  std::vector<UserId> users;
  for (const auto& e : entries)
    if (e.user_id) users.push_back(*e.user_id);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  for (UserId u : users) store.add_user(u);
  for (std::size_t r = 0; r < store.n_users(); ++r) {
    for (double& x : store.user_vec(static_cast<int>(r))) x = 1.6 * rng.next_double() - 0.8;
  }
  return store;
}

}  // namespace selftest_detail

// Fast in-process checks of the numerical core: analytic gradients against
// finite differences, metrics against brute-force transcriptions, the family
// reductions, the t-test anchor, and generation/training determinism.
// Returns 0 on success, 1 on the first recorded failure (all checks run).
inline int cmd_selftest(std::ostream& out) {
  using namespace selftest_detail;
  const auto t0 = std::chrono::steady_clock::now();
  bool all_ok = true;
  auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "ok   " : "FAIL ") << name;
    if (!detail.empty()) out << " (" << detail << ")";
    out << "\n";
    if (!ok) all_ok = false;
  };

  {
    Rng rng(substream_seed(2024, 1));
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      SmallInstance si = random_instance(rng);
      worst = std::max(worst, gradient_max_rel_err(si));
    }
    report("gradient-check", worst < 1e-4,
           "max rel err " + metrics_detail::fmt("%.2e", worst) + " over 20 instances");
  }

  {
    Rng rng(substream_seed(2024, 2));
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      std::vector<ItemId> items(30);
      std::iota(items.begin(), items.end(), ItemId{1});
      rng.shuffle(items);
      const std::size_t n_rank = 1 + rng.below(25);
      std::vector<ItemId> ranked(items.begin(), items.begin() + n_rank);
      std::vector<ItemId> relevant;
      const std::size_t n_rel = rng.below(6);
      for (std::size_t r = 0; r < n_rel; ++r) relevant.push_back(1 + static_cast<ItemId>(rng.below(30)));
      detail::sort_unique(relevant);
      worst = std::max(worst, std::fabs(average_precision(ranked, relevant) - brute_ap(ranked, relevant)));
      worst = std::max(worst, std::fabs(reciprocal_rank(ranked, relevant) - brute_rr(ranked, relevant)));
      worst = std::max(worst, std::fabs(ndcg(ranked, relevant) - brute_ndcg(ranked, relevant)));
    }
    const std::vector<ItemId> ranked{5, 6, 7, 8};
    const std::vector<ItemId> rel{7};
    const bool anchors = std::fabs(average_precision(ranked, rel) - 1.0 / 3.0) < 1e-15 &&
                         std::fabs(ndcg(ranked, rel) - 0.5) < 1e-15;
    report("metric-oracles", worst < 1e-12 && anchors,
           "max |diff| " + metrics_detail::fmt("%.2e", worst) + " over 200 instances");
  }

  Catalog small_cat;
  std::vector<TrainingEntry> small_entries;
  std::string first_log_bytes;
  {
    const GenConfig g = small_gen_config(11);
    Corpus corpus = generate_corpus(g);
    GenStats st;
    auto log1 = generate_sessions(g, corpus.catalog, corpus.world, &st);
    Corpus corpus2 = generate_corpus(g);
    auto log2 = generate_sessions(g, corpus2.catalog, corpus2.world);
    first_log_bytes = serialize_log(log1);
    const bool same = first_log_bytes == serialize_log(log2);
    small_cat = corpus.catalog;
    small_entries = build_entries(log1, g.pages_per_session - 1);
    report("generation-determinism", same,
           std::to_string(log1.size()) + " sessions, " + std::to_string(small_entries.size()) +
               " entries, twice");
  }

  {
    Rng rng(substream_seed(2024, 3));
    EmbeddingStore store = random_store(small_cat, small_entries, 8, rng);
    bool qem_ok = true, lscem_ok = true, softmax_ok = true;
    MethodSpec scem_zeroed = default_method_spec("SCEM");
    scem_zeroed.weights.lambda_c = 0.0;  // all mixture mass back on the query
    const ContextWeights qem = default_method_spec("QEM").weights;
    for (const auto& e : small_entries) {
      if (rank_entry(store, small_cat, e, scem_zeroed.weights) != rank_entry(store, small_cat, e, qem))
        qem_ok = false;
      const auto ctx = context_vector(store, small_cat, e.query, e.user_id, e.clicked, qem);
      const ScoredList scored = score_candidates(store, small_cat, ctx, e.candidates);
      double total = 0.0;
      for (const auto& s : scored) total += s.prob;
      if (std::fabs(total - 1.0) > 1e-12) softmax_ok = false;
      for (std::size_t i = 1; i < scored.size(); ++i) {
        if (scored[i - 1].score < scored[i].score) softmax_ok = false;
      }
    }
    store.zero_users();
    const ContextWeights lscem = default_method_spec("LSCEM").weights;
    const ContextWeights scem = default_method_spec("SCEM").weights;
    for (const auto& e : small_entries) {
      if (rank_entry(store, small_cat, e, lscem) != rank_entry(store, small_cat, e, scem))
        lscem_ok = false;
    }
    report("reduction-scem-to-qem", qem_ok, std::to_string(small_entries.size()) + " entries");
    report("reduction-lscem-to-scem", lscem_ok, "zero user vectors");
    report("softmax-normalization", softmax_ok, "probs sum to 1, scores descend");
  }

  {
    const LanguageModelIndex index(small_cat);
    Rm3Params p;
    p.alpha = 0.0;
    bool ok = true;
    for (const auto& e : small_entries) {
      std::vector<Tokens> feedback;
      for (ItemId id : e.clicked) feedback.push_back(small_cat.at(id).title);
      if (rm3_rank(index, e.query, feedback, p, e.candidates) != ql_rank(index, e.query, e.candidates))
        ok = false;
    }
    report("reduction-rm3-to-ql", ok, "alpha=0, " + std::to_string(small_entries.size()) + " entries");
  }

  {
    const double p_anchor = student_t_two_sided_p(2.262, 9.0);
    bool ok = std::fabs(p_anchor - 0.05) < 1e-3;
    ok = ok && student_t_two_sided_p(-1.7, 12.0) == student_t_two_sided_p(1.7, 12.0);
    ok = ok && student_t_two_sided_p(1.0, 5.0) > student_t_two_sided_p(2.0, 5.0);
    const std::vector<double> a{0.3, 0.4, 0.5}, b{0.3, 0.4, 0.5};
    ok = ok && paired_t_test(a, b).p == 1.0;
    const std::vector<double> c{1.0, 1.0, 1.0, 1.0}, d{0.0, 0.0, 0.0, 0.0};
    const PairedTResult dz = paired_t_test(c, d);
    ok = ok && dz.p == 0.0 && dz.degenerate;
    report("t-test", ok, "p(2.262, df 9) = " + metrics_detail::fmt("%.4f", p_anchor));
  }

  {
    TrainConfig tc;
    tc.dim = 8;
    tc.epochs = 2;
    tc.learning_rate = 0.005;
    tc.seed = 5;
    std::vector<TrainingEntry> valid(small_entries.begin(),
                                     small_entries.begin() + std::min<std::size_t>(small_entries.size(), 30));
    const TrainResult a = train(small_entries, valid, small_cat, tc, {0.0, 1.0});
    const TrainResult b = train(small_entries, valid, small_cat, tc, {0.0, 1.0});
    bool same = a.store.n_words() == b.store.n_words() && a.epoch_nll == b.epoch_nll;
    for (std::size_t r = 0; same && r < a.store.n_words(); ++r) {
      const auto va = a.store.word_vec(static_cast<int>(r));
      const auto vb = b.store.word_vec(static_cast<int>(r));
      same = std::equal(va.begin(), va.end(), vb.begin());
    }
    report("training-determinism", same, "2 epochs, dim 8, twice");
  }

  const auto dt =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
  out << (all_ok ? "selftest passed" : "selftest FAILED") << " in " << dt.count() << " ms\n";
  return all_ok ? 0 : 1;
}

}  // namespace ctxrank
