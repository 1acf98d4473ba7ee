#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctxrank/rng.hpp"
#include "ctxrank/session.hpp"
#include "ctxrank/vec.hpp"

namespace ctxrank {

// Mixing weights of the context combination:
//   E(S) = (1 - lambda_u - lambda_c) E(q) + lambda_u E(u) + lambda_c E(C)
// (0,0) scores by the query alone; (lu,0) adds the user vector; (0,lc) adds
// the clicked-item centroid; both positive uses all three.
struct ContextWeights {
  double lambda_u = 0.0;
  double lambda_c = 0.0;

  void validate() const {
    constexpr double eps = 1e-9;
    if (!(lambda_u >= -eps && lambda_u <= 1.0 + eps) ||
        !(lambda_c >= -eps && lambda_c <= 1.0 + eps) || !(lambda_u + lambda_c <= 1.0 + eps)) {
      throw std::invalid_argument("context weights must satisfy 0<=lu<=1, 0<=lc<=1, lu+lc<=1");
    }
  }
  double lambda_q() const { return 1.0 - lambda_u - lambda_c; }
};

// The learnable parameters: one vector per vocabulary word, one per known
// user. Rows are fixed-width dim; words/users absent from the maps are OOV.
class EmbeddingStore {
 public:
  explicit EmbeddingStore(int dim) : dim_(dim) {
    if (dim < 1) throw std::invalid_argument("embedding dim must be positive");
  }

  int dim() const { return dim_; }

  int add_word(const std::string& w) {
    auto [it, inserted] = word_index_.emplace(w, static_cast<int>(words_.size()));
    if (inserted) {
      words_.push_back(w);
      word_data_.resize(word_data_.size() + dim_, 0.0);
    }
    return it->second;
  }
  int word_row(const std::string& w) const {
    auto it = word_index_.find(w);
    return it == word_index_.end() ? -1 : it->second;
  }
  int add_user(UserId u) {
    auto [it, inserted] = user_index_.emplace(u, static_cast<int>(users_.size()));
    if (inserted) {
      users_.push_back(u);
      user_data_.resize(user_data_.size() + dim_, 0.0);
    }
    return it->second;
  }
  int user_row(UserId u) const {
    auto it = user_index_.find(u);
    return it == user_index_.end() ? -1 : it->second;
  }

  std::span<double> word_vec(int row) { return {word_data_.data() + row * dim_, (std::size_t)dim_}; }
  std::span<const double> word_vec(int row) const {
    return {word_data_.data() + row * dim_, (std::size_t)dim_};
  }
  std::span<double> user_vec(int row) { return {user_data_.data() + row * dim_, (std::size_t)dim_}; }
  std::span<const double> user_vec(int row) const {
    return {user_data_.data() + row * dim_, (std::size_t)dim_};
  }

  std::size_t n_words() const { return words_.size(); }
  std::size_t n_users() const { return users_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<UserId>& users() const { return users_; }

  double l2_norm_squared() const {
    double s = 0.0;
    for (double v : word_data_) s += v * v;
    for (double v : user_data_) s += v * v;
    return s;
  }

  void zero_users() { std::fill(user_data_.begin(), user_data_.end(), 0.0); }

 private:
  int dim_;
  std::unordered_map<std::string, int> word_index_;
  std::vector<std::string> words_;
  std::vector<double> word_data_;
  std::unordered_map<UserId, int> user_index_;
  std::vector<UserId> users_;
  std::vector<double> user_data_;
};

// Mean of the in-vocabulary tokens' vectors; OOV tokens are skipped and an
// all-OOV (or empty) sequence embeds to the zero vector.
inline std::vector<double> embed_tokens(const EmbeddingStore& store, const Tokens& tokens) {
  std::vector<double> out(store.dim(), 0.0);
  int n = 0;
  for (const std::string& t : tokens) {
    const int row = store.word_row(t);
    if (row < 0) continue;
    axpy(1.0, store.word_vec(row), out);
    ++n;
  }
  if (n > 0) scale(out, 1.0 / n);
  return out;
}

inline std::vector<double> embed_item(const EmbeddingStore& store, const Catalog& catalog,
                                      ItemId id) {
  return embed_tokens(store, catalog.at(id).title);
}

// Centroid of the clicked items' embeddings. The clicked set is canonicalized
// before averaging, so any permutation of the same set gives the identical
// vector bit-for-bit.
inline std::vector<double> embed_clicks(const EmbeddingStore& store, const Catalog& catalog,
                                        std::span<const ItemId> clicked) {
  if (clicked.empty()) throw std::invalid_argument("embed_clicks: empty clicked set");
  std::vector<ItemId> ids(clicked.begin(), clicked.end());
  detail::sort_unique(ids);
  std::vector<double> out(store.dim(), 0.0);
  for (ItemId id : ids) {
    const auto v = embed_item(store, catalog, id);
    axpy(1.0, v, out);
  }
  scale(out, 1.0 / static_cast<double>(ids.size()));
  return out;
}

inline std::vector<double> context_vector(const EmbeddingStore& store, const Catalog& catalog,
                                          const Tokens& query, std::optional<UserId> user_id,
                                          std::span<const ItemId> clicked, ContextWeights w) {
  w.validate();
  std::vector<double> out(store.dim(), 0.0);
  if (w.lambda_q() != 0.0) {
    axpy(w.lambda_q(), embed_tokens(store, query), out);
  }
  if (w.lambda_u != 0.0 && user_id) {
    const int row = store.user_row(*user_id);
    if (row >= 0) axpy(w.lambda_u, store.user_vec(row), out);
  }
  if (w.lambda_c != 0.0 && !clicked.empty()) {
    axpy(w.lambda_c, embed_clicks(store, catalog, clicked), out);
  }
  return out;
}

struct ScoredItem {
  ItemId item = 0;
  double score = 0.0;  // dot(context, item embedding)
  double prob = 0.0;   // softmax over the candidate set
};
using ScoredList = std::vector<ScoredItem>;

// Stable descending order; equal scores keep input order.
inline std::vector<int> order_by_score_desc(std::span<const double> scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return idx;
}

// probs = softmax(scores) with max subtraction; in_place over `scores` scratch
// is avoided so callers can keep both.
inline std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> probs(scores.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : scores) mx = std::max(mx, z);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    probs[i] = std::exp(scores[i] - mx);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

inline ScoredList score_candidates(const EmbeddingStore& store, const Catalog& catalog,
                                   std::span<const double> context,
                                   std::span<const ItemId> candidates) {
  if (candidates.empty()) throw std::invalid_argument("score_candidates: empty candidate set");
  std::vector<double> scores(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    scores[i] = dot(context, embed_item(store, catalog, candidates[i]));
  }
  const auto probs = softmax(scores);
  const auto order = order_by_score_desc(scores);
  ScoredList out;
  out.reserve(candidates.size());
  for (int i : order) out.push_back({candidates[i], scores[i], probs[i]});
  return out;
}

inline std::vector<ItemId> rank_entry(const EmbeddingStore& store, const Catalog& catalog,
                                      const TrainingEntry& entry, ContextWeights w) {
  const auto context =
      context_vector(store, catalog, entry.query, entry.user_id, entry.clicked, w);
  std::vector<double> scores(entry.candidates.size());
  for (std::size_t i = 0; i < entry.candidates.size(); ++i) {
    scores[i] = dot(context, embed_item(store, catalog, entry.candidates[i]));
  }
  const auto order = order_by_score_desc(scores);
  std::vector<ItemId> out;
  out.reserve(order.size());
  for (int i : order) out.push_back(entry.candidates[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradients.
//
// For one entry with candidate scores z_i = s . e_i and p = softmax(z):
//   NLL = -sum_{b in B} log p_b
//   dNLL/dz_i = |B| p_i - [i in B]            (= g_i)
//   dNLL/ds   = sum_i g_i e_i
// and the chain continues through the averages: each in-vocab occurrence of a
// word in the query gets lambda_q/m_q of dNLL/ds, each occurrence in a clicked
// title gets lambda_c/(n_C m_c), each occurrence in candidate i's title gets
// g_i/m_i of s, and the user vector gets lambda_u of dNLL/ds.
// ---------------------------------------------------------------------------

namespace cem_detail {

// Table-sized gradient accumulator that only ever touches/zeroes rows it saw.
class GradBuffer {
 public:
  void reset_shape(std::size_t rows, int dim) {
    dim_ = dim;
    data_.assign(rows * dim, 0.0);
    is_touched_.assign(rows, 0);
    touched_.clear();
  }
  void add(int row, double alpha, std::span<const double> v) {
    touch(row);
    double* dst = data_.data() + static_cast<std::size_t>(row) * dim_;
    for (int i = 0; i < dim_; ++i) dst[i] += alpha * v[i];
  }
  void touch(int row) {
    if (!is_touched_[row]) {
      is_touched_[row] = 1;
      touched_.push_back(row);
    }
  }
  std::span<double> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * dim_, (std::size_t)dim_}; }
  std::span<const double> row(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * dim_, (std::size_t)dim_};
  }
  const std::vector<int>& touched() const { return touched_; }
  double norm_squared() const {
    double s = 0.0;
    for (int r : touched_) {
      const double* p = data_.data() + static_cast<std::size_t>(r) * dim_;
      for (int i = 0; i < dim_; ++i) s += p[i] * p[i];
    }
    return s;
  }
  void scale_touched(double alpha) {
    for (int r : touched_) {
      double* p = data_.data() + static_cast<std::size_t>(r) * dim_;
      for (int i = 0; i < dim_; ++i) p[i] *= alpha;
    }
  }
  void clear() {
    for (int r : touched_) {
      std::fill_n(data_.data() + static_cast<std::size_t>(r) * dim_, dim_, 0.0);
      is_touched_[r] = 0;
    }
    touched_.clear();
  }

 private:
  int dim_ = 0;
  std::vector<double> data_;
  std::vector<char> is_touched_;
  std::vector<int> touched_;
};

// Row-index view of an entry, resolved against one store's vocabulary.
struct CompiledEntry {
  std::int64_t session_id = 0;
  int t = 1;
  int user_row = -1;
  std::vector<int> query_rows;                 // one per in-vocab occurrence
  std::vector<std::vector<int>> clicked_rows;  // per clicked item
  std::vector<std::vector<int>> cand_rows;     // per candidate
  std::vector<char> is_purchased;              // per candidate
  int n_purchased = 0;
};

inline std::vector<int> token_rows(const EmbeddingStore& store, const Tokens& tokens) {
  std::vector<int> rows;
  rows.reserve(tokens.size());
  for (const std::string& t : tokens) {
    const int r = store.word_row(t);
    if (r >= 0) rows.push_back(r);
  }
  return rows;
}

inline CompiledEntry compile_entry(const EmbeddingStore& store, const Catalog& catalog,
                                   const TrainingEntry& e) {
  if (e.clicked.empty() || e.candidates.empty() || e.purchased.empty())
    throw std::invalid_argument("training entry needs non-empty clicked/candidates/purchased");
  CompiledEntry c;
  c.session_id = e.session_id;
  c.t = e.t;
  c.user_row = e.user_id ? store.user_row(*e.user_id) : -1;
  c.query_rows = token_rows(store, e.query);
  c.clicked_rows.reserve(e.clicked.size());
  for (ItemId id : e.clicked) c.clicked_rows.push_back(token_rows(store, catalog.at(id).title));
  c.cand_rows.reserve(e.candidates.size());
  c.is_purchased.assign(e.candidates.size(), 0);
  std::vector<ItemId> purchased(e.purchased);
  detail::sort_unique(purchased);
  for (std::size_t i = 0; i < e.candidates.size(); ++i) {
    c.cand_rows.push_back(token_rows(store, catalog.at(e.candidates[i]).title));
    if (detail::sorted_contains(purchased, e.candidates[i])) {
      c.is_purchased[i] = 1;
      ++c.n_purchased;
    }
  }
  if (c.n_purchased != static_cast<int>(purchased.size()))
    throw std::invalid_argument("purchased items must be a subset of candidates");
  return c;
}

struct Workspace {
  std::vector<double> context, ds, mean_scratch;
  std::vector<double> cand_emb;  // n_cand x dim, row-major
  std::vector<double> scores, probs;
};

// Forward + backward for one compiled entry. Returns the entry NLL and adds
// the unregularized gradient (times `weight`) into the buffers. click_sel
// picks the clicked items forming this pass's short-term context.
inline double accumulate_entry_gradient(const EmbeddingStore& store, const CompiledEntry& ce,
                                        std::span<const int> click_sel, ContextWeights w,
                                        GradBuffer* word_grad, GradBuffer* user_grad,
                                        Workspace& ws, double weight = 1.0) {
  const int dim = store.dim();
  const int n_cand = static_cast<int>(ce.cand_rows.size());
  const double lq = w.lambda_q();

  // context
  ws.context.assign(dim, 0.0);
  const int m_q = static_cast<int>(ce.query_rows.size());
  if (lq != 0.0 && m_q > 0) {
    ws.mean_scratch.assign(dim, 0.0);
    for (int r : ce.query_rows) axpy(1.0, store.word_vec(r), ws.mean_scratch);
    axpy(lq / m_q, ws.mean_scratch, ws.context);
  }
  if (w.lambda_u != 0.0 && ce.user_row >= 0) {
    axpy(w.lambda_u, store.user_vec(ce.user_row), ws.context);
  }
  const int n_clicked = static_cast<int>(click_sel.size());
  if (w.lambda_c != 0.0 && n_clicked > 0) {
    ws.mean_scratch.assign(dim, 0.0);
    for (int ci : click_sel) {
      const auto& rows = ce.clicked_rows[ci];
      if (rows.empty()) continue;  // all-OOV title embeds to zero
      const double coeff = 1.0 / static_cast<double>(rows.size());
      for (int r : rows) axpy(coeff, store.word_vec(r), ws.mean_scratch);
    }
    axpy(w.lambda_c / n_clicked, ws.mean_scratch, ws.context);
  }

  // candidate embeddings and scores
  ws.cand_emb.assign(static_cast<std::size_t>(n_cand) * dim, 0.0);
  ws.scores.assign(n_cand, 0.0);
  for (int i = 0; i < n_cand; ++i) {
    double* e = ws.cand_emb.data() + static_cast<std::size_t>(i) * dim;
    const auto& rows = ce.cand_rows[i];
    if (!rows.empty()) {
      for (int r : rows) {
        const auto v = store.word_vec(r);
        for (int d = 0; d < dim; ++d) e[d] += v[d];
      }
      const double inv = 1.0 / static_cast<double>(rows.size());
      for (int d = 0; d < dim; ++d) e[d] *= inv;
    }
    ws.scores[i] = dot({e, (std::size_t)dim}, ws.context);
  }

  double mx = -std::numeric_limits<double>::infinity();
  for (double z : ws.scores) mx = std::max(mx, z);
  ws.probs.assign(n_cand, 0.0);
  double sum = 0.0;
  for (int i = 0; i < n_cand; ++i) {
    ws.probs[i] = std::exp(ws.scores[i] - mx);
    sum += ws.probs[i];
  }
  const double lse = mx + std::log(sum);
  double nll = 0.0;
  for (int i = 0; i < n_cand; ++i) {
    ws.probs[i] /= sum;
    if (ce.is_purchased[i]) nll += lse - ws.scores[i];
  }

  if (word_grad == nullptr) return nll;

  // backward
  ws.ds.assign(dim, 0.0);
  const double nB = static_cast<double>(ce.n_purchased);
  for (int i = 0; i < n_cand; ++i) {
    const double g = weight * (nB * ws.probs[i] - (ce.is_purchased[i] ? 1.0 : 0.0));
    const double* e = ws.cand_emb.data() + static_cast<std::size_t>(i) * dim;
    for (int d = 0; d < dim; ++d) ws.ds[d] += g * e[d];
    // candidate-title chain: dNLL/de_i = g * s, split over title occurrences
    const auto& rows = ce.cand_rows[i];
    if (!rows.empty()) {
      const double coeff = g / static_cast<double>(rows.size());
      for (int r : rows) word_grad->add(r, coeff, ws.context);
    }
  }
  if (lq != 0.0 && m_q > 0) {
    const double coeff = lq / m_q;
    for (int r : ce.query_rows) word_grad->add(r, coeff, ws.ds);
  }
  if (w.lambda_u != 0.0 && ce.user_row >= 0 && user_grad != nullptr) {
    user_grad->add(ce.user_row, w.lambda_u, ws.ds);
  }
  if (w.lambda_c != 0.0 && n_clicked > 0) {
    for (int ci : click_sel) {
      const auto& rows = ce.clicked_rows[ci];
      if (rows.empty()) continue;
      const double coeff = w.lambda_c / (static_cast<double>(n_clicked) * rows.size());
      for (int r : rows) word_grad->add(r, coeff, ws.ds);
    }
  }
  return nll;
}

inline std::vector<int> all_indices(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Joint global-norm clip over both tables. Returns the pre-clip norm.
inline double clip_global_norm(GradBuffer& words, GradBuffer& users, double max_norm) {
  const double norm = std::sqrt(words.norm_squared() + users.norm_squared());
  if (std::isfinite(max_norm) && norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    words.scale_touched(s);
    users.scale_touched(s);
  }
  return norm;
}

}  // namespace cem_detail

// Negative log-likelihood of the purchased items under the candidate softmax,
// plus gamma times the squared norm of the full parameter tables.
inline double entry_loss(const EmbeddingStore& store, const Catalog& catalog,
                         const TrainingEntry& entry, ContextWeights w, double gamma) {
  w.validate();
  if (gamma < 0.0) throw std::invalid_argument("gamma must be non-negative");
  const auto ce = cem_detail::compile_entry(store, catalog, entry);
  cem_detail::Workspace ws;
  const auto sel = cem_detail::all_indices(ce.clicked_rows.size());
  double loss =
      cem_detail::accumulate_entry_gradient(store, ce, sel, w, nullptr, nullptr, ws);
  if (gamma > 0.0) loss += gamma * store.l2_norm_squared();
  return loss;
}

// Sparse gradient of the unregularized NLL, keyed by store row.
struct SparseGrad {
  std::unordered_map<int, std::vector<double>> word;
  std::unordered_map<int, std::vector<double>> user;
};

inline SparseGrad entry_gradients(const EmbeddingStore& store, const Catalog& catalog,
                                  const TrainingEntry& entry, ContextWeights w) {
  w.validate();
  const auto ce = cem_detail::compile_entry(store, catalog, entry);
  cem_detail::GradBuffer wg, ug;
  wg.reset_shape(store.n_words(), store.dim());
  ug.reset_shape(std::max<std::size_t>(store.n_users(), 1), store.dim());
  cem_detail::Workspace ws;
  const auto sel = cem_detail::all_indices(ce.clicked_rows.size());
  cem_detail::accumulate_entry_gradient(store, ce, sel, w, &wg, &ug, ws);
  SparseGrad out;
  for (int r : wg.touched()) {
    const auto row = wg.row(r);
    out.word.emplace(r, std::vector<double>(row.begin(), row.end()));
  }
  for (int r : ug.touched()) {
    const auto row = ug.row(r);
    out.user.emplace(r, std::vector<double>(row.begin(), row.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 45;
  int batch_size = 256;
  double learning_rate = 0.005;  // grid: 0.01, 0.005, 0.001, 0.0005, 0.0001
  double l2_gamma = 0.0;         // grid: 0.0 .. 0.005
  double grad_clip_norm = 5.0;   // global norm of the batch gradient
  int max_subsessions_per_session = 3;
  int max_clicks_per_entry = 5;
  std::uint64_t seed = 1;
  int dim = 64;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || dim < 1) throw std::invalid_argument("bad train config counts");
    if (!(learning_rate > 0.0) || l2_gamma < 0.0 || !(grad_clip_norm > 0.0))
      throw std::invalid_argument("bad train config reals");
    if (max_subsessions_per_session < 1 || max_clicks_per_entry < 1)
      throw std::invalid_argument("bad train config caps");
  }
};

// Catalog-wide item embedding snapshot; read-only fast path for evaluation.
class ItemEmbeddings {
 public:
  ItemEmbeddings(const EmbeddingStore& store, const Catalog& catalog)
      : dim_(store.dim()) {
    rows_.reserve(catalog.products.size());
    data_.reserve(catalog.products.size() * dim_);
    for (const auto& [id, product] : catalog.products) {
      rows_.emplace(id, static_cast<int>(rows_.size()));
      const auto v = embed_tokens(store, product.title);
      data_.insert(data_.end(), v.begin(), v.end());
    }
  }

  std::span<const double> of(ItemId id) const {
    auto it = rows_.find(id);
    if (it == rows_.end()) throw std::out_of_range("no embedding for item " + std::to_string(id));
    return {data_.data() + static_cast<std::size_t>(it->second) * dim_, (std::size_t)dim_};
  }
  int dim() const { return dim_; }

 private:
  int dim_;
  std::unordered_map<ItemId, int> rows_;
  std::vector<double> data_;
};

inline std::vector<double> context_vector_cached(const EmbeddingStore& store,
                                                 const ItemEmbeddings& items, const Tokens& query,
                                                 std::optional<UserId> user_id,
                                                 std::span<const ItemId> clicked,
                                                 ContextWeights w) {
  w.validate();
  std::vector<double> out(store.dim(), 0.0);
  if (w.lambda_q() != 0.0) axpy(w.lambda_q(), embed_tokens(store, query), out);
  if (w.lambda_u != 0.0 && user_id) {
    const int row = store.user_row(*user_id);
    if (row >= 0) axpy(w.lambda_u, store.user_vec(row), out);
  }
  if (w.lambda_c != 0.0 && !clicked.empty()) {
    std::vector<ItemId> ids(clicked.begin(), clicked.end());
    detail::sort_unique(ids);
    std::vector<double> centroid(store.dim(), 0.0);
    for (ItemId id : ids) axpy(1.0, items.of(id), centroid);
    axpy(w.lambda_c / static_cast<double>(ids.size()), centroid, out);
  }
  return out;
}

inline std::vector<ItemId> rank_entry_cached(const EmbeddingStore& store,
                                             const ItemEmbeddings& items,
                                             const TrainingEntry& entry, ContextWeights w) {
  const auto context =
      context_vector_cached(store, items, entry.query, entry.user_id, entry.clicked, w);
  std::vector<double> scores(entry.candidates.size());
  for (std::size_t i = 0; i < entry.candidates.size(); ++i) {
    scores[i] = dot(context, items.of(entry.candidates[i]));
  }
  const auto order = order_by_score_desc(scores);
  std::vector<ItemId> out;
  out.reserve(order.size());
  for (int i : order) out.push_back(entry.candidates[i]);
  return out;
}

struct TrainResult {
  EmbeddingStore store;            // snapshot with the best validation MRR
  std::vector<double> epoch_nll;   // mean entry NLL per epoch
  std::vector<double> epoch_val_mrr;
  int best_epoch = 0;              // 1-based
  double best_val_mrr = 0.0;
};

inline double mean_reciprocal_rank_of_entries(const EmbeddingStore& store, const Catalog& catalog,
                                              const std::vector<TrainingEntry>& entries,
                                              ContextWeights w) {
  if (entries.empty()) return 0.0;
  const ItemEmbeddings items(store, catalog);
  double sum = 0.0;
  for (const auto& e : entries) {
    const auto ranked = rank_entry_cached(store, items, e, w);
    std::vector<ItemId> purchased(e.purchased);
    detail::sort_unique(purchased);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (detail::sorted_contains(purchased, ranked[i])) {
        sum += 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
  }
  return sum / static_cast<double>(entries.size());
}

// Mini-batch Adam over the listwise NLL. Per epoch: at most
// max_subsessions_per_session entries per session and max_clicks_per_entry
// clicked items per entry are re-sampled, entries are shuffled, and each
// batch gradient (sum over its entries, plus 2*gamma*theta on touched rows)
// is clipped to grad_clip_norm before the update. The returned store is the
// epoch snapshot with the best validation MRR.
inline TrainResult train(const std::vector<TrainingEntry>& entries,
                         const std::vector<TrainingEntry>& valid_entries, const Catalog& catalog,
                         const TrainConfig& cfg, ContextWeights w) {
  cfg.validate();
  w.validate();
  if (entries.empty()) throw std::invalid_argument("train: empty training set");

  EmbeddingStore store(cfg.dim);

  // Vocabulary: catalog titles plus training queries, initialized uniformly
  // in [-0.5/dim, 0.5/dim] in sorted-word order. Users are zero-initialized
  // so long-term context degrades to query-only until gradients accumulate.
  {
    std::vector<std::string> vocab;
    for (const auto& [id, p] : catalog.products)
      vocab.insert(vocab.end(), p.title.begin(), p.title.end());
    for (const auto& e : entries) vocab.insert(vocab.end(), e.query.begin(), e.query.end());
    std::sort(vocab.begin(), vocab.end());
    vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
    const double half = 0.5 / cfg.dim;
    for (const std::string& word : vocab) {
      const int row = store.add_word(word);
      Rng rng(substream_seed(cfg.seed, stream::kInit, static_cast<std::uint64_t>(row)));
      auto v = store.word_vec(row);
      for (double& x : v) x = (2.0 * rng.next_double() - 1.0) * half;
    }
    std::vector<UserId> users;
    for (const auto& e : entries)
      if (e.user_id) users.push_back(*e.user_id);
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    for (UserId u : users) store.add_user(u);
  }

  std::vector<cem_detail::CompiledEntry> compiled;
  compiled.reserve(entries.size());
  for (const auto& e : entries) compiled.push_back(cem_detail::compile_entry(store, catalog, e));

  // session groups in first-appearance order
  std::vector<std::vector<int>> groups;
  {
    std::unordered_map<std::int64_t, int> group_of;
    for (std::size_t i = 0; i < compiled.size(); ++i) {
      auto [it, inserted] = group_of.emplace(compiled[i].session_id, static_cast<int>(groups.size()));
      if (inserted) groups.emplace_back();
      groups[it->second].push_back(static_cast<int>(i));
    }
  }

  // Adam state
  const std::size_t word_params = store.n_words() * static_cast<std::size_t>(cfg.dim);
  const std::size_t user_params = store.n_users() * static_cast<std::size_t>(cfg.dim);
  std::vector<double> m_w(word_params, 0.0), v_w(word_params, 0.0);
  std::vector<double> m_u(user_params, 0.0), v_u(user_params, 0.0);
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  long step = 0;

  cem_detail::GradBuffer word_grad, user_grad;
  word_grad.reset_shape(store.n_words(), cfg.dim);
  user_grad.reset_shape(std::max<std::size_t>(store.n_users(), 1), cfg.dim);
  cem_detail::Workspace ws;

  TrainResult result{EmbeddingStore(cfg.dim), {}, {}, 0, -1.0};

  std::vector<int> selected;
  std::vector<std::vector<int>> click_sel(compiled.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // per-epoch subsession and click re-sampling
    selected.clear();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& group = groups[g];
      if (static_cast<int>(group.size()) <= cfg.max_subsessions_per_session) {
        selected.insert(selected.end(), group.begin(), group.end());
      } else {
        std::vector<int> pick(group);
        Rng rng(substream_seed(cfg.seed, stream::kEpoch, epoch, g));
        rng.shuffle(pick);
        selected.insert(selected.end(), pick.begin(), pick.begin() + cfg.max_subsessions_per_session);
      }
    }
    for (int idx : selected) {
      const auto& ce = compiled[idx];
      const int n = static_cast<int>(ce.clicked_rows.size());
      auto& sel = click_sel[idx];
      sel.resize(n);
      std::iota(sel.begin(), sel.end(), 0);
      if (n > cfg.max_clicks_per_entry) {
        Rng rng(substream_seed(cfg.seed, stream::kShuffle, epoch, static_cast<std::uint64_t>(idx) + 1));
        rng.shuffle(sel);
        sel.resize(cfg.max_clicks_per_entry);
        std::sort(sel.begin(), sel.end());
      }
    }
    {
      Rng rng(substream_seed(cfg.seed, stream::kShuffle, epoch, 0));
      rng.shuffle(selected);
    }

    double nll_sum = 0.0;
    std::size_t n_processed = 0;
    for (std::size_t start = 0; start < selected.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(selected.size(), start + cfg.batch_size);
      for (std::size_t j = start; j < end; ++j) {
        const int idx = selected[j];
        nll_sum += cem_detail::accumulate_entry_gradient(store, compiled[idx], click_sel[idx], w,
                                                         &word_grad, &user_grad, ws);
        ++n_processed;
      }
      if (cfg.l2_gamma > 0.0) {
        for (int r : word_grad.touched()) word_grad.add(r, 2.0 * cfg.l2_gamma, store.word_vec(r));
        for (int r : user_grad.touched()) user_grad.add(r, 2.0 * cfg.l2_gamma, store.user_vec(r));
      }
      cem_detail::clip_global_norm(word_grad, user_grad, cfg.grad_clip_norm);
      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto adam_row = [&](std::span<double> theta, std::span<const double> g, double* m, double* v) {
        for (int d = 0; d < cfg.dim; ++d) {
          m[d] = beta1 * m[d] + (1.0 - beta1) * g[d];
          v[d] = beta2 * v[d] + (1.0 - beta2) * g[d] * g[d];
          theta[d] -= cfg.learning_rate * (m[d] / bc1) / (std::sqrt(v[d] / bc2) + adam_eps);
        }
      };
      for (int r : word_grad.touched()) {
        adam_row(store.word_vec(r), word_grad.row(r), m_w.data() + static_cast<std::size_t>(r) * cfg.dim,
                 v_w.data() + static_cast<std::size_t>(r) * cfg.dim);
      }
      for (int r : user_grad.touched()) {
        adam_row(store.user_vec(r), user_grad.row(r), m_u.data() + static_cast<std::size_t>(r) * cfg.dim,
                 v_u.data() + static_cast<std::size_t>(r) * cfg.dim);
      }
      word_grad.clear();
      user_grad.clear();
    }

    result.epoch_nll.push_back(n_processed ? nll_sum / static_cast<double>(n_processed) : 0.0);
    const double val_mrr = mean_reciprocal_rank_of_entries(store, catalog, valid_entries, w);
    result.epoch_val_mrr.push_back(val_mrr);
    if (val_mrr > result.best_val_mrr) {
      result.best_val_mrr = val_mrr;
      result.best_epoch = epoch;
      result.store = store;
    }
  }

  if (valid_entries.empty()) {
    // no selection signal; final parameters stand in
    result.store = store;
    result.best_epoch = cfg.epochs;
    result.best_val_mrr = 0.0;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: dim, weights, sorted vocab/users with row-major tables, the
// train-config echo, and the selected validation MRR.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["l2_gamma"] = cfg.l2_gamma;
  j["grad_clip_norm"] = cfg.grad_clip_norm;
  j["max_subsessions_per_session"] = cfg.max_subsessions_per_session;
  j["max_clicks_per_entry"] = cfg.max_clicks_per_entry;
  j["seed"] = cfg.seed;
  j["dim"] = cfg.dim;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.l2_gamma = j.value("l2_gamma", cfg.l2_gamma);
  cfg.grad_clip_norm = j.value("grad_clip_norm", cfg.grad_clip_norm);
  cfg.max_subsessions_per_session = j.value("max_subsessions_per_session", cfg.max_subsessions_per_session);
  cfg.max_clicks_per_entry = j.value("max_clicks_per_entry", cfg.max_clicks_per_entry);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.dim = j.value("dim", cfg.dim);
  return cfg;
}

struct Checkpoint {
  EmbeddingStore store;
  ContextWeights weights;
  TrainConfig config;
  double validation_mrr = 0.0;
};

inline void save_checkpoint(const std::string& path, const EmbeddingStore& store,
                            ContextWeights w, const TrainConfig& cfg, double validation_mrr) {
  nlohmann::ordered_json j;
  j["dim"] = store.dim();
  j["lambda_u"] = w.lambda_u;
  j["lambda_c"] = w.lambda_c;

  std::vector<int> word_order(store.n_words());
  std::iota(word_order.begin(), word_order.end(), 0);
  std::sort(word_order.begin(), word_order.end(),
            [&](int a, int b) { return store.words()[a] < store.words()[b]; });
  nlohmann::ordered_json vocab = nlohmann::json::array();
  nlohmann::ordered_json word_vecs = nlohmann::json::array();
  for (int r : word_order) {
    vocab.push_back(store.words()[r]);
    for (double x : store.word_vec(r)) word_vecs.push_back(x);
  }
  j["vocab"] = std::move(vocab);
  j["word_vecs"] = std::move(word_vecs);

  std::vector<int> user_order(store.n_users());
  std::iota(user_order.begin(), user_order.end(), 0);
  std::sort(user_order.begin(), user_order.end(),
            [&](int a, int b) { return store.users()[a] < store.users()[b]; });
  nlohmann::ordered_json users = nlohmann::json::array();
  nlohmann::ordered_json user_vecs = nlohmann::json::array();
  for (int r : user_order) {
    users.push_back(store.users()[r]);
    for (double x : store.user_vec(r)) user_vecs.push_back(x);
  }
  j["users"] = std::move(users);
  j["user_vecs"] = std::move(user_vecs);

  j["train_config"] = train_config_to_json(cfg);
  j["validation_mrr"] = validation_mrr;

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f << j.dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  nlohmann::json j;
  f >> j;

  const int dim = j.at("dim").get<int>();
  Checkpoint out{EmbeddingStore(dim),
                 ContextWeights{j.at("lambda_u").get<double>(), j.at("lambda_c").get<double>()},
                 train_config_from_json(j.value("train_config", nlohmann::json::object())),
                 j.value("validation_mrr", 0.0)};
  const auto vocab = j.at("vocab").get<std::vector<std::string>>();
  const auto word_vecs = j.at("word_vecs").get<std::vector<double>>();
  if (word_vecs.size() != vocab.size() * static_cast<std::size_t>(dim))
    throw std::runtime_error("checkpoint word_vecs size mismatch");
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const int row = out.store.add_word(vocab[i]);
    auto v = out.store.word_vec(row);
    std::copy_n(word_vecs.begin() + static_cast<std::ptrdiff_t>(i * dim), dim, v.begin());
  }
  const auto users = j.at("users").get<std::vector<UserId>>();
  const auto user_vecs = j.at("user_vecs").get<std::vector<double>>();
  if (user_vecs.size() != users.size() * static_cast<std::size_t>(dim))
    throw std::runtime_error("checkpoint user_vecs size mismatch");
  for (std::size_t i = 0; i < users.size(); ++i) {
    const int row = out.store.add_user(users[i]);
    auto v = out.store.user_vec(row);
    std::copy_n(user_vecs.begin() + static_cast<std::ptrdiff_t>(i * dim), dim, v.begin());
  }
  return out;
}

}  // namespace ctxrank
