#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctxrank/cem.hpp"
#include "ctxrank/io.hpp"
#include "ctxrank/lexical.hpp"
#include "ctxrank/metrics.hpp"
#include "ctxrank/rng.hpp"
#include "ctxrank/session.hpp"
#include "ctxrank/stats.hpp"
#include "ctxrank/synth.hpp"

namespace ctxrank {

enum class MethodKind { ProdProxy, Rand, Pop, Ql, Cem, ShortRm3, LongRm3 };

// One row of the comparison: a named ranker plus its parameters. The CEM
// family is distinguished only by its mixing weights; the RM3 family by its
// feedback source (clicked titles vs the user's earlier-week purchases).
struct MethodSpec {
  std::string name;
  MethodKind kind = MethodKind::ProdProxy;
  ContextWeights weights;  // Cem
  Rm3Params rm3;           // ShortRm3 / LongRm3
  double mu = 200.0;       // Ql
};

inline MethodSpec default_method_spec(const std::string& raw) {
  const std::string name = raw == "PROD-proxy" ? "PROD" : raw;
  MethodSpec m;
  m.name = name;
  if (name == "PROD") {
    m.kind = MethodKind::ProdProxy;
  } else if (name == "RAND") {
    m.kind = MethodKind::Rand;
  } else if (name == "POP") {
    m.kind = MethodKind::Pop;
  } else if (name == "QL") {
    m.kind = MethodKind::Ql;
  } else if (name == "QEM") {
    m.kind = MethodKind::Cem;
    m.weights = {0.0, 0.0};
  } else if (name == "LCEM") {
    m.kind = MethodKind::Cem;
    m.weights = {1.0, 0.0};
  } else if (name == "SCEM") {
    m.kind = MethodKind::Cem;
    m.weights = {0.0, 1.0};
  } else if (name == "LSCEM") {
    // long + short context splitting the full budget; the short side keeps
    // the larger share
    m.kind = MethodKind::Cem;
    m.weights = {0.2, 0.8};
  } else if (name == "SCRM3") {
    m.kind = MethodKind::ShortRm3;
    m.rm3 = {1.0, 40, 200.0};
  } else if (name == "LCRM3") {
    m.kind = MethodKind::LongRm3;
    m.rm3 = {0.8, 40, 200.0};
  } else {
    throw std::invalid_argument("unknown method: " + raw);
  }
  return m;
}

inline MethodSpec method_spec_from_json(const nlohmann::json& j) {
  if (j.is_string()) return default_method_spec(j.get<std::string>());
  if (!j.is_object() || !j.contains("name"))
    throw std::invalid_argument("method spec must be a name or an object with a name");
  MethodSpec m = default_method_spec(j.at("name").get<std::string>());
  if (m.kind == MethodKind::Cem) {
    m.weights.lambda_u = j.value("lambda_u", m.weights.lambda_u);
    m.weights.lambda_c = j.value("lambda_c", m.weights.lambda_c);
    m.weights.validate();
  }
  if (m.kind == MethodKind::ShortRm3 || m.kind == MethodKind::LongRm3) {
    m.rm3.alpha = j.value("alpha", m.rm3.alpha);
    m.rm3.n_expansion_terms = j.value("n_expansion_terms", m.rm3.n_expansion_terms);
    m.rm3.mu = j.value("mu", m.rm3.mu);
    m.rm3.validate();
  }
  if (m.kind == MethodKind::Ql) m.mu = j.value("mu", m.mu);
  return m;
}

inline std::vector<MethodSpec> default_methods() {
  std::vector<MethodSpec> out;
  for (const char* n : {"PROD", "RAND", "POP", "QL", "QEM", "LCRM3", "LCEM", "SCRM3", "SCEM", "LSCEM"})
    out.push_back(default_method_spec(n));
  return out;
}

struct ExperimentConfig {
  std::string catalog_path = "data/catalog.jsonl";
  std::string sessions_path = "data/sessions.jsonl";
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";
  int k = 0;      // candidate horizon in pages; 0 derives "rest of the session"
  int t_eval = 1;
  double train_frac = 0.85;
  double valid_frac = 0.05;
  std::uint64_t eval_seed = 7;  // keys the RAND baseline
  std::string reference = "PROD";
  GenConfig gen;
  TrainConfig train;
  std::vector<MethodSpec> methods = default_methods();

  int horizon() const { return k > 0 ? k : gen.pages_per_session - 1; }

  void validate() const {
    if (t_eval < 1) throw std::invalid_argument("config: t_eval must be >= 1");
    if (k < 0) throw std::invalid_argument("config: k must be >= 0");
    if (methods.empty()) throw std::invalid_argument("config: empty method list");
    for (std::size_t i = 0; i < methods.size(); ++i) {
      for (std::size_t l = i + 1; l < methods.size(); ++l) {
        if (methods[i].name == methods[l].name)
          throw std::invalid_argument("config: duplicate method " + methods[i].name);
      }
    }
    gen.validate();
    train.validate();
  }
};

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.catalog_path = j.value("catalog", c.catalog_path);
  c.sessions_path = j.value("sessions", c.sessions_path);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
  c.report_dir = j.value("report_dir", c.report_dir);
  c.k = j.value("k", c.k);
  c.t_eval = j.value("t_eval", c.t_eval);
  c.train_frac = j.value("train_frac", c.train_frac);
  c.valid_frac = j.value("valid_frac", c.valid_frac);
  c.eval_seed = j.value("eval_seed", c.eval_seed);
  c.reference = j.value("reference", c.reference);
  if (c.reference == "PROD-proxy") c.reference = "PROD";
  if (j.contains("generate")) c.gen = gen_config_from_json(j.at("generate"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(method_spec_from_json(m));
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Dataset assembly: split, popularity, entry extraction.
// ---------------------------------------------------------------------------

struct Dataset {
  Catalog catalog;
  TemporalSplit split;
  std::vector<TrainingEntry> train_entries;  // all context boundaries
  std::vector<TrainingEntry> valid_entries;  // t == t_eval only
  std::vector<TrainingEntry> test_entries;   // t == t_eval only
};

inline std::vector<TrainingEntry> entries_at(const std::vector<QuerySession>& sessions, int k,
                                             int t_eval) {
  std::vector<TrainingEntry> all = build_entries(sessions, k);
  std::erase_if(all, [&](const TrainingEntry& e) { return e.t != t_eval; });
  return all;
}

inline Dataset prepare_dataset(const ExperimentConfig& cfg, Catalog catalog,
                               const std::vector<QuerySession>& sessions) {
  cfg.validate();
  Dataset d;
  d.catalog = std::move(catalog);
  check_log_against_catalog(sessions, d.catalog);
  d.split = temporal_split(sessions, cfg.train_frac, cfg.valid_frac);
  accumulate_popularity(d.catalog, d.split.train);
  d.train_entries = build_entries(d.split.train, cfg.horizon());
  d.valid_entries = entries_at(d.split.valid, cfg.horizon(), cfg.t_eval);
  d.test_entries = entries_at(d.split.test, cfg.horizon(), cfg.t_eval);
  return d;
}

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  return prepare_dataset(cfg, load_catalog(cfg.catalog_path), load_sessions(cfg.sessions_path));
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

struct TrainedModel {
  EmbeddingStore store;
  ContextWeights weights;
};

namespace harness_detail {

inline std::uint64_t hash_items(std::span<const ItemId> items) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (ItemId id : items) {
    std::uint64_t x = static_cast<std::uint64_t>(id);
    for (int b = 0; b < 8; ++b) {
      h ^= (x >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

inline bool is_permutation_of(std::span<const ItemId> ranked, std::span<const ItemId> candidates) {
  if (ranked.size() != candidates.size()) return false;
  std::vector<ItemId> a(ranked.begin(), ranked.end());
  std::vector<ItemId> b(candidates.begin(), candidates.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

}  // namespace harness_detail

inline std::vector<ItemId> rank_with_method(const MethodSpec& m, const TrainingEntry& e,
                                            const Catalog& catalog,
                                            const LanguageModelIndex& index,
                                            const LongTermHistory& history,
                                            const TrainedModel* model,
                                            const ItemEmbeddings* items,
                                            std::uint64_t eval_seed) {
  switch (m.kind) {
    case MethodKind::ProdProxy:
      return e.candidates;
    case MethodKind::Rand:
      return rand_rank(e.candidates, eval_seed, e.key());
    case MethodKind::Pop:
      return pop_rank(catalog, e.candidates);
    case MethodKind::Ql:
      return ql_rank(index, e.query, e.candidates, m.mu);
    case MethodKind::ShortRm3: {
      std::vector<Tokens> feedback;
      feedback.reserve(e.clicked.size());
      for (ItemId id : e.clicked) feedback.push_back(catalog.at(id).title);
      return rm3_rank(index, e.query, feedback, m.rm3, e.candidates);
    }
    case MethodKind::LongRm3: {
      const std::vector<Tokens> feedback = history.feedback_docs(e.user_id, e.week, catalog);
      return rm3_rank(index, e.query, feedback, m.rm3, e.candidates);
    }
    case MethodKind::Cem:
      return rank_entry_cached(model->store, *items, e, m.weights);
  }
  throw std::logic_error("unhandled method kind");
}

// Scores every configured method over the shared test entries. Every method
// ranks the identical candidate list; the pre/post hash check and the
// permutation check make a silently divergent method a hard error.
inline std::vector<RunReport> evaluate_methods(
    const ExperimentConfig& cfg, const Dataset& data,
    const std::unordered_map<std::string, TrainedModel>& models) {
  cfg.validate();
  if (data.test_entries.empty())
    throw std::runtime_error("no test entries at t = " + std::to_string(cfg.t_eval));

  const LanguageModelIndex index(data.catalog);
  const LongTermHistory history(data.split.train);

  std::vector<std::uint64_t> cand_hash;
  cand_hash.reserve(data.test_entries.size());
  for (const auto& e : data.test_entries) cand_hash.push_back(harness_detail::hash_items(e.candidates));

  std::vector<MethodResults> per_method;
  per_method.reserve(cfg.methods.size());
  for (const MethodSpec& m : cfg.methods) {
    const TrainedModel* model = nullptr;
    std::optional<ItemEmbeddings> items;
    if (m.kind == MethodKind::Cem) {
      auto it = models.find(m.name);
      if (it == models.end())
        throw std::runtime_error("no trained model for " + m.name + "; run: train --method " + m.name);
      if (std::abs(it->second.weights.lambda_u - m.weights.lambda_u) > 1e-9 ||
          std::abs(it->second.weights.lambda_c - m.weights.lambda_c) > 1e-9)
        throw std::runtime_error("checkpoint weights do not match method " + m.name);
      model = &it->second;
      items.emplace(model->store, data.catalog);
    }
    MethodResults res{m.name, {}};
    res.entries.reserve(data.test_entries.size());
    for (std::size_t i = 0; i < data.test_entries.size(); ++i) {
      const TrainingEntry& e = data.test_entries[i];
      const std::vector<ItemId> ranked = rank_with_method(
          m, e, data.catalog, index, history, model, items ? &*items : nullptr, cfg.eval_seed);
      if (!harness_detail::is_permutation_of(ranked, e.candidates))
        throw std::runtime_error(m.name + " did not return a permutation of the candidates");
      res.entries.push_back(score_ranking(static_cast<std::int64_t>(e.key()), ranked, e.purchased));
    }
    per_method.push_back(std::move(res));
  }
  for (std::size_t i = 0; i < data.test_entries.size(); ++i) {
    if (harness_detail::hash_items(data.test_entries[i].candidates) != cand_hash[i])
      throw std::runtime_error("candidate list mutated during evaluation");
  }
  return aggregate(per_method, cfg.reference);
}

inline TrainResult train_method(const ExperimentConfig& cfg, const Dataset& data,
                                const MethodSpec& m) {
  if (m.kind != MethodKind::Cem)
    throw std::invalid_argument(m.name + " has no trainable model; only the CEM family trains");
  if (data.train_entries.empty()) throw std::runtime_error("empty training entry set");
  return train(data.train_entries, data.valid_entries, data.catalog, cfg.train, m.weights);
}

inline const MethodSpec& find_method(const ExperimentConfig& cfg, const std::string& raw) {
  const std::string name = raw == "PROD-proxy" ? "PROD" : raw;
  for (const auto& m : cfg.methods)
    if (m.name == name) return m;
  throw std::invalid_argument("method " + raw + " is not in the configured method list");
}

// ---------------------------------------------------------------------------
// Sweeps.
// ---------------------------------------------------------------------------

struct SweepPoint {
  double value = 0.0;
  double map100 = 0.0;
  double mrr = 0.0;
  double ndcg10 = 0.0;
  int best_epoch = 0;
  double best_val_mrr = 0.0;
};

inline std::vector<double> default_grid(const std::string& param) {
  if (param == "lambda_c" || param == "lambda_u") return {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  if (param == "dim") return {50, 100, 150, 200, 250, 300};
  throw std::invalid_argument("unknown sweep parameter: " + param);
}

// Trains one model per grid value and scores it on the test entries.
// lambda_c sweeps (0, v); lambda_u sweeps (v, 0); dim sweeps the short-term
// configuration (0, 1) at each embedding size.
inline std::vector<SweepPoint> run_sweep_points(const ExperimentConfig& cfg, const Dataset& data,
                                                const std::string& param,
                                                const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
  if (data.test_entries.empty()) throw std::runtime_error("sweep: no test entries");
  std::vector<SweepPoint> points;
  points.reserve(grid.size());
  for (double v : grid) {
    TrainConfig tc = cfg.train;
    ContextWeights w;
    if (param == "lambda_c") {
      w = {0.0, v};
    } else if (param == "lambda_u") {
      w = {v, 0.0};
    } else if (param == "dim") {
      if (v < 1.0 || v != std::floor(v)) throw std::invalid_argument("sweep: dim grid must be positive integers");
      w = {0.0, 1.0};
      tc.dim = static_cast<int>(v);
    } else {
      throw std::invalid_argument("unknown sweep parameter: " + param);
    }
    w.validate();
    const TrainResult tr = train(data.train_entries, data.valid_entries, data.catalog, tc, w);
    const ItemEmbeddings items(tr.store, data.catalog);
    std::vector<double> ap, rr, nd;
    ap.reserve(data.test_entries.size());
    rr.reserve(data.test_entries.size());
    nd.reserve(data.test_entries.size());
    for (const auto& e : data.test_entries) {
      const auto ranked = rank_entry_cached(tr.store, items, e, w);
      const EntryResult r = score_ranking(static_cast<std::int64_t>(e.key()), ranked, e.purchased);
      ap.push_back(r.ap_100);
      rr.push_back(r.rr);
      nd.push_back(r.ndcg_10);
    }
    points.push_back({v, mean_of(ap), mean_of(rr), mean_of(nd), tr.best_epoch, tr.best_val_mrr});
  }
  return points;
}

inline void write_sweep_csv(const std::string& path, const std::string& param,
                            const std::vector<SweepPoint>& points) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write sweep report: " + path);
  f << "param,value,map@100,mrr,ndcg@10,best_epoch,best_val_mrr\n";
  for (const auto& p : points) {
    f << param << ',' << metrics_detail::fmt("%g", p.value) << ','
      << metrics_detail::fmt("%.6f", p.map100) << ',' << metrics_detail::fmt("%.6f", p.mrr) << ','
      << metrics_detail::fmt("%.6f", p.ndcg10) << ',' << p.best_epoch << ','
      << metrics_detail::fmt("%.6f", p.best_val_mrr) << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline void write_sweep_json(const std::string& path, const std::string& param,
                             const std::vector<SweepPoint>& points) {
  nlohmann::ordered_json j;
  j["param"] = param;
  nlohmann::ordered_json rows = nlohmann::json::array();
  for (const auto& p : points) {
    nlohmann::ordered_json r;
    r["value"] = p.value;
    r["map@100"] = p.map100;
    r["mrr"] = p.mrr;
    r["ndcg@10"] = p.ndcg10;
    r["best_epoch"] = p.best_epoch;
    r["best_val_mrr"] = p.best_val_mrr;
    rows.push_back(std::move(r));
  }
  j["points"] = std::move(rows);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write sweep report: " + path);
  f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// CLI command bodies. All file-system effects live here.
// ---------------------------------------------------------------------------

namespace harness_detail {

inline void ensure_parent_dir(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

}  // namespace harness_detail

inline int cmd_generate(const ExperimentConfig& cfg, std::ostream& out) {
  cfg.validate();
  Corpus corpus = generate_corpus(cfg.gen);
  GenStats st;
  const std::vector<QuerySession> sessions =
      generate_sessions(cfg.gen, corpus.catalog, corpus.world, &st);
  harness_detail::ensure_parent_dir(cfg.catalog_path);
  harness_detail::ensure_parent_dir(cfg.sessions_path);
  save_catalog(cfg.catalog_path, corpus.catalog);
  save_sessions(cfg.sessions_path, sessions);

  const std::size_t kept = filter_sessions(sessions).size();
  out << "catalog: " << corpus.catalog.products.size() << " products, vocab " << cfg.gen.vocab_size
      << ", users " << cfg.gen.n_users << "\n";
  out << "sessions: " << sessions.size() << " emitted over " << st.attempts << " attempts; " << kept
      << "/" << sessions.size() << " pass the re-ranking filter\n";
  out << "clicks/page: " << metrics_detail::fmt("%.2f", st.mean_clicks_per_page)
      << "  purchases/session: " << metrics_detail::fmt("%.2f", st.mean_purchases_per_session)
      << "  anonymous: " << metrics_detail::fmt("%.1f", 100.0 * st.anonymous_fraction) << "%\n";
  out << "wrote " << cfg.catalog_path << " and " << cfg.sessions_path << "\n";
  return 0;
}

inline std::string checkpoint_path(const ExperimentConfig& cfg, const std::string& method) {
  return (std::filesystem::path(cfg.checkpoint_dir) / (method + ".json")).string();
}

inline int cmd_train(const ExperimentConfig& cfg, const std::string& method, std::ostream& out) {
  const MethodSpec& spec = find_method(cfg, method);
  const Dataset data = load_dataset(cfg);
  out << "entries: " << data.train_entries.size() << " train, " << data.valid_entries.size()
      << " valid (t=" << cfg.t_eval << "), " << data.test_entries.size() << " test\n";
  const TrainResult tr = train_method(cfg, data, spec);
  for (std::size_t ep = 0; ep < tr.epoch_nll.size(); ++ep) {
    out << "epoch " << (ep + 1) << ": nll " << metrics_detail::fmt("%.4f", tr.epoch_nll[ep])
        << "  val mrr " << metrics_detail::fmt("%.4f", tr.epoch_val_mrr[ep]) << "\n";
  }
  out << "best epoch " << tr.best_epoch << " (val mrr "
      << metrics_detail::fmt("%.4f", tr.best_val_mrr) << ")\n";
  std::filesystem::create_directories(cfg.checkpoint_dir);
  const std::string path = checkpoint_path(cfg, spec.name);
  save_checkpoint(path, tr.store, spec.weights, cfg.train, tr.best_val_mrr);
  out << "wrote " << path << "\n";
  return 0;
}

inline void print_report_table(const std::vector<RunReport>& reports, const std::string& reference,
                               std::ostream& out) {
  out << "method     map@100              mrr                  ndcg@10\n";
  for (const auto& r : reports) {
    auto cell = [&](const MetricSummary& s) {
      std::string v = metrics_detail::fmt("%.4f", s.mean) + " (" +
                      metrics_detail::fmt("%+.1f", 100.0 * s.rel_improvement) + "%" +
                      (r.method != reference && s.p_value <= kSignificanceLevel ? "*" : "") + ")";
      v.resize(std::max<std::size_t>(v.size(), 20), ' ');
      return v;
    };
    std::string name = r.method;
    name.resize(std::max<std::size_t>(name.size(), 10), ' ');
    out << name << " " << cell(r.ap) << " " << cell(r.rr) << " " << cell(r.ndcg) << "\n";
  }
  out << "relative to " << reference << "; * marks p <= " << kSignificanceLevel
      << " (paired t-test)\n";
}

inline int cmd_evaluate(const ExperimentConfig& cfg, std::ostream& out) {
  const Dataset data = load_dataset(cfg);
  std::unordered_map<std::string, TrainedModel> models;
  for (const MethodSpec& m : cfg.methods) {
    if (m.kind != MethodKind::Cem) continue;
    const std::string path = checkpoint_path(cfg, m.name);
    if (!std::filesystem::exists(path))
      throw std::runtime_error("missing checkpoint " + path + "; run: train --method " + m.name);
    Checkpoint ck = load_checkpoint(path);
    models.emplace(m.name, TrainedModel{std::move(ck.store), ck.weights});
  }
  const std::vector<RunReport> reports = evaluate_methods(cfg, data, models);
  std::filesystem::create_directories(cfg.report_dir);
  const std::string csv = (std::filesystem::path(cfg.report_dir) / "report.csv").string();
  const std::string json = (std::filesystem::path(cfg.report_dir) / "report.json").string();
  write_report_csv(csv, reports, cfg.reference);
  write_report_json(json, reports, cfg.reference);
  out << "evaluated " << data.test_entries.size() << " test entries at t=" << cfg.t_eval << "\n";
  print_report_table(reports, cfg.reference, out);
  out << "wrote " << csv << " and " << json << "\n";
  return 0;
}

inline int cmd_sweep(const ExperimentConfig& cfg, const std::string& param,
                     const std::vector<double>& grid, std::ostream& out) {
  const Dataset data = load_dataset(cfg);
  const std::vector<SweepPoint> points = run_sweep_points(cfg, data, param, grid);
  std::filesystem::create_directories(cfg.report_dir);
  const std::string csv =
      (std::filesystem::path(cfg.report_dir) / ("sweep_" + param + ".csv")).string();
  const std::string json =
      (std::filesystem::path(cfg.report_dir) / ("sweep_" + param + ".json")).string();
  write_sweep_csv(csv, param, points);
  write_sweep_json(json, param, points);
  out << param << "   map@100   mrr       ndcg@10\n";
  for (const auto& p : points) {
    out << metrics_detail::fmt("%-8g", p.value) << "  " << metrics_detail::fmt("%.4f", p.map100)
        << "    " << metrics_detail::fmt("%.4f", p.mrr) << "    "
        << metrics_detail::fmt("%.4f", p.ndcg10) << "\n";
  }
  out << "wrote " << csv << " and " << json << "\n";
  return 0;
}

}  // namespace ctxrank
