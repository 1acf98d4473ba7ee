#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxrank/session.hpp"
#include "ctxrank/stats.hpp"

namespace ctxrank {

// Tail-stable mean: pairwise summation keeps the error O(log n) ulps so the
// aggregate is independent of how entries were chunked upstream.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t mid = v.size() / 2;
  return pairwise_sum(v.first(mid)) + pairwise_sum(v.subspan(mid));
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean of empty list");
  return pairwise_sum(v) / static_cast<double>(v.size());
}

// Binary-relevance average precision truncated at `cutoff`, normalized by
// the number of relevant items present anywhere in the ranking. 0 when the
// ranking contains no relevant item.
inline double average_precision(std::span<const ItemId> ranked, std::span<const ItemId> relevant,
                                int cutoff = 100) {
  std::vector<ItemId> rel(relevant.begin(), relevant.end());
  detail::sort_unique(rel);
  int present = 0;
  for (ItemId id : ranked)
    if (detail::sorted_contains(rel, id)) ++present;
  if (present == 0) return 0.0;
  double sum = 0.0;
  int hits = 0;
  const std::size_t upto = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(cutoff));
  for (std::size_t k = 0; k < upto; ++k) {
    if (detail::sorted_contains(rel, ranked[k])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(present);
}

inline double reciprocal_rank(std::span<const ItemId> ranked, std::span<const ItemId> relevant) {
  std::vector<ItemId> rel(relevant.begin(), relevant.end());
  detail::sort_unique(rel);
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (detail::sorted_contains(rel, ranked[k])) return 1.0 / static_cast<double>(k + 1);
  }
  return 0.0;
}

// Binary gains, 1-based ranks, log2 discount. The ideal list packs every
// relevant item present in the ranking at the top.
inline double ndcg(std::span<const ItemId> ranked, std::span<const ItemId> relevant, int k = 10) {
  std::vector<ItemId> rel(relevant.begin(), relevant.end());
  detail::sort_unique(rel);
  int present = 0;
  for (ItemId id : ranked)
    if (detail::sorted_contains(rel, id)) ++present;
  if (present == 0) return 0.0;
  double dcg = 0.0;
  const std::size_t upto = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < upto; ++i) {
    if (detail::sorted_contains(rel, ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
  }
  double idcg = 0.0;
  const int ideal = std::min(present, k);
  for (int i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
  return dcg / idcg;
}

constexpr double kSignificanceLevel = 0.001;

struct EntryResult {
  std::int64_t entry_id = 0;
  double ap_100 = 0.0;
  double rr = 0.0;
  double ndcg_10 = 0.0;
};

inline EntryResult score_ranking(std::int64_t entry_id, std::span<const ItemId> ranked,
                                 std::span<const ItemId> relevant) {
  return {entry_id, average_precision(ranked, relevant), reciprocal_rank(ranked, relevant),
          ndcg(ranked, relevant)};
}

struct MetricSummary {
  double mean = 0.0;
  double rel_improvement = 0.0;  // (mean - ref_mean) / ref_mean
  double p_value = 1.0;          // paired t vs the reference method
  bool degenerate_variance = false;
};

struct RunReport {
  std::string method;
  std::vector<EntryResult> entries;
  MetricSummary ap, rr, ndcg;
};

struct MethodResults {
  std::string method;
  std::vector<EntryResult> entries;
};

// Builds one report per method against the named reference. Every method
// must carry the identical entry-id sequence; means are over that shared set.
inline std::vector<RunReport> aggregate(const std::vector<MethodResults>& per_method,
                                        const std::string& reference) {
  if (per_method.empty()) throw std::invalid_argument("aggregate: no methods");
  const MethodResults* ref = nullptr;
  for (const auto& m : per_method)
    if (m.method == reference) ref = &m;
  if (ref == nullptr) throw std::invalid_argument("aggregate: unknown reference " + reference);
  if (ref->entries.empty()) throw std::invalid_argument("aggregate: empty entry set");

  for (const auto& m : per_method) {
    if (m.entries.size() != ref->entries.size())
      throw std::invalid_argument("aggregate: entry-set mismatch for " + m.method);
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      if (m.entries[i].entry_id != ref->entries[i].entry_id)
        throw std::invalid_argument("aggregate: entry-set mismatch for " + m.method);
    }
  }

  auto column = [](const MethodResults& m, double EntryResult::* field) {
    std::vector<double> v;
    v.reserve(m.entries.size());
    for (const auto& e : m.entries) v.push_back(e.*field);
    return v;
  };
  const std::vector<double> ref_ap = column(*ref, &EntryResult::ap_100);
  const std::vector<double> ref_rr = column(*ref, &EntryResult::rr);
  const std::vector<double> ref_ndcg = column(*ref, &EntryResult::ndcg_10);
  const double ref_ap_mean = mean_of(ref_ap);
  const double ref_rr_mean = mean_of(ref_rr);
  const double ref_ndcg_mean = mean_of(ref_ndcg);

  std::vector<RunReport> out;
  out.reserve(per_method.size());
  for (const auto& m : per_method) {
    RunReport r;
    r.method = m.method;
    r.entries = m.entries;
    auto summarize = [&](double EntryResult::* field, std::span<const double> ref_col,
                         double ref_mean) {
      MetricSummary s;
      const std::vector<double> col = column(m, field);
      s.mean = mean_of(col);
      s.rel_improvement = (s.mean - ref_mean) / ref_mean;
      if (m.entries.size() >= 2) {
        const PairedTResult t = paired_t_test(col, ref_col);
        s.p_value = t.p;
        s.degenerate_variance = t.degenerate;
      }
      return s;
    };
    r.ap = summarize(&EntryResult::ap_100, ref_ap, ref_ap_mean);
    r.rr = summarize(&EntryResult::rr, ref_rr, ref_rr_mean);
    r.ndcg = summarize(&EntryResult::ndcg_10, ref_ndcg, ref_ndcg_mean);
    out.push_back(std::move(r));
  }
  return out;
}

namespace metrics_detail {

inline std::string fmt(const char* spec, double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

}  // namespace metrics_detail

// One row per method x metric: mean, relative improvement vs the reference,
// two-sided paired-t p-value, and the p <= 0.001 significance mark.
inline void write_report_csv(const std::string& path, const std::vector<RunReport>& reports,
                             const std::string& reference) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write report: " + path);
  f << "method,metric,mean,rel_improvement_pct,p_value,significant\n";
  for (const auto& r : reports) {
    const std::pair<const char*, const MetricSummary*> rows[] = {
        {"map@100", &r.ap}, {"mrr", &r.rr}, {"ndcg@10", &r.ndcg}};
    for (const auto& [name, s] : rows) {
      f << r.method << ',' << name << ',' << metrics_detail::fmt("%.6f", s->mean) << ','
        << metrics_detail::fmt("%+.2f", 100.0 * s->rel_improvement) << ','
        << metrics_detail::fmt("%.6g", s->p_value) << ','
        << (r.method != reference && s->p_value <= kSignificanceLevel ? "yes" : "no") << '\n';
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline nlohmann::ordered_json report_to_json(const RunReport& r, const std::string& reference) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["n_entries"] = r.entries.size();
  auto summary = [&](const MetricSummary& s) {
    nlohmann::ordered_json m;
    m["mean"] = s.mean;
    m["rel_improvement"] = s.rel_improvement;
    m["p_value"] = s.p_value;
    m["significant"] = r.method != reference && s.p_value <= kSignificanceLevel;
    if (s.degenerate_variance) m["degenerate_variance"] = true;
    return m;
  };
  j["map@100"] = summary(r.ap);
  j["mrr"] = summary(r.rr);
  j["ndcg@10"] = summary(r.ndcg);
  nlohmann::ordered_json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    nlohmann::ordered_json je;
    je["entry_id"] = e.entry_id;
    je["ap_100"] = e.ap_100;
    je["rr"] = e.rr;
    je["ndcg_10"] = e.ndcg_10;
    entries.push_back(std::move(je));
  }
  j["entries"] = std::move(entries);
  return j;
}

inline void write_report_json(const std::string& path, const std::vector<RunReport>& reports,
                              const std::string& reference) {
  nlohmann::ordered_json j;
  j["reference"] = reference;
  j["significance_level"] = kSignificanceLevel;
  nlohmann::ordered_json methods = nlohmann::json::array();
  for (const auto& r : reports) methods.push_back(report_to_json(r, reference));
  j["methods"] = std::move(methods);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write report: " + path);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace ctxrank
