#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace ctxrank {

using ItemId = std::int64_t;
using UserId = std::int64_t;
using Tokens = std::vector<std::string>;

struct Product {
  ItemId id = 0;
  Tokens title;  // lowercased tokens; may be empty at load time (embeds to zero)
};

// One result page as served by the initial ranker. clicks/purchases are sets
// kept as sorted unique vectors; both are subsets of items, and purchases are
// a subset of clicks (a purchase implies an interaction).
struct Page {
  int page_no = 1;
  std::vector<ItemId> items;
  std::vector<ItemId> clicks;
  std::vector<ItemId> purchases;
};

struct QuerySession {
  std::int64_t session_id = 0;
  std::optional<UserId> user_id;  // absent = anonymous user
  Tokens query;
  int week = 0;
  std::vector<Page> pages;
};

// One (u, q, C_{1:t}, D_{t+1}, B) sub-session. candidates keep the initial
// ranker's order; clicked/purchased are sorted unique sets.
struct TrainingEntry {
  std::int64_t session_id = 0;
  std::optional<UserId> user_id;
  Tokens query;
  int week = 0;                     // source session's week; long-term feedback cuts off here
  int t = 1;                        // context boundary: pages 1..t are context
  std::vector<ItemId> clicked;      // C_{1:t}, non-empty
  std::vector<ItemId> candidates;   // D_{t+1}, ranker order
  std::vector<ItemId> purchased;    // targets, subset of candidates, non-empty

  // Stable 64-bit key; seeds per-entry substreams (RAND baseline).
  std::uint64_t key() const {
    return (static_cast<std::uint64_t>(session_id) << 8) ^ static_cast<std::uint64_t>(t);
  }
};

struct Catalog {
  std::unordered_map<ItemId, Product> products;
  std::unordered_map<ItemId, std::int64_t> popularity;  // training-split purchase counts

  const Product& at(ItemId id) const {
    auto it = products.find(id);
    if (it == products.end()) throw std::out_of_range("catalog: unknown item id " + std::to_string(id));
    return it->second;
  }
  bool contains(ItemId id) const { return products.count(id) != 0; }
  std::int64_t purchase_count(ItemId id) const {
    auto it = popularity.find(id);
    return it == popularity.end() ? 0 : it->second;
  }
};

namespace detail {

inline void sort_unique(std::vector<ItemId>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

inline bool sorted_contains(const std::vector<ItemId>& v, ItemId x) {
  return std::binary_search(v.begin(), v.end(), x);
}

}  // namespace detail

// Structural invariants of a session. Throws std::invalid_argument on the
// first violation; used both by the loader and by the generator's own output.
inline void validate_session(const QuerySession& s) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("session " + std::to_string(s.session_id) + ": " + what);
  };
  if (s.week < 0) fail("negative week");
  if (s.pages.empty()) fail("no pages");
  std::unordered_set<ItemId> seen;
  for (std::size_t i = 0; i < s.pages.size(); ++i) {
    const Page& p = s.pages[i];
    if (p.page_no != static_cast<int>(i) + 1) fail("pages not numbered 1..N");
    std::unordered_set<ItemId> on_page;
    for (ItemId it : p.items) {
      if (it < 0) fail("negative item id");
      if (!seen.insert(it).second) fail("item on more than one page");
      on_page.insert(it);
    }
    if (!std::is_sorted(p.clicks.begin(), p.clicks.end())) fail("clicks not sorted");
    if (!std::is_sorted(p.purchases.begin(), p.purchases.end())) fail("purchases not sorted");
    for (ItemId it : p.clicks)
      if (!on_page.count(it)) fail("click off page");
    for (ItemId it : p.purchases) {
      if (!on_page.count(it)) fail("purchase off page");
      if (!detail::sorted_contains(p.clicks, it)) fail("purchase without click");
    }
  }
}

// Union of items served on pages 1..t (every served item counts as viewed).
inline std::vector<ItemId> viewed_items(const QuerySession& s, int t) {
  std::vector<ItemId> out;
  for (int p = 0; p < t && p < static_cast<int>(s.pages.size()); ++p) {
    out.insert(out.end(), s.pages[p].items.begin(), s.pages[p].items.end());
  }
  detail::sort_unique(out);
  return out;
}

// D_{t+1} = R_{1:t+k} \ V_{1:t}: items on pages 1..min(t+k, last) minus
// everything served on pages 1..t, in initial-ranker order.
inline std::vector<ItemId> build_candidate_set(const QuerySession& s, int t, int k) {
  if (k < 1) throw std::invalid_argument("build_candidate_set: k must be >= 1");
  if (t < 1 || t >= static_cast<int>(s.pages.size()))
    throw std::out_of_range("build_candidate_set: t out of range");
  const std::vector<ItemId> viewed = viewed_items(s, t);
  const int last = std::min<int>(t + k, static_cast<int>(s.pages.size()));
  std::vector<ItemId> out;
  for (int p = 0; p < last; ++p) {
    for (ItemId it : s.pages[p].items) {
      if (!detail::sorted_contains(viewed, it)) out.push_back(it);
    }
  }
  return out;
}

// Earliest page (1-based) holding a purchase on page >= 2, or 0 if none.
inline int earliest_late_purchase_page(const QuerySession& s) {
  for (std::size_t i = 1; i < s.pages.size(); ++i) {
    if (!s.pages[i].purchases.empty()) return static_cast<int>(i) + 1;
  }
  return 0;
}

inline bool session_passes_filter(const QuerySession& s) {
  const int p = earliest_late_purchase_page(s);
  if (p == 0) return false;
  for (int i = 0; i < p - 1; ++i) {
    if (!s.pages[i].clicks.empty()) return true;
  }
  return false;
}

// Keeps sessions with a purchase on some page p >= 2 and at least one click
// strictly before the earliest such p. Idempotent.
inline std::vector<QuerySession> filter_sessions(const std::vector<QuerySession>& log) {
  std::vector<QuerySession> out;
  out.reserve(log.size());
  for (const QuerySession& s : log) {
    if (session_passes_filter(s)) out.push_back(s);
  }
  return out;
}

// One entry per page p >= 2 that has a purchase and a click somewhere on
// pages 1..p-1. Targets are all purchases on pages >= p that survive the
// candidate-set intersection; entries with no surviving target are dropped.
inline std::vector<TrainingEntry> split_subsessions(const QuerySession& s, int k) {
  std::vector<TrainingEntry> out;
  const int n_pages = static_cast<int>(s.pages.size());
  std::vector<ItemId> clicked_so_far;
  for (int p = 2; p <= n_pages; ++p) {
    const Page& page_before = s.pages[p - 2];
    clicked_so_far.insert(clicked_so_far.end(), page_before.clicks.begin(),
                          page_before.clicks.end());
    if (s.pages[p - 1].purchases.empty() || clicked_so_far.empty()) continue;

    TrainingEntry e;
    e.session_id = s.session_id;
    e.user_id = s.user_id;
    e.query = s.query;
    e.week = s.week;
    e.t = p - 1;
    e.clicked = clicked_so_far;
    detail::sort_unique(e.clicked);
    e.candidates = build_candidate_set(s, e.t, k);

    std::vector<ItemId> in_candidates(e.candidates);
    detail::sort_unique(in_candidates);
    for (int q = p; q <= n_pages; ++q) {
      for (ItemId it : s.pages[q - 1].purchases) {
        if (detail::sorted_contains(in_candidates, it)) e.purchased.push_back(it);
      }
    }
    detail::sort_unique(e.purchased);
    if (!e.purchased.empty()) out.push_back(std::move(e));
  }
  return out;
}

// filter + split over a whole log.
inline std::vector<TrainingEntry> build_entries(const std::vector<QuerySession>& log, int k) {
  std::vector<TrainingEntry> out;
  for (const QuerySession& s : log) {
    if (!session_passes_filter(s)) continue;
    auto es = split_subsessions(s, k);
    out.insert(out.end(), std::make_move_iterator(es.begin()), std::make_move_iterator(es.end()));
  }
  return out;
}

struct TemporalSplit {
  std::vector<QuerySession> train, valid, test;
};

// Partition by week boundaries so split sizes track the requested fractions
// without splitting any week. Train weeks < valid weeks < test weeks.
inline TemporalSplit temporal_split(const std::vector<QuerySession>& log, double train_frac,
                                    double valid_frac) {
  if (!(train_frac > 0.0) || !(valid_frac > 0.0) || !(train_frac + valid_frac < 1.0))
    throw std::invalid_argument("temporal_split: fractions must be positive and sum below 1");

  std::unordered_map<int, std::int64_t> per_week;
  for (const auto& s : log) per_week[s.week]++;
  std::vector<int> weeks;
  weeks.reserve(per_week.size());
  for (const auto& [w, _] : per_week) weeks.push_back(w);
  std::sort(weeks.begin(), weeks.end());
  const int n_weeks = static_cast<int>(weeks.size());
  if (n_weeks < 3) throw std::invalid_argument("temporal_split: need at least 3 distinct weeks");

  const double total = static_cast<double>(log.size());
  std::vector<double> cum(n_weeks + 1, 0.0);
  for (int i = 0; i < n_weeks; ++i) cum[i + 1] = cum[i] + static_cast<double>(per_week[weeks[i]]);

  // i = number of train weeks, leaves >= 2 weeks behind it.
  int best_i = 1;
  double best_err = 1e300;
  for (int i = 1; i <= n_weeks - 2; ++i) {
    const double err = std::abs(cum[i] / total - train_frac);
    if (err < best_err) {
      best_err = err;
      best_i = i;
    }
  }
  // j = number of train+valid weeks, leaves >= 1 test week.
  int best_j = best_i + 1;
  best_err = 1e300;
  for (int j = best_i + 1; j <= n_weeks - 1; ++j) {
    const double err = std::abs((cum[j] - cum[best_i]) / total - valid_frac);
    if (err < best_err) {
      best_err = err;
      best_j = j;
    }
  }

  const int train_last_week = weeks[best_i - 1];
  const int valid_last_week = weeks[best_j - 1];
  TemporalSplit out;
  for (const QuerySession& s : log) {
    if (s.week <= train_last_week) {
      out.train.push_back(s);
    } else if (s.week <= valid_last_week) {
      out.valid.push_back(s);
    } else {
      out.test.push_back(s);
    }
  }
  return out;
}

// Training-split purchase counts for the POP baseline.
inline void accumulate_popularity(Catalog& catalog, const std::vector<QuerySession>& train) {
  for (const QuerySession& s : train) {
    for (const Page& p : s.pages) {
      for (ItemId it : p.purchases) catalog.popularity[it]++;
    }
  }
}

}  // namespace ctxrank
