#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxrank/selftest.hpp"
#include "ctxrank/session.hpp"
#include "ctxrank/synth.hpp"
#include "ctxrank/vec.hpp"

using namespace ctxrank;
using Catch::Approx;

namespace {

GenConfig small_config(std::uint64_t seed) { return selftest_detail::small_gen_config(seed); }

double title_overlap(const Tokens& a, const Tokens& b) {
  const std::set<std::string> sa(a.begin(), a.end());
  const std::set<std::string> sb(b.begin(), b.end());
  std::size_t both = 0;
  for (const auto& w : sa)
    if (sb.count(w)) ++both;
  const std::size_t uni = sa.size() + sb.size() - both;
  return uni == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(uni);
}

}  // namespace

TEST_CASE("gen config validation rejects each malformed field", "[synth]") {
  CHECK_NOTHROW(GenConfig{}.validate());
  CHECK_NOTHROW(small_config(1).validate());

  auto reject = [](auto mutate) {
    GenConfig c = small_config(1);
    mutate(c);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  };
  reject([](GenConfig& c) { c.n_sessions = 0; });
  reject([](GenConfig& c) { c.pages_per_session = 1; });
  reject([](GenConfig& c) { c.title_len_max = c.title_len_min - 1; });
  reject([](GenConfig& c) { c.n_products = c.page_size * c.pages_per_session - 1; });
  reject([](GenConfig& c) { c.click_noise = 1.5; });
  reject([](GenConfig& c) { c.topic_loyalty = -0.2; });
  reject([](GenConfig& c) { c.purchase_temperature = 0.0; });
  reject([](GenConfig& c) { c.topic_title_temperature = 0.0; });
  reject([](GenConfig& c) { c.session_topic_spread = -1.0; });
  reject([](GenConfig& c) { c.ranker_noise = -0.1; });
  reject([](GenConfig& c) { c.n_topics = 0; });
}

TEST_CASE("gen config json round-trips and validates on load", "[synth]") {
  GenConfig c = small_config(1);
  c.seed = 99;
  c.n_topics = 7;
  c.topic_word_fraction = 0.55;
  c.topic_loyalty = 0.9;
  c.click_noise = 0.02;
  c.purchase_temperature = 0.11;
  c.lexical_weight = 3.25;
  c.late_purchase_fraction = 0.5;

  const GenConfig back = gen_config_from_json(gen_config_to_json(c));
  CHECK(back.seed == c.seed);
  CHECK(back.vocab_size == c.vocab_size);
  CHECK(back.n_topics == c.n_topics);
  CHECK(back.topic_word_fraction == c.topic_word_fraction);
  CHECK(back.topic_loyalty == c.topic_loyalty);
  CHECK(back.click_noise == c.click_noise);
  CHECK(back.purchase_temperature == c.purchase_temperature);
  CHECK(back.lexical_weight == c.lexical_weight);
  CHECK(back.late_purchase_fraction == c.late_purchase_fraction);

  // absent keys fall back to defaults; bad values still validate
  const GenConfig defaults = gen_config_from_json(nlohmann::json::object());
  CHECK(defaults.seed == GenConfig{}.seed);
  CHECK(defaults.n_sessions == GenConfig{}.n_sessions);
  CHECK_THROWS_AS(gen_config_from_json(nlohmann::json{{"pages_per_session", 1}}),
                  std::invalid_argument);
}

TEST_CASE("the corpus is a deterministic function of the config", "[synth]") {
  const GenConfig g = small_config(3);
  Corpus a = generate_corpus(g);
  Corpus b = generate_corpus(g);

  REQUIRE(a.catalog.products.size() == static_cast<std::size_t>(g.n_products));
  for (const auto& [id, product] : a.catalog.products) {
    CHECK(product.title == b.catalog.at(id).title);
  }
  CHECK(a.world.word_vecs == b.world.word_vecs);
  CHECK(a.world.product_vecs == b.world.product_vecs);
  CHECK(a.world.user_vecs == b.world.user_vecs);
  CHECK(a.world.user_topics == b.world.user_topics);
  CHECK(a.world.zipf_weight == b.world.zipf_weight);

  const auto log_a = generate_sessions(g, a.catalog, a.world);
  const auto log_b = generate_sessions(g, b.catalog, b.world);
  CHECK(selftest_detail::serialize_log(log_a) == selftest_detail::serialize_log(log_b));
  CHECK(a.world.session_prefs == b.world.session_prefs);

  // a different seed gives a different world
  Corpus c = generate_corpus(small_config(4));
  CHECK(c.world.word_vecs != a.world.word_vecs);
}

TEST_CASE("corpus structure: ids, titles, unit vectors, zipf mass", "[synth]") {
  const GenConfig g = small_config(5);
  const Corpus corpus = generate_corpus(g);

  for (ItemId id = 1; id <= g.n_products; ++id) {
    const Product& p = corpus.catalog.at(id);
    CHECK(p.id == id);
    CHECK(static_cast<int>(p.title.size()) >= g.title_len_min);
    CHECK(static_cast<int>(p.title.size()) <= g.title_len_max);
    for (const std::string& w : p.title) {
      REQUIRE(w.size() >= 2);
      CHECK(w[0] == 'w');
      const int idx = std::stoi(w.substr(1));
      CHECK(idx >= 0);
      CHECK(idx < g.vocab_size);
    }
  }

  REQUIRE(corpus.users.size() == static_cast<std::size_t>(g.n_users));
  CHECK(corpus.users.front() == 1);
  CHECK(corpus.users.back() == g.n_users);

  for (const auto& v : corpus.world.word_vecs) CHECK(norm2(v) == Approx(1.0).margin(1e-9));
  for (const auto& v : corpus.world.product_vecs) CHECK(norm2(v) == Approx(1.0).margin(1e-9));
  for (const auto& v : corpus.world.user_vecs) CHECK(norm2(v) == Approx(1.0).margin(1e-9));
  for (const auto& v : corpus.world.topic_centers) CHECK(norm2(v) == Approx(1.0).margin(1e-9));
  for (int t : corpus.world.user_topics) {
    CHECK(t >= 0);
    CHECK(t < g.n_topics);
  }

  // zipf weights are a permutation of (rank+1)^-s with max 1
  std::vector<double> sorted = corpus.world.zipf_weight;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  CHECK(sorted.front() == 1.0);
  for (int rank = 0; rank < g.n_products; ++rank) {
    CHECK(sorted[rank] ==
          Approx(std::pow(static_cast<double>(rank + 1), -g.zipf_exponent)).margin(1e-12));
  }
}

TEST_CASE("products sit nearer their own topic center than the others", "[synth]") {
  const GenConfig g = small_config(6);
  const Corpus corpus = generate_corpus(g);
  double own = 0.0, other = 0.0;
  std::size_t n_other = 0;
  for (int p = 0; p < g.n_products; ++p) {
    const int topic = p % g.n_topics;
    for (int c = 0; c < g.n_topics; ++c) {
      const double cos = dot(corpus.world.product_vecs[p], corpus.world.topic_centers[c]);
      if (c == topic) {
        own += cos;
      } else {
        other += cos;
        ++n_other;
      }
    }
  }
  own /= g.n_products;
  other /= static_cast<double>(n_other);
  CHECK(own > other + 0.3);
}

TEST_CASE("same-topic titles overlap more than cross-topic titles", "[synth]") {
  const GenConfig g = small_config(7);
  const Corpus corpus = generate_corpus(g);
  double same = 0.0, cross = 0.0;
  std::size_t n_same = 0, n_cross = 0;
  for (int p = 0; p < g.n_products; ++p) {
    for (int q = p + 1; q < g.n_products; ++q) {
      const double ov = title_overlap(corpus.catalog.at(p + 1).title, corpus.catalog.at(q + 1).title);
      if (p % g.n_topics == q % g.n_topics) {
        same += ov;
        ++n_same;
      } else {
        cross += ov;
        ++n_cross;
      }
    }
  }
  same /= static_cast<double>(n_same);
  cross /= static_cast<double>(n_cross);
  CHECK(same > 2.0 * cross);
}

TEST_CASE("generated sessions are valid, filtered, and fully shaped", "[synth]") {
  const GenConfig g = small_config(8);
  Corpus corpus = generate_corpus(g);
  GenStats stats;
  const auto log = generate_sessions(g, corpus.catalog, corpus.world, &stats);

  REQUIRE(log.size() == static_cast<std::size_t>(g.n_sessions));
  CHECK(stats.emitted == static_cast<std::uint64_t>(g.n_sessions));
  CHECK(stats.attempts >= stats.emitted);
  CHECK(stats.mean_clicks_per_page > 0.0);
  CHECK(stats.mean_purchases_per_session >= 1.0);
  CHECK(stats.anonymous_fraction >= 0.0);
  CHECK(stats.anonymous_fraction < 0.25);

  for (std::size_t i = 0; i < log.size(); ++i) {
    const QuerySession& s = log[i];
    CHECK(s.session_id == static_cast<std::int64_t>(i) + 1);
    CHECK_NOTHROW(validate_session(s));
    CHECK(session_passes_filter(s));
    CHECK(s.week >= 1);
    CHECK(s.week <= g.n_weeks);
    CHECK(static_cast<int>(s.query.size()) >= g.query_len_min);
    CHECK(static_cast<int>(s.query.size()) <= g.query_len_max);
    REQUIRE(s.pages.size() == static_cast<std::size_t>(g.pages_per_session));
    for (const Page& p : s.pages) CHECK(p.items.size() == static_cast<std::size_t>(g.page_size));
    if (s.user_id) {
      CHECK(*s.user_id >= 1);
      CHECK(*s.user_id <= g.n_users);
    }
  }
  CHECK_NOTHROW(check_log_against_catalog(log, corpus.catalog));

  SECTION("a second run on the same world appends matching preferences") {
    REQUIRE(corpus.world.session_prefs.size() == log.size());
    generate_sessions(g, corpus.catalog, corpus.world);
    REQUIRE(corpus.world.session_prefs.size() == 2 * log.size());
    for (std::size_t i = 0; i < log.size(); ++i) {
      CHECK(corpus.world.session_prefs[i] == corpus.world.session_prefs[log.size() + i]);
    }
  }
}

TEST_CASE("session preferences are unit vectors that explain the clicks", "[synth]") {
  const GenConfig g = small_config(9);
  Corpus corpus = generate_corpus(g);
  const auto log = generate_sessions(g, corpus.catalog, corpus.world);
  REQUIRE(corpus.world.session_prefs.size() == log.size());

  int informative = 0, scored = 0;
  for (const QuerySession& s : log) {
    const auto& pref = corpus.world.session_prefs[s.session_id - 1];
    CHECK(norm2(pref) == Approx(1.0).margin(1e-9));

    double clicked_cos = 0.0, unclicked_cos = 0.0;
    int n_clicked = 0, n_unclicked = 0;
    for (const Page& p : s.pages) {
      for (ItemId id : p.items) {
        const double cos = dot(pref, corpus.world.product_vecs[id - 1]);
        if (detail::sorted_contains(p.clicks, id)) {
          clicked_cos += cos;
          ++n_clicked;
        } else {
          unclicked_cos += cos;
          ++n_unclicked;
        }
      }
    }
    if (n_clicked > 0 && n_unclicked > 0) {
      ++scored;
      if (clicked_cos / n_clicked > unclicked_cos / n_unclicked) ++informative;
    }
  }
  REQUIRE(scored > 100);
  // clicks track the hidden preference in nearly every session
  CHECK(static_cast<double>(informative) > 0.9 * static_cast<double>(scored));
}

TEST_CASE("generate_sessions rejects a mismatched world", "[synth]") {
  const GenConfig g = small_config(10);
  Corpus corpus = generate_corpus(g);
  GenConfig other = g;
  other.n_products = g.n_products + 6;
  CHECK_THROWS_AS(generate_sessions(other, corpus.catalog, corpus.world), std::invalid_argument);
}
