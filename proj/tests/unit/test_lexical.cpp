#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <vector>

#include "ctxrank/lexical.hpp"
#include "ctxrank/session.hpp"

using namespace ctxrank;
using Catch::Approx;

namespace {

// item 1: {red, shoe, red}  item 2: {blue, shoe}  item 3: {green, hat}
// collection length 7; tf: red 2, shoe 2, blue 1, green 1, hat 1
Catalog tiny_catalog() {
  Catalog c;
  c.products.emplace(1, Product{1, {"red", "shoe", "red"}});
  c.products.emplace(2, Product{2, {"blue", "shoe"}});
  c.products.emplace(3, Product{3, {"green", "hat"}});
  return c;
}

}  // namespace

TEST_CASE("the language model index counts terms and lengths", "[lexical]") {
  const LanguageModelIndex index(tiny_catalog());
  CHECK(index.collection_length() == 7);
  CHECK(index.item_length(1) == 3);
  CHECK(index.item_length(2) == 2);
  CHECK(index.term_freq(1, "red") == 2);
  CHECK(index.term_freq(1, "blue") == 0);
  CHECK(index.collection_prob("red") == Approx(2.0 / 7.0).margin(1e-15));
  CHECK(index.collection_prob("zzz") == 0.0);
  CHECK(index.floor_prob() == Approx(1.0 / 70.0).margin(1e-15));
  CHECK_THROWS_AS(index.item_length(99), std::out_of_range);
  CHECK_THROWS_AS(index.term_freq(99, "red"), std::out_of_range);

  Catalog empty;
  empty.products.emplace(1, Product{1, {}});
  CHECK_THROWS_AS(LanguageModelIndex(empty), std::invalid_argument);
}

TEST_CASE("dirichlet smoothing with a floor", "[lexical]") {
  const LanguageModelIndex index(tiny_catalog());
  const double mu = 1.0;
  CHECK(index.smoothed_prob(1, "red", mu) == Approx(4.0 / 7.0).margin(1e-15));
  CHECK(index.smoothed_prob(1, "blue", mu) == Approx(1.0 / 28.0).margin(1e-15));
  // a term the collection has never seen clamps to the floor
  CHECK(index.smoothed_prob(1, "zzz", mu) == Approx(1.0 / 70.0).margin(1e-15));

  const double expected =
      std::log(4.0 / 7.0) + std::log((1.0 + 2.0 / 7.0) / 4.0);
  CHECK(ql_score(index, {"red", "shoe"}, 1, mu) == Approx(expected).margin(1e-12));
  CHECK_THROWS_AS(ql_score(index, {"red"}, 1, 0.0), std::invalid_argument);
}

TEST_CASE("ql_rank orders by query likelihood with stable ties", "[lexical]") {
  const LanguageModelIndex index(tiny_catalog());
  const std::vector<ItemId> candidates = {2, 1, 3};
  // query {red}: item 1 scores highest; items 2 and 3 tie exactly
  CHECK(ql_rank(index, {"red"}, candidates, 1.0) == std::vector<ItemId>{1, 2, 3});
  const std::vector<ItemId> flipped = {3, 2, 1};
  CHECK(ql_rank(index, {"red"}, flipped, 1.0) == std::vector<ItemId>{1, 3, 2});
}

TEST_CASE("rm3 parameter validation", "[lexical]") {
  Rm3Params p;
  CHECK_NOTHROW(p.validate());
  p.alpha = -0.1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.alpha = 1.1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.alpha = 0.5;
  p.n_expansion_terms = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.n_expansion_terms = 10;
  p.mu = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("rm1_estimate matches a hand-computed relevance model", "[lexical]") {
  const LanguageModelIndex index(tiny_catalog());
  const std::vector<Tokens> feedback = {{"red", "shoe"}, {"blue", "shoe"}};

  // mu = 0 keeps the doc models at their maximum-likelihood values, with the
  // 1/70 floor standing in for the zeros:
  //   weight(d1) = 1, weight(d2) = (1/70)/(1/2)
  //   mass(shoe) = 18/35, mass(red) = 613/1225, mass(blue) = 1/35
  // truncation to 2 terms keeps shoe and red, renormalized over 1243/1225.
  const TermDistribution dist = rm1_estimate(index, {"red"}, feedback, 0.0, 2);
  REQUIRE(dist.size() == 2);
  CHECK(dist[0].first == "shoe");
  CHECK(dist[0].second == Approx(630.0 / 1243.0).margin(1e-12));
  CHECK(dist[1].first == "red");
  CHECK(dist[1].second == Approx(613.0 / 1243.0).margin(1e-12));

  CHECK_THROWS_AS(rm1_estimate(index, {"red"}, std::vector<Tokens>{}, 1.0, 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(rm1_estimate(index, {"red"}, feedback, 1.0, 0), std::invalid_argument);
}

TEST_CASE("rm1 ties break lexicographically", "[lexical]") {
  const LanguageModelIndex index(tiny_catalog());
  // an empty query weighs both docs equally, so the single-word docs tie
  const std::vector<Tokens> feedback = {{"green"}, {"blue"}};
  const TermDistribution dist = rm1_estimate(index, {}, feedback, 0.0, 1);
  REQUIRE(dist.size() == 1);
  CHECK(dist[0].first == "blue");
  CHECK(dist[0].second == 1.0);
}

TEST_CASE("rm3 with zero feedback weight reduces to the query model", "[lexical]") {
  const LanguageModelIndex index(tiny_catalog());
  const std::vector<Tokens> feedback = {{"blue", "shoe"}};
  const std::vector<ItemId> candidates = {3, 1, 2};
  Rm3Params p;
  p.mu = 1.0;

  SECTION("alpha = 0 scores are bit-identical to the ql scores") {
    p.alpha = 0.0;
    const Tokens query = {"red", "shoe"};
    for (ItemId item : candidates) {
      CHECK(rm3_score(index, query, feedback, p, item) == ql_score(index, query, item, p.mu));
    }
    CHECK(rm3_rank(index, query, feedback, p, candidates) ==
          ql_rank(index, query, candidates, p.mu));
  }
  SECTION("empty feedback falls back to the query model at any alpha") {
    p.alpha = 0.8;
    const std::vector<Tokens> none;
    for (const Tokens& query : {Tokens{"red"}, Tokens{"blue", "shoe"}, Tokens{"green", "hat"}}) {
      for (ItemId item : candidates) {
        CHECK(rm3_score(index, query, none, p, item) == ql_score(index, query, item, p.mu));
      }
      CHECK(rm3_rank(index, query, none, p, candidates) ==
            ql_rank(index, query, candidates, p.mu));
    }
  }
  SECTION("feedback mass moves the ranking toward the feedback terms") {
    // query {green} alone prefers item 3; heavy blue/shoe feedback flips
    // the order toward item 2
    p.alpha = 0.95;
    const auto ranked = rm3_rank(index, {"green"}, feedback, p, candidates);
    CHECK(ranked[0] == 2);
    p.alpha = 0.0;
    const auto plain = rm3_rank(index, {"green"}, feedback, p, candidates);
    CHECK(plain[0] == 3);
  }
}

TEST_CASE("pop_rank follows purchase counts with stable ties", "[lexical]") {
  Catalog c = tiny_catalog();
  c.popularity = {{1, 5}, {2, 9}, {3, 5}};
  CHECK(pop_rank(c, std::vector<ItemId>{1, 2, 3}) == std::vector<ItemId>{2, 1, 3});
  CHECK(pop_rank(c, std::vector<ItemId>{3, 2, 1}) == std::vector<ItemId>{2, 3, 1});
  // items never purchased count as zero
  c.popularity.erase(3);
  CHECK(pop_rank(c, std::vector<ItemId>{3, 1}) == std::vector<ItemId>{1, 3});
}

TEST_CASE("rand_rank is a deterministic keyed permutation", "[lexical]") {
  const std::vector<ItemId> candidates = {1, 2, 3, 4, 5, 6, 7, 8};
  const auto a = rand_rank(candidates, 42, 101);
  const auto b = rand_rank(candidates, 42, 101);
  CHECK(a == b);

  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == candidates);

  // different entries and different seeds decorrelate
  CHECK(rand_rank(candidates, 42, 102) != a);
  CHECK(rand_rank(candidates, 43, 101) != a);
}

TEST_CASE("long-term history serves strictly earlier purchases", "[lexical]") {
  const Catalog c = tiny_catalog();
  auto session = [](std::int64_t sid, std::optional<UserId> user, int week,
                    std::vector<ItemId> purchases) {
    QuerySession s;
    s.session_id = sid;
    s.user_id = user;
    s.query = {"q"};
    s.week = week;
    Page p;
    p.page_no = 1;
    p.items = purchases;
    p.clicks = purchases;
    p.purchases = purchases;
    s.pages.push_back(p);
    return s;
  };
  // user 5 buys item 3 in week 2 and item 1 in week 1, logged out of order;
  // user 6 is active only in week 4; one session is anonymous
  const std::vector<QuerySession> history = {
      session(1, 5, 2, {3}),
      session(2, 5, 1, {1}),
      session(3, 6, 4, {2}),
      session(4, std::nullopt, 1, {2}),
  };
  const LongTermHistory lth(history);

  SECTION("weeks strictly before the cutoff, in week order") {
    const auto docs = lth.feedback_docs(5, 3, c);
    REQUIRE(docs.size() == 2);
    CHECK(docs[0] == Tokens{"red", "shoe", "red"});
    CHECK(docs[1] == Tokens{"green", "hat"});
  }
  SECTION("the cutoff week itself is excluded") {
    const auto docs = lth.feedback_docs(5, 2, c);
    REQUIRE(docs.size() == 1);
    CHECK(docs[0] == Tokens{"red", "shoe", "red"});
    CHECK(lth.feedback_docs(5, 1, c).empty());
  }
  SECTION("anonymous and unseen users get nothing") {
    CHECK(lth.feedback_docs(std::nullopt, 5, c).empty());
    CHECK(lth.feedback_docs(999, 5, c).empty());
  }
  SECTION("the convenience wrapper agrees") {
    CHECK(lc_feedback_docs(history, 5, 3, c) == lth.feedback_docs(5, 3, c));
  }
}
