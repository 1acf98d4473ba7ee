#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxrank/metrics.hpp"
#include "ctxrank/rng.hpp"
#include "ctxrank/selftest.hpp"
#include "support/oracles.hpp"

using namespace ctxrank;
using Catch::Approx;

namespace {

std::vector<MethodResults> two_method_fixture() {
  // per-entry scores chosen so method B improves on A by exactly 1/3
  MethodResults a{"A", {{1, 0.2, 0.2, 0.2}, {2, 0.4, 0.4, 0.4}}};
  MethodResults b{"B", {{1, 0.3, 0.3, 0.3}, {2, 0.5, 0.5, 0.5}}};
  return {a, b};
}

}  // namespace

TEST_CASE("metric hand values", "[metrics]") {
  const std::vector<ItemId> ranked = {5, 6, 7, 8};

  SECTION("sole relevant item at rank 3") {
    const std::vector<ItemId> rel = {7};
    CHECK(average_precision(ranked, rel) == Approx(1.0 / 3.0).margin(1e-15));
    CHECK(reciprocal_rank(ranked, rel) == Approx(1.0 / 3.0).margin(1e-15));
    CHECK(ndcg(ranked, rel) == Approx(0.5).margin(1e-15));
  }
  SECTION("relevant item at rank 1") {
    const std::vector<ItemId> rel = {5};
    CHECK(average_precision(ranked, rel) == 1.0);
    CHECK(reciprocal_rank(ranked, rel) == 1.0);
    CHECK(ndcg(ranked, rel) == 1.0);
  }
  SECTION("two relevant items at ranks 1 and 3") {
    const std::vector<ItemId> rel = {5, 7};
    CHECK(average_precision(ranked, rel) == Approx((1.0 + 2.0 / 3.0) / 2.0).margin(1e-15));
    CHECK(reciprocal_rank(ranked, rel) == 1.0);
    const double idcg = 1.0 + 1.0 / std::log2(3.0);
    CHECK(ndcg(ranked, rel) == Approx(1.5 / idcg).margin(1e-15));
  }
  SECTION("no relevant item present") {
    const std::vector<ItemId> rel = {42};
    CHECK(average_precision(ranked, rel) == 0.0);
    CHECK(reciprocal_rank(ranked, rel) == 0.0);
    CHECK(ndcg(ranked, rel) == 0.0);
  }
  SECTION("relevant ids missing from the ranking do not dilute the scores") {
    const std::vector<ItemId> rel = {6, 99};
    CHECK(average_precision(ranked, rel) == 0.5);
    CHECK(ndcg(ranked, rel) == Approx(1.0 / std::log2(3.0)).margin(1e-15));
  }
  SECTION("duplicate relevant ids collapse") {
    const std::vector<ItemId> rel = {7, 7, 7};
    CHECK(average_precision(ranked, rel) == Approx(1.0 / 3.0).margin(1e-15));
  }
}

TEST_CASE("cutoffs bound the scored prefix", "[metrics]") {
  std::vector<ItemId> long_ranking(150);
  std::iota(long_ranking.begin(), long_ranking.end(), 1);

  SECTION("a hit past rank 100 earns no precision but keeps its reciprocal rank") {
    const std::vector<ItemId> rel = {101};
    CHECK(average_precision(long_ranking, rel) == 0.0);
    CHECK(reciprocal_rank(long_ranking, rel) == Approx(1.0 / 101.0).margin(1e-15));
    CHECK(ndcg(long_ranking, rel) == 0.0);
  }
  SECTION("rank 100 is still inside the precision cutoff") {
    const std::vector<ItemId> rel = {100};
    CHECK(average_precision(long_ranking, rel) == Approx(1.0 / 100.0).margin(1e-15));
  }
  SECTION("rank 10 is the last rank ndcg rewards") {
    CHECK(ndcg(long_ranking, std::vector<ItemId>{10}) ==
          Approx(1.0 / std::log2(11.0)).margin(1e-15));
    CHECK(ndcg(long_ranking, std::vector<ItemId>{11}) == 0.0);
  }
  SECTION("a custom ap cutoff applies") {
    CHECK(average_precision(long_ranking, std::vector<ItemId>{4}, 3) == 0.0);
    CHECK(average_precision(long_ranking, std::vector<ItemId>{3}, 3) ==
          Approx(1.0 / 3.0).margin(1e-15));
  }
}

TEST_CASE("metrics agree with the brute-force transcriptions", "[metrics]") {
  Rng rng(20240805);
  for (int i = 0; i < 500; ++i) {
    const auto inst = testsupport::random_ranking_instance(rng);
    INFO("instance " << i << " n_ranked=" << inst.ranked.size()
                     << " n_relevant=" << inst.relevant.size());
    CHECK(std::fabs(average_precision(inst.ranked, inst.relevant) -
                    selftest_detail::brute_ap(inst.ranked, inst.relevant)) < 1e-12);
    CHECK(std::fabs(reciprocal_rank(inst.ranked, inst.relevant) -
                    selftest_detail::brute_rr(inst.ranked, inst.relevant)) < 1e-12);
    CHECK(std::fabs(ndcg(inst.ranked, inst.relevant) -
                    selftest_detail::brute_ndcg(inst.ranked, inst.relevant)) < 1e-12);
  }
}

TEST_CASE("pairwise_sum matches extended-precision accumulation", "[metrics]") {
  Rng rng(7);
  std::vector<double> v(100000);
  long double exact = 0.0L;
  for (double& x : v) {
    x = rng.next_double() * 2.0 - 1.0;
    exact += static_cast<long double>(x);
  }
  const double got = pairwise_sum(v);
  CHECK(std::fabs(got - static_cast<double>(exact)) < 1e-9);
  CHECK(mean_of(v) == Approx(got / static_cast<double>(v.size())).margin(0.0));
  CHECK_THROWS_AS(mean_of(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("score_ranking packs all three metrics", "[metrics]") {
  const std::vector<ItemId> ranked = {5, 6, 7, 8};
  const std::vector<ItemId> rel = {7};
  const EntryResult r = score_ranking(99, ranked, rel);
  CHECK(r.entry_id == 99);
  CHECK(r.ap_100 == Approx(1.0 / 3.0).margin(1e-15));
  CHECK(r.rr == Approx(1.0 / 3.0).margin(1e-15));
  CHECK(r.ndcg_10 == Approx(0.5).margin(1e-15));
}

TEST_CASE("aggregate computes means and improvements against the reference", "[metrics]") {
  const auto reports = aggregate(two_method_fixture(), "A");
  REQUIRE(reports.size() == 2);

  const RunReport& a = reports[0];
  CHECK(a.method == "A");
  CHECK(a.rr.mean == Approx(0.3).margin(1e-15));
  CHECK(a.rr.rel_improvement == Approx(0.0).margin(1e-15));
  // the reference compared with itself has zero-variance differences
  CHECK(a.rr.p_value == 1.0);
  CHECK(a.rr.degenerate_variance);

  const RunReport& b = reports[1];
  CHECK(b.method == "B");
  CHECK(b.rr.mean == Approx(0.4).margin(1e-15));
  CHECK(b.rr.rel_improvement == Approx(1.0 / 3.0).margin(1e-12));
  // differences are the constant +0.1, so the paired t is +inf
  CHECK(b.rr.p_value == 0.0);
  CHECK(b.rr.degenerate_variance);
}

TEST_CASE("aggregate validates its inputs", "[metrics]") {
  auto methods = two_method_fixture();
  CHECK_THROWS_AS(aggregate({}, "A"), std::invalid_argument);
  CHECK_THROWS_AS(aggregate(methods, "missing"), std::invalid_argument);

  SECTION("mismatched entry count") {
    methods[1].entries.pop_back();
    CHECK_THROWS_AS(aggregate(methods, "A"), std::invalid_argument);
  }
  SECTION("mismatched entry ids") {
    methods[1].entries[1].entry_id = 77;
    CHECK_THROWS_AS(aggregate(methods, "A"), std::invalid_argument);
  }
  SECTION("empty reference entries") {
    methods[0].entries.clear();
    methods[1].entries.clear();
    CHECK_THROWS_AS(aggregate(methods, "A"), std::invalid_argument);
  }
}

TEST_CASE("report writers emit the documented shapes", "[metrics]") {
  const auto reports = aggregate(two_method_fixture(), "A");
  const auto dir = std::filesystem::temp_directory_path();
  const std::string csv_path = (dir / "ctxrank_metrics_report.csv").string();
  const std::string json_path = (dir / "ctxrank_metrics_report.json").string();

  write_report_csv(csv_path, reports, "A");
  std::ifstream csv(csv_path);
  REQUIRE(csv);
  const std::string text{std::istreambuf_iterator<char>(csv), std::istreambuf_iterator<char>()};
  CHECK(text.rfind("method,metric,mean,rel_improvement_pct,p_value,significant\n", 0) == 0);
  CHECK(text.find("A,mrr,0.300000,+0.00,1,no") != std::string::npos);
  CHECK(text.find("B,mrr,0.400000,+33.33,0,yes") != std::string::npos);

  write_report_json(json_path, reports, "A");
  std::ifstream jf(json_path);
  REQUIRE(jf);
  const auto j = nlohmann::json::parse(jf);
  CHECK(j.at("reference") == "A");
  CHECK(j.at("significance_level").get<double>() == kSignificanceLevel);
  REQUIRE(j.at("methods").size() == 2);
  const auto& jb = j.at("methods").at(1);
  CHECK(jb.at("method") == "B");
  CHECK(jb.at("n_entries").get<int>() == 2);
  CHECK(jb.at("mrr").at("mean").get<double>() == Approx(0.4).margin(1e-15));
  CHECK(jb.at("mrr").at("significant").get<bool>());
  CHECK(jb.at("mrr").at("degenerate_variance").get<bool>());
  CHECK(jb.at("entries").size() == 2);

  std::remove(csv_path.c_str());
  std::remove(json_path.c_str());
}
