#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "mba/eval.hpp"
#include "mba/model.hpp"
#include "mba/rng.hpp"

using namespace mba;

TEST_CASE("rank_items basics") {
  const std::vector<double> scores = {0.9, 0.1, 0.5};

  SUBCASE("plain top-2") {
    const auto top = rank_items(scores, {}, 2);
    CHECK(top == std::vector<ItemId>{0, 2});
  }

  SUBCASE("masked best item is excluded") {
    const std::vector<ItemId> mask = {0};
    const auto top = rank_items(scores, mask, 2);
    CHECK(top == std::vector<ItemId>{2, 1});
  }

  SUBCASE("k larger than the candidate set returns everything, ranked") {
    const std::vector<ItemId> mask = {1};
    const auto top = rank_items(scores, mask, 10);
    CHECK(top == std::vector<ItemId>{0, 2});
  }

  SUBCASE("ties break by ascending item index") {
    const std::vector<double> tied = {0.5, 0.5, 0.5, 0.9};
    const auto top = rank_items(tied, {}, 3);
    CHECK(top == std::vector<ItemId>{3, 0, 1});
  }

  SUBCASE("k = 0 violates the precondition") {
    CHECK_THROWS_AS(rank_items(scores, {}, 0), std::invalid_argument);
  }
}

TEST_CASE("rank_items agrees with a full-sort oracle on 1000 random scores") {
  Rng rng(31);
  std::vector<double> scores(1000);
  for (auto& s : scores) s = uniform01(rng);
  // inject some exact ties
  for (int n = 0; n < 50; ++n) {
    scores[uniform_index(rng, 1000)] = scores[uniform_index(rng, 1000)];
  }
  std::vector<ItemId> mask;
  for (ItemId i = 0; i < 1000; i += 17) mask.push_back(i);

  fixtures::RankedUser u{scores, mask, {}};
  const auto expected = fixtures::oracle_ranking(u);
  for (std::size_t k : {1u, 10u, 100u, 999u}) {
    const auto top = rank_items(scores, mask, k);
    REQUIRE(top.size() == std::min(k, expected.size()));
    for (std::size_t r = 0; r < top.size(); ++r) CHECK(top[r] == expected[r]);
  }
}

TEST_CASE("recall_at_k counting") {
  const std::vector<ItemId> test = {2, 5, 7, 9};

  SUBCASE("full coverage") {
    const std::vector<ItemId> topk = {9, 7, 5, 2, 1};
    CHECK(recall_at_k(topk, test) == 1.0);
  }
  SUBCASE("disjoint") {
    const std::vector<ItemId> topk = {0, 1, 3};
    CHECK(recall_at_k(topk, test) == 0.0);
  }
  SUBCASE("1 of 4") {
    const std::vector<ItemId> topk = {0, 5, 3};
    CHECK(recall_at_k(topk, test) == 0.25);
  }
  SUBCASE("empty test set violates the precondition") {
    const std::vector<ItemId> topk = {0};
    CHECK_THROWS_AS(recall_at_k(topk, {}), std::invalid_argument);
  }
}

TEST_CASE("ndcg_at_k closed forms") {
  SUBCASE("single test item at rank 1") {
    const std::vector<ItemId> topk = {4, 0, 1};
    CHECK(ndcg_at_k(topk, {4}, 3) == 1.0);
  }
  SUBCASE("single test item at rank 2") {
    const std::vector<ItemId> topk = {0, 4, 1};
    CHECK(ndcg_at_k(topk, {4}, 3) == doctest::Approx(0.6309297536).epsilon(1e-9));
  }
  SUBCASE("all-miss") {
    const std::vector<ItemId> topk = {0, 1, 2};
    CHECK(ndcg_at_k(topk, {9}, 3) == 0.0);
  }
  SUBCASE("ideal DCG truncates at min(k, |test|)") {
    // two test items, k = 1: DCG = 1, IDCG = 1
    const std::vector<ItemId> topk = {4};
    CHECK(ndcg_at_k(topk, {4, 5}, 1) == 1.0);
  }
}

TEST_CASE("metrics match the independent oracle on the 5x10 fixture, exactly") {
  const auto users = fixtures::metric_fixture();
  for (std::size_t k : {1u, 2u, 5u, 10u}) {
    for (const auto& u : users) {
      const auto topk = rank_items(u.scores, u.mask, k);
      CHECK(recall_at_k(topk, u.test) == fixtures::oracle_recall(u, k));
      CHECK(ndcg_at_k(topk, u.test, k) == fixtures::oracle_ndcg(u, k));
    }
  }

  SUBCASE("spot values derived by hand") {
    // user 0 scores strictly decrease; mask {1}; test {0, 3}.
    // k=1 list [0]: recall 1/2, ndcg 1/1.
    const auto& u0 = users[0];
    CHECK(recall_at_k(rank_items(u0.scores, u0.mask, 1), u0.test) == 0.5);
    CHECK(ndcg_at_k(rank_items(u0.scores, u0.mask, 1), u0.test, 1) == 1.0);
    // k=5 list [0,2,3,4,5]: both hits at ranks 1 and 3.
    const auto top5 = rank_items(u0.scores, u0.mask, 5);
    CHECK(recall_at_k(top5, u0.test) == 1.0);
    const double expected = (1.0 + 1.0 / std::log2(4.0)) / (1.0 + 1.0 / std::log2(3.0));
    CHECK(ndcg_at_k(top5, u0.test, 5) == doctest::Approx(expected).epsilon(1e-12));
    // user 2 is all-tied; ranking is by index, mask removes {0,1}:
    // list [2,3,4,...]; test {2,5,7} hit at ranks 1, 4, 6 for k=10.
    const auto& u2 = users[2];
    const auto top10 = rank_items(u2.scores, u2.mask, 10);
    CHECK(top10.front() == 2);
    CHECK(recall_at_k(top10, u2.test) == 1.0);
  }
}

namespace {

SplitDataset fixture_dataset() {
  const auto users = fixtures::metric_fixture();
  SplitDataset ds;
  for (std::uint32_t u = 0; u < users.size(); ++u) ds.users.add(u);
  for (std::uint32_t i = 0; i < 10; ++i) ds.items.add(i);
  ds.test_f = InteractionSet(Behavior::target, 5, 10);
  ds.train_f = InteractionSet(Behavior::target, 5, 10);
  ds.train_g = InteractionSet(Behavior::auxiliary, 5, 10);
  for (std::uint32_t u = 0; u < users.size(); ++u) {
    for (ItemId i : users[u].test) ds.test_f.add(u, i);
    for (ItemId i : users[u].mask) ds.train_f.add(u, i);
  }
  return ds;
}

}  // namespace

TEST_CASE("evaluate_ranking averages the per-user oracle values") {
  const auto users = fixtures::metric_fixture();
  const auto ds = fixture_dataset();
  auto scorer = [&](UserId u, std::span<double> out) {
    std::copy(users[u].scores.begin(), users[u].scores.end(), out.begin());
  };
  const std::uint32_t cutoffs[4] = {1, 2, 5, 10};
  const auto report = evaluate_ranking(ds.test_f, ds.train_f, scorer, cutoffs);
  CHECK(report.users_evaluated == 5);
  for (std::size_t c = 0; c < 4; ++c) {
    double recall_sum = 0.0, ndcg_sum = 0.0;
    for (const auto& u : users) {
      recall_sum += fixtures::oracle_recall(u, cutoffs[c]);
      ndcg_sum += fixtures::oracle_ndcg(u, cutoffs[c]);
    }
    CHECK(report.cutoffs[c].recall == doctest::Approx(recall_sum / 5.0).epsilon(1e-15));
    CHECK(report.cutoffs[c].ndcg == doctest::Approx(ndcg_sum / 5.0).epsilon(1e-15));
  }

  SUBCASE("parallel evaluation reproduces the serial report") {
    EvalOptions opts;
    opts.threads = 4;
    const auto parallel = evaluate_ranking(ds.test_f, ds.train_f, scorer, cutoffs, opts);
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(parallel.cutoffs[c].recall == doctest::Approx(report.cutoffs[c].recall).epsilon(1e-15));
      CHECK(parallel.cutoffs[c].ndcg == doctest::Approx(report.cutoffs[c].ndcg).epsilon(1e-15));
    }
  }

  SUBCASE("metrics are invariant under strictly increasing score transforms") {
    auto exp_scorer = [&](UserId u, std::span<double> out) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(3.0 * users[u].scores[i]);
    };
    const auto transformed = evaluate_ranking(ds.test_f, ds.train_f, exp_scorer, cutoffs);
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(transformed.cutoffs[c].recall == report.cutoffs[c].recall);
      CHECK(transformed.cutoffs[c].ndcg == report.cutoffs[c].ndcg);
    }
  }

  SUBCASE("recall is monotone non-decreasing in k") {
    for (std::size_t c = 1; c < 4; ++c) {
      CHECK(report.cutoffs[c].recall >= report.cutoffs[c - 1].recall);
    }
  }

  SUBCASE("users with empty test sets are skipped, empty protocol is an error") {
    auto ds2 = fixture_dataset();
    ds2.test_f = InteractionSet(Behavior::target, 5, 10);
    ds2.test_f.add(3, 4);
    const auto partial = evaluate_ranking(ds2.test_f, ds2.train_f, scorer, cutoffs);
    CHECK(partial.users_evaluated == 1);

    ds2.test_f = InteractionSet(Behavior::target, 5, 10);
    CHECK_THROWS_WITH_AS(evaluate_ranking(ds2.test_f, ds2.train_f, scorer, cutoffs),
                         doctest::Contains("empty test set"), std::runtime_error);
  }
}

TEST_CASE("evaluate with models") {
  // perfect model: the score of an item is its test membership
  const auto ds = fixture_dataset();
  const auto users = fixtures::metric_fixture();

  SUBCASE("oracle model reaches recall min(k,|test|)/|test| and ndcg 1") {
    FactorModel<double> t{Matrix<double>(5, 10), Matrix<double>(10, 10)};
    for (ItemId i = 0; i < 10; ++i) t.item_emb.row(i)[i] = 1.0;  // identity items
    for (UserId u = 0; u < 5; ++u) {
      for (ItemId i : users[u].test) t.user_emb.row(u)[i] = 10.0;  // big raw score on test items
    }
    const auto f = freeze(FactorModel<double>{Matrix<double>(5, 10), Matrix<double>(10, 10)});
    const std::uint32_t cutoffs[2] = {1, 10};
    const auto report = evaluate(t, f, ds, 1.0, cutoffs);
    double expect_r1 = 0.0;
    for (const auto& u : users) expect_r1 += 1.0 / static_cast<double>(u.test.size());
    CHECK(report.cutoffs[0].recall == doctest::Approx(expect_r1 / 5.0).epsilon(1e-12));
    CHECK(report.cutoffs[1].recall == 1.0);
    CHECK(report.cutoffs[1].ndcg == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("beta = 0 reproduces the pretrained model's report") {
    const auto t = init_model<float>(5, 10, 4, 1);
    const auto f_model = init_model<float>(5, 10, 4, 2);
    const auto f = freeze(f_model);
    const std::uint32_t cutoffs[2] = {2, 5};
    const auto blended = evaluate(t, f, ds, 0.0, cutoffs);
    auto scorer = [&](UserId u, std::span<double> out) { f_model.score_all_items(u, out); };
    const auto direct = evaluate_ranking(ds.test_f, ds.train_f, scorer, cutoffs);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(blended.cutoffs[c].recall == direct.cutoffs[c].recall);
      CHECK(blended.cutoffs[c].ndcg == direct.cutoffs[c].ndcg);
    }
  }

  SUBCASE("evaluate is a pure function of its inputs") {
    const auto t = init_model<float>(5, 10, 4, 3);
    const auto f = freeze(init_model<float>(5, 10, 4, 4));
    const std::uint32_t cutoffs[2] = {10, 20};
    const auto a = evaluate(t, f, ds, 0.8, cutoffs);
    const auto b = evaluate(t, f, ds, 0.8, cutoffs);
    CHECK(a.to_csv() == b.to_csv());
  }
}

TEST_CASE("ndcg at full depth is 1 iff all test items outrank all other candidates") {
  Rng rng(67);
  const std::size_t n = 20;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(n);
    for (auto& s : scores) s = uniform01(rng);
    std::vector<ItemId> test;
    for (ItemId i = 0; i < n; ++i) {
      if (uniform01(rng) < 0.25) test.push_back(i);
    }
    if (test.empty()) test.push_back(static_cast<ItemId>(uniform_index(rng, n)));

    const auto full = rank_items(scores, {}, n);
    const double ndcg = ndcg_at_k(full, test, n);

    const double min_test_score = [&] {
      double m = 2.0;
      for (ItemId i : test) m = std::min(m, scores[i]);
      return m;
    }();
    bool separated = true;
    for (ItemId i = 0; i < n; ++i) {
      if (!std::binary_search(test.begin(), test.end(), i) && scores[i] >= min_test_score) {
        separated = false;
      }
    }
    if (separated) {
      CHECK(ndcg == doctest::Approx(1.0).epsilon(1e-12));
    } else {
      CHECK(ndcg < 1.0);
    }
  }
}

TEST_CASE("report formats") {
  EvalReport r;
  r.users_evaluated = 3;
  r.cutoffs = {{10, 0.25, 0.125}, {20, 0.5, 0.25}};
  const auto csv = r.to_csv();
  CHECK(csv.find("metric,k,value,users") != std::string::npos);
  CHECK(csv.find("recall,10,0.25,3") != std::string::npos);
  CHECK(csv.find("ndcg,20,0.25,3") != std::string::npos);
  CHECK(r.to_table().find("users evaluated: 3") != std::string::npos);
}
