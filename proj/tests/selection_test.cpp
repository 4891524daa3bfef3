#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cbred/selection.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cbred;
using test::code_of;

namespace {

TfStatRecord rec(std::uint32_t id, double ntk, std::int64_t regions, double v1, double v2) {
  TfStatRecord r;
  r.arch_id = ArchId{id};
  r.ntk_cond = ntk;
  r.lin_regions = regions;
  r.naswot_v1 = v1;
  r.naswot_v2 = v2;
  return r;
}

Clustering make_clustering(std::vector<std::int32_t> labels) {
  Clustering c;
  for (std::uint32_t i = 0; i < labels.size(); ++i) c.ids.push_back(ArchId{i});
  c.k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  c.labels = std::move(labels);
  return c;
}

std::vector<ArchId> iota_ids(std::size_t n, std::uint32_t first = 0) {
  std::vector<ArchId> ids;
  for (std::uint32_t i = 0; i < n; ++i) ids.push_back(ArchId{first + i});
  return ids;
}

}  // namespace

TEST_CASE("normalized ranks") {
  const std::vector<double> v{3.0, 1.0, 2.0};
  CHECK(normalized_ranks(v, true) == std::vector<double>{1.0, 0.0, 0.5});
  CHECK(normalized_ranks(v, false) == std::vector<double>{0.0, 1.0, 0.5});
  const std::vector<double> ties{1.0, 2.0, 2.0, 3.0};
  const auto r = normalized_ranks(ties, true);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == doctest::Approx(0.5));
  CHECK(r[2] == r[1]);
  CHECK(r[3] == 1.0);
  CHECK(normalized_ranks(std::vector<double>{4.0}, true) == std::vector<double>{0.5});
  CHECK(normalized_ranks(std::vector<double>{2.0, 2.0, 2.0}, true) == std::vector<double>{0.5, 0.5, 0.5});
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(normalized_ranks(std::vector<double>{-inf, 0.0, 5.0}, true) == std::vector<double>{0.0, 0.5, 1.0});
}

TEST_CASE("aggregate scores on a hand-ranked table") {
  const std::vector<TfStatRecord> t{rec(0, 10, 5, -3, 100), rec(1, 20, 5, -1, 50), rec(2, 30, 1, -2, 70)};
  const auto a = aggregate_scores(t);
  // ntk (low wins): 1, .5, 0; regions (tie on top): .75, .75, 0; v1: 0, 1, .5; v2: 1, 0, .5
  CHECK(a[0] == doctest::Approx(0.6875));
  CHECK(a[1] == doctest::Approx(0.5625));
  CHECK(a[2] == doctest::Approx(0.25));
  CHECK(code_of([] { aggregate_scores({}); }) == ErrorCode::kInvalidInput);
}

TEST_CASE("aggregate endpoints, ties and invariances") {
  test::Rng rng(12);
  std::uniform_real_distribution<double> u(1.0, 100.0);
  std::vector<TfStatRecord> t;
  for (std::uint32_t i = 0; i < 50; ++i) t.push_back(rec(i, u(rng), static_cast<std::int64_t>(u(rng)), -u(rng), u(rng)));
  t.push_back(rec(50, 0.5, 1000, 0.0, 1000.0));  // best everywhere
  t.push_back(t[3]);
  t.back().arch_id = ArchId{51};
  const auto a = aggregate_scores(t);
  CHECK(a[50] == 1.0);
  CHECK(a[51] == a[3]);
  double sum = 0;
  for (double v : a) sum += v;
  CHECK(sum / static_cast<double>(a.size()) == doctest::Approx(0.5).epsilon(1e-12));

  auto warped = t;
  for (auto& r : warped) {
    r.ntk_cond = std::log(r.ntk_cond) * 3.0 + 7.0;
    r.naswot_v1 = std::exp(r.naswot_v1 / 50.0);
    r.naswot_v2 = r.naswot_v2 * r.naswot_v2 * r.naswot_v2;
  }
  CHECK(aggregate_scores(warped) == a);
}

TEST_CASE("select_cluster") {
  // Cluster 1 holds the best aggregates.
  const Clustering c = make_clustering({0, 0, 1, 1, -1, 0, 1});
  const std::vector<double> agg{0.1, 0.2, 0.9, 0.8, 1.0, 0.3, 0.7};
  const auto r = select_cluster(c, agg);
  CHECK(r.chosen == 1);
  REQUIRE(r.clusters.size() == 2);
  CHECK(r.clusters[0].size == 3);
  CHECK(r.clusters[1].mean_aggregate == doctest::Approx(0.8));

  // Equal means: the larger cluster wins, then the lower id.
  const Clustering tie = make_clustering({0, 1, 1, 2, 2});
  CHECK(select_cluster(tie, std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5}).chosen == 1);
  const Clustering tie2 = make_clustering({0, 0, 1, 1});
  CHECK(select_cluster(tie2, std::vector<double>{0.5, 0.5, 0.5, 0.5}).chosen == 0);

  CHECK(code_of([] { select_cluster(make_clustering({0, 0, -1}), std::vector<double>{1, 1, 1}); }) ==
        ErrorCode::kInsufficientClusters);
  CHECK(code_of([&] { select_cluster(c, std::vector<double>{1.0}); }) == ErrorCode::kInvalidInput);
}

TEST_CASE("select_cluster is invariant to relabeling") {
  test::Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const int k = std::uniform_int_distribution<int>(2, 6)(rng);
    std::vector<std::int32_t> labels(40);
    std::vector<double> agg(40);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = std::uniform_int_distribution<int>(-1, k - 1)(rng);
      agg[i] = std::uniform_int_distribution<int>(0, 4)(rng) * 0.25;
    }
    for (int c = 0; c < k; ++c) labels[static_cast<std::size_t>(c)] = c;  // no empty cluster
    std::vector<std::int32_t> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto relabeled = labels;
    for (auto& l : relabeled)
      if (l >= 0) l = perm[static_cast<std::size_t>(l)];
    const auto a = select_cluster(make_clustering(labels), agg);
    const auto b = select_cluster(make_clustering(relabeled), agg);
    const auto& ca = a.clusters[static_cast<std::size_t>(a.chosen)];
    const auto& cb = b.clusters[static_cast<std::size_t>(b.chosen)];
    CHECK(ca.mean_aggregate == cb.mean_aggregate);
    CHECK(ca.size == cb.size);
    // Same members unless a full tie is broken by id.
    bool tied = false;
    for (const auto& other : a.clusters)
      tied |= other.id != a.chosen && other.mean_aggregate == ca.mean_aggregate && other.size == ca.size;
    if (!tied) CHECK(perm[static_cast<std::size_t>(a.chosen)] == b.chosen);
  }
}

TEST_CASE("planted cluster is selected") {
  test::Rng rng(44);
  std::vector<TfStatRecord> t;
  std::vector<std::int32_t> labels;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::uint32_t i = 0; i < 90; ++i) {
    const bool good = i % 3 == 0;
    const double q = good ? 2.0 : 0.0;
    t.push_back(rec(i, std::exp(3.0 - q + noise(rng)), static_cast<std::int64_t>(std::lround(50 + 10 * (q + noise(rng))) ),
                    q + noise(rng), 100 + 5 * (q + noise(rng))));
    labels.push_back(static_cast<std::int32_t>(i % 3));
  }
  const auto r = select_cluster(make_clustering(labels), aggregate_scores(t));
  CHECK(r.chosen == 0);
}

TEST_CASE("quantile partition") {
  const auto ten = iota_ids(10);
  const std::vector<double> vals{9, 3, 7, 1, 0, 5, 8, 2, 6, 4};
  const auto p = quantile_partition(ten, vals, 5, "x");
  CHECK(p.bucket_sizes() == std::vector<std::size_t>{2, 2, 2, 2, 2});
  CHECK(p.statistic == "x");
  for (std::size_t i = 0; i < 10; ++i) CHECK(p.bucket[i] == static_cast<std::uint8_t>(vals[i] / 2));
  CHECK(p.boundaries == std::vector<double>{2, 4, 6, 8});
  const auto top = baseline_subset(p, ten, 4);
  CHECK(top == std::vector<ArchId>{ArchId{0}, ArchId{6}});

  const auto hundred = iota_ids(100, 1000);
  std::vector<double> v100(100);
  std::iota(v100.begin(), v100.end(), 1.0);
  std::shuffle(v100.begin(), v100.end(), test::Rng(1));
  const auto q = quantile_partition(hundred, v100);
  for (std::size_t i = 0; i < 100; ++i) CHECK((q.bucket[i] == 4) == (v100[i] >= 81.0));
  const auto b4 = baseline_subset(q, hundred, 4);
  CHECK(b4.size() == 20);
  double lowest = 1e9, highest3 = -1e9;
  for (std::size_t i = 0; i < 100; ++i) {
    if (q.bucket[i] == 4) lowest = std::min(lowest, v100[i]);
    if (q.bucket[i] == 3) highest3 = std::max(highest3, v100[i]);
  }
  CHECK(lowest >= highest3);

  // All equal: the split follows ArchId order.
  auto shuffled = iota_ids(12);
  std::shuffle(shuffled.begin(), shuffled.end(), test::Rng(2));
  const auto e = quantile_partition(shuffled, std::vector<double>(12, 3.0));
  CHECK(e.bucket_sizes() == std::vector<std::size_t>{2, 2, 3, 2, 3});
  const std::vector<std::size_t> starts{0, 2, 4, 7, 9};
  for (std::size_t i = 0; i < 12; ++i) {
    const std::size_t pos = shuffled[i].value;  // sorted position
    const auto want = std::upper_bound(starts.begin(), starts.end(), pos) - starts.begin() - 1;
    CHECK(e.bucket[i] == want);
  }

  CHECK(code_of([] { quantile_partition(iota_ids(3), std::vector<double>{1, 2, 3}); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([] { quantile_partition(iota_ids(6), std::vector<double>{1, 2, 3}); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([&] { baseline_subset(p, ten, 5); }) == ErrorCode::kInvalidInput);
}
