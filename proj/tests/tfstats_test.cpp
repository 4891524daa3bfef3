#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cbred/tfstats.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cbred;
using test::cell_of;
using test::code_of;
using O = OpKind;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

BitCode code_from(const std::vector<int>& bits) {
  BitCode c;
  c.bits = bits.size();
  c.words.assign((bits.size() + 63) / 64, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) c.words[i / 64] |= std::uint64_t{1} << (i % 64);
  return c;
}

// Row r of the Sylvester Hadamard matrix of order 2^k as bits (+1 -> 1).
BitCode hadamard_code(int r, int k) {
  std::vector<int> bits(std::size_t{1} << k);
  for (std::size_t c = 0; c < bits.size(); ++c) bits[c] = std::popcount(static_cast<unsigned>(r) & c) % 2 == 0;
  return code_from(bits);
}

StatsConfig small_stats() {
  StatsConfig s;
  s.net.input_resolution = 8;
  s.net.cell_channels = 4;
  s.batch = 8;
  s.region_samples = 64;
  return s;
}

}  // namespace

TEST_CASE("naswot v2 closed forms") {
  for (std::size_t na : {1, 7, 64, 65, 300}) {
    std::vector<int> a(na), b(na);
    for (std::size_t i = 0; i < na; ++i) {
      a[i] = (i * 7 + 3) % 5 < 2;
      b[i] = !a[i];
    }
    const std::vector<BitCode> codes{code_from(a), code_from(b)};
    CHECK(std::fabs(naswot_v2_score(codes) - 2.0 * std::log(static_cast<double>(na))) <= 1e-9);
    const std::vector<BitCode> dup{code_from(a), code_from(a)};
    CHECK(code_of([&] { naswot_v2_score(dup); }) == ErrorCode::kSingularKernel);
  }
  const std::vector<BitCode> one{code_from({1, 0})};
  CHECK(code_of([&] { naswot_v2_score(one); }) == ErrorCode::kInvalidInput);
}

TEST_CASE("naswot v2 is permutation invariant and rewards diversity") {
  std::vector<BitCode> codes;
  for (int r = 0; r < 8; ++r) codes.push_back(hadamard_code(r, 4));  // pairwise distance 8 of 16
  const double base = naswot_v2_score(codes);
  auto shuffled = codes;
  test::Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(naswot_v2_score(shuffled) == doctest::Approx(base).epsilon(1e-12));
  }
  // Pull code 1 towards code 0 one differing bit at a time.
  auto collapsing = codes;
  double previous = base;
  for (std::size_t i = 0; i < 16; ++i) {
    const auto mask = std::uint64_t{1} << i;
    if ((collapsing[1].words[0] & mask) == (collapsing[0].words[0] & mask)) continue;
    collapsing[1].words[0] ^= mask;
    if (collapsing[1] == collapsing[0]) {
      CHECK(code_of([&] { naswot_v2_score(collapsing); }) == ErrorCode::kSingularKernel);
      break;
    }
    const double s = naswot_v2_score(collapsing);
    CHECK(s < previous);
    previous = s;
  }
}

TEST_CASE("naswot v1 closed forms") {
  const double k = 1e-5;
  for (int n : {2, 3, 5}) {
    Eigen::MatrixXd same(n, 4);
    for (int i = 0; i < n; ++i) same.row(i) << 1, 2, 3, 5;
    const double want = -(std::log(n + k) + 1.0 / (n + k)) - (n - 1) * (std::log(k) + 1.0 / k);
    CHECK(naswot_v1_score(same, k) == doctest::Approx(want).epsilon(1e-9));
  }
  Eigen::MatrixXd ortho(3, 4);
  ortho << 1, -1, 1, -1, 1, 1, -1, -1, 1, -1, -1, 1;
  CHECK(naswot_v1_score(ortho, k) == doctest::Approx(-3.0 * (std::log(1 + k) + 1.0 / (1 + k))).epsilon(1e-12));
  Eigen::MatrixXd flat(2, 3);
  flat << 1, 2, 3, 4, 4, 4;
  CHECK(code_of([&] { naswot_v1_score(flat, k); }) == ErrorCode::kDegenerateJacobian);

  Eigen::MatrixXd rows = Eigen::MatrixXd::Random(5, 30);
  Eigen::MatrixXd perm = rows;
  perm.row(0).swap(perm.row(3));
  perm.row(1).swap(perm.row(4));
  CHECK(naswot_v1_score(perm, k) == doctest::Approx(naswot_v1_score(rows, k)).epsilon(1e-9));
}

TEST_CASE("condition number") {
  Eigen::MatrixXd g(2, 2);
  g << 4, 0, 0, 1;
  CHECK(condition_number(g) == doctest::Approx(4.0));
  g << 1, 1, 1, 1;
  CHECK(code_of([&] { condition_number(g); }) == ErrorCode::kSingularKernel);
  CHECK(code_of([&] { condition_number(Eigen::MatrixXd::Zero(3, 3)); }) == ErrorCode::kSingularKernel);
}

TEST_CASE("NTK condition number on a network") {
  const StatsConfig s = small_stats();
  const Network net = Network::instantiate(cell_of({O::kConv3x3, O::kSkip, O::kConv1x1, O::kSkip, O::kConv3x3, O::kAvgPool3x3}), s.net);
  const Tensor x = gaussian_batch(s.net, 6, 1, 0);
  const double kappa = ntk_condition(net, x);
  CHECK(kappa >= 1.0);
  Tensor p = x;
  std::swap_ranges(p.sample(0).begin(), p.sample(0).end(), p.sample(4).begin());
  CHECK(ntk_condition(net, p) == doctest::Approx(kappa).epsilon(1e-8));
  Tensor dup = x;
  std::copy(x.sample(1).begin(), x.sample(1).end(), dup.sample(3).begin());
  CHECK(code_of([&] { ntk_condition(net, dup); }) == ErrorCode::kSingularKernel);
  CHECK(code_of([&] { ntk_condition(net, gaussian_batch(s.net, 1, 1, 0)); }) == ErrorCode::kInvalidInput);
}

TEST_CASE("linear regions") {
  const StatsConfig s = small_stats();
  const Network net = Network::instantiate(cell_of({O::kConv3x3, O::kSkip, O::kConv1x1, O::kSkip, O::kConv3x3, O::kAvgPool3x3}), s.net);
  CHECK(linear_regions(net, gaussian_batch(s.net, 1, 0, 0)) == 1);
  for (int m : {2, 10, 40}) CHECK(linear_regions(net, gaussian_batch(s.net, m, 0, 0)) <= static_cast<std::size_t>(m));
  const Network zero = net.with_parameters(std::vector<double>(net.parameter_count(), 0.0));
  CHECK(linear_regions(zero, gaussian_batch(s.net, 40, 0, 0)) == 1);
  std::vector<BitCode> codes{code_from({1, 0}), code_from({0, 1}), code_from({1, 0})};
  CHECK(count_distinct(codes) == 2);
}

TEST_CASE("computed provider") {
  const StatsConfig s = small_stats();
  const ComputedStatProvider p(s);
  const ArchId id = encode(cell_of({O::kConv3x3, O::kSkip, O::kConv1x1, O::kSkip, O::kConv3x3, O::kAvgPool3x3}));
  const auto r = p.get(id);
  CHECK(r.arch_id == id);
  CHECK(r.source == StatSource::kComputed);
  CHECK(r.ntk_cond >= 1.0);
  CHECK(r.lin_regions >= 1);
  CHECK(r.lin_regions <= 64);
  CHECK(std::isfinite(r.naswot_v1));
  CHECK(std::isfinite(r.naswot_v2));
  CHECK(p.get(id) == r);

  // The zero cell cuts the stem off from the classifier: logits are constant,
  // so both Jacobian statistics fail, while the stem still produces codes.
  const auto dead = p.get(ArchId{0});
  CHECK(dead.ntk_cond == kInf);
  CHECK(dead.naswot_v1 == -kInf);
  CHECK(std::isfinite(dead.naswot_v2));

  StatsConfig bad = s;
  bad.batch = 1;
  CHECK(code_of([&] { ComputedStatProvider{bad}; }) == ErrorCode::kInvalidInput);
}

TEST_CASE("compute_all is deterministic across runs and threads") {
  const ComputedStatProvider p(small_stats());
  std::vector<ArchId> ids;
  test::Rng rng(8);
  for (int i = 0; i < 12; ++i) ids.push_back(test::random_id(rng));
  const auto a = compute_all(ids, p, 1);
  const auto b = compute_all(ids, p, 4);
  CHECK(a.missing.empty());
  CHECK(a.records == b.records);
  const auto c = compute_all(ids, ComputedStatProvider(small_stats()), 1);
  CHECK(a.records == c.records);
}

TEST_CASE("stats file ingestion") {
  std::istringstream three(
      "arch_id,ntk_cond,lin_regions,naswot_v1,naswot_v2\n"
      "5,12.5,30,-40.25,200.5\n"
      "17,inf,1,-inf,-inf\n"
      "3,1,1000,0,1e3\n");
  const auto t = TableStatProvider::parse(three);
  CHECK(t.size() == 3);
  CHECK(t.contains(ArchId{17}));
  CHECK(t.get(ArchId{5}).naswot_v1 == -40.25);
  CHECK(t.get(ArchId{17}).ntk_cond == kInf);
  CHECK(t.get(ArchId{17}).naswot_v2 == -kInf);
  CHECK(t.get(ArchId{3}).source == StatSource::kIngested);

  const std::vector<ArchId> ids{ArchId{3}, ArchId{4}, ArchId{5}};
  const auto table = compute_all(ids, t);
  CHECK(table.records.size() == 2);
  CHECK(table.missing == std::vector<ArchId>{ArchId{4}});
  try {
    t.get(ArchId{4});
    FAIL("expected MissingStat");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingStat);
    CHECK(e.detail() == 4);
  }

  std::istringstream header_only("arch_id,ntk_cond,lin_regions,naswot_v1,naswot_v2\n");
  CHECK(TableStatProvider::parse(header_only).size() == 0);

  const auto parse_error_line = [](const std::string& text) -> std::int64_t {
    std::istringstream in(text);
    try {
      TableStatProvider::parse(in);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kParseError) return e.detail();
    }
    return -2;
  };
  const std::string h = "arch_id,ntk_cond,lin_regions,naswot_v1,naswot_v2\n";
  CHECK(parse_error_line(h + "1,2,3,4,5\n2,abc,3,4,5\n") == 2);
  CHECK(parse_error_line(h + "1,2,3,4\n") == 1);
  CHECK(parse_error_line(h + "15625,2,3,4,5\n") == 1);
  CHECK(parse_error_line(h + "1,0.5,3,4,5\n") == 1);
  CHECK(parse_error_line(h + "1,2,0,4,5\n") == 1);
  CHECK(parse_error_line("id,a,b,c,d\n") == 0);
  CHECK(parse_error_line("") == 0);

  std::istringstream dup(h + "1,2,3,4,5\n1,2,3,4,5\n");
  CHECK(code_of([&] { TableStatProvider::parse(dup); }) == ErrorCode::kDuplicateKey);
  CHECK(code_of([] { TableStatProvider::ingest("/nonexistent/stats.csv"); }) == ErrorCode::kIo);
}

TEST_CASE("stats CSV round trip") {
  const ComputedStatProvider p(small_stats());
  const std::vector<ArchId> ids{ArchId{0}, ArchId{3906}, ArchId{11718}, ArchId{15624}};
  const auto table = compute_all(ids, p);
  std::stringstream csv;
  write_stats_csv(csv, table.records);
  const auto back = TableStatProvider::parse(csv);
  REQUIRE(back.size() == ids.size());
  for (const auto& r : table.records) {
    auto got = back.get(r.arch_id);
    got.source = r.source;
    CHECK(got == r);
  }
}
