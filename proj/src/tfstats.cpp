#include "cbred/tfstats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>

#include "cbred/error.hpp"
#include "parallel.hpp"
#include "text_util.hpp"

namespace cbred {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_pairs(int n, const char* what) {
  if (n < 2) fail(ErrorCode::kInvalidInput, std::string(what) + " needs at least two samples");
}

}  // namespace

double condition_number(const Eigen::MatrixXd& gram, double eig_tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();  // ascending
  const double lo = ev(0);
  const double hi = ev(ev.size() - 1);
  if (!(hi > 0.0) || lo <= eig_tol * hi) {
    fail(ErrorCode::kSingularKernel, "kernel is singular (lambda_min=" + std::to_string(lo) +
                                         ", lambda_max=" + std::to_string(hi) + ")");
  }
  return hi / lo;
}

double ntk_condition(const Network& net, const Tensor& batch, double eig_tol) {
  require_pairs(batch.n, "NTK condition number");
  const Eigen::MatrixXd jac = net.parameter_jacobian(batch);
  return condition_number(jac * jac.transpose(), eig_tol);
}

std::size_t count_distinct(std::span<const BitCode> codes) {
  std::vector<BitCode> sorted(codes.begin(), codes.end());
  std::sort(sorted.begin(), sorted.end());
  return static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

std::size_t linear_regions(const Network& net, const Tensor& samples) {
  if (samples.n < 1) fail(ErrorCode::kInvalidInput, "linear regions need at least one sample");
  return count_distinct(net.forward(samples).relu_pattern);
}

double naswot_v2_score(std::span<const BitCode> codes) {
  const auto n = static_cast<Eigen::Index>(codes.size());
  require_pairs(static_cast<int>(n), "NASWOT score");
  const double units = static_cast<double>(codes.front().bits);
  Eigen::MatrixXd kernel(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      kernel(i, j) = kernel(j, i) = units - static_cast<double>(hamming(codes[i], codes[j]));
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kernel);
  lu.setThreshold(1e-10);
  if (lu.rank() < n) fail(ErrorCode::kSingularKernel, "activation-code kernel is singular");
  const auto& packed = lu.matrixLU();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(std::abs(packed(i, i)));
  return logdet;
}

double naswot_v2(const Network& net, const Tensor& batch) {
  require_pairs(batch.n, "NASWOT score");
  return naswot_v2_score(net.forward(batch).relu_pattern);
}

double naswot_v1_score(const Eigen::MatrixXd& jac, double damping) {
  require_pairs(static_cast<int>(jac.rows()), "NASWOT score");
  Eigen::MatrixXd centered = jac.colwise() - jac.rowwise().mean();
  const Eigen::VectorXd norms = centered.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 1e-12 * jac.row(i).norm())) {
      fail(ErrorCode::kDegenerateJacobian, "Jacobian row " + std::to_string(i) + " has zero variance");
    }
  }
  const Eigen::MatrixXd unit = norms.cwiseInverse().asDiagonal() * centered;
  const Eigen::MatrixXd corr = unit * unit.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(corr, Eigen::EigenvaluesOnly);
  double score = 0.0;
  for (double s : solver.eigenvalues()) score -= std::log(s + damping) + 1.0 / (s + damping);
  return score;
}

double naswot_v1(const Network& net, const Tensor& batch, double damping) {
  require_pairs(batch.n, "NASWOT score");
  return naswot_v1_score(net.input_jacobian(batch), damping);
}

ComputedStatProvider::ComputedStatProvider(StatsConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.net.seed = cfg_.seed;
  cfg_.net.validate();
  if (cfg_.batch < 2) fail(ErrorCode::kInvalidInput, "statistics batch needs at least two samples");
  if (cfg_.region_samples < 1) fail(ErrorCode::kInvalidInput, "region sample count must be >= 1");
  batch_ = gaussian_batch(cfg_.net, static_cast<int>(cfg_.batch), cfg_.seed, kStatsBatchStream);
  regions_ = gaussian_batch(cfg_.net, static_cast<int>(cfg_.region_samples), cfg_.seed, kRegionBatchStream);
}

TfStatRecord ComputedStatProvider::get(ArchId id) const {
  const Network net = Network::instantiate(decode(id), cfg_.net);
  TfStatRecord rec{id};
  rec.source = StatSource::kComputed;
  auto guarded = [](auto&& compute, double sentinel) {
    try {
      return compute();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSingularKernel && e.code() != ErrorCode::kDegenerateJacobian) throw;
      return sentinel;
    }
  };
  rec.ntk_cond = guarded([&] { return ntk_condition(net, batch_, cfg_.eig_tol); }, kInf);
  rec.lin_regions = static_cast<std::int64_t>(linear_regions(net, regions_));
  rec.naswot_v1 = guarded([&] { return naswot_v1(net, batch_, cfg_.damping); }, -kInf);
  rec.naswot_v2 = guarded([&] { return naswot_v2(net, batch_); }, -kInf);
  return rec;
}

TableStatProvider::TableStatProvider(std::span<const TfStatRecord> records) {
  for (const auto& rec : records) {
    if (!records_.emplace(rec.arch_id, rec).second) {
      fail(ErrorCode::kDuplicateKey, "duplicate arch_id " + std::to_string(rec.arch_id.value),
           rec.arch_id.value);
    }
  }
}

TableStatProvider TableStatProvider::ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  return parse(in);
}

TableStatProvider TableStatProvider::parse(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) ||
      detail::trim(line) != "arch_id,ntk_cond,lin_regions,naswot_v1,naswot_v2") {
    fail(ErrorCode::kParseError, "stats file: missing or wrong header", 0);
  }
  std::vector<TfStatRecord> records;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line, ',');
    auto bad = [&](const std::string& why) {
      fail(ErrorCode::kParseError, "stats file line " + std::to_string(lineno) + ": " + why, lineno);
    };
    if (fields.size() != 5) bad("expected 5 fields");
    TfStatRecord rec;
    rec.source = StatSource::kIngested;
    const auto id = detail::parse_arch_id(fields[0]);
    const auto ntk = detail::parse_double(fields[1]);
    const auto regions = detail::parse_int<std::int64_t>(fields[2]);
    const auto v1 = detail::parse_double(fields[3]);
    const auto v2 = detail::parse_double(fields[4]);
    if (!id) bad("bad arch_id");
    if (!ntk || !(*ntk >= 1.0)) bad("ntk_cond must be a real >= 1 or inf");
    if (!regions || *regions < 1) bad("lin_regions must be an integer >= 1");
    if (!v1 || *v1 == kInf) bad("naswot_v1 must be a real or -inf");
    if (!v2 || *v2 == kInf) bad("naswot_v2 must be a real or -inf");
    rec.arch_id = *id;
    rec.ntk_cond = *ntk;
    rec.lin_regions = *regions;
    rec.naswot_v1 = *v1;
    rec.naswot_v2 = *v2;
    records.push_back(rec);
  }
  return TableStatProvider(records);
}

TfStatRecord TableStatProvider::get(ArchId id) const {
  const auto it = records_.find(id);
  if (it == records_.end()) {
    fail(ErrorCode::kMissingStat, "no statistics for arch_id " + std::to_string(id.value), id.value);
  }
  return it->second;
}

StatTable compute_all(std::span<const ArchId> space, const StatProvider& provider, unsigned threads) {
  std::vector<std::optional<TfStatRecord>> slots(space.size());
  detail::parallel_for(space.size(), threads, [&](std::size_t i) {
    try {
      slots[i] = provider.get(space[i]);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kMissingStat) throw;
    }
  });
  StatTable table;
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (slots[i]) {
      table.records.push_back(*slots[i]);
    } else {
      table.missing.push_back(space[i]);
    }
  }
  return table;
}

void write_stats_csv(std::ostream& out, std::span<const TfStatRecord> records) {
  out << "arch_id,ntk_cond,lin_regions,naswot_v1,naswot_v2\n";
  for (const auto& r : records) {
    out << r.arch_id.value << ',' << detail::format_double(r.ntk_cond) << ',' << r.lin_regions << ','
        << detail::format_double(r.naswot_v1) << ',' << detail::format_double(r.naswot_v2) << '\n';
  }
}

}  // namespace cbred
