#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cbred/netengine.hpp"
#include "cbred/searchspace.hpp"

namespace cbred {

enum class StatSource : std::uint8_t { kComputed, kIngested };

// Failed statistics carry sentinels: ntk_cond = +inf, naswot scores = -inf.
struct TfStatRecord {
  ArchId arch_id;
  double ntk_cond = 1.0;
  std::int64_t lin_regions = 1;
  double naswot_v1 = 0.0;
  double naswot_v2 = 0.0;
  StatSource source = StatSource::kComputed;

  friend bool operator==(const TfStatRecord&, const TfStatRecord&) = default;
};

struct StatsConfig {
  ToyNetConfig net;
  std::size_t batch = 32;
  std::size_t region_samples = 1000;
  double damping = 1e-5;
  double eig_tol = 1e-10;
  std::uint64_t seed = 0;  // network weights and evaluation inputs
};

inline constexpr std::uint32_t kStatsBatchStream = 0x80000001u;
inline constexpr std::uint32_t kRegionBatchStream = 0x80000002u;

// lambda_max / lambda_min of the symmetric kernel; kSingularKernel when
// lambda_min <= eig_tol * lambda_max or lambda_max <= 0.
double condition_number(const Eigen::MatrixXd& gram, double eig_tol = 1e-10);

// Condition number of the empirical NTK G G^T, G = parameter_jacobian(batch).
double ntk_condition(const Network& net, const Tensor& batch, double eig_tol = 1e-10);

// Number of distinct codes.
std::size_t count_distinct(std::span<const BitCode> codes);
std::size_t linear_regions(const Network& net, const Tensor& samples);

// log|det K|, K[i][j] = N_A - hamming(c_i, c_j). kSingularKernel if K is singular.
double naswot_v2_score(std::span<const BitCode> codes);
double naswot_v2(const Network& net, const Tensor& batch);

// -sum_i [log(s_i + k) + 1 / (s_i + k)] over eigenvalues s_i of the row
// correlation matrix of jac. kDegenerateJacobian on a zero-variance row.
double naswot_v1_score(const Eigen::MatrixXd& jac, double damping = 1e-5);
double naswot_v1(const Network& net, const Tensor& batch, double damping = 1e-5);

class StatProvider {
 public:
  virtual ~StatProvider() = default;
  // Throws kMissingStat when the provider has no record for id.
  virtual TfStatRecord get(ArchId id) const = 0;
};

// Evaluates the four statistics on the toy network. One fixed input batch
// (and one region-sample batch) is shared by every architecture.
class ComputedStatProvider final : public StatProvider {
 public:
  explicit ComputedStatProvider(StatsConfig cfg);
  TfStatRecord get(ArchId id) const override;
  const StatsConfig& config() const noexcept { return cfg_; }

 private:
  StatsConfig cfg_;
  Tensor batch_;
  Tensor regions_;
};

class TableStatProvider final : public StatProvider {
 public:
  // Throws kDuplicateKey on a repeated arch id.
  explicit TableStatProvider(std::span<const TfStatRecord> records);

  // Header `arch_id,ntk_cond,lin_regions,naswot_v1,naswot_v2`. The header is
  // line 0; kParseError carries the offending line.
  static TableStatProvider ingest(const std::filesystem::path& path);
  static TableStatProvider parse(std::istream& in);

  TfStatRecord get(ArchId id) const override;
  std::size_t size() const noexcept { return records_.size(); }
  bool contains(ArchId id) const { return records_.count(id) != 0; }

 private:
  std::map<ArchId, TfStatRecord> records_;
};

struct StatTable {
  std::vector<TfStatRecord> records;  // space order, present ids only
  std::vector<ArchId> missing;
};

StatTable compute_all(std::span<const ArchId> space, const StatProvider& provider,
                      unsigned threads = 1);

void write_stats_csv(std::ostream& out, std::span<const TfStatRecord> records);

}  // namespace cbred
