#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbred/searchspace.hpp"
#include "cbred/tfstats.hpp"

namespace cbred {

// Test accuracies (percent) for one task.
class AccuracyTable {
 public:
  AccuracyTable() = default;
  AccuracyTable(std::string dataset, std::map<ArchId, double> values);

  // CSV `arch_id,dataset,test_accuracy`; keeps rows whose dataset matches.
  // The header is line 0. Throws kParseError (with line) on malformed rows or
  // accuracies outside [0, 100], kDuplicateKey on a repeated (arch_id, dataset).
  static AccuracyTable ingest(const std::filesystem::path& path, const std::string& dataset);
  static AccuracyTable parse(std::istream& in, const std::string& dataset);

  const std::string& dataset() const noexcept { return dataset_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::optional<double> find(ArchId id) const;
  // Throws kMissingAccuracy.
  double at(ArchId id) const;

 private:
  std::string dataset_;
  std::map<ArchId, double> values_;
};

enum class SearchScore : std::uint8_t { kNaswotV1, kNaswotV2 };

// Uniform sample of n architectures (without replacement when n <= |subset|),
// then the best search score; ties go to the lower ArchId.
ArchId naswot_search(std::span<const ArchId> subset, const StatProvider& stats, std::size_t n,
                     std::uint64_t seed, SearchScore score = SearchScore::kNaswotV2);

struct EvalRun {
  std::uint64_t seed = 0;
  ArchId chosen;
  double accuracy = 0.0;
};

struct EvalReport {
  std::string subset_name;
  std::size_t subset_size = 0;
  std::vector<EvalRun> runs;
  double mean = 0.0;
  double median = 0.0;
  double std_dev = 0.0;  // sample (n - 1); 0 for a single run
};

struct SummaryStats {
  double mean = 0.0;
  double median = 0.0;
  double std_dev = 0.0;
};

SummaryStats summarize(std::span<const double> values);

// Runs with seeds base_seed .. base_seed + runs - 1. Every subset member must
// have an accuracy (kMissingAccuracy otherwise).
EvalReport evaluate_subset(const std::string& name, std::span<const ArchId> subset,
                           const StatProvider& stats, const AccuracyTable& acc, std::size_t runs,
                           std::size_t n, std::uint64_t base_seed,
                           SearchScore score = SearchScore::kNaswotV2);

double subset_mean_accuracy(std::span<const ArchId> subset, const AccuracyTable& acc);

// Rows Mean / Median / Standard deviation, one column per report.
std::string format_report_table(std::span<const EvalReport> reports);

}  // namespace cbred
