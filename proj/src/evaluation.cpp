#include "cbred/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <random>
#include <set>

#include "cbred/error.hpp"
#include "text_util.hpp"

namespace cbred {

namespace {

// Unbiased draw in [0, bound); std::uniform_int_distribution is not portable
// across standard libraries.
std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = rng();
    if (x >= threshold) return x % bound;
  }
}

double search_score(const TfStatRecord& rec, SearchScore score) {
  return score == SearchScore::kNaswotV1 ? rec.naswot_v1 : rec.naswot_v2;
}

}  // namespace

AccuracyTable::AccuracyTable(std::string dataset, std::map<ArchId, double> values)
    : dataset_(std::move(dataset)), values_(std::move(values)) {
  for (const auto& [id, v] : values_) {
    if (!(v >= 0.0 && v <= 100.0)) {
      fail(ErrorCode::kInvalidInput, "accuracy for arch_id " + std::to_string(id.value) + " outside [0, 100]");
    }
  }
}

AccuracyTable AccuracyTable::ingest(const std::filesystem::path& path, const std::string& dataset) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  return parse(in, dataset);
}

AccuracyTable AccuracyTable::parse(std::istream& in, const std::string& dataset) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "arch_id,dataset,test_accuracy") {
    fail(ErrorCode::kParseError, "accuracy file: missing or wrong header", 0);
  }
  std::set<std::pair<ArchId, std::string>> seen;
  std::map<ArchId, double> values;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line, ',');
    auto bad = [&](const std::string& why) {
      fail(ErrorCode::kParseError, "accuracy file line " + std::to_string(lineno) + ": " + why, lineno);
    };
    if (fields.size() != 3) bad("expected 3 fields");
    const auto id = detail::parse_arch_id(fields[0]);
    const auto acc = detail::parse_double(fields[2]);
    if (!id) bad("bad arch_id");
    if (fields[1].empty()) bad("empty dataset name");
    if (!acc || !(*acc >= 0.0 && *acc <= 100.0)) bad("test_accuracy must lie in [0, 100]");
    if (!seen.emplace(*id, std::string(fields[1])).second) {
      fail(ErrorCode::kDuplicateKey,
           "accuracy file line " + std::to_string(lineno) + ": duplicate (arch_id, dataset)", id->value);
    }
    if (fields[1] == dataset) values.emplace(*id, *acc);
  }
  return AccuracyTable(dataset, std::move(values));
}

std::optional<double> AccuracyTable::find(ArchId id) const {
  const auto it = values_.find(id);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

double AccuracyTable::at(ArchId id) const {
  const auto v = find(id);
  if (!v) {
    fail(ErrorCode::kMissingAccuracy,
         "no " + dataset_ + " accuracy for arch_id " + std::to_string(id.value), id.value);
  }
  return *v;
}

ArchId naswot_search(std::span<const ArchId> subset, const StatProvider& stats, std::size_t n,
                     std::uint64_t seed, SearchScore score) {
  if (subset.empty()) fail(ErrorCode::kInvalidInput, "search subset is empty");
  if (n < 1) fail(ErrorCode::kInvalidInput, "search sample size must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<ArchId> sample;
  if (n <= subset.size()) {
    std::vector<ArchId> pool(subset.begin(), subset.end());
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(pool[i], pool[i + draw_below(rng, pool.size() - i)]);
    }
    sample.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    for (std::size_t i = 0; i < n; ++i) sample.push_back(subset[draw_below(rng, subset.size())]);
  }
  ArchId best = sample.front();
  double best_score = search_score(stats.get(best), score);
  for (std::size_t i = 1; i < sample.size(); ++i) {
    const double s = search_score(stats.get(sample[i]), score);
    if (s > best_score || (s == best_score && sample[i] < best)) {
      best = sample[i];
      best_score = s;
    }
  }
  return best;
}

SummaryStats summarize(std::span<const double> values) {
  SummaryStats s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std_dev = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

EvalReport evaluate_subset(const std::string& name, std::span<const ArchId> subset,
                           const StatProvider& stats, const AccuracyTable& acc, std::size_t runs,
                           std::size_t n, std::uint64_t base_seed, SearchScore score) {
  if (runs < 1) fail(ErrorCode::kInvalidInput, "run count must be >= 1");
  for (ArchId id : subset) acc.at(id);
  EvalReport report;
  report.subset_name = name;
  report.subset_size = subset.size();
  std::vector<double> accuracies;
  for (std::size_t r = 0; r < runs; ++r) {
    const std::uint64_t seed = base_seed + r;
    const ArchId chosen = naswot_search(subset, stats, n, seed, score);
    report.runs.push_back({seed, chosen, acc.at(chosen)});
    accuracies.push_back(report.runs.back().accuracy);
  }
  const SummaryStats s = summarize(accuracies);
  report.mean = s.mean;
  report.median = s.median;
  report.std_dev = s.std_dev;
  return report;
}

double subset_mean_accuracy(std::span<const ArchId> subset, const AccuracyTable& acc) {
  if (subset.empty()) fail(ErrorCode::kInvalidInput, "subset is empty");
  double sum = 0.0;
  for (ArchId id : subset) sum += acc.at(id);
  return sum / static_cast<double>(subset.size());
}

std::string format_report_table(std::span<const EvalReport> reports) {
  std::string out;
  char buf[64];
  auto column_width = [](const EvalReport& r) {
    return std::max<int>(9, static_cast<int>(r.subset_name.size()) + 2);
  };
  std::snprintf(buf, sizeof(buf), "%-20s", "");
  out += buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%*s", column_width(r), r.subset_name.c_str());
    out += buf;
  }
  out += '\n';
  auto row = [&](const char* label, double EvalReport::*field) {
    std::snprintf(buf, sizeof(buf), "%-20s", label);
    out += buf;
    for (const auto& r : reports) {
      std::snprintf(buf, sizeof(buf), "%*.2f", column_width(r), r.*field);
      out += buf;
    }
    out += '\n';
  };
  row("Mean", &EvalReport::mean);
  row("Median", &EvalReport::median);
  row("Standard deviation", &EvalReport::std_dev);
  return out;
}

}  // namespace cbred
