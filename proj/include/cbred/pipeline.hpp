#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cbred/cluster.hpp"
#include "cbred/evaluation.hpp"
#include "cbred/tfstats.hpp"

namespace cbred {

// Every knob of a run. Keys are the CLI flag names without the leading dashes;
// the config file uses the same keys, one `key=value` per line.
enum class Stage : std::uint8_t {
  kEnumerate,
  kDistances,
  kCluster,
  kStats,
  kSelect,
  kEvaluate,
  kReport,
};

struct RunConfig {
  double alpha = 0.5;
  double eps = 0.08;
  std::size_t min_pts = 20;
  bool sweep = false;
  double max_noise = 0.2;
  std::string opset = "all";
  bool dedup = true;
  ToyNetConfig net;
  std::size_t batch = 32;
  std::size_t regions_samples = 1000;
  double damping = 1e-5;
  double eig_tol = 1e-10;
  std::size_t search_n = 100;
  std::size_t runs = 10;
  std::uint64_t seed = 0;
  std::string search_score = "v2";
  std::size_t baseline_bucket = 4;
  std::string dataset = "cifar100";
  std::string stats_file;
  std::string acc_file;
  // Not part of the provenance hash: they never change artifact contents.
  std::string artifacts_dir = "artifacts";
  unsigned threads = 1;
  bool on_the_fly = false;

  // Throws kInvalidInput on unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  // Blank lines and lines starting with '#' are ignored.
  void load(const std::filesystem::path& path);

  // Hashed keys in fixed order, `key=value\n` each.
  std::string serialize() const;
  // FNV-1a 64 of serialize().
  std::uint64_t hash() const;
  std::string hash_hex() const;

  // Only the keys that can change the output of `stage` or of any stage it
  // depends on. Artifacts are stamped with this narrower hash so that, say,
  // changing eps does not invalidate the enumerated space.
  std::string serialize(Stage stage) const;
  std::string hash_hex(Stage stage) const;

  std::vector<OpKind> opset_kinds() const;
  StatsConfig stats_config() const;
  SearchScore search_score_kind() const;
};


std::string_view stage_name(Stage stage) noexcept;
// Throws kInvalidInput.
Stage stage_from_name(std::string_view name);

// Runs one stage against cfg.artifacts_dir and returns a human-readable
// summary. Upstream artifacts must exist (kMissingArtifact) and carry the same
// config hash (kProvenanceMismatch).
std::string run_stage(Stage stage, const RunConfig& cfg);

// enumerate .. report in order; evaluate and report are skipped when no
// accuracy file is configured.
std::string run_pipeline(const RunConfig& cfg);

namespace artifacts {
inline constexpr std::string_view kCells = "cells.txt";
inline constexpr std::string_view kFeatures = "features.csv";
inline constexpr std::string_view kDistances = "distances.bin";
inline constexpr std::string_view kClustering = "clustering.csv";
inline constexpr std::string_view kStats = "stats.csv";
inline constexpr std::string_view kSelection = "selection.json";
inline constexpr std::string_view kEvaluation = "evaluation.json";
inline constexpr std::string_view kEvaluationTable = "evaluation.txt";
inline constexpr std::string_view kReport = "report.txt";
inline constexpr std::string_view kProvenanceSuffix = ".prov";
}  // namespace artifacts

}  // namespace cbred
