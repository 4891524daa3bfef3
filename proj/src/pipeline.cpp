#include "cbred/pipeline.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "cbred/compgraph.hpp"
#include "cbred/error.hpp"
#include "cbred/selection.hpp"
#include "text_util.hpp"

namespace cbred {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class T>
T parse_number(std::string_view key, std::string_view value) {
  if constexpr (std::is_floating_point_v<T>) {
    const auto v = detail::parse_double(value);
    if (v && std::isfinite(*v)) return static_cast<T>(*v);
  } else {
    const auto v = detail::parse_int<T>(value);
    if (v) return *v;
  }
  fail(ErrorCode::kInvalidInput, "bad value '" + std::string(value) + "' for " + std::string(key));
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  fail(ErrorCode::kInvalidInput, "bad boolean '" + std::string(value) + "' for " + std::string(key));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIo, "short write to " + path.string());
}

// Stage bookkeeping: where artifacts live, which stage produces each one, and
// the provenance sidecars that chain them.
class Workspace {
 public:
  Workspace(const RunConfig& cfg, Stage stage) : cfg_(cfg), stage_(stage), dir_(cfg.artifacts_dir) {}

  fs::path path(std::string_view name) const { return dir_ / name; }

  // Requires an upstream artifact and its provenance to match this config.
  fs::path require(std::string_view name, Stage producer) const {
    const fs::path p = path(name);
    const fs::path prov = fs::path(p.string() + std::string(artifacts::kProvenanceSuffix));
    if (!fs::exists(p) || !fs::exists(prov)) missing(p, producer);
    check_hash(read_provenance_hash(prov), p, producer);
    return p;
  }

  // For artifacts that carry their config hash inline.
  json require_json(std::string_view name, Stage producer) const {
    const fs::path p = path(name);
    if (!fs::exists(p)) missing(p, producer);
    json j;
    try {
      j = json::parse(read_text(p));
    } catch (const json::exception& e) {
      fail(ErrorCode::kParseError, p.string() + ": " + e.what());
    }
    check_hash(j.value("config_hash", std::string("<none>")), p, producer);
    return j;
  }

  [[noreturn]] void missing(const fs::path& p, Stage producer) const {
    fail(ErrorCode::kMissingArtifact, "stage '" + std::string(stage_name(stage_)) + "' needs " + p.string() +
                                          "; run '" + std::string(stage_name(producer)) + "' first");
  }

  void check_hash(const std::string& found, const fs::path& artifact, Stage producer) const {
    const std::string expected = cfg_.hash_hex(producer);
    if (found != expected) {
      fail(ErrorCode::kProvenanceMismatch, artifact.string() + " was produced with config " + found +
                                               ", current config gives " + expected + " for stage '" +
                                               std::string(stage_name(producer)) + "'");
    }
  }

  std::string hash_hex() const { return cfg_.hash_hex(stage_); }
  json config_json() const {
    json j = json::object();
    std::istringstream in(cfg_.serialize(stage_));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      j[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return j;
  }

  void publish(std::string_view name, const std::string& contents, const std::string& extra = {}) const {
    fs::create_directories(dir_);
    write_text(path(name), contents);
    stamp(name, extra);
  }

  // Writes the provenance sidecar for an artifact written by other means.
  void stamp(std::string_view name, const std::string& extra = {}) const {
    fs::create_directories(dir_);
    std::string prov = "stage=" + std::string(stage_name(stage_)) + "\nconfig_hash=" + hash_hex() + "\n";
    prov += cfg_.serialize(stage_);
    prov += extra;
    write_text(path(std::string(name) + std::string(artifacts::kProvenanceSuffix)), prov);
  }

 private:
  static std::string read_provenance_hash(const fs::path& prov) {
    std::istringstream in(read_text(prov));
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("config_hash=", 0) == 0) return line.substr(12);
    }
    return "<none>";
  }

  const RunConfig& cfg_;
  Stage stage_;
  fs::path dir_;
};

std::vector<ArchId> read_cells(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<ArchId> ids;
  std::string line;
  std::int64_t lineno = 0;  // 1-based: the file has no header
  while (std::getline(in, line)) {
    ++lineno;
    try {
      ids.push_back(encode(parse_cell(detail::trim(line))));
    } catch (const Error& e) {
      fail(ErrorCode::kParseError, path.string() + " line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  return ids;
}

Clustering read_clustering(const fs::path& path, std::span<const ArchId> space) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != "arch_id,cluster_label") {
    fail(ErrorCode::kParseError, path.string() + ": wrong header", 0);
  }
  Clustering c;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = detail::split(line, ',');
    const auto id = fields.size() == 2 ? detail::parse_arch_id(fields[0]) : std::nullopt;
    const auto label = fields.size() == 2 ? detail::parse_int<std::int32_t>(fields[1]) : std::nullopt;
    if (!id || !label || *label < Clustering::kNoise) {
      fail(ErrorCode::kParseError, path.string() + " line " + std::to_string(lineno) + ": malformed row", lineno);
    }
    c.ids.push_back(*id);
    c.labels.push_back(*label);
    c.k = std::max(c.k, *label + 1);
  }
  if (!std::equal(c.ids.begin(), c.ids.end(), space.begin(), space.end())) {
    fail(ErrorCode::kProvenanceMismatch, path.string() + " does not cover the enumerated space");
  }
  // The parameters actually used (they differ from the config after a sweep).
  std::istringstream prov(read_text(fs::path(path.string() + std::string(artifacts::kProvenanceSuffix))));
  while (std::getline(prov, line)) {
    if (line.rfind("dbscan_eps=", 0) == 0) c.params.eps = std::stod(line.substr(11));
    if (line.rfind("dbscan_min_pts=", 0) == 0) c.params.min_pts = std::stoul(line.substr(15));
  }
  return c;
}

std::vector<TfStatRecord> read_stats(const fs::path& path, std::span<const ArchId> space) {
  std::istringstream in(read_text(path));
  const auto table = TableStatProvider::parse(in);
  std::vector<TfStatRecord> records;
  for (ArchId id : space) records.push_back(table.get(id));
  return records;
}

json ids_json(std::span<const ArchId> ids) {
  json arr = json::array();
  for (ArchId id : ids) arr.push_back(id.value);
  return arr;
}

std::vector<ArchId> ids_from_json(const json& arr) {
  std::vector<ArchId> ids;
  for (const auto& v : arr) ids.push_back(ArchId{v.get<std::uint32_t>()});
  return ids;
}

json report_json(const EvalReport& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"seed", run.seed}, {"arch_id", run.chosen.value},
                    {"arch", render(decode(run.chosen))}, {"accuracy", run.accuracy}});
  }
  return {{"subset", r.subset_name}, {"subset_size", r.subset_size}, {"runs", runs},
          {"mean", r.mean}, {"median", r.median}, {"std", r.std_dev}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.subset_name = j.at("subset").get<std::string>();
  r.subset_size = j.at("subset_size").get<std::size_t>();
  for (const auto& run : j.at("runs")) {
    r.runs.push_back({run.at("seed").get<std::uint64_t>(), ArchId{run.at("arch_id").get<std::uint32_t>()},
                      run.at("accuracy").get<double>()});
  }
  r.mean = j.at("mean").get<double>();
  r.median = j.at("median").get<double>();
  r.std_dev = j.at("std").get<double>();
  return r;
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), format, args...);
  return buf;
}

std::string stage_enumerate(const RunConfig& cfg) {
  Workspace ws(cfg, Stage::kEnumerate);
  const auto all = enumerate_space(cfg.opset_kinds());
  const auto unique = deduplicate(all);
  const auto& cells = cfg.dedup ? unique : all;

  std::string list, features = "arch_id,f_none,f_skip,f_c1,f_c3,f_ap,p_none,p_skip,p_c1,p_c3,p_ap\n";
  for (const auto& cell : cells) {
    list += render(cell) + '\n';
    features += std::to_string(encode(cell).value);
    for (auto v : freq_vector(cell).counts) features += ',' + std::to_string(v);
    for (auto v : path_vector(cell).counts) features += ',' + std::to_string(v);
    features += '\n';
  }
  ws.publish(artifacts::kCells, list);
  ws.publish(artifacts::kFeatures, features);
  return fmt("enumerate: %zu cells over opset '%s', %zu unique after dead-edge pruning; wrote %zu to %s\n",
             all.size(), cfg.opset.c_str(), unique.size(), cells.size(),
             ws.path(artifacts::kCells).c_str());
}

std::string stage_distances(const RunConfig& cfg) {
  Workspace ws(cfg, Stage::kDistances);
  const auto ids = read_cells(ws.require(artifacts::kCells, Stage::kEnumerate));
  if (cfg.on_the_fly) {
    CombinedDistance dist(FeatureSet::from_ids(ids), cfg.alpha);
    return fmt("distances: on-the-fly mode, no matrix written (n=%zu, freq max %.0f, path max %.0f)\n",
               ids.size(), dist.normalization().freq_max, dist.normalization().path_max);
  }
  const auto norm = normalization_over(FeatureSet::from_ids(ids));
  const DistanceMatrix dm = compute_distance_matrix(ids, cfg.alpha, cfg.threads);
  fs::create_directories(cfg.artifacts_dir);
  dm.save(ws.path(artifacts::kDistances));
  ws.stamp(artifacts::kDistances, fmt("freq_max=%.17g\npath_max=%.17g\n", norm.freq_max, norm.path_max));
  return fmt("distances: n=%zu, %zu condensed entries, alpha=%g (freq max %.0f, path max %.0f)\n",
             dm.size(), dm.condensed().size(), cfg.alpha, norm.freq_max, norm.path_max);
}

std::string stage_cluster(const RunConfig& cfg) {
  Workspace ws(cfg, Stage::kCluster);
  const auto ids = read_cells(ws.require(artifacts::kCells, Stage::kEnumerate));
  std::string summary;
  Clustering clustering;
  const auto eps_grid = default_eps_grid();
  const auto min_pts_grid = default_min_pts_grid();

  auto cluster_with = [&](const auto& dist) {
    DbscanParams params{cfg.eps, cfg.min_pts};
    if (cfg.sweep) {
      const SweepResult sweep = sweep_dbscan(dist, eps_grid, min_pts_grid, cfg.max_noise);
      if (!sweep.found) {
        fail(ErrorCode::kInsufficientClusters,
             "sweep found no (eps, min_pts) with k >= 2 and acceptable noise");
      }
      params = sweep.best.params;
      summary += fmt("cluster: sweep over %zu grid points chose eps=%g min_pts=%zu\n", sweep.grid.size(),
                     params.eps, params.min_pts);
    }
    clustering = dbscan(dist, params.eps, params.min_pts);
  };
  if (cfg.on_the_fly) {
    cluster_with(CombinedDistance(FeatureSet::from_ids(ids), cfg.alpha));
  } else {
    ws.require(artifacts::kDistances, Stage::kDistances);
    cluster_with(DistanceMatrix::load(ws.path(artifacts::kDistances), ids));
  }

  std::string csv = "arch_id,cluster_label\n";
  for (std::size_t i = 0; i < clustering.ids.size(); ++i) {
    csv += std::to_string(clustering.ids[i].value) + ',' + std::to_string(clustering.labels[i]) + '\n';
  }
  ws.publish(artifacts::kClustering, csv,
             fmt("dbscan_eps=%.17g\ndbscan_min_pts=%zu\n", clustering.params.eps, clustering.params.min_pts));

  summary += fmt("cluster: eps=%g min_pts=%zu -> k=%d clusters, %zu noise of %zu\n", clustering.params.eps,
                 clustering.params.min_pts, clustering.k, clustering.noise_count(), clustering.ids.size());
  const auto sizes = clustering.cluster_sizes();
  constexpr std::size_t kListed = 20;
  for (std::size_t c = 0; c < std::min(sizes.size(), kListed); ++c) {
    summary += fmt("  cluster %zu: %zu members\n", c, sizes[c]);
  }
  if (sizes.size() > kListed) summary += fmt("  ... %zu more in %s\n", sizes.size() - kListed, artifacts::kClustering.data());
  if (clustering.k < 2) summary += "  warning: fewer than two clusters; selection will refuse this clustering\n";
  return summary;
}

std::string stage_stats(const RunConfig& cfg) {
  Workspace ws(cfg, Stage::kStats);
  const auto ids = read_cells(ws.require(artifacts::kCells, Stage::kEnumerate));
  StatTable table;
  std::string source;
  if (!cfg.stats_file.empty()) {
    const auto provider = TableStatProvider::ingest(cfg.stats_file);
    table = compute_all(ids, provider, cfg.threads);
    source = "ingested from " + cfg.stats_file;
  } else {
    const ComputedStatProvider provider(cfg.stats_config());
    table = compute_all(ids, provider, cfg.threads);
    source = "computed on the toy network";
  }
  if (!table.missing.empty()) {
    fail(ErrorCode::kMissingStat,
         std::to_string(table.missing.size()) + " architectures have no statistics (first: " +
             std::to_string(table.missing.front().value) + ")",
         table.missing.front().value);
  }
  std::ostringstream csv;
  write_stats_csv(csv, table.records);
  ws.publish(artifacts::kStats, csv.str());
  std::size_t ntk_fail = 0, v1_fail = 0, v2_fail = 0;
  for (const auto& r : table.records) {
    ntk_fail += std::isinf(r.ntk_cond);
    v1_fail += std::isinf(r.naswot_v1);
    v2_fail += std::isinf(r.naswot_v2);
  }
  return fmt("stats: %zu records %s; sentinels: ntk %zu, naswot_v1 %zu, naswot_v2 %zu\n",
             table.records.size(), source.c_str(), ntk_fail, v1_fail, v2_fail);
}

std::string stage_select(const RunConfig& cfg) {
  Workspace ws(cfg, Stage::kSelect);
  const auto ids = read_cells(ws.require(artifacts::kCells, Stage::kEnumerate));
  const Clustering clustering = read_clustering(ws.require(artifacts::kClustering, Stage::kCluster), ids);
  const auto records = read_stats(ws.require(artifacts::kStats, Stage::kStats), ids);

  const auto aggregates = aggregate_scores(records);
  const SelectorResult selected = select_cluster(clustering, aggregates);

  std::vector<double> naswot(ids.size()), macs(ids.size());
  const MacroSkeleton skel;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    naswot[i] = records[i].naswot_v2;
    macs[i] = static_cast<double>(mac_count(decode(ids[i]), skel));
  }
  const auto tf_q = quantile_partition(ids, naswot, 5, "naswot_v2");
  const auto mac_q = quantile_partition(ids, macs, 5, "mac");

  std::vector<ArchId> chosen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (clustering.labels[i] == selected.chosen) chosen.push_back(ids[i]);
  }

  json clusters = json::array();
  for (const auto& c : selected.clusters) {
    clusters.push_back({{"id", c.id}, {"size", c.size}, {"mean_aggregate", c.mean_aggregate}});
  }
  auto partition_json = [&](const QuantilePartition& p) {
    json buckets = json::array();
    for (std::size_t b = 0; b < p.buckets; ++b) buckets.push_back(ids_json(baseline_subset(p, ids, b)));
    return json{{"statistic", p.statistic}, {"boundaries", p.boundaries}, {"buckets", buckets}};
  };
  json doc = {
      {"config_hash", ws.hash_hex()},
      {"config", ws.config_json()},
      {"parameters",
       {{"alpha", cfg.alpha}, {"eps", clustering.params.eps}, {"min_pts", clustering.params.min_pts},
        {"baseline_bucket", cfg.baseline_bucket}}},
      {"space_size", ids.size()},
      {"noise", clustering.noise_count()},
      {"clusters", clusters},
      {"chosen", selected.chosen},
      {"subsets",
       {{"C-BRED", ids_json(chosen)},
        {"TF-Q", ids_json(baseline_subset(tf_q, ids, cfg.baseline_bucket))},
        {"MAC-Q", ids_json(baseline_subset(mac_q, ids, cfg.baseline_bucket))}}},
      {"quantiles", {{"TF-Q", partition_json(tf_q)}, {"MAC-Q", partition_json(mac_q)}}},
  };
  fs::create_directories(cfg.artifacts_dir);
  write_text(ws.path(artifacts::kSelection), doc.dump(2) + "\n");

  std::string summary = fmt("select: chose cluster %d of %d (%zu members)\n", selected.chosen,
                            clustering.k, chosen.size());
  for (const auto& c : selected.clusters) {
    summary += fmt("  cluster %d: size %zu, mean aggregate %.4f%s\n", c.id, c.size, c.mean_aggregate,
                   c.id == selected.chosen ? "  <- selected" : "");
  }
  summary += fmt("  baselines use bucket %zu: TF-Q %zu members, MAC-Q %zu members\n", cfg.baseline_bucket,
                 baseline_subset(tf_q, ids, cfg.baseline_bucket).size(),
                 baseline_subset(mac_q, ids, cfg.baseline_bucket).size());
  return summary;
}

std::string stage_evaluate(const RunConfig& cfg) {
  Workspace ws(cfg, Stage::kEvaluate);
  const auto ids = read_cells(ws.require(artifacts::kCells, Stage::kEnumerate));
  ws.require(artifacts::kClustering, Stage::kCluster);
  const json selection = ws.require_json(artifacts::kSelection, Stage::kSelect);
  const auto records = read_stats(ws.require(artifacts::kStats, Stage::kStats), ids);
  if (cfg.acc_file.empty()) fail(ErrorCode::kInvalidInput, "evaluate needs --acc-file");
  const AccuracyTable acc = AccuracyTable::ingest(cfg.acc_file, cfg.dataset);
  const TableStatProvider stats(records);

  const std::vector<std::pair<std::string, std::vector<ArchId>>> subsets{
      {"Intrinsic", ids},
      {"TF-Q", ids_from_json(selection.at("subsets").at("TF-Q"))},
      {"MAC-Q", ids_from_json(selection.at("subsets").at("MAC-Q"))},
      {"C-BRED", ids_from_json(selection.at("subsets").at("C-BRED"))},
  };
  std::vector<EvalReport> reports;
  json reports_json = json::array();
  json means = json::object();
  for (const auto& [name, subset] : subsets) {
    reports.push_back(evaluate_subset(name, subset, stats, acc, cfg.runs, cfg.search_n, cfg.seed,
                                      cfg.search_score_kind()));
    reports_json.push_back(report_json(reports.back()));
    means[name] = subset_mean_accuracy(subset, acc);
  }
  const std::string table = format_report_table(reports);
  json doc = {{"config_hash", ws.hash_hex()},
              {"config", ws.config_json()},
              {"dataset", cfg.dataset},
              {"reports", reports_json},
              {"subset_mean_accuracy", means}};
  fs::create_directories(cfg.artifacts_dir);
  write_text(ws.path(artifacts::kEvaluation), doc.dump(2) + "\n");
  write_text(ws.path(artifacts::kEvaluationTable), table);
  return fmt("evaluate: %zu-run NASWOT search (N=%zu, score %s) on %s\n", cfg.runs, cfg.search_n,
             cfg.search_score.c_str(), cfg.dataset.c_str()) +
         table;
}

std::string stage_report(const RunConfig& cfg) {
  Workspace ws(cfg, Stage::kReport);
  const json selection = ws.require_json(artifacts::kSelection, Stage::kSelect);
  const json evaluation = ws.require_json(artifacts::kEvaluation, Stage::kEvaluate);
  std::vector<EvalReport> reports;
  for (const auto& r : evaluation.at("reports")) reports.push_back(report_from_json(r));

  std::string out = fmt("%s accuracy of the networks chosen by %zu-run NASWOT search\n\n",
                        evaluation.at("dataset").get<std::string>().c_str(),
                        reports.empty() ? std::size_t{0} : reports.front().runs.size());
  out += format_report_table(reports);
  out += "\nSubset sizes and mean accuracy over all members:\n";
  for (const auto& r : reports) {
    out += fmt("  %-10s %6zu architectures, mean %.2f\n", r.subset_name.c_str(), r.subset_size,
               evaluation.at("subset_mean_accuracy").at(r.subset_name).get<double>());
  }
  out += fmt("\nClustering: %zu clusters, %zu noise points, selected cluster %d\n",
             selection.at("clusters").size(), selection.at("noise").get<std::size_t>(),
             selection.at("chosen").get<int>());
  write_text(ws.path(artifacts::kReport), out);
  return out;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  value = detail::trim(value);
  if (key == "alpha") {
    alpha = parse_number<double>(key, value);
  } else if (key == "eps") {
    eps = parse_number<double>(key, value);
  } else if (key == "min-pts") {
    min_pts = parse_number<std::size_t>(key, value);
  } else if (key == "sweep") {
    sweep = parse_bool(key, value);
  } else if (key == "max-noise") {
    max_noise = parse_number<double>(key, value);
  } else if (key == "opset") {
    RunConfig probe;
    probe.opset = std::string(value);
    (void)probe.opset_kinds();
    opset = std::move(probe.opset);
  } else if (key == "dedup") {
    dedup = parse_bool(key, value);
  } else if (key == "resolution") {
    net.input_resolution = parse_number<int>(key, value);
  } else if (key == "channels") {
    net.cell_channels = parse_number<int>(key, value);
  } else if (key == "cells-per-stage") {
    net.cells_per_stage = parse_number<int>(key, value);
  } else if (key == "stages") {
    net.stages = parse_number<int>(key, value);
  } else if (key == "classes") {
    net.num_classes = parse_number<int>(key, value);
  } else if (key == "batch") {
    batch = parse_number<std::size_t>(key, value);
  } else if (key == "regions-samples") {
    regions_samples = parse_number<std::size_t>(key, value);
  } else if (key == "damping") {
    damping = parse_number<double>(key, value);
  } else if (key == "eig-tol") {
    eig_tol = parse_number<double>(key, value);
  } else if (key == "search-n") {
    search_n = parse_number<std::size_t>(key, value);
  } else if (key == "runs") {
    runs = parse_number<std::size_t>(key, value);
  } else if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "search-score") {
    search_score = std::string(value);
    (void)search_score_kind();
  } else if (key == "baseline-bucket") {
    baseline_bucket = parse_number<std::size_t>(key, value);
    if (baseline_bucket > 4) fail(ErrorCode::kInvalidInput, "baseline-bucket must be in 0..4");
  } else if (key == "dataset") {
    dataset = std::string(value);
  } else if (key == "stats-file") {
    stats_file = std::string(value);
  } else if (key == "acc-file") {
    acc_file = std::string(value);
  } else if (key == "artifacts-dir") {
    artifacts_dir = std::string(value);
  } else if (key == "threads") {
    threads = parse_number<unsigned>(key, value);
  } else if (key == "on-the-fly") {
    on_the_fly = parse_bool(key, value);
  } else {
    fail(ErrorCode::kInvalidInput, "unknown config key '" + std::string(key) + "'");
  }
}

void RunConfig::load(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorCode::kParseError, path.string() + " line " + std::to_string(lineno) + ": expected key=value",
           lineno);
    }
    set(detail::trim(text.substr(0, eq)), text.substr(eq + 1));
  }
}

std::string RunConfig::serialize() const {
  std::string out;
  auto put = [&](const char* key, const std::string& value) { out += std::string(key) + '=' + value + '\n'; };
  auto num = [](double v) { return detail::format_double(v); };
  put("alpha", num(alpha));
  put("eps", num(eps));
  put("min-pts", std::to_string(min_pts));
  put("sweep", sweep ? "true" : "false");
  put("max-noise", num(max_noise));
  put("opset", opset);
  put("dedup", dedup ? "true" : "false");
  put("resolution", std::to_string(net.input_resolution));
  put("channels", std::to_string(net.cell_channels));
  put("cells-per-stage", std::to_string(net.cells_per_stage));
  put("stages", std::to_string(net.stages));
  put("classes", std::to_string(net.num_classes));
  put("batch", std::to_string(batch));
  put("regions-samples", std::to_string(regions_samples));
  put("damping", num(damping));
  put("eig-tol", num(eig_tol));
  put("search-n", std::to_string(search_n));
  put("runs", std::to_string(runs));
  put("seed", std::to_string(seed));
  put("search-score", search_score);
  put("baseline-bucket", std::to_string(baseline_bucket));
  put("dataset", dataset);
  put("stats-file", stats_file);
  put("acc-file", acc_file);
  return out;
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : serialize()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string RunConfig::hash_hex() const { return fmt("%016" PRIx64, hash()); }

std::string RunConfig::serialize(Stage stage) const {
  static constexpr std::string_view kSpace[] = {"opset", "dedup"};
  static constexpr std::string_view kDistances[] = {"alpha"};
  static constexpr std::string_view kCluster[] = {"eps", "min-pts", "sweep", "max-noise"};
  static constexpr std::string_view kStats[] = {"resolution", "channels", "cells-per-stage", "stages",
                                                "classes", "batch", "regions-samples", "damping",
                                                "eig-tol", "seed", "stats-file"};
  static constexpr std::string_view kSelect[] = {"baseline-bucket"};
  static constexpr std::string_view kEvaluate[] = {"search-n", "runs", "seed", "search-score", "dataset",
                                                   "acc-file"};
  std::vector<std::string_view> keys(std::begin(kSpace), std::end(kSpace));
  auto add = [&](auto& group) { keys.insert(keys.end(), std::begin(group), std::end(group)); };
  switch (stage) {
    case Stage::kEnumerate: break;
    case Stage::kDistances: add(kDistances); break;
    case Stage::kCluster: add(kDistances); add(kCluster); break;
    case Stage::kStats: add(kStats); break;
    case Stage::kSelect:
    case Stage::kEvaluate:
    case Stage::kReport:
      add(kDistances);
      add(kCluster);
      add(kStats);
      add(kSelect);
      if (stage != Stage::kSelect) add(kEvaluate);
      break;
  }
  std::string out;
  std::istringstream in(serialize());
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view key = std::string_view(line).substr(0, line.find('='));
    if (std::find(keys.begin(), keys.end(), key) != keys.end()) out += line + '\n';
  }
  return out;
}

std::string RunConfig::hash_hex(Stage stage) const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : serialize(stage)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return fmt("%016" PRIx64, h);
}

std::vector<OpKind> RunConfig::opset_kinds() const {
  if (opset == "all") return {kAllOps.begin(), kAllOps.end()};
  std::vector<OpKind> kinds;
  for (auto name : detail::split(opset, ',')) {
    if (name == "none") kinds.push_back(OpKind::kNone);
    else if (name == "skip") kinds.push_back(OpKind::kSkip);
    else if (name == "conv1x1") kinds.push_back(OpKind::kConv1x1);
    else if (name == "conv3x3") kinds.push_back(OpKind::kConv3x3);
    else if (name == "avgpool3x3") kinds.push_back(OpKind::kAvgPool3x3);
    else kinds.push_back(op_from_name(name));
  }
  return kinds;
}

StatsConfig RunConfig::stats_config() const {
  StatsConfig sc;
  sc.net = net;
  sc.batch = batch;
  sc.region_samples = regions_samples;
  sc.damping = damping;
  sc.eig_tol = eig_tol;
  sc.seed = seed;
  return sc;
}

SearchScore RunConfig::search_score_kind() const {
  if (search_score == "v2") return SearchScore::kNaswotV2;
  if (search_score == "v1") return SearchScore::kNaswotV1;
  fail(ErrorCode::kInvalidInput, "search-score must be v1 or v2");
}

std::string_view stage_name(Stage stage) noexcept {
  switch (stage) {
    case Stage::kEnumerate: return "enumerate";
    case Stage::kDistances: return "distances";
    case Stage::kCluster: return "cluster";
    case Stage::kStats: return "stats";
    case Stage::kSelect: return "select";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kReport: return "report";
  }
  return "?";
}

Stage stage_from_name(std::string_view name) {
  for (int s = 0; s <= static_cast<int>(Stage::kReport); ++s) {
    if (stage_name(static_cast<Stage>(s)) == name) return static_cast<Stage>(s);
  }
  fail(ErrorCode::kInvalidInput, "unknown stage '" + std::string(name) + "'");
}

std::string run_stage(Stage stage, const RunConfig& cfg) {
  switch (stage) {
    case Stage::kEnumerate: return stage_enumerate(cfg);
    case Stage::kDistances: return stage_distances(cfg);
    case Stage::kCluster: return stage_cluster(cfg);
    case Stage::kStats: return stage_stats(cfg);
    case Stage::kSelect: return stage_select(cfg);
    case Stage::kEvaluate: return stage_evaluate(cfg);
    case Stage::kReport: return stage_report(cfg);
  }
  return {};
}

std::string run_pipeline(const RunConfig& cfg) {
  std::string out;
  for (Stage s : {Stage::kEnumerate, Stage::kDistances, Stage::kCluster, Stage::kStats, Stage::kSelect}) {
    out += run_stage(s, cfg);
  }
  if (cfg.acc_file.empty()) return out + "evaluate/report skipped: no --acc-file\n";
  out += run_stage(Stage::kEvaluate, cfg);
  out += run_stage(Stage::kReport, cfg);
  return out;
}

}  // namespace cbred
