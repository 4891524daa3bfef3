// Command-line front end; talks to the library only through the C interface.

#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cbred/cbred.h"

namespace {

struct ConfigDeleter {
  void operator()(cbred_config* c) const { cbred_config_destroy(c); }
};
using ConfigPtr = std::unique_ptr<cbred_config, ConfigDeleter>;

int report_failure(cbred_status status) {
  std::fprintf(stderr, "error [%s]: %s\n", cbred_status_name(status), cbred_last_error());
  return static_cast<int>(status);
}

// Calls a (buf, cap, needed) function twice: once to size, once to fill.
template <class Fn>
cbred_status fetch_text(Fn&& fn, std::string& out) {
  size_t needed = 0;
  cbred_status st = fn(nullptr, 0, &needed);
  if (st != CBRED_OK && st != CBRED_BUFFER_TOO_SMALL) return st;
  std::vector<char> buf(needed);
  st = fn(buf.data(), buf.size(), &needed);
  if (st == CBRED_OK) out.assign(buf.data());
  return st;
}

// Flags shared by every stage command. Only flags given on the command line
// override values from --config.
struct StageOptions {
  std::string config_file;
  std::map<std::string, std::string> values;
  bool sweep = false, on_the_fly = false, no_dedup = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key=value config file (flags override it)");
    const std::vector<std::pair<const char*, const char*>> keyed{
        {"alpha", "weight of the frequency distance"},
        {"eps", "DBSCAN radius"},
        {"min-pts", "DBSCAN core threshold (self included)"},
        {"max-noise", "largest noise fraction accepted by --sweep"},
        {"opset", "comma-separated op names, or 'all'"},
        {"resolution", "toy-network input resolution"},
        {"channels", "toy-network cell width"},
        {"cells-per-stage", "toy-network cells per stage"},
        {"stages", "toy-network stage count"},
        {"classes", "toy-network classifier width"},
        {"batch", "samples per statistic batch"},
        {"regions-samples", "inputs used to count linear regions"},
        {"damping", "NASWOT v1 eigenvalue damping"},
        {"eig-tol", "relative eigenvalue floor for the NTK"},
        {"search-n", "architectures sampled per search run"},
        {"runs", "search repetitions"},
        {"seed", "base seed"},
        {"search-score", "v1 or v2"},
        {"baseline-bucket", "quantile bucket used for TF-Q and MAC-Q (0..4)"},
        {"dataset", "accuracy column to evaluate"},
        {"stats-file", "ingest statistics instead of computing them"},
        {"acc-file", "test-accuracy CSV"},
        {"artifacts-dir", "artifact directory"},
        {"threads", "worker threads"},
    };
    for (const auto& [key, help] : keyed) {
      cmd->add_option_function<std::string>(
          std::string("--") + key, [this, k = std::string(key)](const std::string& v) { values[k] = v; }, help);
    }
    cmd->add_flag("--sweep", sweep, "pick eps and min-pts from the default grid");
    cmd->add_flag("--on-the-fly", on_the_fly, "evaluate distances on demand instead of storing the matrix");
    cmd->add_flag("--no-dedup", no_dedup, "keep cells that coincide after dead-edge pruning");
  }

  cbred_status build(ConfigPtr& out) const {
    cbred_config* raw = nullptr;
    cbred_status st = cbred_config_create(&raw);
    if (st != CBRED_OK) return st;
    out.reset(raw);
    if (!config_file.empty() && (st = cbred_config_load(raw, config_file.c_str())) != CBRED_OK) return st;
    for (const auto& [k, v] : values) {
      if ((st = cbred_config_set(raw, k.c_str(), v.c_str())) != CBRED_OK) return st;
    }
    if (sweep && (st = cbred_config_set(raw, "sweep", "true")) != CBRED_OK) return st;
    if (on_the_fly && (st = cbred_config_set(raw, "on-the-fly", "true")) != CBRED_OK) return st;
    if (no_dedup && (st = cbred_config_set(raw, "dedup", "false")) != CBRED_OK) return st;
    return CBRED_OK;
  }
};

int run_stage_command(const std::string& stage, const StageOptions& opts) {
  ConfigPtr cfg;
  cbred_status st = opts.build(cfg);
  if (st != CBRED_OK) return report_failure(st);
  std::string summary;
  st = fetch_text([&](char* b, size_t c, size_t* n) { return cbred_run_stage(cfg.get(), stage.c_str(), b, c, n); },
                  summary);
  if (st != CBRED_OK) return report_failure(st);
  std::fputs(summary.c_str(), stdout);
  return 0;
}

int run_cell_command(const std::string& arg) {
  uint32_t id = 0;
  if (!arg.empty() && arg.front() == '|') {
    const cbred_status st = cbred_cell_parse(arg.c_str(), &id);
    if (st != CBRED_OK) return report_failure(st);
  } else {
    char* end = nullptr;
    const unsigned long v = std::strtoul(arg.c_str(), &end, 10);
    if (arg.empty() || *end != '\0' || v >= CBRED_SPACE_SIZE) {
      std::fprintf(stderr, "error: '%s' is neither a cell string nor an id below %d\n", arg.c_str(),
                   CBRED_SPACE_SIZE);
      return CBRED_INVALID_INPUT;
    }
    id = static_cast<uint32_t>(v);
  }
  std::string text;
  uint8_t ops[CBRED_NUM_EDGES];
  int32_t freq[CBRED_NUM_OPS], path[CBRED_NUM_OPS];
  uint64_t macs = 0;
  uint32_t canonical = 0;
  cbred_status st = fetch_text([&](char* b, size_t c, size_t* n) { return cbred_cell_render(id, b, c, n); }, text);
  if (st == CBRED_OK) st = cbred_cell_ops(id, ops);
  if (st == CBRED_OK) st = cbred_cell_features(id, freq, path);
  if (st == CBRED_OK) st = cbred_cell_macs(id, &macs);
  if (st == CBRED_OK) st = cbred_cell_canonical(id, &canonical);
  if (st != CBRED_OK) return report_failure(st);

  std::printf("arch_id:   %u\ncell:      %s\nops:      ", id, text.c_str());
  for (uint8_t op : ops) std::printf(" %u", op);
  std::printf("\nfreq:     ");
  for (int32_t f : freq) std::printf(" %d", f);
  std::printf("\npath:     ");
  for (int32_t p : path) std::printf(" %d", p);
  std::printf("\nmacs:      %llu\ncanonical: %u\n", static_cast<unsigned long long>(macs), canonical);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster-based reduction of a cell search space"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cbred_version()));

  const std::vector<std::pair<const char*, const char*>> stages{
      {"enumerate", "enumerate and deduplicate the cell space"},
      {"distances", "compute the pairwise distance matrix"},
      {"cluster", "run DBSCAN over the distance matrix"},
      {"stats", "compute or ingest training-free statistics"},
      {"select", "choose a cluster and build the baseline subsets"},
      {"evaluate", "repeated NASWOT search on every subset"},
      {"report", "format the evaluation"},
      {"pipeline", "run every stage in order"},
  };
  std::vector<std::unique_ptr<StageOptions>> options;
  std::string chosen;
  StageOptions* chosen_opts = nullptr;
  for (const auto& [name, help] : stages) {
    CLI::App* cmd = app.add_subcommand(name, help);
    options.push_back(std::make_unique<StageOptions>());
    options.back()->attach(cmd);
    cmd->callback([&chosen, &chosen_opts, n = std::string(name), o = options.back().get()] {
      chosen = n;
      chosen_opts = o;
    });
  }

  std::string cell_arg;
  CLI::App* cell = app.add_subcommand("cell", "describe one cell given as an id or a cell string");
  cell->add_option("cell", cell_arg, "arch id or |op~0|+...")->required();
  cell->callback([&chosen] { chosen = "cell"; });

  CLI11_PARSE(app, argc, argv);
  if (chosen == "cell") return run_cell_command(cell_arg);
  return run_stage_command(chosen, *chosen_opts);
}
