#include "cbred/cbred.h"

#include <cstring>
#include <new>
#include <string>
#include <vector>

#include "cbred/cluster.hpp"
#include "cbred/compgraph.hpp"
#include "cbred/error.hpp"
#include "cbred/pipeline.hpp"
#include "cbred/searchspace.hpp"
#include "cbred/tfstats.hpp"

struct cbred_config {
  cbred::RunConfig cfg;
};

struct cbred_distance {
  cbred::DistanceMatrix dm;
};

namespace {

thread_local std::string g_last_error;
thread_local std::int64_t g_last_detail = -1;

cbred_status set_error(cbred_status status, std::string msg, std::int64_t detail = -1) {
  g_last_error = std::move(msg);
  g_last_detail = detail;
  return status;
}

// Runs fn, translating exceptions into status codes.
template <class Fn>
cbred_status guarded(Fn&& fn) noexcept {
  try {
    return fn();
  } catch (const cbred::Error& e) {
    return set_error(static_cast<cbred_status>(e.code()), e.what(), e.detail());
  } catch (const std::bad_alloc&) {
    return set_error(CBRED_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(CBRED_INTERNAL, e.what());
  } catch (...) {
    return set_error(CBRED_INTERNAL, "unknown exception");
  }
}

cbred_status null_arg(const char* name) {
  return set_error(CBRED_INVALID_INPUT, std::string("null argument: ") + name);
}

cbred_status copy_out(const std::string& text, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (buf && cap > 0) {
    const size_t n = std::min(cap - 1, text.size());
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
  }
  if (cap < text.size() + 1) {
    return set_error(CBRED_BUFFER_TOO_SMALL, "buffer of " + std::to_string(cap) + " bytes, need " +
                                                 std::to_string(text.size() + 1));
  }
  return CBRED_OK;
}

cbred::CellSpec cell_of(uint32_t id) { return cbred::decode(cbred::ArchId{id}); }

}  // namespace

extern "C" {

const char* cbred_status_name(cbred_status status) {
  switch (status) {
    case CBRED_OK: return "Ok";
    case CBRED_BUFFER_TOO_SMALL: return "BufferTooSmall";
    case CBRED_INTERNAL: return "Internal";
    default: break;
  }
  if (status >= CBRED_INVALID_INPUT && status <= CBRED_IO) {
    return cbred::error_code_name(static_cast<cbred::ErrorCode>(status)).data();
  }
  return "Unknown";
}

const char* cbred_last_error(void) { return g_last_error.c_str(); }

int64_t cbred_last_error_detail(void) { return g_last_detail; }

const char* cbred_version(void) { return "1.0.0"; }

cbred_status cbred_cell_parse(const char* text, uint32_t* out_id) {
  if (!text) return null_arg("text");
  if (!out_id) return null_arg("out_id");
  return guarded([&] {
    *out_id = cbred::encode(cbred::parse_cell(text)).value;
    return CBRED_OK;
  });
}

cbred_status cbred_cell_render(uint32_t id, char* buf, size_t cap, size_t* needed) {
  return guarded([&] { return copy_out(cbred::render(cell_of(id)), buf, cap, needed); });
}

cbred_status cbred_cell_ops(uint32_t id, uint8_t* ops) {
  if (!ops) return null_arg("ops");
  return guarded([&] {
    const auto cell = cell_of(id);
    for (size_t e = 0; e < cbred::kNumEdges; ++e) ops[e] = static_cast<uint8_t>(cell.ops[e]);
    return CBRED_OK;
  });
}

cbred_status cbred_cell_features(uint32_t id, int32_t* freq, int32_t* path) {
  return guarded([&] {
    const auto cell = cell_of(id);
    if (freq) {
      const auto f = cbred::freq_vector(cell);
      std::copy(f.counts.begin(), f.counts.end(), freq);
    }
    if (path) {
      const auto p = cbred::path_vector(cell);
      std::copy(p.counts.begin(), p.counts.end(), path);
    }
    return CBRED_OK;
  });
}

cbred_status cbred_cell_macs(uint32_t id, uint64_t* out_macs) {
  if (!out_macs) return null_arg("out_macs");
  return guarded([&] {
    *out_macs = cbred::mac_count(cell_of(id), cbred::MacroSkeleton{});
    return CBRED_OK;
  });
}

cbred_status cbred_cell_canonical(uint32_t id, uint32_t* out_id) {
  if (!out_id) return null_arg("out_id");
  return guarded([&] {
    *out_id = cbred::encode(cbred::prune_dead_edges(cell_of(id))).value;
    return CBRED_OK;
  });
}

cbred_status cbred_enumerate(const uint8_t* opset, size_t n_ops, int dedup, uint32_t* out_ids, size_t cap,
                             size_t* count) {
  if (!opset && n_ops > 0) return null_arg("opset");
  return guarded([&] {
    std::vector<cbred::OpKind> kinds;
    for (size_t i = 0; i < n_ops; ++i) {
      if (opset[i] >= cbred::kNumOps) {
        return set_error(CBRED_INVALID_INPUT, "op code " + std::to_string(opset[i]) + " out of range");
      }
      kinds.push_back(static_cast<cbred::OpKind>(opset[i]));
    }
    auto cells = cbred::enumerate_space(kinds);
    if (dedup) cells = cbred::deduplicate(cells);
    if (count) *count = cells.size();
    if (out_ids) {
      for (size_t i = 0; i < std::min(cap, cells.size()); ++i) out_ids[i] = cbred::encode(cells[i]).value;
    }
    if (cap < cells.size()) {
      return set_error(CBRED_BUFFER_TOO_SMALL, "id buffer holds " + std::to_string(cap) + " of " +
                                                   std::to_string(cells.size()));
    }
    return CBRED_OK;
  });
}

cbred_status cbred_config_create(cbred_config** out) {
  if (!out) return null_arg("out");
  return guarded([&] {
    *out = new cbred_config{};
    return CBRED_OK;
  });
}

void cbred_config_destroy(cbred_config* cfg) { delete cfg; }

cbred_status cbred_config_set(cbred_config* cfg, const char* key, const char* value) {
  if (!cfg) return null_arg("cfg");
  if (!key) return null_arg("key");
  if (!value) return null_arg("value");
  return guarded([&] {
    // Validate on a copy so a rejected value leaves the config untouched.
    cbred::RunConfig next = cfg->cfg;
    next.set(key, value);
    cfg->cfg = std::move(next);
    return CBRED_OK;
  });
}

cbred_status cbred_config_load(cbred_config* cfg, const char* path) {
  if (!cfg) return null_arg("cfg");
  if (!path) return null_arg("path");
  return guarded([&] {
    cbred::RunConfig next = cfg->cfg;
    next.load(path);
    cfg->cfg = std::move(next);
    return CBRED_OK;
  });
}

cbred_status cbred_config_hash(const cbred_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] { return copy_out(cfg->cfg.hash_hex(), buf, cap, needed); });
}

cbred_status cbred_config_serialize(const cbred_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] { return copy_out(cfg->cfg.serialize(), buf, cap, needed); });
}

cbred_status cbred_run_stage(const cbred_config* cfg, const char* stage, char* buf, size_t cap,
                             size_t* needed) {
  if (!cfg) return null_arg("cfg");
  if (!stage) return null_arg("stage");
  return guarded([&] {
    const std::string name = stage;
    const std::string summary = name == "pipeline"
                                    ? cbred::run_pipeline(cfg->cfg)
                                    : cbred::run_stage(cbred::stage_from_name(name), cfg->cfg);
    return copy_out(summary, buf, cap, needed);
  });
}

cbred_status cbred_distance_compute(const uint32_t* ids, size_t n, double alpha, unsigned threads,
                                    cbred_distance** out) {
  if (!ids && n > 0) return null_arg("ids");
  if (!out) return null_arg("out");
  return guarded([&] {
    std::vector<cbred::ArchId> space;
    for (size_t i = 0; i < n; ++i) {
      cbred::decode(cbred::ArchId{ids[i]});
      space.push_back(cbred::ArchId{ids[i]});
    }
    *out = new cbred_distance{cbred::compute_distance_matrix(space, alpha, threads)};
    return CBRED_OK;
  });
}

cbred_status cbred_distance_load(const char* path, const uint32_t* ids, size_t n, cbred_distance** out) {
  if (!path) return null_arg("path");
  if (!ids && n > 0) return null_arg("ids");
  if (!out) return null_arg("out");
  return guarded([&] {
    std::vector<cbred::ArchId> space;
    for (size_t i = 0; i < n; ++i) space.push_back(cbred::ArchId{ids[i]});
    *out = new cbred_distance{cbred::DistanceMatrix::load(path, std::move(space))};
    return CBRED_OK;
  });
}

cbred_status cbred_distance_save(const cbred_distance* dm, const char* path) {
  if (!dm) return null_arg("dm");
  if (!path) return null_arg("path");
  return guarded([&] {
    dm->dm.save(path);
    return CBRED_OK;
  });
}

size_t cbred_distance_size(const cbred_distance* dm) { return dm ? dm->dm.size() : 0; }

cbred_status cbred_distance_get(const cbred_distance* dm, size_t i, size_t j, float* out) {
  if (!dm) return null_arg("dm");
  if (!out) return null_arg("out");
  if (i >= dm->dm.size() || j >= dm->dm.size()) {
    return set_error(CBRED_INVALID_INPUT, "index out of range");
  }
  *out = dm->dm(i, j);
  return CBRED_OK;
}

void cbred_distance_destroy(cbred_distance* dm) { delete dm; }

cbred_status cbred_dbscan(const cbred_distance* dm, double eps, size_t min_pts, int32_t* labels,
                          int32_t* out_k) {
  if (!dm) return null_arg("dm");
  if (!labels) return null_arg("labels");
  return guarded([&] {
    const auto c = cbred::dbscan(dm->dm, eps, min_pts);
    std::copy(c.labels.begin(), c.labels.end(), labels);
    if (out_k) *out_k = c.k;
    return CBRED_OK;
  });
}

cbred_status cbred_compute_stats(const cbred_config* cfg, uint32_t id, cbred_stat_record* out) {
  if (!cfg) return null_arg("cfg");
  if (!out) return null_arg("out");
  return guarded([&] {
    const cbred::ComputedStatProvider provider(cfg->cfg.stats_config());
    const auto r = provider.get(cbred::ArchId{id});
    *out = {r.arch_id.value, r.ntk_cond, r.lin_regions, r.naswot_v1, r.naswot_v2};
    return CBRED_OK;
  });
}

}  // extern "C"
