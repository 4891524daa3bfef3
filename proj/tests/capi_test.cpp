// Uses nothing but the public C header and the shared library.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cbred/cbred.h"
#include "doctest.h"

namespace {

std::filesystem::path scratch(const char* tag) {
  auto p = std::filesystem::temp_directory_path() / (std::string("cbred-capi-") + tag + "-" + std::to_string(getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("status names and errors") {
  CHECK(std::strcmp(cbred_status_name(CBRED_OK), "Ok") == 0);
  CHECK(std::strcmp(cbred_status_name(CBRED_MISSING_ARTIFACT), "MissingArtifact") == 0);
  CHECK(std::strcmp(cbred_status_name(CBRED_BUFFER_TOO_SMALL), "BufferTooSmall") == 0);
  CHECK(std::strcmp(cbred_status_name(static_cast<cbred_status>(99)), "Unknown") == 0);
  CHECK(std::strlen(cbred_version()) > 0);

  uint32_t id = 0;
  CHECK(cbred_cell_parse("|what~0|", &id) == CBRED_INVALID_INPUT);
  CHECK(std::strlen(cbred_last_error()) > 0);
  CHECK(cbred_cell_parse(nullptr, &id) == CBRED_INVALID_INPUT);
  CHECK(cbred_cell_ops(CBRED_SPACE_SIZE, nullptr) == CBRED_INVALID_INPUT);
  uint8_t ops[CBRED_NUM_EDGES];
  CHECK(cbred_cell_ops(CBRED_SPACE_SIZE, ops) == CBRED_INVALID_INPUT);
}

TEST_CASE("cells") {
  const char* text = "|nor_conv_3x3~0|+|skip_connect~0|none~1|+|avg_pool_3x3~0|nor_conv_1x1~1|skip_connect~2|";
  uint32_t id = 0;
  REQUIRE(cbred_cell_parse(text, &id) == CBRED_OK);
  CHECK(id == 3 + 1 * 5 + 0 * 25 + 4 * 125 + 2 * 625 + 1 * 3125);

  size_t needed = 0;
  CHECK(cbred_cell_render(id, nullptr, 0, &needed) == CBRED_BUFFER_TOO_SMALL);
  CHECK(needed == std::strlen(text) + 1);
  char small[8];
  CHECK(cbred_cell_render(id, small, sizeof small, &needed) == CBRED_BUFFER_TOO_SMALL);
  CHECK(std::strlen(small) == 7);
  std::vector<char> buf(needed);
  REQUIRE(cbred_cell_render(id, buf.data(), buf.size(), nullptr) == CBRED_OK);
  CHECK(std::string(buf.data()) == text);

  uint8_t ops[CBRED_NUM_EDGES];
  REQUIRE(cbred_cell_ops(id, ops) == CBRED_OK);
  const uint8_t want_ops[CBRED_NUM_EDGES] = {3, 1, 0, 4, 2, 1};
  CHECK(std::memcmp(ops, want_ops, sizeof ops) == 0);

  int32_t freq[CBRED_NUM_OPS], path[CBRED_NUM_OPS];
  const uint32_t all_skip = 3906;
  REQUIRE(cbred_cell_features(all_skip, freq, path) == CBRED_OK);
  CHECK(freq[1] == 6);
  CHECK(path[1] == 8);
  uint64_t macs = 0;
  REQUIRE(cbred_cell_macs(all_skip, &macs) == CBRED_OK);
  CHECK(macs == 7788800u);
  uint32_t canon = 1;
  REQUIRE(cbred_cell_canonical(2 * 25, &canon) == CBRED_OK);  // conv1x1 on the dead 1->2 edge
  CHECK(canon == 0);
}

TEST_CASE("enumerate") {
  const uint8_t ops[] = {0, 1};
  size_t count = 0;
  CHECK(cbred_enumerate(ops, 2, 0, nullptr, 0, &count) == CBRED_BUFFER_TOO_SMALL);
  CHECK(count == 64);
  std::vector<uint32_t> ids(count);
  REQUIRE(cbred_enumerate(ops, 2, 0, ids.data(), ids.size(), &count) == CBRED_OK);
  CHECK(ids.front() == 0);
  CHECK(ids.back() == 3906);
  REQUIRE(cbred_enumerate(ops, 2, 1, ids.data(), ids.size(), &count) == CBRED_OK);
  CHECK(count == 34);
  CHECK(cbred_enumerate(ops, 0, 0, nullptr, 0, &count) == CBRED_INVALID_INPUT);
  const uint8_t bad[] = {7};
  CHECK(cbred_enumerate(bad, 1, 0, nullptr, 0, &count) == CBRED_INVALID_INPUT);
}

TEST_CASE("distances and dbscan") {
  const uint8_t ops[] = {0, 1};
  size_t count = 0;
  std::vector<uint32_t> ids(64);
  REQUIRE(cbred_enumerate(ops, 2, 0, ids.data(), ids.size(), &count) == CBRED_OK);
  cbred_distance* dm = nullptr;
  REQUIRE(cbred_distance_compute(ids.data(), ids.size(), 0.5, 2, &dm) == CBRED_OK);
  CHECK(cbred_distance_size(dm) == 64);
  float d = -1;
  REQUIRE(cbred_distance_get(dm, 0, 63, &d) == CBRED_OK);
  CHECK(d == 1.0f);  // all-none vs all-skip: both measures at their maximum
  CHECK(cbred_distance_get(dm, 5, 5, &d) == CBRED_OK);
  CHECK(d == 0.0f);
  CHECK(cbred_distance_get(dm, 64, 0, &d) == CBRED_INVALID_INPUT);

  const auto dir = scratch("dm");
  const std::string file = (dir / "d.bin").string();
  REQUIRE(cbred_distance_save(dm, file.c_str()) == CBRED_OK);
  cbred_distance* back = nullptr;
  REQUIRE(cbred_distance_load(file.c_str(), ids.data(), ids.size(), &back) == CBRED_OK);
  for (size_t i = 0; i < 64; i += 7) {
    float a = 0, b = 0;
    cbred_distance_get(dm, i, 63 - i, &a);
    cbred_distance_get(back, i, 63 - i, &b);
    CHECK(a == b);
  }
  CHECK(cbred_distance_load(file.c_str(), ids.data(), 10, &back) == CBRED_INVALID_INPUT);

  std::vector<int32_t> labels(64);
  int32_t k = -1;
  REQUIRE(cbred_dbscan(dm, 0.08, 5, labels.data(), &k) == CBRED_OK);
  CHECK(k == 4);
  CHECK(cbred_dbscan(dm, -1.0, 5, labels.data(), &k) == CBRED_INVALID_INPUT);
  cbred_distance_destroy(back);
  cbred_distance_destroy(dm);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config and stages") {
  cbred_config* cfg = nullptr;
  REQUIRE(cbred_config_create(&cfg) == CBRED_OK);
  size_t needed = 0;
  char hash[17];
  REQUIRE(cbred_config_hash(cfg, hash, sizeof hash, &needed) == CBRED_OK);
  CHECK(std::strlen(hash) == 16);
  const std::string before = hash;
  CHECK(cbred_config_set(cfg, "eps", "oops") == CBRED_INVALID_INPUT);
  CHECK(cbred_config_set(cfg, "no-such-key", "1") == CBRED_INVALID_INPUT);
  REQUIRE(cbred_config_hash(cfg, hash, sizeof hash, &needed) == CBRED_OK);
  CHECK(before == hash);  // rejected values leave the config alone

  const auto dir = scratch("stages");
  REQUIRE(cbred_config_set(cfg, "artifacts-dir", dir.string().c_str()) == CBRED_OK);
  REQUIRE(cbred_config_set(cfg, "opset", "none,skip") == CBRED_OK);
  REQUIRE(cbred_config_set(cfg, "dedup", "false") == CBRED_OK);
  REQUIRE(cbred_config_set(cfg, "sweep", "true") == CBRED_OK);

  CHECK(cbred_run_stage(cfg, "cluster", nullptr, 0, &needed) == CBRED_MISSING_ARTIFACT);
  CHECK(std::string(cbred_last_error()).find("cells.txt") != std::string::npos);
  CHECK(cbred_run_stage(cfg, "train", nullptr, 0, &needed) == CBRED_INVALID_INPUT);

  char summary[4096];
  REQUIRE(cbred_run_stage(cfg, "enumerate", summary, sizeof summary, &needed) == CBRED_OK);
  CHECK(std::string(summary).find("64") != std::string::npos);
  REQUIRE(cbred_run_stage(cfg, "distances", summary, sizeof summary, &needed) == CBRED_OK);
  REQUIRE(cbred_run_stage(cfg, "cluster", summary, sizeof summary, &needed) == CBRED_OK);
  CHECK(std::filesystem::exists(dir / "clustering.csv"));

  REQUIRE(cbred_config_serialize(cfg, nullptr, 0, &needed) == CBRED_BUFFER_TOO_SMALL);
  std::vector<char> text(needed);
  REQUIRE(cbred_config_serialize(cfg, text.data(), text.size(), nullptr) == CBRED_OK);
  CHECK(std::string(text.data()).find("opset=none,skip\n") != std::string::npos);

  {
    std::ofstream f(dir / "run.cfg");
    f << "alpha=0.25\nbroken\n";
  }
  CHECK(cbred_config_load(cfg, (dir / "run.cfg").string().c_str()) == CBRED_PARSE_ERROR);
  CHECK(cbred_last_error_detail() == 2);

  cbred_stat_record rec{};
  REQUIRE(cbred_config_set(cfg, "resolution", "8") == CBRED_OK);
  REQUIRE(cbred_config_set(cfg, "batch", "8") == CBRED_OK);
  REQUIRE(cbred_config_set(cfg, "regions-samples", "20") == CBRED_OK);
  REQUIRE(cbred_compute_stats(cfg, 11718, &rec) == CBRED_OK);
  CHECK(rec.arch_id == 11718);
  CHECK(rec.ntk_cond >= 1.0);
  CHECK(rec.lin_regions >= 1);
  CHECK(std::isfinite(rec.naswot_v2));
  REQUIRE(cbred_compute_stats(cfg, 0, &rec) == CBRED_OK);
  CHECK(std::isinf(rec.ntk_cond));

  cbred_config_destroy(cfg);
  std::filesystem::remove_all(dir);
}
