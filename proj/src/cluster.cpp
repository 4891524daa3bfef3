#include "cbred/cluster.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>

#include "cbred/error.hpp"
#include "parallel.hpp"

namespace cbred {

namespace {

std::int32_t l1(const OpCounts& a, const OpCounts& b) noexcept {
  std::int32_t d = 0;
  for (std::size_t k = 0; k < kNumOps; ++k) d += a[k] > b[k] ? a[k] - b[k] : b[k] - a[k];
  return d;
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    fail(ErrorCode::kInvalidInput, "alpha must lie in [0, 1]");
  }
}

// A measure whose maximum is zero is identically zero over the space and
// contributes nothing.
double combine(std::int32_t d_freq, std::int32_t d_path, double alpha, const Normalization& norm) {
  const double f = norm.freq_max > 0.0 ? d_freq / norm.freq_max : 0.0;
  const double p = norm.path_max > 0.0 ? d_path / norm.path_max : 0.0;
  return alpha * f + (1.0 - alpha) * p;
}

template <class Vec>
double max_pairwise(const std::vector<Vec>& vectors) {
  std::set<OpCounts> distinct;
  for (const auto& v : vectors) distinct.insert(v.counts);
  const std::vector<OpCounts> uniq(distinct.begin(), distinct.end());
  std::int32_t best = 0;
  for (std::size_t i = 0; i < uniq.size(); ++i) {
    for (std::size_t j = i + 1; j < uniq.size(); ++j) best = std::max(best, l1(uniq[i], uniq[j]));
  }
  return best;
}

void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 |
         std::uint32_t{b[3]} << 24;
}

template <class Dist>
Clustering run_dbscan(const Dist& dist, std::span<const ArchId> ids, double eps,
                      std::size_t min_pts) {
  if (!(eps > 0.0)) fail(ErrorCode::kInvalidInput, "eps must be positive");
  if (min_pts < 1) fail(ErrorCode::kInvalidInput, "min_pts must be at least 1");

  const std::size_t n = ids.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

  auto near = [&](std::size_t i, std::size_t j) {
    return static_cast<double>(dist(i, j)) <= eps;
  };

  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n && count < min_pts; ++j) count += near(i, j) ? 1 : 0;
    core[i] = count >= min_pts;
  }

  Clustering out;
  out.ids.assign(ids.begin(), ids.end());
  out.labels.assign(n, Clustering::kNoise);
  out.params = {eps, min_pts};
  std::deque<std::size_t> queue;
  for (std::size_t p : order) {
    if (!core[p] || out.labels[p] != Clustering::kNoise) continue;
    const std::int32_t c = out.k++;
    out.labels[p] = c;
    queue.push_back(p);
    while (!queue.empty()) {
      const std::size_t q = queue.front();
      queue.pop_front();
      for (std::size_t j : order) {
        if (out.labels[j] != Clustering::kNoise || !near(q, j)) continue;
        out.labels[j] = c;
        if (core[j]) queue.push_back(j);
      }
    }
  }
  return out;
}

}  // namespace

std::int32_t dist_freq(const FreqVector& a, const FreqVector& b) noexcept {
  return l1(a.counts, b.counts);
}

std::int32_t dist_path(const PathVector& a, const PathVector& b) noexcept {
  return l1(a.counts, b.counts);
}

FeatureSet FeatureSet::from_ids(std::span<const ArchId> ids) {
  FeatureSet fs;
  fs.ids.assign(ids.begin(), ids.end());
  fs.freq.reserve(ids.size());
  fs.path.reserve(ids.size());
  for (ArchId id : ids) {
    const CellSpec cell = decode(id);
    fs.freq.push_back(freq_vector(cell));
    fs.path.push_back(path_vector(cell));
  }
  return fs;
}

Normalization normalization_over(const FeatureSet& features) {
  return {max_pairwise(features.freq), max_pairwise(features.path)};
}

double dist_combined(ArchId a, ArchId b, double alpha, const Normalization& norm) {
  check_alpha(alpha);
  if (norm.freq_max <= 0.0 || norm.path_max <= 0.0) {
    fail(ErrorCode::kDegenerateSpace, "normalization constant is zero");
  }
  const CellSpec ca = decode(a);
  const CellSpec cb = decode(b);
  return combine(dist_freq(freq_vector(ca), freq_vector(cb)),
                 dist_path(path_vector(ca), path_vector(cb)), alpha, norm);
}

CombinedDistance::CombinedDistance(FeatureSet features, double alpha)
    : features_(std::move(features)), alpha_(alpha) {
  check_alpha(alpha);
  norm_ = normalization_over(features_);
}

float CombinedDistance::operator()(std::size_t i, std::size_t j) const noexcept {
  if (i == j) return 0.0f;
  return static_cast<float>(combine(dist_freq(features_.freq[i], features_.freq[j]),
                                    dist_path(features_.path[i], features_.path[j]), alpha_,
                                    norm_));
}

DistanceMatrix::DistanceMatrix(std::vector<ArchId> ids, std::vector<float> condensed,
                               double alpha, DistanceKind kind)
    : ids_(std::move(ids)), values_(std::move(condensed)), alpha_(alpha), kind_(kind) {
  const std::size_t n = ids_.size();
  if (values_.size() != n * (n - (n > 0 ? 1 : 0)) / 2) {
    fail(ErrorCode::kInvalidInput, "condensed array has the wrong length for n");
  }
  for (float v : values_) {
    if (!(v >= 0.0f)) fail(ErrorCode::kInvalidInput, "distances must be non-negative");
  }
}

void DistanceMatrix::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write("CBRD", 4);
  put_u16(out, kDistanceFileVersion);
  put_u32(out, static_cast<std::uint32_t>(size()));
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(alpha_)));
  std::vector<char> buf;
  buf.reserve(values_.size() * 4);
  for (float v : values_) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorCode::kIo, "short write to " + path.string());
}

DistanceMatrix DistanceMatrix::load(const std::filesystem::path& path, std::vector<ArchId> ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::array<unsigned char, 14> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (!in || std::memcmp(header.data(), "CBRD", 4) != 0) {
    fail(ErrorCode::kParseError, path.string() + ": not a distance matrix file", 0);
  }
  const std::uint16_t version = static_cast<std::uint16_t>(header[4] | header[5] << 8);
  if (version != kDistanceFileVersion) {
    fail(ErrorCode::kParseError, path.string() + ": unsupported version " + std::to_string(version), 0);
  }
  const std::uint32_t n = get_u32(header.data() + 6);
  const float alpha = std::bit_cast<float>(get_u32(header.data() + 10));
  if (n != ids.size()) {
    fail(ErrorCode::kInvalidInput, path.string() + ": holds " + std::to_string(n) +
                                       " points but the space has " + std::to_string(ids.size()));
  }
  const std::size_t count = std::size_t{n} * (n > 0 ? n - 1 : 0) / 2;
  std::vector<unsigned char> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) fail(ErrorCode::kParseError, path.string() + ": truncated payload", 0);
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<float>(get_u32(&raw[4 * i]));
  return DistanceMatrix(std::move(ids), std::move(values), alpha);
}

DistanceMatrix compute_distance_matrix(std::span<const ArchId> space, double alpha,
                                       unsigned threads) {
  if (space.size() < 2) fail(ErrorCode::kInvalidInput, "distance matrix needs at least two points");
  CombinedDistance dist(FeatureSet::from_ids(space), alpha);
  const std::size_t n = space.size();
  std::vector<float> values(n * (n - 1) / 2);
  detail::parallel_for(n - 1, threads, [&](std::size_t i) {
    float* row = values.data() + DistanceMatrix::condensed_index(n, i, i + 1);
    for (std::size_t j = i + 1; j < n; ++j) row[j - i - 1] = dist(i, j);
  });
  return DistanceMatrix({space.begin(), space.end()}, std::move(values), alpha);
}

std::size_t Clustering::noise_count() const noexcept {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
}

std::vector<std::size_t> Clustering::cluster_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (std::int32_t label : labels) {
    if (label != kNoise) ++sizes[static_cast<std::size_t>(label)];
  }
  return sizes;
}

Clustering dbscan(const DistanceMatrix& dm, double eps, std::size_t min_pts) {
  return run_dbscan(dm, dm.ids(), eps, min_pts);
}

Clustering dbscan(const CombinedDistance& dist, double eps, std::size_t min_pts) {
  return run_dbscan(dist, dist.ids(), eps, min_pts);
}

namespace {

template <class Dist>
SweepResult run_sweep(const Dist& dist, std::span<const double> eps_grid,
                      std::span<const std::size_t> min_pts_grid, double max_noise) {
  SweepResult result;
  for (double eps : eps_grid) {
    for (std::size_t min_pts : min_pts_grid) {
      const Clustering c = dbscan(dist, eps, min_pts);
      SweepEntry entry{{eps, min_pts}, c.k,
                       dist.size() ? static_cast<double>(c.noise_count()) / dist.size() : 0.0};
      result.grid.push_back(entry);
      if (entry.k >= 2 && entry.noise_fraction <= max_noise &&
          (!result.found || entry.k > result.best.k)) {
        result.best = entry;
        result.found = true;
      }
    }
  }
  return result;
}

}  // namespace

SweepResult sweep_dbscan(const DistanceMatrix& dm, std::span<const double> eps_grid,
                         std::span<const std::size_t> min_pts_grid, double max_noise) {
  return run_sweep(dm, eps_grid, min_pts_grid, max_noise);
}

SweepResult sweep_dbscan(const CombinedDistance& dist, std::span<const double> eps_grid,
                         std::span<const std::size_t> min_pts_grid, double max_noise) {
  return run_sweep(dist, eps_grid, min_pts_grid, max_noise);
}

std::vector<double> default_eps_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 15; ++i) grid.push_back(0.02 * i);
  return grid;
}

std::vector<std::size_t> default_min_pts_grid() { return {5, 10, 20, 40}; }

}  // namespace cbred
