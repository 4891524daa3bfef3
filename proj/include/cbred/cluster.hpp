#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cbred/compgraph.hpp"
#include "cbred/searchspace.hpp"

namespace cbred {

enum class DistanceKind : std::uint8_t { kFreq, kPath, kCombined };

std::int32_t dist_freq(const FreqVector& a, const FreqVector& b) noexcept;
std::int32_t dist_path(const PathVector& a, const PathVector& b) noexcept;

// Per-measure maxima over a space, used to bring both distances to [0, 1].
struct Normalization {
  double freq_max = 0.0;
  double path_max = 0.0;
};

// Feature vectors of a space, index-aligned with ids.
struct FeatureSet {
  std::vector<ArchId> ids;
  std::vector<FreqVector> freq;
  std::vector<PathVector> path;

  static FeatureSet from_ids(std::span<const ArchId> ids);
  std::size_t size() const noexcept { return ids.size(); }
};

// Maximum pairwise distance per measure; zero when the measure is constant.
Normalization normalization_over(const FeatureSet& features);

// alpha * d_freq / freq_max + (1 - alpha) * d_path / path_max. Throws
// kDegenerateSpace when either maximum is zero.
double dist_combined(ArchId a, ArchId b, double alpha, const Normalization& norm);

// Combined distance evaluated from feature vectors on every query; the values
// are identical to the entries of a DistanceMatrix built with the same alpha.
// A measure that is constant over the space contributes zero.
class CombinedDistance {
 public:
  CombinedDistance(FeatureSet features, double alpha);

  std::size_t size() const noexcept { return features_.size(); }
  std::span<const ArchId> ids() const noexcept { return features_.ids; }
  double alpha() const noexcept { return alpha_; }
  const Normalization& normalization() const noexcept { return norm_; }
  float operator()(std::size_t i, std::size_t j) const noexcept;

 private:
  FeatureSet features_;
  double alpha_;
  Normalization norm_;
};

// Condensed upper-triangular pairwise matrix over a space.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(std::vector<ArchId> ids, std::vector<float> condensed, double alpha,
                 DistanceKind kind = DistanceKind::kCombined);

  std::size_t size() const noexcept { return ids_.size(); }
  std::span<const ArchId> ids() const noexcept { return ids_; }
  std::span<const float> condensed() const noexcept { return values_; }
  double alpha() const noexcept { return alpha_; }
  DistanceKind kind() const noexcept { return kind_; }

  float operator()(std::size_t i, std::size_t j) const noexcept {
    if (i == j) return 0.0f;
    if (i > j) std::swap(i, j);
    return values_[condensed_index(size(), i, j)];
  }

  static std::size_t condensed_index(std::size_t n, std::size_t i, std::size_t j) noexcept {
    return n * i - i * (i + 1) / 2 + (j - i - 1);
  }

  // Little-endian: "CBRD", u16 version, u32 n, f32 alpha, then n(n-1)/2 f32.
  void save(const std::filesystem::path& path) const;
  // ids supplies the space the file was computed over; its size must match n.
  static DistanceMatrix load(const std::filesystem::path& path, std::vector<ArchId> ids);

 private:
  std::vector<ArchId> ids_;
  std::vector<float> values_;
  double alpha_ = 0.5;
  DistanceKind kind_ = DistanceKind::kCombined;
};

inline constexpr std::uint16_t kDistanceFileVersion = 1;

// Output does not depend on the thread count.
DistanceMatrix compute_distance_matrix(std::span<const ArchId> space, double alpha,
                                       unsigned threads = 1);

struct DbscanParams {
  double eps = 0.08;
  std::size_t min_pts = 20;
};

struct Clustering {
  static constexpr std::int32_t kNoise = -1;

  std::vector<ArchId> ids;
  std::vector<std::int32_t> labels;  // index-aligned with ids
  std::int32_t k = 0;
  DbscanParams params;

  std::size_t noise_count() const noexcept;
  std::vector<std::size_t> cluster_sizes() const;
};

// Points are visited in ascending ArchId order whatever their position in the
// input, so border points go to the lowest-numbered cluster that reaches them
// and the result does not depend on input order. A point is core when at least
// min_pts points, itself included, lie within distance eps.
Clustering dbscan(const DistanceMatrix& dm, double eps, std::size_t min_pts);
Clustering dbscan(const CombinedDistance& dist, double eps, std::size_t min_pts);

struct SweepEntry {
  DbscanParams params;
  std::int32_t k = 0;
  double noise_fraction = 0.0;
};

struct SweepResult {
  bool found = false;
  SweepEntry best;
  std::vector<SweepEntry> grid;
};

// Picks the grid point with the most clusters subject to k >= 2 and noise
// fraction <= max_noise. Ties go to the earlier grid point.
SweepResult sweep_dbscan(const DistanceMatrix& dm, std::span<const double> eps_grid,
                         std::span<const std::size_t> min_pts_grid, double max_noise = 0.2);
SweepResult sweep_dbscan(const CombinedDistance& dist, std::span<const double> eps_grid,
                         std::span<const std::size_t> min_pts_grid, double max_noise = 0.2);

std::vector<double> default_eps_grid();
std::vector<std::size_t> default_min_pts_grid();

}  // namespace cbred
