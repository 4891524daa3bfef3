#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cbred/cluster.hpp"
#include "cbred/tfstats.hpp"

namespace cbred {

// Average ranks mapped to [0, 1], 1 for the best value. A single value or
// an all-tied column maps to 0.5.
std::vector<double> normalized_ranks(std::span<const double> values, bool higher_is_better);

// Mean of the four normalized ranks: ntk_cond lower-is-better, the other three
// higher-is-better. Index-aligned with records.
std::vector<double> aggregate_scores(std::span<const TfStatRecord> records);

struct ClusterScore {
  std::int32_t id = 0;
  std::size_t size = 0;
  double mean_aggregate = 0.0;
};

struct SelectorResult {
  std::vector<ClusterScore> clusters;  // ascending id
  std::int32_t chosen = -1;
};

// aggregates is index-aligned with clustering.ids. Highest mean member
// aggregate wins; ties go to the larger cluster, then the lower id. Noise is
// never a candidate. Throws kInsufficientClusters when k < 2.
SelectorResult select_cluster(const Clustering& clustering, std::span<const double> aggregates);

struct QuantilePartition {
  std::string statistic;
  std::size_t buckets = 5;
  std::vector<double> boundaries;     // lowest value of buckets 1..buckets-1
  std::vector<std::uint8_t> bucket;   // index-aligned with the input ids

  std::vector<std::size_t> bucket_sizes() const;
};

// Sorts by (value, ArchId) and cuts at equal-count boundaries: bucket b holds
// sorted positions [floor(b n / B), floor((b + 1) n / B)). Bucket B-1 holds the
// largest values.
QuantilePartition quantile_partition(std::span<const ArchId> ids, std::span<const double> values,
                                     std::size_t buckets = 5, std::string statistic = {});

// Members of one bucket in ascending ArchId order.
std::vector<ArchId> baseline_subset(const QuantilePartition& partition, std::span<const ArchId> ids,
                                    std::size_t bucket);

}  // namespace cbred
