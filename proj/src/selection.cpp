#include "cbred/selection.hpp"

#include <algorithm>
#include <numeric>

#include "cbred/error.hpp"

namespace cbred {

std::vector<double> normalized_ranks(std::span<const double> values, bool higher_is_better) {
  const std::size_t n = values.size();
  std::vector<double> out(n, 0.5);
  if (n < 2) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Worst first, so rank 0 is the worst value.
  auto worse = [&](std::size_t a, std::size_t b) {
    return higher_is_better ? values[a] < values[b] : values[a] > values[b];
  };
  std::stable_sort(order.begin(), order.end(), worse);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j - 1);
    for (std::size_t t = i; t < j; ++t) out[order[t]] = avg / static_cast<double>(n - 1);
    i = j;
  }
  return out;
}

std::vector<double> aggregate_scores(std::span<const TfStatRecord> records) {
  if (records.empty()) fail(ErrorCode::kInvalidInput, "statistics table is empty");
  const std::size_t n = records.size();
  std::vector<double> ntk(n), regions(n), v1(n), v2(n);
  for (std::size_t i = 0; i < n; ++i) {
    ntk[i] = records[i].ntk_cond;
    regions[i] = static_cast<double>(records[i].lin_regions);
    v1[i] = records[i].naswot_v1;
    v2[i] = records[i].naswot_v2;
  }
  const auto r_ntk = normalized_ranks(ntk, false);
  const auto r_regions = normalized_ranks(regions, true);
  const auto r_v1 = normalized_ranks(v1, true);
  const auto r_v2 = normalized_ranks(v2, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (r_ntk[i] + r_regions[i] + r_v1[i] + r_v2[i]) / 4.0;
  return out;
}

SelectorResult select_cluster(const Clustering& clustering, std::span<const double> aggregates) {
  if (aggregates.size() != clustering.labels.size()) {
    fail(ErrorCode::kInvalidInput, "aggregates do not cover the clustered space");
  }
  if (clustering.k < 2) {
    fail(ErrorCode::kInsufficientClusters,
         "need at least two clusters, got " + std::to_string(clustering.k));
  }
  SelectorResult result;
  std::vector<double> sums(static_cast<std::size_t>(clustering.k), 0.0);
  const auto sizes = clustering.cluster_sizes();
  for (std::size_t i = 0; i < aggregates.size(); ++i) {
    if (clustering.labels[i] != Clustering::kNoise) sums[clustering.labels[i]] += aggregates[i];
  }
  for (std::int32_t c = 0; c < clustering.k; ++c) {
    const std::size_t size = sizes[c];
    result.clusters.push_back({c, size, size ? sums[c] / static_cast<double>(size) : 0.0});
  }
  const ClusterScore* best = nullptr;
  for (const auto& cs : result.clusters) {
    if (cs.size == 0) continue;
    if (!best || cs.mean_aggregate > best->mean_aggregate ||
        (cs.mean_aggregate == best->mean_aggregate && cs.size > best->size)) {
      best = &cs;
    }
  }
  result.chosen = best ? best->id : -1;
  return result;
}

std::vector<std::size_t> QuantilePartition::bucket_sizes() const {
  std::vector<std::size_t> sizes(buckets, 0);
  for (auto b : bucket) ++sizes[b];
  return sizes;
}

QuantilePartition quantile_partition(std::span<const ArchId> ids, std::span<const double> values,
                                     std::size_t buckets, std::string statistic) {
  if (ids.size() != values.size()) fail(ErrorCode::kInvalidInput, "ids and values differ in length");
  if (buckets < 1 || values.size() < buckets) {
    fail(ErrorCode::kInvalidInput, "need at least as many values as buckets");
  }
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return ids[a] < ids[b];
  });
  QuantilePartition p;
  p.statistic = std::move(statistic);
  p.buckets = buckets;
  p.bucket.assign(n, 0);
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t lo = b * n / buckets;
    const std::size_t hi = (b + 1) * n / buckets;
    if (b > 0) p.boundaries.push_back(values[order[lo]]);
    for (std::size_t pos = lo; pos < hi; ++pos) p.bucket[order[pos]] = static_cast<std::uint8_t>(b);
  }
  return p;
}

std::vector<ArchId> baseline_subset(const QuantilePartition& partition, std::span<const ArchId> ids,
                                    std::size_t bucket) {
  if (ids.size() != partition.bucket.size()) {
    fail(ErrorCode::kInvalidInput, "partition does not match the id list");
  }
  if (bucket >= partition.buckets) fail(ErrorCode::kInvalidInput, "bucket index out of range");
  std::vector<ArchId> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (partition.bucket[i] == bucket) out.push_back(ids[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace cbred
