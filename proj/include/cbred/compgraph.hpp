#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "cbred/searchspace.hpp"

namespace cbred {

struct KernelNode {
  int id = 0;
  OpKind op = OpKind::kNone;
  int edge = 0;  // index into kCellEdges
};

// Program form of a cell: memory nodes hold tensors, kernel nodes read one
// memory node and write another.
struct CompGraph {
  std::vector<int> memory_nodes;
  std::vector<KernelNode> kernel_nodes;
  std::vector<std::pair<int, int>> reads;   // (memory, kernel)
  std::vector<std::pair<int, int>> writes;  // (kernel, memory)

  int source() const noexcept { return 0; }
  int sink() const noexcept { return static_cast<int>(kNumCellNodes) - 1; }
};

using OpCounts = std::array<std::int32_t, kNumOps>;

// Number of edges carrying each kind, NONE included. Sums to 6.
struct FreqVector {
  OpCounts counts{};
  friend bool operator==(const FreqVector&, const FreqVector&) = default;
};

// Per kind, the number of (live input->output path, edge) incidences.
struct PathVector {
  OpCounts counts{};
  friend bool operator==(const PathVector&, const PathVector&) = default;
};

CompGraph build_graph(const CellSpec& cell);

FreqVector freq_vector(const CellSpec& cell) noexcept;

// Direct computation over the four node paths of the fixed cell DAG.
PathVector path_vector(const CellSpec& cell) noexcept;

// Same quantity by depth-first enumeration of source->sink paths in a graph.
PathVector path_vector(const CompGraph& graph);

}  // namespace cbred
