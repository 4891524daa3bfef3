#include "cbred/compgraph.hpp"

#include <functional>

namespace cbred {

namespace {

// Edge indices along 0->3, 0->1->3, 0->2->3 and 0->1->2->3.
const std::vector<std::vector<int>> kCellPaths{{3}, {0, 4}, {1, 5}, {0, 2, 5}};

}  // namespace

CompGraph build_graph(const CellSpec& cell) {
  CompGraph g;
  for (std::size_t m = 0; m < kNumCellNodes; ++m) g.memory_nodes.push_back(static_cast<int>(m));
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    if (cell.ops[e] == OpKind::kNone) continue;
    const int id = static_cast<int>(g.kernel_nodes.size());
    g.kernel_nodes.push_back({id, cell.ops[e], static_cast<int>(e)});
    g.reads.emplace_back(kCellEdges[e].src, id);
    g.writes.emplace_back(id, kCellEdges[e].dst);
  }
  return g;
}

FreqVector freq_vector(const CellSpec& cell) noexcept {
  FreqVector v;
  for (OpKind op : cell.ops) ++v.counts[op_code(op)];
  return v;
}

PathVector path_vector(const CellSpec& cell) noexcept {
  PathVector v;
  for (const auto& path : kCellPaths) {
    bool live = true;
    for (int e : path) live = live && cell.ops[e] != OpKind::kNone;
    if (!live) continue;
    for (int e : path) ++v.counts[op_code(cell.ops[e])];
  }
  return v;
}

PathVector path_vector(const CompGraph& graph) {
  PathVector v;
  std::vector<OpKind> stack;
  std::function<void(int)> walk = [&](int memory) {
    if (memory == graph.sink()) {
      for (OpKind op : stack) ++v.counts[op_code(op)];
      return;
    }
    for (const auto& [src, kernel] : graph.reads) {
      if (src != memory) continue;
      stack.push_back(graph.kernel_nodes[kernel].op);
      for (const auto& [k, dst] : graph.writes) {
        if (k == kernel) walk(dst);
      }
      stack.pop_back();
    }
  };
  walk(graph.source());
  return v;
}

}  // namespace cbred
