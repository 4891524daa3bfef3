#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cbred {

// Kernel labels of a cell edge. The integer values are the serialization codes.
enum class OpKind : std::uint8_t {
  kNone = 0,
  kSkip = 1,
  kConv1x1 = 2,
  kConv3x3 = 3,
  kAvgPool3x3 = 4,
};

inline constexpr std::size_t kNumOps = 5;
inline constexpr std::size_t kNumEdges = 6;
inline constexpr std::size_t kNumCellNodes = 4;
inline constexpr std::uint32_t kSpaceSize = 15625;  // 5^6

inline constexpr std::array<OpKind, kNumOps> kAllOps{
    OpKind::kNone, OpKind::kSkip, OpKind::kConv1x1, OpKind::kConv3x3, OpKind::kAvgPool3x3};

struct CellEdge {
  int src;
  int dst;
};

// Fixed edge order of the cell DAG; node 0 is the cell input, node 3 the output.
inline constexpr std::array<CellEdge, kNumEdges> kCellEdges{
    {{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};

constexpr int op_code(OpKind op) noexcept { return static_cast<int>(op); }

std::string_view op_name(OpKind op) noexcept;
// Throws kInvalidInput for unknown names.
OpKind op_from_name(std::string_view name);

// Position of a cell in the full space: sum over edges of op_code(ops[e]) * 5^e.
struct ArchId {
  std::uint32_t value = 0;

  friend constexpr auto operator<=>(ArchId, ArchId) = default;
};

struct CellSpec {
  std::array<OpKind, kNumEdges> ops{};

  friend constexpr bool operator==(const CellSpec&, const CellSpec&) = default;

  OpKind op(int src, int dst) const;
};

ArchId encode(const CellSpec& cell) noexcept;
// Throws kInvalidInput when id >= kSpaceSize.
CellSpec decode(ArchId id);

// "|op~0|+|op~0|op~1|+|op~0|op~1|op~2|"
std::string render(const CellSpec& cell);
// Accepts exactly the rendered form; throws kInvalidInput otherwise.
CellSpec parse_cell(std::string_view text);

// All |opset|^6 cells over the given kinds in ascending ArchId order.
std::vector<CellSpec> enumerate_space(std::span<const OpKind> opset);

// Rewrites every edge leaving an intermediate node without live incoming
// computation to kNone. The result never has a larger ArchId than the input.
CellSpec prune_dead_edges(const CellSpec& cell) noexcept;

// Merges cells that coincide after prune_dead_edges, keeping the lowest ArchId
// of each class. Output is sorted by ArchId.
std::vector<CellSpec> deduplicate(std::span<const CellSpec> cells);

struct MacroSkeleton {
  std::uint64_t input_channels = 3;
  std::uint64_t stem_channels = 16;
  std::uint64_t cells_per_stage = 5;
  std::vector<std::uint64_t> stage_channels{16, 32, 64};
  std::uint64_t input_resolution = 32;
  std::uint64_t num_classes = 100;

  // Throws kInvalidInput when channels are not strictly increasing or the
  // resolution cannot be halved at every stage transition.
  void validate() const;
};

// Multiply-accumulates of one edge operation at the given width and spatial size.
std::uint64_t edge_macs(OpKind op, std::uint64_t channels, std::uint64_t height,
                        std::uint64_t width) noexcept;

// MACs contributed by everything but the cells: stem, stage-transition
// residual blocks and the classifier.
std::uint64_t skeleton_macs(const MacroSkeleton& skel);

std::uint64_t mac_count(const CellSpec& cell, const MacroSkeleton& skel);

}  // namespace cbred
