#include "cbred/searchspace.hpp"

#include <algorithm>

#include "cbred/error.hpp"

namespace cbred {

namespace {

constexpr std::array<std::string_view, kNumOps> kOpNames{
    "none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"};

int edge_index(int src, int dst) {
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    if (kCellEdges[e].src == src && kCellEdges[e].dst == dst) return static_cast<int>(e);
  }
  fail(ErrorCode::kInvalidInput,
       "no cell edge " + std::to_string(src) + "->" + std::to_string(dst));
}

}  // namespace

std::string_view op_name(OpKind op) noexcept { return kOpNames[static_cast<std::size_t>(op)]; }

OpKind op_from_name(std::string_view name) {
  for (std::size_t k = 0; k < kNumOps; ++k) {
    if (kOpNames[k] == name) return static_cast<OpKind>(k);
  }
  fail(ErrorCode::kInvalidInput, "unknown operation '" + std::string(name) + "'");
}

OpKind CellSpec::op(int src, int dst) const { return ops[edge_index(src, dst)]; }

ArchId encode(const CellSpec& cell) noexcept {
  std::uint32_t value = 0;
  for (std::size_t e = kNumEdges; e-- > 0;) value = value * kNumOps + op_code(cell.ops[e]);
  return ArchId{value};
}

CellSpec decode(ArchId id) {
  if (id.value >= kSpaceSize) {
    fail(ErrorCode::kInvalidInput, "arch id " + std::to_string(id.value) + " out of range");
  }
  CellSpec cell;
  std::uint32_t rest = id.value;
  for (auto& op : cell.ops) {
    op = static_cast<OpKind>(rest % kNumOps);
    rest /= kNumOps;
  }
  return cell;
}

std::string render(const CellSpec& cell) {
  std::string out;
  for (int dst = 1; dst < static_cast<int>(kNumCellNodes); ++dst) {
    if (dst > 1) out += '+';
    out += '|';
    for (int src = 0; src < dst; ++src) {
      out += op_name(cell.op(src, dst));
      out += '~';
      out += static_cast<char>('0' + src);
      out += '|';
    }
  }
  return out;
}

CellSpec parse_cell(std::string_view text) {
  auto bad = [&](const std::string& why) -> CellSpec {
    fail(ErrorCode::kInvalidInput, "malformed cell '" + std::string(text) + "': " + why);
  };
  CellSpec cell;
  std::size_t pos = 0;
  for (int dst = 1; dst < static_cast<int>(kNumCellNodes); ++dst) {
    if (dst > 1) {
      if (pos >= text.size() || text[pos] != '+') return bad("expected '+'");
      ++pos;
    }
    if (pos >= text.size() || text[pos] != '|') return bad("expected '|'");
    ++pos;
    for (int src = 0; src < dst; ++src) {
      const auto bar = text.find('|', pos);
      if (bar == std::string_view::npos) return bad("unterminated token");
      const auto token = text.substr(pos, bar - pos);
      const auto tilde = token.rfind('~');
      if (tilde == std::string_view::npos || tilde + 2 != token.size() ||
          token[tilde + 1] != static_cast<char>('0' + src)) {
        return bad("expected '~" + std::to_string(src) + "'");
      }
      cell.ops[edge_index(src, dst)] = op_from_name(token.substr(0, tilde));
      pos = bar + 1;
    }
  }
  if (pos != text.size()) return bad("trailing characters");
  return cell;
}

std::vector<CellSpec> enumerate_space(std::span<const OpKind> opset) {
  std::array<bool, kNumOps> allowed{};
  for (OpKind op : opset) allowed[static_cast<std::size_t>(op)] = true;
  if (std::none_of(allowed.begin(), allowed.end(), [](bool b) { return b; })) {
    fail(ErrorCode::kInvalidInput, "operation set is empty");
  }
  std::vector<CellSpec> cells;
  for (std::uint32_t id = 0; id < kSpaceSize; ++id) {
    CellSpec cell = decode(ArchId{id});
    if (std::all_of(cell.ops.begin(), cell.ops.end(),
                    [&](OpKind op) { return allowed[static_cast<std::size_t>(op)]; })) {
      cells.push_back(cell);
    }
  }
  return cells;
}

CellSpec prune_dead_edges(const CellSpec& cell) noexcept {
  CellSpec out = cell;
  std::array<bool, kNumCellNodes> live{true, false, false, false};
  // kCellEdges is sorted by destination, so a node's liveness is final before
  // any of its outgoing edges is visited.
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    const auto [src, dst] = kCellEdges[e];
    if (!live[src]) out.ops[e] = OpKind::kNone;
    if (out.ops[e] != OpKind::kNone) live[dst] = true;
  }
  return out;
}

std::vector<CellSpec> deduplicate(std::span<const CellSpec> cells) {
  // canonical id -> lowest member id
  std::vector<std::pair<std::uint32_t, std::uint32_t>> keyed;
  keyed.reserve(cells.size());
  for (const auto& cell : cells) {
    keyed.emplace_back(encode(prune_dead_edges(cell)).value, encode(cell).value);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<CellSpec> out;
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    if (i == 0 || keyed[i].first != keyed[i - 1].first) out.push_back(decode(ArchId{keyed[i].second}));
  }
  std::sort(out.begin(), out.end(),
            [](const CellSpec& a, const CellSpec& b) { return encode(a) < encode(b); });
  return out;
}

void MacroSkeleton::validate() const {
  if (stage_channels.empty() || cells_per_stage == 0 || input_channels == 0 ||
      num_classes == 0 || stem_channels == 0) {
    fail(ErrorCode::kInvalidInput, "macro skeleton counts must be positive");
  }
  if (stem_channels != stage_channels.front()) {
    fail(ErrorCode::kInvalidInput, "stem channels must equal the first stage's channels");
  }
  for (std::size_t s = 1; s < stage_channels.size(); ++s) {
    if (stage_channels[s] <= stage_channels[s - 1]) {
      fail(ErrorCode::kInvalidInput, "stage channels must be strictly increasing");
    }
  }
  std::uint64_t res = input_resolution;
  for (std::size_t s = 1; s < stage_channels.size(); ++s) {
    if (res < 2 || res % 2 != 0) {
      fail(ErrorCode::kInvalidInput, "resolution cannot be halved at every stage transition");
    }
    res /= 2;
  }
}

std::uint64_t edge_macs(OpKind op, std::uint64_t channels, std::uint64_t height,
                        std::uint64_t width) noexcept {
  std::uint64_t k = 0;
  if (op == OpKind::kConv1x1) k = 1;
  if (op == OpKind::kConv3x3) k = 3;
  return k * k * channels * channels * height * width;
}

std::uint64_t skeleton_macs(const MacroSkeleton& skel) {
  skel.validate();
  std::uint64_t res = skel.input_resolution;
  std::uint64_t total = 9 * skel.input_channels * skel.stem_channels * res * res;
  for (std::size_t s = 1; s < skel.stage_channels.size(); ++s) {
    const std::uint64_t cin = skel.stage_channels[s - 1];
    const std::uint64_t cout = skel.stage_channels[s];
    res /= 2;
    const std::uint64_t area = res * res;
    total += 9 * cin * cout * area;   // 3x3 stride-2
    total += 9 * cout * cout * area;  // 3x3
    total += cin * cout * area;       // 1x1 shortcut after 2x2 pooling
  }
  total += skel.stage_channels.back() * skel.num_classes;
  return total;
}

std::uint64_t mac_count(const CellSpec& cell, const MacroSkeleton& skel) {
  std::uint64_t total = skeleton_macs(skel);
  std::uint64_t res = skel.input_resolution;
  for (std::size_t s = 0; s < skel.stage_channels.size(); ++s) {
    if (s > 0) res /= 2;
    std::uint64_t per_cell = 0;
    for (OpKind op : cell.ops) per_cell += edge_macs(op, skel.stage_channels[s], res, res);
    total += per_cell * skel.cells_per_stage;
  }
  return total;
}

}  // namespace cbred
