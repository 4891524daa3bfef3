#include "cbred/netengine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "cbred/error.hpp"
#include "cbred/random.hpp"

namespace cbred {

namespace {

constexpr double kBatchNormEps = 1e-5;

// Output positions o in [lo, hi) whose input coordinate o*stride - pad + k
// falls inside [0, size).
std::pair<int, int> valid_range(int out_size, int in_size, int stride, int pad, int k) {
  int lo = 0;
  while (lo < out_size && lo * stride - pad + k < 0) ++lo;
  int hi = out_size;
  while (hi > lo && (hi - 1) * stride - pad + k >= in_size) --hi;
  return {lo, hi};
}

}  // namespace

struct Network::Tape {
  std::vector<Tensor> out;
  std::vector<std::vector<double>> inv_std;  // batch-norm nodes only
};

void ToyNetConfig::validate() const {
  if (input_channels < 1 || cell_channels < 1 || cells_per_stage < 1 || stages < 1 ||
      num_classes < 1) {
    fail(ErrorCode::kInvalidInput, "toy network counts must be at least 1");
  }
  if (input_resolution < 4) fail(ErrorCode::kInvalidInput, "toy network resolution must be >= 4");
  int res = input_resolution;
  for (int s = 1; s < stages; ++s) res = (res - 1) / 2 + 1;
  if (res < 1) fail(ErrorCode::kInvalidInput, "too many stages for the input resolution");
}

std::size_t hamming(const BitCode& a, const BitCode& b) {
  if (a.bits != b.bits) fail(ErrorCode::kInvalidInput, "codes differ in length");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.words.size(); ++i) d += std::popcount(a.words[i] ^ b.words[i]);
  return d;
}

Tensor gaussian_batch(const ToyNetConfig& cfg, int n, std::uint64_t seed, std::uint32_t stream) {
  Tensor t(n, cfg.input_channels, cfg.input_resolution, cfg.input_resolution);
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = counter_normal(seed, stream, i);
  return t;
}

int Network::add(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

int Network::add_conv(int input, int out_c, int kernel, int stride, std::uint32_t slot) {
  const Node& in = nodes_[input];
  Node conv{NodeKind::kConv, {input}, out_c, 0, 0, kernel, stride, kernel / 2};
  conv.h = (in.h + 2 * conv.pad - kernel) / stride + 1;
  conv.w = (in.w + 2 * conv.pad - kernel) / stride + 1;
  conv.param_offset = params_.size();
  const std::size_t fan_in = static_cast<std::size_t>(in.c) * kernel * kernel;
  conv.param_count = static_cast<std::size_t>(out_c) * fan_in;
  const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t e = 0; e < conv.param_count; ++e) {
    params_.push_back(scale * counter_normal(cfg_.seed, slot, e));
  }
  const int h = conv.h, w = conv.w;
  const int c = add(std::move(conv));
  const int bn = add({NodeKind::kBatchNorm, {c}, out_c, h, w});
  relu_units_ += static_cast<std::size_t>(out_c) * h * w;
  return add({NodeKind::kRelu, {bn}, out_c, h, w});
}

Network Network::instantiate(const CellSpec& cell, const ToyNetConfig& cfg) {
  cfg.validate();
  Network net;
  net.cell_ = cell;
  net.cfg_ = cfg;

  // RNG slots are structural so a layer keeps its weights whatever the other
  // edges hold.
  const auto total_cells = static_cast<std::uint32_t>(cfg.stages * cfg.cells_per_stage);
  const std::uint32_t first_transition_slot = 1 + total_cells * kNumEdges;
  const std::uint32_t classifier_slot = first_transition_slot + cfg.stages - 1;

  int x = net.add({NodeKind::kInput, {}, cfg.input_channels, cfg.input_resolution, cfg.input_resolution});
  int width = cfg.cell_channels;
  x = net.add_conv(x, width, 3, 1, 0);

  std::uint32_t cell_index = 0;
  for (int s = 0; s < cfg.stages; ++s) {
    if (s > 0) {
      width *= 2;
      x = net.add_conv(x, width, 3, 2, first_transition_slot + s - 1);
    }
    for (int r = 0; r < cfg.cells_per_stage; ++r, ++cell_index) {
      std::array<int, kNumCellNodes> node{x, -1, -1, -1};
      const int h = net.nodes_[x].h, w = net.nodes_[x].w;
      for (int dst = 1; dst < static_cast<int>(kNumCellNodes); ++dst) {
        std::vector<int> terms;
        for (std::size_t e = 0; e < kNumEdges; ++e) {
          if (kCellEdges[e].dst != dst) continue;
          const int src = node[kCellEdges[e].src];
          const auto slot = static_cast<std::uint32_t>(1 + cell_index * kNumEdges + e);
          switch (cell.ops[e]) {
            case OpKind::kNone: break;
            case OpKind::kSkip: terms.push_back(src); break;
            case OpKind::kConv1x1: terms.push_back(net.add_conv(src, width, 1, 1, slot)); break;
            case OpKind::kConv3x3: terms.push_back(net.add_conv(src, width, 3, 1, slot)); break;
            case OpKind::kAvgPool3x3:
              terms.push_back(net.add({NodeKind::kAvgPool, {src}, width, h, w, 3, 1, 1}));
              break;
          }
        }
        node[dst] = net.add({NodeKind::kSum, std::move(terms), width, h, w});
      }
      x = node[3];
    }
  }

  x = net.add({NodeKind::kGlobalPool, {x}, width, 1, 1});
  Node fc{NodeKind::kLinear, {x}, cfg.num_classes, 1, 1};
  fc.param_offset = net.params_.size();
  fc.param_count = static_cast<std::size_t>(cfg.num_classes) * width;
  const double scale = std::sqrt(2.0 / width);
  for (std::size_t e = 0; e < fc.param_count; ++e) {
    net.params_.push_back(scale * counter_normal(cfg.seed, classifier_slot, e));
  }
  net.add(std::move(fc));
  return net;
}

Network Network::with_parameters(std::vector<double> params) const {
  if (params.size() != params_.size()) {
    fail(ErrorCode::kInvalidInput, "parameter vector has the wrong length");
  }
  Network copy = *this;
  copy.params_ = std::move(params);
  return copy;
}

void Network::check_batch(const Tensor& batch) const {
  if (batch.n < 1 || batch.c != cfg_.input_channels || batch.h != cfg_.input_resolution ||
      batch.w != cfg_.input_resolution ||
      batch.data.size() != static_cast<std::size_t>(batch.n) * batch.sample_size()) {
    fail(ErrorCode::kInvalidInput, "batch shape does not match the network configuration");
  }
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

// One sample's receptive fields: row (ci, ky, kx), column output position.
void im2col(const double* x, int c, int h, int w, const Network::Node& node, double* col) {
  const int k = node.kernel;
  const std::size_t positions = static_cast<std::size_t>(node.h) * node.w;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      const auto [ylo, yhi] = valid_range(node.h, h, node.stride, node.pad, ky);
      for (int kx = 0; kx < k; ++kx) {
        const auto [xlo, xhi] = valid_range(node.w, w, node.stride, node.pad, kx);
        double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * positions;
        std::fill(row, row + positions, 0.0);
        for (int oy = ylo; oy < yhi; ++oy) {
          const double* src = x + (static_cast<std::size_t>(ci) * h + oy * node.stride - node.pad + ky) * w;
          double* dst = row + oy * node.w;
          for (int ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * node.stride - node.pad + kx];
        }
      }
    }
  }
}

// Adjoint of im2col, accumulating into dx.
void col2im(const double* col, int c, int h, int w, const Network::Node& node, double* dx) {
  const int k = node.kernel;
  const std::size_t positions = static_cast<std::size_t>(node.h) * node.w;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      const auto [ylo, yhi] = valid_range(node.h, h, node.stride, node.pad, ky);
      for (int kx = 0; kx < k; ++kx) {
        const auto [xlo, xhi] = valid_range(node.w, w, node.stride, node.pad, kx);
        const double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * positions;
        for (int oy = ylo; oy < yhi; ++oy) {
          double* dst = dx + (static_cast<std::size_t>(ci) * h + oy * node.stride - node.pad + ky) * w;
          const double* src = row + oy * node.w;
          for (int ox = xlo; ox < xhi; ++ox) dst[ox * node.stride - node.pad + kx] += src[ox];
        }
      }
    }
  }
}

// Stride-1 convolution over a chunk of samples laid out channel-major on a
// zero-bordered grid: each of the k*k taps becomes one GEMM against a shifted
// view of the same buffer, so no im2col expansion is needed. Output grid
// entries outside the valid h x w window are junk and are never read back.
class ShiftedConv {
 public:
  using StridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
  using StridedMutMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

  ShiftedConv(const Network::Node& node, int in_c, const double* weight)
      : k_(node.kernel), pad_(node.pad), h_(node.h), w_(node.w), in_c_(in_c), out_c_(node.c),
        pw_(node.w + 2 * node.pad), plane_(static_cast<std::size_t>(node.h + 2 * node.pad) * pw_),
        slack_(static_cast<std::size_t>(k_ - 1) * pw_ + (k_ - 1)),
        taps_(static_cast<Eigen::Index>(k_) * k_ * out_c_, in_c) {
    for (int co = 0; co < out_c_; ++co) {
      for (int ci = 0; ci < in_c_; ++ci) {
        for (int t = 0; t < k_ * k_; ++t) taps_(t * out_c_ + co, ci) = weight[(co * in_c_ + ci) * k_ * k_ + t];
      }
    }
  }

  int taps() const { return k_ * k_; }
  Eigen::Index columns(int samples) const { return static_cast<Eigen::Index>(samples * plane_); }
  std::size_t buffer_size(int channels, int samples) const {
    return static_cast<std::size_t>(channels) * columns(samples) + slack_;
  }
  std::size_t offset(int t) const { return static_cast<std::size_t>(t / k_) * pw_ + t % k_; }

  // Copies samples [first, first + count) of an NCHW tensor onto the grid.
  // With centered = true the image sits inside the zero border (conv input);
  // otherwise at the grid origin (conv output layout).
  void pack(const Tensor& src, int first, int count, bool centered, std::vector<double>& grid) const {
    const int c = src.c;
    const Eigen::Index cols = columns(count);
    grid.assign(buffer_size(c, count), 0.0);
    const int shift = centered ? pad_ : 0;
    for (int ch = 0; ch < c; ++ch) {
      for (int bl = 0; bl < count; ++bl) {
        const double* from = src.data.data() + (static_cast<std::size_t>(first + bl) * c + ch) * h_ * w_;
        double* to = grid.data() + ch * cols + bl * plane_ + shift * pw_ + shift;
        for (int y = 0; y < h_; ++y) std::copy(from + y * w_, from + (y + 1) * w_, to + y * pw_);
      }
    }
  }

  // Adds the valid window of a grid back into an NCHW tensor.
  void unpack_add(const std::vector<double>& grid, int count, bool centered, int first, Tensor& dst) const {
    const int c = dst.c;
    const Eigen::Index cols = columns(count);
    const int shift = centered ? pad_ : 0;
    for (int ch = 0; ch < c; ++ch) {
      for (int bl = 0; bl < count; ++bl) {
        double* to = dst.data.data() + (static_cast<std::size_t>(first + bl) * c + ch) * h_ * w_;
        const double* from = grid.data() + ch * cols + bl * plane_ + shift * pw_ + shift;
        for (int y = 0; y < h_; ++y) {
          for (int x = 0; x < w_; ++x) to[y * w_ + x] += from[y * pw_ + x];
        }
      }
    }
  }

  // out_grid = conv(in_grid), both for `count` samples.
  void forward(const std::vector<double>& in_grid, int count, std::vector<double>& out_grid) const {
    const Eigen::Index cols = columns(count);
    out_grid.assign(static_cast<std::size_t>(out_c_) * cols, 0.0);
    StridedMutMap out(out_grid.data(), out_c_, cols, Eigen::OuterStride<>(cols));
    for (int t = 0; t < taps(); ++t) {
      out.noalias() += taps_.middleRows(t * out_c_, out_c_) *
                       StridedMap(in_grid.data() + offset(t), in_c_, cols, Eigen::OuterStride<>(cols));
    }
  }

  // dx_grid += conv^T(dy_grid); dy_grid must be zero outside the valid window.
  void backward_input(const std::vector<double>& dy_grid, int count, std::vector<double>& dx_grid) const {
    const Eigen::Index cols = columns(count);
    dx_grid.assign(buffer_size(in_c_, count), 0.0);
    const StridedMap dy(dy_grid.data(), out_c_, cols, Eigen::OuterStride<>(cols));
    for (int t = 0; t < taps(); ++t) {
      StridedMutMap(dx_grid.data() + offset(t), in_c_, cols, Eigen::OuterStride<>(cols)).noalias() +=
          taps_.middleRows(t * out_c_, out_c_).transpose() * dy;
    }
  }

  // dw (taps * out_c x in_c, tap-major) += dy_grid * shifted(in_grid)^T.
  void backward_weight(const std::vector<double>& dy_grid, const std::vector<double>& in_grid, int count,
                       RowMatrix& dw) const {
    const Eigen::Index cols = columns(count);
    const StridedMap dy(dy_grid.data(), out_c_, cols, Eigen::OuterStride<>(cols));
    for (int t = 0; t < taps(); ++t) {
      dw.middleRows(t * out_c_, out_c_).noalias() +=
          dy * StridedMap(in_grid.data() + offset(t), in_c_, cols, Eigen::OuterStride<>(cols)).transpose();
    }
  }

  // Adds a tap-major weight gradient into the [out][in][ky][kx] parameter layout.
  void scatter_weight(const RowMatrix& dw, double* dweight) const {
    for (int co = 0; co < out_c_; ++co) {
      for (int ci = 0; ci < in_c_; ++ci) {
        for (int t = 0; t < k_ * k_; ++t) dweight[(co * in_c_ + ci) * k_ * k_ + t] += dw(t * out_c_ + co, ci);
      }
    }
  }

  Eigen::Index tap_rows() const { return taps_.rows(); }
  int in_channels() const { return in_c_; }

 private:
  int k_, pad_, h_, w_, in_c_, out_c_, pw_;
  std::size_t plane_, slack_;
  RowMatrix taps_;
};

// Large activation buffers are recycled per thread: fresh multi-megabyte
// allocations cost far more in page faults than the arithmetic done on them.
class BufferPool {
 public:
  Tensor tensor(int n, int c, int h, int w) {
    Tensor t;
    t.n = n;
    t.c = c;
    t.h = h;
    t.w = w;
    const std::size_t size = static_cast<std::size_t>(n) * c * h * w;
    auto best = spare_.end();
    for (auto it = spare_.begin(); it != spare_.end(); ++it) {
      if (it->capacity() >= size && (best == spare_.end() || it->capacity() < best->capacity())) best = it;
    }
    if (best != spare_.end()) {
      t.data = std::move(*best);
      spare_.erase(best);
    }
    t.data.assign(size, 0.0);
    return t;
  }

  void recycle(Tensor& t) {
    if (t.data.capacity() >= kMinPooled) {
      if (spare_.size() == kMaxSpare) spare_.erase(spare_.begin());
      spare_.push_back(std::move(t.data));
    }
    t = Tensor{};
  }

 private:
  static constexpr std::size_t kMinPooled = 1 << 14;
  static constexpr std::size_t kMaxSpare = 12;
  std::vector<std::vector<double>> spare_;
};

BufferPool& pool() {
  thread_local BufferPool instance;
  return instance;
}

void recycle_tape(std::vector<Tensor>& tensors) {
  for (auto& t : tensors) pool().recycle(t);
}

constexpr int kConvChunk = 4;

}  // namespace

Network::Tape Network::run(const Tensor& batch, bool keep_all, std::vector<BitCode>* codes) const {
  check_batch(batch);
  const int n = batch.n;
  Tape tape;
  tape.out.resize(nodes_.size());
  tape.inv_std.resize(nodes_.size());

  std::vector<std::size_t> last_use(nodes_.size(), 0);
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    for (int src : nodes_[id].inputs) last_use[src] = id;
  }
  if (codes) {
    codes->assign(n, BitCode{std::vector<std::uint64_t>((relu_units_ + 63) / 64, 0), relu_units_});
  }
  std::size_t code_offset = 0;
  std::vector<double> col;

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.kind == NodeKind::kInput) {
      tape.out[id] = batch;
      continue;
    }
    // Normalization and activation overwrite a dying input instead of
    // streaming into a fresh buffer.
    const bool in_place = !keep_all && (node.kind == NodeKind::kBatchNorm || node.kind == NodeKind::kRelu) &&
                          last_use[node.inputs[0]] == id;
    Tensor out = in_place ? std::move(tape.out[node.inputs[0]]) : pool().tensor(n, node.c, node.h, node.w);
    const std::size_t plane = static_cast<std::size_t>(node.h) * node.w;
    switch (node.kind) {
      case NodeKind::kInput: break;
      case NodeKind::kConv: {
        const Tensor& in = tape.out[node.inputs[0]];
        const double* wp = params_.data() + node.param_offset;
        if (node.stride == 1) {
          const ShiftedConv conv(node, in.c, wp);
          std::vector<double> in_grid, out_grid;
          for (int first = 0; first < n; first += kConvChunk) {
            const int count = std::min(kConvChunk, n - first);
            conv.pack(in, first, count, true, in_grid);
            conv.forward(in_grid, count, out_grid);
            conv.unpack_add(out_grid, count, false, first, out);
          }
          break;
        }
        const Eigen::Index fan_in = static_cast<Eigen::Index>(in.c) * node.kernel * node.kernel;
        const ConstRowMap weight(wp, node.c, fan_in);
        col.resize(static_cast<std::size_t>(fan_in) * plane);
        for (int b = 0; b < n; ++b) {
          im2col(in.data.data() + b * in.sample_size(), in.c, in.h, in.w, node, col.data());
          RowMap(out.data.data() + b * out.sample_size(), node.c, static_cast<Eigen::Index>(plane)).noalias() =
              weight * ConstRowMap(col.data(), fan_in, static_cast<Eigen::Index>(plane));
        }
        break;
      }
      case NodeKind::kBatchNorm: {
        const Tensor& in = in_place ? out : tape.out[node.inputs[0]];
        if (!cfg_.batch_norm) {
          out = in;
          break;
        }
        const double count = static_cast<double>(n) * plane;
        auto& inv_std = tape.inv_std[id];
        inv_std.resize(node.c);
        for (int ch = 0; ch < node.c; ++ch) {
          double mean = 0.0;
          for (int b = 0; b < n; ++b) {
            const double* x = in.data.data() + (static_cast<std::size_t>(b) * node.c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) mean += x[i];
          }
          mean /= count;
          double var = 0.0;
          for (int b = 0; b < n; ++b) {
            const double* x = in.data.data() + (static_cast<std::size_t>(b) * node.c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) var += (x[i] - mean) * (x[i] - mean);
          }
          var /= count;
          inv_std[ch] = 1.0 / std::sqrt(var + kBatchNormEps);
          for (int b = 0; b < n; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * node.c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              out.data[base + i] = (in.data[base + i] - mean) * inv_std[ch];
            }
          }
        }
        break;
      }
      case NodeKind::kRelu: {
        const Tensor& in = in_place ? out : tape.out[node.inputs[0]];
        if (codes) {
          const std::size_t units = in.sample_size();
          for (int b = 0; b < n; ++b) {
            auto values = in.sample(b);
            auto& words = (*codes)[b].words;
            for (std::size_t u = 0; u < units; ++u) {
              const std::size_t bit = code_offset + u;
              words[bit / 64] |= static_cast<std::uint64_t>(values[u] > 0.0) << (bit % 64);
            }
          }
          code_offset += units;
        }
        if (cfg_.relu) {
          for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] = std::max(0.0, in.data[i]);
        } else if (!in_place) {
          out.data = in.data;
        }
        break;
      }
      case NodeKind::kAvgPool: {
        const Tensor& in = tape.out[node.inputs[0]];
        for (int b = 0; b < n; ++b) {
          for (int ch = 0; ch < node.c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(b) * node.c + ch) * plane;
            for (int y = 0; y < node.h; ++y) {
              for (int x = 0; x < node.w; ++x) {
                double sum = 0.0;
                int cnt = 0;
                for (int yy = std::max(0, y - 1); yy <= std::min(node.h - 1, y + 1); ++yy) {
                  for (int xx = std::max(0, x - 1); xx <= std::min(node.w - 1, x + 1); ++xx) {
                    sum += in.data[base + yy * node.w + xx];
                    ++cnt;
                  }
                }
                out.data[base + y * node.w + x] = sum / cnt;
              }
            }
          }
        }
        break;
      }
      case NodeKind::kSum:
        for (int src : node.inputs) {
          const Tensor& in = tape.out[src];
          for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] += in.data[i];
        }
        break;
      case NodeKind::kGlobalPool: {
        const Tensor& in = tape.out[node.inputs[0]];
        const std::size_t in_plane = static_cast<std::size_t>(in.h) * in.w;
        for (std::size_t bc = 0; bc < out.data.size(); ++bc) {
          double sum = 0.0;
          for (std::size_t i = 0; i < in_plane; ++i) sum += in.data[bc * in_plane + i];
          out.data[bc] = sum / static_cast<double>(in_plane);
        }
        break;
      }
      case NodeKind::kLinear: {
        const Tensor& in = tape.out[node.inputs[0]];
        const ConstRowMap weight(params_.data() + node.param_offset, node.c, in.c);
        RowMap(out.data.data(), n, node.c).noalias() =
            ConstRowMap(in.data.data(), n, in.c) * weight.transpose();
        break;
      }
    }
    tape.out[id] = std::move(out);
    if (!keep_all) {
      for (int src : node.inputs) {
        if (last_use[src] == id) pool().recycle(tape.out[src]);
      }
    }
  }
  return tape;
}

void Network::backward(const Tape& tape, const Tensor& seed, int seeds, RowMatrix* param_grad,
                       Tensor* input_grad) const {
  const int n = tape.out.front().n;  // batch size of the tape
  const int m = seed.n;              // seeds * n gradient rows
  std::vector<Tensor> grad(nodes_.size());
  grad.back() = seed;
  if (param_grad) param_grad->setZero(seeds, static_cast<Eigen::Index>(params_.size()));

  auto slot = [&](int src) -> Tensor& {
    Tensor& dx = grad[src];
    if (dx.data.empty()) dx = pool().tensor(m, nodes_[src].c, nodes_[src].h, nodes_[src].w);
    return dx;
  };
  std::vector<double> col, dcol;

  for (std::size_t id = nodes_.size(); id-- > 0;) {
    const Node& node = nodes_[id];
    if (grad[id].data.empty() || node.kind == NodeKind::kInput) continue;
    Tensor dy = std::move(grad[id]);
    grad[id] = Tensor{};
    struct Release {
      Tensor& t;
      ~Release() { pool().recycle(t); }
    } release{dy};
    const std::size_t plane = static_cast<std::size_t>(node.h) * node.w;
    switch (node.kind) {
      case NodeKind::kInput: break;
      case NodeKind::kConv: {
        const int src = node.inputs[0];
        const Tensor& in = tape.out[src];
        const bool want_dx = nodes_[src].kind != NodeKind::kInput || input_grad != nullptr;
        Tensor* dx = want_dx ? &slot(src) : nullptr;
        const double* wp = params_.data() + node.param_offset;
        if (node.stride == 1) {
          const ShiftedConv conv(node, in.c, wp);
          std::vector<RowMatrix> dw;
          if (param_grad) dw.assign(seeds, RowMatrix::Zero(conv.tap_rows(), in.c));
          std::vector<double> in_grid, dy_grid, dx_grid;
          for (int first = 0; first < n; first += kConvChunk) {
            const int count = std::min(kConvChunk, n - first);
            if (param_grad) conv.pack(in, first, count, true, in_grid);
            for (int s = 0; s < seeds; ++s) {
              conv.pack(dy, s * n + first, count, false, dy_grid);
              if (param_grad) conv.backward_weight(dy_grid, in_grid, count, dw[s]);
              if (!dx) continue;
              conv.backward_input(dy_grid, count, dx_grid);
              conv.unpack_add(dx_grid, count, true, s * n + first, *dx);
            }
          }
          for (int s = 0; s < seeds && param_grad; ++s) {
            conv.scatter_weight(dw[s], param_grad->row(s).data() + node.param_offset);
          }
          break;
        }
        const Eigen::Index fan_in = static_cast<Eigen::Index>(in.c) * node.kernel * node.kernel;
        const auto positions = static_cast<Eigen::Index>(plane);
        const ConstRowMap weight(wp, node.c, fan_in);
        col.resize(static_cast<std::size_t>(fan_in) * plane);
        dcol.resize(static_cast<std::size_t>(fan_in) * plane);
        for (int b = 0; b < n; ++b) {
          if (param_grad) im2col(in.data.data() + b * in.sample_size(), in.c, in.h, in.w, node, col.data());
          const ConstRowMap cols(col.data(), fan_in, positions);
          for (int s = 0; s < seeds; ++s) {
            const int j = s * n + b;
            const ConstRowMap g(dy.data.data() + j * dy.sample_size(), node.c, positions);
            if (param_grad) {
              RowMap(param_grad->row(s).data() + node.param_offset, node.c, fan_in).noalias() +=
                  g * cols.transpose();
            }
            if (!dx) continue;
            RowMap(dcol.data(), fan_in, positions).noalias() = weight.transpose() * g;
            col2im(dcol.data(), in.c, in.h, in.w, node, dx->data.data() + j * dx->sample_size());
          }
        }
        break;
      }
      case NodeKind::kBatchNorm: {
        const int src = node.inputs[0];
        Tensor& dx = slot(src);
        if (!cfg_.batch_norm) {
          for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
          break;
        }
        const Tensor& xhat = tape.out[id];
        const double count = static_cast<double>(n) * plane;
        for (int s = 0; s < seeds; ++s) {
          for (int ch = 0; ch < node.c; ++ch) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int b = 0; b < n; ++b) {
              const double* g = dy.data.data() + (static_cast<std::size_t>(s * n + b) * node.c + ch) * plane;
              const double* xh = xhat.data.data() + (static_cast<std::size_t>(b) * node.c + ch) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += g[i] * xh[i];
              }
            }
            const double inv_std = tape.inv_std[id][ch];
            const double mean_dy = sum_dy / count, mean_dy_xhat = sum_dy_xhat / count;
            for (int b = 0; b < n; ++b) {
              const std::size_t off = (static_cast<std::size_t>(s * n + b) * node.c + ch) * plane;
              const double* g = dy.data.data() + off;
              const double* xh = xhat.data.data() + (static_cast<std::size_t>(b) * node.c + ch) * plane;
              double* gx = dx.data.data() + off;
              for (std::size_t i = 0; i < plane; ++i) {
                gx[i] += inv_std * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
              }
            }
          }
        }
        break;
      }
      case NodeKind::kRelu: {
        const int src = node.inputs[0];
        const Tensor& in = tape.out[src];
        Tensor& dx = slot(src);
        const std::size_t per_seed = in.data.size();
        for (int s = 0; s < seeds; ++s) {
          const double* g = dy.data.data() + s * per_seed;
          double* gx = dx.data.data() + s * per_seed;
          if (!cfg_.relu) {
            for (std::size_t i = 0; i < per_seed; ++i) gx[i] += g[i];
            continue;
          }
          for (std::size_t i = 0; i < per_seed; ++i) gx[i] += in.data[i] > 0.0 ? g[i] : 0.0;
        }
        break;
      }
      case NodeKind::kAvgPool: {
        Tensor& dx = slot(node.inputs[0]);
        for (int j = 0; j < m; ++j) {
          for (int ch = 0; ch < node.c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(j) * node.c + ch) * plane;
            for (int y = 0; y < node.h; ++y) {
              for (int x = 0; x < node.w; ++x) {
                const int y0 = std::max(0, y - 1), y1 = std::min(node.h - 1, y + 1);
                const int x0 = std::max(0, x - 1), x1 = std::min(node.w - 1, x + 1);
                const double share = dy.data[base + y * node.w + x] / ((y1 - y0 + 1) * (x1 - x0 + 1));
                for (int yy = y0; yy <= y1; ++yy) {
                  for (int xx = x0; xx <= x1; ++xx) dx.data[base + yy * node.w + xx] += share;
                }
              }
            }
          }
        }
        break;
      }
      case NodeKind::kSum:
        for (int src : node.inputs) {
          Tensor& dx = slot(src);
          for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
        }
        break;
      case NodeKind::kGlobalPool: {
        const int src = node.inputs[0];
        Tensor& dx = slot(src);
        const std::size_t in_plane = static_cast<std::size_t>(dx.h) * dx.w;
        for (std::size_t bc = 0; bc < dy.data.size(); ++bc) {
          const double share = dy.data[bc] / static_cast<double>(in_plane);
          for (std::size_t i = 0; i < in_plane; ++i) dx.data[bc * in_plane + i] += share;
        }
        break;
      }
      case NodeKind::kLinear: {
        const int src = node.inputs[0];
        const Tensor& in = tape.out[src];
        Tensor& dx = slot(src);
        const ConstRowMap weight(params_.data() + node.param_offset, node.c, in.c);
        RowMap(dx.data.data(), m, in.c).noalias() += ConstRowMap(dy.data.data(), m, node.c) * weight;
        if (param_grad) {
          const ConstRowMap x(in.data.data(), n, in.c);
          for (int s = 0; s < seeds; ++s) {
            RowMap(param_grad->row(s).data() + node.param_offset, node.c, in.c).noalias() +=
                ConstRowMap(dy.data.data() + static_cast<std::size_t>(s) * n * node.c, n, node.c).transpose() * x;
          }
        }
        break;
      }
    }
  }
  if (input_grad) {
    *input_grad = std::move(grad.front());
    if (input_grad->data.empty()) {
      *input_grad = Tensor(m, cfg_.input_channels, cfg_.input_resolution, cfg_.input_resolution);
    }
  }
}

ForwardTrace Network::forward(const Tensor& batch) const {
  ForwardTrace trace;
  Tape tape = run(batch, false, &trace.relu_pattern);
  trace.logits = std::move(tape.out.back());
  recycle_tape(tape.out);
  return trace;
}

Eigen::MatrixXd Network::input_jacobian(const Tensor& batch) const {
  Tape tape = run(batch, true);
  Tensor seed(batch.n, cfg_.num_classes, 1, 1);
  std::fill(seed.data.begin(), seed.data.end(), 1.0);
  Tensor dx;
  backward(tape, seed, 1, nullptr, &dx);
  Eigen::MatrixXd jac = ConstRowMap(dx.data.data(), batch.n, static_cast<Eigen::Index>(batch.sample_size()));
  recycle_tape(tape.out);
  pool().recycle(dx);
  return jac;
}

Eigen::MatrixXd Network::parameter_jacobian(const Tensor& batch) const {
  Tape tape = run(batch, true);
  Eigen::MatrixXd jac(batch.n, static_cast<Eigen::Index>(params_.size()));
  // Seeds are processed in chunks to bound the size of the gradient tensors.
  constexpr int kChunk = 8;
  RowMatrix grads;
  for (int first = 0; first < batch.n; first += kChunk) {
    const int count = std::min(kChunk, batch.n - first);
    Tensor seed(count * batch.n, cfg_.num_classes, 1, 1);
    for (int s = 0; s < count; ++s) {
      double* row = seed.data.data() + (static_cast<std::size_t>(s) * batch.n + first + s) * cfg_.num_classes;
      std::fill(row, row + cfg_.num_classes, 1.0);
    }
    backward(tape, seed, count, &grads, nullptr);
    jac.middleRows(first, count) = grads;
  }
  recycle_tape(tape.out);
  return jac;
}

void Network::dump_weights(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  for (double p : params_) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(p));
    const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                           static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
    out.write(bytes, 4);
  }
}

}  // namespace cbred
