#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cbred/searchspace.hpp"

namespace cbred {

struct ToyNetConfig {
  int input_resolution = 16;
  int input_channels = 3;
  int cell_channels = 8;
  int cells_per_stage = 1;
  int stages = 1;
  int num_classes = 10;
  std::uint64_t seed = 0;
  // Test switches: identity normalization / identity activation.
  bool batch_norm = true;
  bool relu = true;

  void validate() const;
};

// Dense NCHW batch.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

  std::size_t sample_size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
  std::span<double> sample(int b) { return {data.data() + b * sample_size(), sample_size()}; }
  std::span<const double> sample(int b) const {
    return {data.data() + b * sample_size(), sample_size()};
  }
};

// Packed binary activation code.
struct BitCode {
  std::vector<std::uint64_t> words;
  std::size_t bits = 0;

  friend bool operator==(const BitCode&, const BitCode&) = default;
  friend auto operator<=>(const BitCode& a, const BitCode& b) { return a.words <=> b.words; }
};

std::size_t hamming(const BitCode& a, const BitCode& b);

struct ForwardTrace {
  Tensor logits;                     // n x num_classes x 1 x 1
  std::vector<BitCode> relu_pattern;  // one code per sample, 1 iff pre-activation > 0
};

// Gaussian noise batch shaped for cfg. Stream selects an independent sequence.
Tensor gaussian_batch(const ToyNetConfig& cfg, int n, std::uint64_t seed, std::uint32_t stream);

// Stem conv -> cells (stage transitions: stride-2 conv doubling the width) ->
// global average pool -> linear classifier. Every convolution is followed by
// batch-norm over batch statistics (unit scale, zero shift) and ReLU.
class Network {
 public:
  static Network instantiate(const CellSpec& cell, const ToyNetConfig& cfg);

  const CellSpec& cell() const noexcept { return cell_; }
  const ToyNetConfig& config() const noexcept { return cfg_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::size_t relu_unit_count() const noexcept { return relu_units_; }

  // Same topology with the given flat parameter vector.
  Network with_parameters(std::vector<double> params) const;

  ForwardTrace forward(const Tensor& batch) const;

  // Row b: gradient of the batch-summed logits with respect to sample b's
  // input, flattened in CHW order. Batch-norm couples the samples.
  Eigen::MatrixXd input_jacobian(const Tensor& batch) const;

  // Row b: gradient of sum over classes of sample b's logits with respect to
  // all parameters.
  Eigen::MatrixXd parameter_jacobian(const Tensor& batch) const;

  // Flat little-endian f32 dump of parameters() in construction order: stem;
  // per stage, the transition conv (stages after the first) then every cell's
  // convolutions in edge order; classifier. Convolutions are [out][in][ky][kx],
  // the classifier [class][channel].
  void dump_weights(const std::filesystem::path& path) const;

  enum class NodeKind : std::uint8_t { kInput, kConv, kBatchNorm, kRelu, kAvgPool, kSum, kGlobalPool, kLinear };

  struct Node {
    NodeKind kind = NodeKind::kInput;
    std::vector<int> inputs;
    int c = 0, h = 0, w = 0;  // output shape per sample
    int kernel = 0, stride = 1, pad = 0;
    std::size_t param_offset = 0;
    std::size_t param_count = 0;
  };

  struct Tape;

 private:
  Network() = default;

  int add(Node node);
  int add_conv(int input, int out_c, int kernel, int stride, std::uint32_t slot);
  void check_batch(const Tensor& batch) const;
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  // keep_all retains every node output for a reverse pass; otherwise outputs
  // are released after their last consumer. codes, when given, receives the
  // ReLU patterns.
  Tape run(const Tensor& batch, bool keep_all, std::vector<BitCode>* codes = nullptr) const;
  // Reverse pass for `seeds` independent objectives at once. seed holds
  // d(objective)/d(logits) with seeds * batch rows, objective-major.
  // param_grad (seeds x parameters) and input_grad are optional.
  void backward(const Tape& tape, const Tensor& seed, int seeds, RowMatrix* param_grad,
                Tensor* input_grad) const;

  CellSpec cell_;
  ToyNetConfig cfg_;
  std::vector<Node> nodes_;
  std::vector<double> params_;
  std::size_t relu_units_ = 0;
};

}  // namespace cbred
