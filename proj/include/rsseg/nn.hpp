#ifndef RSSEG_NN_HPP
#define RSSEG_NN_HPP

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rsseg/tensor.hpp"

namespace rsseg::nn {

// ---------------------------------------------------------------------------
// Primitive layers. Layers are plain value types; forward/backward are free
// of hidden state so they can be gradient-checked in isolation. Whatever the
// backward pass needs from the forward pass is returned as an explicit cache.
// ---------------------------------------------------------------------------

struct Conv2d {
  Tensor weight;               // (C_out, C_in, k, k)
  Tensor bias;                 // (1, C_out, 1, 1)
  int stride = 1;
  int dilation = 1;
  int pad = 0;

  int kernel() const { return static_cast<int>(weight.shape().h()); }
  int out_channels() const { return static_cast<int>(weight.shape().n()); }
  int in_channels() const { return static_cast<int>(weight.shape().c()); }
  // k_eff = k + (k-1)(dilation-1)
  int effective_kernel() const { return kernel() + (kernel() - 1) * (dilation - 1); }
};

struct Conv2dGrads {
  Tensor x;
  Tensor weight;
  Tensor bias;
};

Tensor conv2d_forward(const Conv2d& layer, const Tensor& x);
Conv2dGrads conv2d_backward(const Conv2d& layer, const Tensor& x, const Tensor& grad_out);

struct TransposeConv2d {
  Tensor weight;               // (C_in, C_out, k, k)
  Tensor bias;                 // (1, C_out, 1, 1)
  int stride = 1;
  int pad = 0;
  int output_padding = 0;

  int kernel() const { return static_cast<int>(weight.shape().h()); }
  int in_channels() const { return static_cast<int>(weight.shape().n()); }
  int out_channels() const { return static_cast<int>(weight.shape().c()); }
};

Tensor transpose_conv2d_forward(const TransposeConv2d& layer, const Tensor& x);
Conv2dGrads transpose_conv2d_backward(const TransposeConv2d& layer, const Tensor& x,
                                      const Tensor& grad_out);

struct BatchNorm {
  Tensor gamma;                // (1, C, 1, 1)
  Tensor beta;                 // (1, C, 1, 1)
  Tensor running_mean;         // (1, C, 1, 1)
  Tensor running_var;          // (1, C, 1, 1)
  double epsilon = 1e-5;
  double momentum = 0.1;

  explicit BatchNorm(std::size_t channels = 0)
      : gamma(1, channels, 1, 1, 1.0),
        beta(1, channels, 1, 1, 0.0),
        running_mean(1, channels, 1, 1, 0.0),
        running_var(1, channels, 1, 1, 1.0) {}
};

struct BatchNormCache {
  Tensor xhat;
  std::vector<double> mean;
  std::vector<double> inv_std;
  bool batch_stats = true;  // false when normalized with running stats
};

struct BatchNormGrads {
  Tensor x;
  Tensor gamma;
  Tensor beta;
};

// Train mode normalizes by batch statistics and updates the running stats;
// eval mode is a per-channel affine map from the running stats.
Tensor batchnorm_forward(BatchNorm& layer, const Tensor& x, bool train,
                         BatchNormCache* cache = nullptr);
BatchNormGrads batchnorm_backward(const BatchNorm& layer, const BatchNormCache& cache,
                                  const Tensor& grad_out);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

struct MaxPoolResult {
  Tensor out;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

// 2x2 window, stride 2. Ties break toward the lowest flat index.
MaxPoolResult maxpool2(const Tensor& x);
Tensor maxpool2_backward(const Shape4& in_shape, const std::vector<std::size_t>& argmax,
                         const Tensor& grad_out);

/// Softmax over the channel axis; output sums to 1 per pixel.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_channels_backward(const Tensor& probs, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Network: the symmetric encoder-decoder with skip connections.
// ---------------------------------------------------------------------------

enum class Variant { AC, SC };

struct NetworkSpec {
  Variant variant = Variant::AC;
  int in_channels = 4;
  int classes = 6;
  std::vector<int> encoder_channels = {32, 64, 128};  // one entry per pool level
  int bridge_blocks = 4;

  int pool_depth() const { return static_cast<int>(encoder_channels.size()); }
  int divisibility() const { return 1 << pool_depth(); }
  void validate() const;

  std::string to_config() const;
  static NetworkSpec from_config(const std::string& text);

  /// Ordered human-readable layer descriptors, for logs and config dumps.
  std::vector<std::string> describe() const;
};

class Network {
public:
  Network();
  ~Network();
  // Copies and moves drop the forward trace; call forward again before
  // backward on the new object.
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&& other) noexcept;
  Network& operator=(Network&& other) noexcept;

  /// Deterministic He fan-in initialization from the seed.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }

  void set_train(bool train) { train_ = train; }
  bool train_mode() const { return train_; }

  /// Probabilities (N, K, H, W). Caches intermediates for backward.
  Tensor forward(const Tensor& x);
  /// Logits of the last forward call.
  const Tensor& logits() const;

  /// Backward from a gradient with respect to the pre-softmax logits (the
  /// fused softmax+cross-entropy path). Fills param_grads().
  void backward_from_logits(const Tensor& grad_logits);
  /// Backward from a gradient with respect to the output probabilities.
  void backward_from_probs(const Tensor& grad_probs);

  /// Gradient with respect to the input of the last forward, after backward.
  const Tensor& input_grad() const;

  struct Param {
    std::string name;
    Tensor* value;
  };
  std::vector<Param> params();
  const std::vector<Tensor>& param_grads() const { return param_grads_; }

  void save_checkpoint(const std::string& dir) const;
  static Network load_checkpoint(const std::string& dir);

  // Internals exposed for the receptive-field probe.
  struct RfOptions {
    bool enabled = false;  // abs weights, linear relu, uniform pool backward
  };
  void set_rf_mode(bool on) { rf_.enabled = on; }

  friend struct NetworkAccess;

private:
  struct ConvBlock {
    Conv2d conv;
    BatchNorm bn{0};
  };
  struct DecoderLevel {
    TransposeConv2d up;
    std::optional<BatchNorm> up_bn;  // AC only
    ConvBlock c1, c2;
  };

  struct Tape;

  NetworkSpec spec_;
  std::vector<ConvBlock> enc_;       // 2 per level, interleaved
  std::vector<ConvBlock> bridge_;
  std::vector<DecoderLevel> dec_;
  Conv2d head_;                      // 1x1, K filters
  bool train_ = true;
  RfOptions rf_;

  std::shared_ptr<Tape> tape_;       // trace of the last forward
  std::vector<Tensor> param_grads_;

  void run_backward(const Tensor& grad, bool from_logits);
};

struct BoundingBox {
  long y0 = 0, x0 = 0, y1 = -1, x1 = -1;  // inclusive; empty when y1 < y0
  long height() const { return y1 - y0 + 1; }
  long width() const { return x1 - x0 + 1; }
  bool contains(const BoundingBox& other) const {
    return y0 <= other.y0 && x0 <= other.x0 && y1 >= other.y1 && x1 >= other.x1;
  }
  bool operator==(const BoundingBox&) const = default;
};

/// Input region influencing the given output pixel, measured by
/// backpropagating a one-hot gradient through an abs-weight copy of the
/// network (so no cancellation or dead unit can hide a geometric dependency).
BoundingBox receptive_field(const Network& net, std::size_t out_y, std::size_t out_x,
                            std::size_t input_h, std::size_t input_w);
/// Same probe for a single convolution layer.
BoundingBox receptive_field(const Conv2d& layer, std::size_t out_y, std::size_t out_x,
                            std::size_t input_h, std::size_t input_w);

}  // namespace rsseg::nn

#endif
