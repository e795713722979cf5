#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "sam3d/core/tensor.hpp"
#include "sam3d/decoder/layers.hpp"
#include "sam3d/decoder/parameters.hpp"

namespace sam3d {

inline constexpr std::size_t kNumBlocks = 4;
inline constexpr std::size_t kNumStages = 3;

struct DecoderConfig {
  std::size_t in_channels = 256;
  std::array<std::size_t, kNumBlocks> block_channels{128, 64, 32, 16};
  std::size_t num_classes = 2;
  double leaky_slope = 0.01;
  double norm_eps = 1e-5;

  /// in_channels = 256 * modalities.
  static DecoderConfig for_modalities(std::size_t modalities, std::size_t num_classes);

  void validate() const;
  nlohmann::json to_json() const;
  static DecoderConfig from_json(const nlohmann::json& j);
  std::string digest() const;
};

struct ParameterCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> per_layer;
};

/// Closed-form trainable parameter count.
ParameterCount count_parameters(const DecoderConfig& cfg);

/// Stage logits: [0] full resolution (main head), [1] half, [2] quarter in-plane.
template <typename T>
struct DecoderOutputs {
  std::array<Tensor<T>, kNumStages> logits;
};

template <typename T>
struct BlockTape {
  Tensor<T> input;
  Tensor<T> pre1;  // after first norm, before activation
  nn::NormCache<T> norm1, norm2;
  Tensor<T> act1;
  Tensor<T> pre;   // residual sum, before activation and upsampling
  Tensor<T> act;
};

template <typename T>
struct HeadTape {
  Tensor<T> input;
  nn::NormCache<T> norm;
  Tensor<T> pre;
  Tensor<T> act;
};

template <typename T>
struct DecoderTape {
  std::array<BlockTape<T>, kNumBlocks> blocks;
  std::array<HeadTape<T>, kNumStages> heads;
  bool auxiliary = true;
};

template <typename T>
class Decoder {
 public:
  /// All parameters allocated and zero, norm scales zero too.
  explicit Decoder(DecoderConfig cfg);

  /// Conv kernels drawn from a fan-in scaled normal, biases 0, norm affine (1, 0).
  static Decoder initialized(const DecoderConfig& cfg, std::uint64_t seed);

  const DecoderConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  /// emb is (in_channels, D, h, w). With auxiliary=false only stage 0 is produced.
  DecoderOutputs<T> forward(const Tensor<T>& emb, DecoderTape<T>* tape = nullptr, bool auxiliary = true) const;

  /// Accumulates parameter gradients from per-stage logit gradients.
  void backward(const DecoderTape<T>& tape, const std::array<Tensor<T>, kNumStages>& dlogits);

  template <typename U>
  Decoder<U> cast() const {
    Decoder<U> out(cfg_);
    out.params() = params_.template cast<U>();
    return out;
  }

 private:
  struct Conv {
    std::size_t w, b;
  };
  struct Norm {
    std::size_t g, b;
  };
  struct Block {
    Conv conv1, conv2, proj;
    Norm norm1, norm2;
  };
  struct Head {
    Conv conv, out;
    Norm norm;
  };

  Conv add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k);
  Norm add_norm(const std::string& name, std::size_t c);
  Tensor<T> run_block(const Block& b, const Tensor<T>& x, BlockTape<T>* tape) const;
  Tensor<T> run_head(const Head& h, const Tensor<T>& x, HeadTape<T>* tape) const;
  Tensor<T> block_backward(const Block& b, const BlockTape<T>& tape, const Tensor<T>& dout, bool need_dx);
  Tensor<T> head_backward(const Head& h, const HeadTape<T>& tape, const Tensor<T>& dlogits);

  DecoderConfig cfg_;
  ParameterSet<T> params_;
  std::array<Block, kNumBlocks> blocks_{};
  std::array<Head, kNumStages> heads_{};
};

/// Block index whose (upsampled) output feeds each stage head.
inline constexpr std::array<std::size_t, kNumStages> kStageSource{3, 2, 1};

}  // namespace sam3d
