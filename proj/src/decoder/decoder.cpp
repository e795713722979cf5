#include "sam3d/decoder/decoder.hpp"

#include <cmath>

#include "sam3d/core/digest.hpp"
#include "sam3d/core/error.hpp"
#include "sam3d/core/rng.hpp"
#include "sam3d/encoder/encoder.hpp"

namespace sam3d {

DecoderConfig DecoderConfig::for_modalities(std::size_t modalities, std::size_t num_classes) {
  DecoderConfig cfg;
  cfg.in_channels = kEmbedDim * modalities;
  cfg.num_classes = num_classes;
  return cfg;
}

void DecoderConfig::validate() const {
  if (in_channels == 0) throw ValidationError("decoder: in_channels must be positive");
  if (num_classes < 2) throw ValidationError("decoder: num_classes must be >= 2");
  std::size_t prev = in_channels;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    if (block_channels[i] == 0) throw ValidationError("decoder: block channels must be positive");
    if (i > 0 && block_channels[i] >= prev) {
      throw ValidationError("decoder: block_channels must be strictly decreasing");
    }
    prev = block_channels[i];
  }
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (block_channels[kStageSource[s]] < 2) {
      throw ValidationError("decoder: head input needs at least 2 channels");
    }
  }
  if (!(leaky_slope >= 0.0) || !(norm_eps > 0.0)) throw ValidationError("decoder: bad slope or eps");
}

nlohmann::json DecoderConfig::to_json() const {
  return {{"in_channels", in_channels},
          {"block_channels", block_channels},
          {"num_classes", num_classes},
          {"leaky_slope", leaky_slope},
          {"norm_eps", norm_eps}};
}

DecoderConfig DecoderConfig::from_json(const nlohmann::json& j) {
  DecoderConfig cfg;
  cfg.in_channels = j.value("in_channels", cfg.in_channels);
  cfg.block_channels = j.value("block_channels", cfg.block_channels);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.leaky_slope = j.value("leaky_slope", cfg.leaky_slope);
  cfg.norm_eps = j.value("norm_eps", cfg.norm_eps);
  cfg.validate();
  return cfg;
}

std::string DecoderConfig::digest() const { return sha256_hex(to_json().dump()); }

namespace {

std::size_t conv_count(std::size_t cin, std::size_t cout, std::size_t k) { return k * k * k * cin * cout + cout; }

std::string block_name(std::size_t i) { return "block" + std::to_string(i + 1); }
std::string head_name(std::size_t s) { return "head" + std::to_string(s + 1); }

}  // namespace

ParameterCount count_parameters(const DecoderConfig& cfg) {
  cfg.validate();
  ParameterCount pc;
  auto add = [&](std::string name, std::size_t n) {
    pc.per_layer.emplace_back(std::move(name), n);
    pc.total += n;
  };
  std::size_t cin = cfg.in_channels;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    const std::size_t c = cfg.block_channels[i];
    const std::string b = block_name(i);
    add(b + ".conv1", conv_count(cin, c, 3));
    add(b + ".norm1", 2 * c);
    add(b + ".conv2", conv_count(c, c, 3));
    add(b + ".norm2", 2 * c);
    add(b + ".proj", conv_count(cin, c, 1));
    cin = c;
  }
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::size_t c = cfg.block_channels[kStageSource[s]];
    const std::string h = head_name(s);
    add(h + ".conv", conv_count(c, c / 2, 3));
    add(h + ".norm", 2 * (c / 2));
    add(h + ".out", conv_count(c / 2, cfg.num_classes, 1));
  }
  return pc;
}

template <typename T>
typename Decoder<T>::Conv Decoder<T>::add_conv(const std::string& name, std::size_t cin, std::size_t cout,
                                               std::size_t k) {
  Conv c;
  c.w = params_.add(name + ".weight", {cout, cin, k, k, k}, true);
  c.b = params_.add(name + ".bias", {cout}, true);
  return c;
}

template <typename T>
typename Decoder<T>::Norm Decoder<T>::add_norm(const std::string& name, std::size_t c) {
  Norm n;
  n.g = params_.add(name + ".weight", {c}, false);
  n.b = params_.add(name + ".bias", {c}, false);
  return n;
}

template <typename T>
Decoder<T>::Decoder(DecoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t cin = cfg_.in_channels;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    const std::size_t c = cfg_.block_channels[i];
    const std::string b = block_name(i);
    Block& blk = blocks_[i];
    blk.conv1 = add_conv(b + ".conv1", cin, c, 3);
    blk.norm1 = add_norm(b + ".norm1", c);
    blk.conv2 = add_conv(b + ".conv2", c, c, 3);
    blk.norm2 = add_norm(b + ".norm2", c);
    blk.proj = add_conv(b + ".proj", cin, c, 1);
    cin = c;
  }
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::size_t c = cfg_.block_channels[kStageSource[s]];
    const std::string h = head_name(s);
    heads_[s].conv = add_conv(h + ".conv", c, c / 2, 3);
    heads_[s].norm = add_norm(h + ".norm", c / 2);
    heads_[s].out = add_conv(h + ".out", c / 2, cfg_.num_classes, 1);
  }
}

template <typename T>
Decoder<T> Decoder<T>::initialized(const DecoderConfig& cfg, std::uint64_t seed) {
  Decoder dec(cfg);
  Rng rng(seed);
  const double a = cfg.leaky_slope;
  for (auto& p : dec.params_) {
    if (p.value.rank() == 5) {
      const std::size_t fan_in = p.value.size() / p.value.dim(0);
      const double sd = std::sqrt(2.0 / ((1.0 + a * a) * static_cast<double>(fan_in)));
      for (auto& v : p.value.vec()) v = static_cast<T>(rng.normal(0.0, sd));
    } else if (!p.decay && p.name.ends_with(".weight")) {
      p.value.fill(T{1});
    } else {
      p.value.fill(T{0});
    }
  }
  return dec;
}

template <typename T>
Tensor<T> Decoder<T>::run_block(const Block& b, const Tensor<T>& x, BlockTape<T>* tape) const {
  const T slope = static_cast<T>(cfg_.leaky_slope);
  const T eps = static_cast<T>(cfg_.norm_eps);
  const auto& P = params_;
  nn::NormCache<T> n1, n2;
  Tensor<T> h = nn::conv3d_forward(x, P[b.conv1.w].value, P[b.conv1.b].value);
  Tensor<T> pre1 = nn::instance_norm_forward(h, P[b.norm1.g].value, P[b.norm1.b].value, eps, tape ? &n1 : nullptr);
  Tensor<T> act1 = nn::leaky_relu(pre1, slope);
  h = nn::conv3d_forward(act1, P[b.conv2.w].value, P[b.conv2.b].value);
  Tensor<T> pre = nn::instance_norm_forward(h, P[b.norm2.g].value, P[b.norm2.b].value, eps, tape ? &n2 : nullptr);
  const Tensor<T> skip = nn::conv3d_forward(x, P[b.proj.w].value, P[b.proj.b].value);
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += skip[i];
  Tensor<T> act = nn::leaky_relu(pre, slope);
  Tensor<T> out = nn::upsample_inplane_forward(act);
  if (tape) {
    tape->input = x;
    tape->pre1 = std::move(pre1);
    tape->norm1 = std::move(n1);
    tape->norm2 = std::move(n2);
    tape->act1 = std::move(act1);
    tape->pre = std::move(pre);
    tape->act = std::move(act);
  }
  return out;
}

template <typename T>
Tensor<T> Decoder<T>::run_head(const Head& hd, const Tensor<T>& x, HeadTape<T>* tape) const {
  const auto& P = params_;
  nn::NormCache<T> n;
  Tensor<T> h = nn::conv3d_forward(x, P[hd.conv.w].value, P[hd.conv.b].value);
  Tensor<T> pre = nn::instance_norm_forward(h, P[hd.norm.g].value, P[hd.norm.b].value,
                                            static_cast<T>(cfg_.norm_eps), tape ? &n : nullptr);
  Tensor<T> act = nn::leaky_relu(pre, static_cast<T>(cfg_.leaky_slope));
  Tensor<T> logits = nn::conv3d_forward(act, P[hd.out.w].value, P[hd.out.b].value);
  if (tape) {
    tape->input = x;
    tape->norm = std::move(n);
    tape->pre = std::move(pre);
    tape->act = std::move(act);
  }
  return logits;
}

template <typename T>
DecoderOutputs<T> Decoder<T>::forward(const Tensor<T>& emb, DecoderTape<T>* tape, bool auxiliary) const {
  if (emb.rank() != 4) throw ShapeError("decoder: embedding must be (C, D, h, w), got " + shape_str(emb.shape()));
  if (emb.dim(0) != cfg_.in_channels) {
    throw ShapeError("decoder: embedding has " + std::to_string(emb.dim(0)) + " channels, expected " +
                     std::to_string(cfg_.in_channels));
  }
  if (tape) tape->auxiliary = auxiliary;
  std::array<Tensor<T>, kNumBlocks> outs;
  const Tensor<T>* x = &emb;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    outs[i] = run_block(blocks_[i], *x, tape ? &tape->blocks[i] : nullptr);
    x = &outs[i];
  }
  DecoderOutputs<T> result;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (s > 0 && !auxiliary) break;
    result.logits[s] = run_head(heads_[s], outs[kStageSource[s]], tape ? &tape->heads[s] : nullptr);
  }
  return result;
}

template <typename T>
Tensor<T> Decoder<T>::head_backward(const Head& hd, const HeadTape<T>& tape, const Tensor<T>& dlogits) {
  auto& P = params_;
  const T slope = static_cast<T>(cfg_.leaky_slope);
  Tensor<T> dact;
  nn::conv3d_backward(tape.act, P[hd.out.w].value, dlogits, &dact, P[hd.out.w].grad, P[hd.out.b].grad);
  Tensor<T> dpre = nn::leaky_relu_backward(tape.pre, dact, slope);
  Tensor<T> dh = nn::instance_norm_backward(tape.norm, P[hd.norm.g].value, dpre, P[hd.norm.g].grad, P[hd.norm.b].grad);
  Tensor<T> dx;
  nn::conv3d_backward(tape.input, P[hd.conv.w].value, dh, &dx, P[hd.conv.w].grad, P[hd.conv.b].grad);
  return dx;
}

template <typename T>
Tensor<T> Decoder<T>::block_backward(const Block& b, const BlockTape<T>& tape, const Tensor<T>& dout, bool need_dx) {
  auto& P = params_;
  const T slope = static_cast<T>(cfg_.leaky_slope);
  const Tensor<T> dact = nn::upsample_inplane_backward(dout);
  const Tensor<T> dpre = nn::leaky_relu_backward(tape.pre, dact, slope);

  Tensor<T> dx;
  nn::conv3d_backward(tape.input, P[b.proj.w].value, dpre, need_dx ? &dx : nullptr, P[b.proj.w].grad,
                      P[b.proj.b].grad);

  Tensor<T> dh = nn::instance_norm_backward(tape.norm2, P[b.norm2.g].value, dpre, P[b.norm2.g].grad, P[b.norm2.b].grad);
  Tensor<T> dact1;
  nn::conv3d_backward(tape.act1, P[b.conv2.w].value, dh, &dact1, P[b.conv2.w].grad, P[b.conv2.b].grad);
  const Tensor<T> dpre1 = nn::leaky_relu_backward(tape.pre1, dact1, slope);
  dh = nn::instance_norm_backward(tape.norm1, P[b.norm1.g].value, dpre1, P[b.norm1.g].grad, P[b.norm1.b].grad);
  Tensor<T> dx_main;
  nn::conv3d_backward(tape.input, P[b.conv1.w].value, dh, need_dx ? &dx_main : nullptr, P[b.conv1.w].grad,
                      P[b.conv1.b].grad);
  if (!need_dx) return dx;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx_main[i];
  return dx;
}

template <typename T>
void Decoder<T>::backward(const DecoderTape<T>& tape, const std::array<Tensor<T>, kNumStages>& dlogits) {
  // Gradient w.r.t. each block's upsampled output.
  std::array<Tensor<T>, kNumBlocks> dout;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (s > 0 && !tape.auxiliary) break;
    if (dlogits[s].empty()) continue;
    Tensor<T> dx = head_backward(heads_[s], tape.heads[s], dlogits[s]);
    Tensor<T>& acc = dout[kStageSource[s]];
    if (acc.empty()) {
      acc = std::move(dx);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += dx[i];
    }
  }
  for (std::size_t i = kNumBlocks; i-- > 0;) {
    if (dout[i].empty()) continue;
    Tensor<T> dx = block_backward(blocks_[i], tape.blocks[i], dout[i], i > 0);
    if (i == 0) break;
    Tensor<T>& acc = dout[i - 1];
    if (acc.empty()) {
      acc = std::move(dx);
    } else {
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += dx[j];
    }
  }
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace sam3d
