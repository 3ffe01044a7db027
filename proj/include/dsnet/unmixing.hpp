#pragma once

#include <optional>
#include <string>

#include "dsnet/ops.hpp"
#include "dsnet/rng.hpp"

namespace dsnet {

template <typename S>
struct ConvLayer {
  Tensor<S> weight;                // [Cout,Cin,k,k]
  std::optional<Tensor<S>> bias;   // [Cout]
};

template <typename S>
struct BnLayer {
  Tensor<S> gamma, beta;           // [C]
  std::vector<S> running_mean, running_var;
  S momentum = S(0.9);
  S eps = S(1e-5);
};

namespace detail {

template <typename S>
ConvLayer<S> make_conv(std::int64_t cout, std::int64_t cin, std::int64_t k,
                       bool bias, Rng& rng) {
  ConvLayer<S> layer;
  const S bound = S(1) / std::sqrt(static_cast<S>(cin * k * k));
  layer.weight = Tensor<S>::uniform({cout, cin, k, k}, bound, rng, true);
  if (bias) layer.bias = Tensor<S>::zeros({cout}, true);
  return layer;
}

template <typename S>
BnLayer<S> make_bn(std::int64_t channels) {
  BnLayer<S> bn;
  bn.gamma = Tensor<S>::full({channels}, S(1), true);
  bn.beta = Tensor<S>::zeros({channels}, true);
  bn.running_mean.assign(static_cast<std::size_t>(channels), S(0));
  bn.running_var.assign(static_cast<std::size_t>(channels), S(1));
  return bn;
}

template <typename S>
Tensor<S> apply_bn(const Tensor<S>& x, BnLayer<S>& bn, Mode mode) {
  return batchnorm(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var,
                   bn.momentum, bn.eps, mode);
}

}  // namespace detail

constexpr double kAbundanceEps = 1e-8;

/// Three-stage 1x1-conv encoder. Channel trajectory L -> L/2 -> L/4 -> P
/// (integer division, floor of 1); the first two stages carry BN + ReLU,
/// the last is a bare affine map.
template <typename S>
struct UnmixEncoderParams {
  ConvLayer<S> conv1, conv2, conv3;
  BnLayer<S> bn1, bn2;
  std::int64_t bands = 0, endmembers = 0;

  static UnmixEncoderParams init(std::int64_t bands, std::int64_t endmembers,
                                 Rng& rng) {
    UnmixEncoderParams p;
    p.bands = bands;
    p.endmembers = endmembers;
    const std::int64_t c1 = std::max<std::int64_t>(bands / 2, 1);
    const std::int64_t c2 = std::max<std::int64_t>(bands / 4, 1);
    p.conv1 = detail::make_conv<S>(c1, bands, 1, true, rng);
    p.bn1 = detail::make_bn<S>(c1);
    p.conv2 = detail::make_conv<S>(c2, c1, 1, true, rng);
    p.bn2 = detail::make_bn<S>(c2);
    p.conv3 = detail::make_conv<S>(endmembers, c2, 1, true, rng);
    return p;
  }
};

/// K-layer general mixing decoder. One bias-free weight stack G maps
/// abundances to L*K channels; the rectified stack feeds both the linear
/// chunk-sum path and the two sigmoid convolutions of the nonlinear path.
template <typename S>
struct GeneralDecoderParams {
  Tensor<S> g_weight;               // [L*K, P, 1, 1], no bias
  ConvLayer<S> nl1, nl2;            // [L, L*K] and [L, L], both biased
  std::int64_t bands = 0, endmembers = 0, layers = 0;
  bool nonlinear = true;
  bool relu_before_sum = true;      // false: bare Gv feeds both paths

  static GeneralDecoderParams init(std::int64_t bands, std::int64_t endmembers,
                                   std::int64_t layers, bool nonlinear,
                                   Rng& rng) {
    if (layers < 1 || layers > 5) {
      throw DataError("decoder layer count must be in [1,5], got " +
                      std::to_string(layers));
    }
    GeneralDecoderParams p;
    p.bands = bands;
    p.endmembers = endmembers;
    p.layers = layers;
    p.nonlinear = nonlinear;
    const S bound = S(1) / std::sqrt(static_cast<S>(endmembers));
    p.g_weight = Tensor<S>::uniform({bands * layers, endmembers, 1, 1}, bound,
                                    rng, true);
    for (auto& v : p.g_weight.values()) v = std::abs(v);  // nonnegative start
    if (nonlinear) {
      p.nl1 = detail::make_conv<S>(bands, bands * layers, 1, true, rng);
      p.nl2 = detail::make_conv<S>(bands, bands, 1, true, rng);
    }
    return p;
  }
};

/// Raw codes h3 = conv3(relu(bn2(conv2(relu(bn1(conv1(x)))))); all 1x1, so
/// the spatial extent is preserved.
template <typename S>
Tensor<S> encode(const Tensor<S>& x, UnmixEncoderParams<S>& p, Mode mode) {
  auto h = conv2d(x, p.conv1.weight, p.conv1.bias, 1, 0);
  h = relu(detail::apply_bn(h, p.bn1, mode));
  h = conv2d(h, p.conv2.weight, p.conv2.bias, 1, 0);
  h = relu(detail::apply_bn(h, p.bn2, mode));
  return conv2d(h, p.conv3.weight, p.conv3.bias, 1, 0);
}

/// Abundance maps from raw codes: rectify, sum-normalize per pixel.
template <typename S>
Tensor<S> normalize_abundance(const Tensor<S>& h3) {
  return simplex_normalize(h3, static_cast<S>(kAbundanceEps));
}

template <typename S>
struct DecodeParts {
  Tensor<S> linear;     // chunk-sum mixing path
  Tensor<S> nonlinear;  // sigmoid interaction path (undefined if disabled)
  Tensor<S> xhat;
};

template <typename S>
DecodeParts<S> decode_parts(const Tensor<S>& v, GeneralDecoderParams<S>& p) {
  if (v.dim(1) != p.endmembers) {
    throw ShapeError("decode: abundance channel axis 1 (=" +
                     std::to_string(v.dim(1)) + ") does not match P (=" +
                     std::to_string(p.endmembers) + ")");
  }
  auto z = conv2d(v, p.g_weight, std::nullopt, 1, 0);
  if (p.relu_before_sum) z = relu(z);
  DecodeParts<S> parts;
  parts.linear = chunk_sum(z, p.layers);
  if (p.nonlinear) {
    auto t = sigmoid(conv2d(z, p.nl1.weight, p.nl1.bias, 1, 0));
    parts.nonlinear = sigmoid(conv2d(t, p.nl2.weight, p.nl2.bias, 1, 0));
    parts.xhat = add(parts.linear, parts.nonlinear);
  } else {
    parts.xhat = parts.linear;
  }
  return parts;
}

template <typename S>
Tensor<S> decode(const Tensor<S>& v, GeneralDecoderParams<S>& p) {
  return decode_parts(v, p).xhat;
}

template <typename S>
struct UnmixOutputs {
  Tensor<S> abundances;      // [B,P,H,H]
  Tensor<S> reconstruction;  // [B,L,H,H]
};

template <typename S>
UnmixOutputs<S> unmix_forward(const Tensor<S>& x, UnmixEncoderParams<S>& enc,
                              GeneralDecoderParams<S>& dec, Mode mode) {
  UnmixOutputs<S> out;
  out.abundances = normalize_abundance(encode(x, enc, mode));
  out.reconstruction = decode(out.abundances, dec);
  return out;
}

}  // namespace dsnet
