#pragma once

#include "dsnet/unmixing.hpp"

namespace dsnet {

/// CNN classifier pathway: two valid 3x3 convolutions (L->64->100, ReLU),
/// flatten, linear 100 with ReLU, linear to the class count.
template <typename S>
struct ClassifierParams {
  ConvLayer<S> conv1, conv2;
  Tensor<S> fc1_weight, fc1_bias;
  Tensor<S> fc2_weight, fc2_bias;
  std::int64_t bands = 0, classes = 0, patch = 0;

  static ClassifierParams init(std::int64_t bands, std::int64_t classes,
                               std::int64_t patch, Rng& rng) {
    if (patch != 5 && patch != 7) {
      throw DataError("classifier supports patch sizes 5 and 7, got " +
                      std::to_string(patch));
    }
    ClassifierParams p;
    p.bands = bands;
    p.classes = classes;
    p.patch = patch;
    p.conv1 = detail::make_conv<S>(64, bands, 3, true, rng);
    p.conv2 = detail::make_conv<S>(100, 64, 3, true, rng);
    const std::int64_t flat = 100 * (patch - 4) * (patch - 4);
    const S b1 = S(1) / std::sqrt(static_cast<S>(flat));
    p.fc1_weight = Tensor<S>::uniform({100, flat}, b1, rng, true);
    p.fc1_bias = Tensor<S>::zeros({100}, true);
    const S b2 = S(1) / std::sqrt(static_cast<S>(100));
    p.fc2_weight = Tensor<S>::uniform({classes, 100}, b2, rng, true);
    p.fc2_bias = Tensor<S>::zeros({classes}, true);
    return p;
  }
};

/// Subpixel fusion head: strided 3x3 convolution (pad 1, stride 2, channel
/// preserving) + BN + ReLU over the abundance patch, flattened and joined
/// with the class feature; one linear output layer.
template <typename S>
struct FusionParams {
  ConvLayer<S> conv;   // [P_em, P_em, 3, 3]
  BnLayer<S> bn;
  Tensor<S> out_weight, out_bias;  // [P_cls, S], [P_cls]
  std::int64_t endmembers = 0, classes = 0, patch = 0;

  static std::int64_t reduced_extent(std::int64_t patch) {
    return (patch + 1) / 2;  // conv 3x3, stride 2, pad 1
  }
  std::int64_t fused_width() const {
    return endmembers * reduced_extent(patch) * reduced_extent(patch) + classes;
  }

  static FusionParams init(std::int64_t endmembers, std::int64_t classes,
                           std::int64_t patch, Rng& rng) {
    FusionParams p;
    p.endmembers = endmembers;
    p.classes = classes;
    p.patch = patch;
    p.conv = detail::make_conv<S>(endmembers, endmembers, 3, true, rng);
    p.bn = detail::make_bn<S>(endmembers);
    const std::int64_t s = p.fused_width();
    const S bound = S(1) / std::sqrt(static_cast<S>(s));
    p.out_weight = Tensor<S>::uniform({classes, s}, bound, rng, true);
    p.out_bias = Tensor<S>::zeros({classes}, true);
    return p;
  }
};

/// Pixel-level class features c = fc2(relu(fc1(flatten(conv stack)))).
template <typename S>
Tensor<S> classify_features(const Tensor<S>& x, ClassifierParams<S>& p,
                            Mode /*mode*/) {
  if (x.dim(2) < 5 || x.dim(3) < 5) {
    throw ShapeError("classifier needs patches of at least 5x5, got " +
                     std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)));
  }
  auto h = relu(conv2d(x, p.conv1.weight, p.conv1.bias, 1, 0));
  h = relu(conv2d(h, p.conv2.weight, p.conv2.bias, 1, 0));
  auto f = relu(linear(flatten(h), p.fc1_weight,
                       std::optional<Tensor<S>>(p.fc1_bias)));
  return linear(f, p.fc2_weight, std::optional<Tensor<S>>(p.fc2_bias));
}

/// Joint representation s = [flatten(relu(bn(conv(v)))), c]; the abundance
/// block comes first, the class feature is appended unchanged.
template <typename S>
Tensor<S> fuse(const Tensor<S>& v, const Tensor<S>& c, FusionParams<S>& p,
               Mode mode) {
  auto reduced = conv2d(v, p.conv.weight, p.conv.bias, 2, 1);
  reduced = relu(detail::apply_bn(reduced, p.bn, mode));
  return concat<S>({flatten(reduced), c}, 1);
}

/// Class logits from the fused representation.
template <typename S>
Tensor<S> predict(const Tensor<S>& s, FusionParams<S>& p) {
  return linear(s, p.out_weight, std::optional<Tensor<S>>(p.out_bias));
}

/// Fusion-free ablation: the classifier's own output already is the logit
/// vector.
template <typename S>
Tensor<S> classifier_only_predict(const Tensor<S>& c) {
  return c;
}

}  // namespace dsnet
