#pragma once

#include <functional>
#include <optional>
#include <string>

#include "dsnet/checkpoint.hpp"
#include "dsnet/classifier.hpp"
#include "dsnet/unmixing.hpp"

namespace dsnet {

struct ModelConfig {
  std::int64_t bands = 0;
  std::int64_t classes = 0;
  std::int64_t endmembers = 0;  // defaults to classes
  std::int64_t patch = 7;
  std::int64_t decoder_layers = 2;
  bool fusion = true;
  bool nonlinear_decoder = true;
  bool relu_before_sum = true;
};

template <typename S>
struct DsnetOutputs {
  Tensor<S> abundances;
  Tensor<S> reconstruction;
  Tensor<S> class_features;
  Tensor<S> logits;
};

/// All trainable state of both branches plus the fusion head.
template <typename S>
struct DsnetParams {
  ModelConfig cfg;
  UnmixEncoderParams<S> encoder;
  GeneralDecoderParams<S> decoder;
  ClassifierParams<S> classifier;
  std::optional<FusionParams<S>> fusion;

  static DsnetParams init(ModelConfig cfg, std::uint64_t seed) {
    if (cfg.endmembers <= 0) cfg.endmembers = cfg.classes;
    Rng rng(mix_seed(seed, 0x1417));
    DsnetParams p;
    p.cfg = cfg;
    p.encoder = UnmixEncoderParams<S>::init(cfg.bands, cfg.endmembers, rng);
    p.decoder = GeneralDecoderParams<S>::init(
        cfg.bands, cfg.endmembers, cfg.decoder_layers, cfg.nonlinear_decoder,
        rng);
    p.decoder.relu_before_sum = cfg.relu_before_sum;
    p.classifier = ClassifierParams<S>::init(cfg.bands, cfg.classes, cfg.patch,
                                             rng);
    if (cfg.fusion) {
      p.fusion = FusionParams<S>::init(cfg.endmembers, cfg.classes, cfg.patch,
                                       rng);
    }
    return p;
  }

  /// Visits every trainable tensor in a fixed order.
  void for_each_parameter(
      const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    auto conv = [&](const std::string& base, ConvLayer<S>& c) {
      fn(base + ".weight", c.weight);
      if (c.bias) fn(base + ".bias", *c.bias);
    };
    auto bn = [&](const std::string& base, BnLayer<S>& b) {
      fn(base + ".gamma", b.gamma);
      fn(base + ".beta", b.beta);
    };
    conv("unmix.enc1.conv", encoder.conv1);
    bn("unmix.enc1.bn", encoder.bn1);
    conv("unmix.enc2.conv", encoder.conv2);
    bn("unmix.enc2.bn", encoder.bn2);
    conv("unmix.enc3.conv", encoder.conv3);
    fn("unmix.dec.G", decoder.g_weight);
    if (decoder.nonlinear) {
      conv("unmix.dec.nl1", decoder.nl1);
      conv("unmix.dec.nl2", decoder.nl2);
    }
    conv("cls.conv1", classifier.conv1);
    conv("cls.conv2", classifier.conv2);
    fn("cls.fc1.weight", classifier.fc1_weight);
    fn("cls.fc1.bias", classifier.fc1_bias);
    fn("cls.fc2.weight", classifier.fc2_weight);
    fn("cls.fc2.bias", classifier.fc2_bias);
    if (fusion) {
      conv("fusion.conv", fusion->conv);
      bn("fusion.bn", fusion->bn);
      fn("fusion.out.weight", fusion->out_weight);
      fn("fusion.out.bias", fusion->out_bias);
    }
  }

  /// Visits the non-trainable running statistics.
  void for_each_buffer(
      const std::function<void(const std::string&, std::vector<S>&)>& fn) {
    fn("unmix.enc1.bn.running_mean", encoder.bn1.running_mean);
    fn("unmix.enc1.bn.running_var", encoder.bn1.running_var);
    fn("unmix.enc2.bn.running_mean", encoder.bn2.running_mean);
    fn("unmix.enc2.bn.running_var", encoder.bn2.running_var);
    if (fusion) {
      fn("fusion.bn.running_mean", fusion->bn.running_mean);
      fn("fusion.bn.running_var", fusion->bn.running_var);
    }
  }

  std::int64_t parameter_count() {
    std::int64_t total = 0;
    for_each_parameter(
        [&](const std::string&, Tensor<S>& t) { total += t.size(); });
    return total;
  }

  void zero_grad() {
    for_each_parameter(
        [](const std::string&, Tensor<S>& t) { t.zero_grad(); });
  }

  ParamStore to_store() {
    ParamStore store;
    store.set_meta("bands", std::to_string(cfg.bands));
    store.set_meta("classes", std::to_string(cfg.classes));
    store.set_meta("endmembers", std::to_string(cfg.endmembers));
    store.set_meta("patch", std::to_string(cfg.patch));
    store.set_meta("decoder_layers", std::to_string(cfg.decoder_layers));
    store.set_meta("fusion", cfg.fusion ? "1" : "0");
    store.set_meta("nonlinear_decoder", cfg.nonlinear_decoder ? "1" : "0");
    store.set_meta("relu_before_sum", cfg.relu_before_sum ? "1" : "0");
    store.set_meta("flatten_order", "channel_major_row_major");
    for_each_parameter([&](const std::string& name, Tensor<S>& t) {
      std::vector<float> data(t.values().size());
      for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<float>(t.values()[i]);
      store.add(name, t.shape(), std::move(data));
    });
    for_each_buffer([&](const std::string& name, std::vector<S>& v) {
      std::vector<float> data(v.size());
      for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<float>(v[i]);
      store.add(name, Shape{static_cast<std::int64_t>(v.size())},
                std::move(data));
    });
    return store;
  }

  static DsnetParams from_store(const ParamStore& store) {
    ModelConfig cfg;
    cfg.bands = store.meta_int("bands");
    cfg.classes = store.meta_int("classes");
    cfg.endmembers = store.meta_int("endmembers");
    cfg.patch = store.meta_int("patch");
    cfg.decoder_layers = store.meta_int("decoder_layers");
    cfg.fusion = store.meta_int("fusion") != 0;
    cfg.nonlinear_decoder = store.meta_int("nonlinear_decoder") != 0;
    cfg.relu_before_sum = store.meta_int("relu_before_sum") != 0;
    DsnetParams p = init(cfg, 0);
    p.for_each_parameter([&](const std::string& name, Tensor<S>& t) {
      const auto& e = store.get(name);
      if (!same_shape(e.shape, t.shape())) {
        throw ShapeError("checkpoint array '" + name + "' has shape " +
                         shape_str(e.shape) + ", model expects " +
                         shape_str(t.shape()));
      }
      for (std::size_t i = 0; i < e.data.size(); ++i)
        t.values()[i] = static_cast<S>(e.data[i]);
    });
    p.for_each_buffer([&](const std::string& name, std::vector<S>& v) {
      const auto& e = store.get(name);
      if (e.data.size() != v.size()) {
        throw ShapeError("checkpoint buffer '" + name + "' has length " +
                         std::to_string(e.data.size()) + ", model expects " +
                         std::to_string(v.size()));
      }
      for (std::size_t i = 0; i < e.data.size(); ++i)
        v[i] = static_cast<S>(e.data[i]);
    });
    return p;
  }
};

/// Full dual-branch forward pass on one patch batch.
template <typename S>
DsnetOutputs<S> dsnet_forward(const Tensor<S>& x, DsnetParams<S>& p,
                              Mode mode) {
  DsnetOutputs<S> out;
  auto unmix = unmix_forward(x, p.encoder, p.decoder, mode);
  out.abundances = unmix.abundances;
  out.reconstruction = unmix.reconstruction;
  out.class_features = classify_features(x, p.classifier, mode);
  if (p.fusion) {
    auto s = fuse(out.abundances, out.class_features, *p.fusion, mode);
    out.logits = predict(s, *p.fusion);
  } else {
    out.logits = classifier_only_predict(out.class_features);
  }
  return out;
}

}  // namespace dsnet
