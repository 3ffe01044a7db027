#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dsnet/losses.hpp"
#include "dsnet/model.hpp"
#include "dsnet/patches.hpp"

namespace dsnet {

enum class Schedule { Blended, Alternating };

struct TrainConfig {
  int epochs = 500;
  int batch_size = 64;
  double lr0 = 1e-3;
  double decay_factor = 0.9;
  int decay_every = 50;
  double lambda = 0.5;
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::Blended;
  bool log_wall_time = true;  // deterministic runs zero the elapsed column
};

/// Learning rate at a given epoch: lr0 * factor^floor(epoch / every).
inline double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw DataError("epoch must be >= 0");
  double lr = cfg.lr0;
  const int steps = epoch / cfg.decay_every;
  for (int i = 0; i < steps; ++i) lr *= cfg.decay_factor;
  return lr;
}

/// Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8.
template <typename S>
class AdamState {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::int64_t step_count() const { return t_; }

  /// One update over every trainable tensor of the model.
  void step(DsnetParams<S>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    std::size_t slot = 0;
    params.for_each_parameter([&](const std::string& name, Tensor<S>& p) {
      if (slot >= m_.size()) {
        m_.emplace_back(p.values().size(), 0.0);
        v_.emplace_back(p.values().size(), 0.0);
      }
      auto& m = m_[slot];
      auto& v = v_[slot];
      const auto& g = p.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        if (!std::isfinite(gi)) {
          throw NumericError("non-finite gradient in parameter '" + name +
                             "' at element " + std::to_string(i));
        }
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.values()[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + kEps));
      }
      ++slot;
    });
  }

 private:
  std::int64_t t_ = 0;
  // Moments kept in double regardless of the training scalar type.
  std::vector<std::vector<double>> m_, v_;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double re_loss = 0.0;
  double ce_loss = 0.0;
  double total_loss = 0.0;
  double elapsed_s = 0.0;
};

inline std::string log_header() {
  return "epoch,lr,re_loss,ce_loss,total_loss,elapsed_s";
}

inline std::string log_row(const EpochLog& e) {
  std::ostringstream os;
  os << e.epoch << "," << std::setprecision(17) << e.lr << "," << e.re_loss
     << "," << e.ce_loss << "," << e.total_loss << "," << std::setprecision(6)
     << std::fixed << e.elapsed_s;
  return os.str();
}

/// Batch plan for one epoch: a seeded reshuffle of the training indices cut
/// into batch_size chunks, keeping the last short chunk. Exposed separately
/// so the exactly-once-per-epoch property is checkable on its own.
inline std::vector<std::vector<std::size_t>> epoch_batches(
    const std::vector<std::size_t>& train_idx, std::uint64_t seed, int epoch,
    int batch_size) {
  std::vector<std::size_t> order(train_idx);
  Rng rng(mix_seed(seed, 0xba7c4 + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + start, order.begin() + stop);
  }
  return batches;
}

/// Joint training of both branches on the same patch batches. Every epoch
/// reshuffles the training indices with its own seeded stream; the last
/// short batch is kept, so each sample is visited exactly once per epoch.
template <typename S>
std::vector<EpochLog> train(
    const PatchSet<S>& patches, const std::vector<std::size_t>& train_idx,
    DsnetParams<S>& params, const TrainConfig& cfg,
    const std::function<void(const EpochLog&)>& on_epoch = nullptr,
    const std::function<void(int, DsnetParams<S>&)>& on_checkpoint = nullptr,
    int checkpoint_every = 0) {
  if (train_idx.empty()) throw DataError("train: empty training set");
  if (cfg.batch_size < 1) throw DataError("train: batch size must be >= 1");
  LossConfig loss_cfg{cfg.lambda};
  validate(loss_cfg);

  AdamState<S> adam;
  std::vector<EpochLog> logs;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(train_idx);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    Rng shuffle_rng(mix_seed(cfg.seed, 0xba7c4 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double sum_re = 0.0, sum_ce = 0.0, sum_total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + stop);
      const auto x = patches.make_batch(batch);
      const auto labels = patches.batch_labels(batch);

      double re_v = 0.0, ce_v = 0.0, total_v = 0.0;
      if (cfg.schedule == Schedule::Blended) {
        auto out = dsnet_forward(x, params, Mode::Train);
        auto re = re_loss(x, out.reconstruction);
        auto ce = ce_loss(out.logits, labels);
        auto total = total_loss(re, ce, loss_cfg);
        re_v = static_cast<double>(re.item());
        ce_v = static_cast<double>(ce.item());
        total_v = static_cast<double>(total.item());
        params.zero_grad();
        backward(total);
        adam.step(params, lr);
      } else {
        // Alternating: one reconstruction step, then one classification step.
        {
          auto out = dsnet_forward(x, params, Mode::Train);
          auto re = scale(re_loss(x, out.reconstruction),
                          static_cast<S>(cfg.lambda));
          re_v = static_cast<double>(re.item()) /
                 std::max(cfg.lambda, 1e-300);
          params.zero_grad();
          backward(re);
          adam.step(params, lr);
        }
        {
          auto out = dsnet_forward(x, params, Mode::Train);
          auto ce = scale(ce_loss(out.logits, labels),
                          static_cast<S>(1.0 - cfg.lambda));
          ce_v = static_cast<double>(ce.item()) /
                 std::max(1.0 - cfg.lambda, 1e-300);
          params.zero_grad();
          backward(ce);
          adam.step(params, lr);
        }
        total_v = cfg.lambda * re_v + (1.0 - cfg.lambda) * ce_v;
      }
      if (!std::isfinite(total_v)) {
        throw NumericError("non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      sum_re += re_v;
      sum_ce += ce_v;
      sum_total += total_v;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.re_loss = sum_re / batches;
    log.ce_loss = sum_ce / batches;
    log.total_loss = sum_total / batches;
    if (cfg.log_wall_time) {
      log.elapsed_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
    }
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (on_checkpoint && checkpoint_every > 0 &&
        (epoch + 1) % checkpoint_every == 0) {
      on_checkpoint(epoch, params);
    }
  }
  return logs;
}

}  // namespace dsnet
