#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dsnet/tensor.hpp"

namespace dsnet {

enum class Mode { Train, Eval };

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                      const char* op) {
  if (!same_shape(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(
      a.shape(), std::move(out), {an, bn},
      [an, bn](detail::TensorNode<S>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i];
        }
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<S>(
      a.shape(), std::move(out), {an, bn},
      [an, bn](detail::TensorNode<S>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i] * an->value[i];
        }
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  std::vector<S> out(a.values());
  for (auto& x : out) x *= factor;
  auto an = a.node();
  return detail::make_op<S>(
      a.shape(), std::move(out), {an},
      [an, factor](detail::TensorNode<S>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          an->grad[i] += factor * self.grad[i];
      });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  std::vector<S> out(x.values());
  for (auto& v : out) v = v > S(0) ? v : S(0);
  auto xn = x.node();
  return detail::make_op<S>(
      x.shape(), std::move(out), {xn},
      [xn](detail::TensorNode<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (xn->value[i] > S(0)) xn->grad[i] += self.grad[i];
        }
      });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  std::vector<S> out(x.values());
  for (auto& v : out) {
    // Branch form avoids exp overflow on large negative inputs.
    if (v >= S(0)) {
      v = S(1) / (S(1) + std::exp(-v));
    } else {
      const S e = std::exp(v);
      v = e / (S(1) + e);
    }
  }
  auto xn = x.node();
  return detail::make_op<S>(
      x.shape(), std::move(out), {xn},
      [xn](detail::TensorNode<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const S y = self.value[i];
          xn->grad[i] += self.grad[i] * y * (S(1) - y);
        }
      });
}

/// y = x W^T + b with x:[B,Din], W:[Dout,Din], b:[Dout].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w,
                 const std::optional<Tensor<S>>& bias = std::nullopt) {
  if (x.ndim() != 2 || w.ndim() != 2) {
    throw ShapeError("linear: expected 2-d input and weight, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const std::int64_t B = x.dim(0), din = x.dim(1);
  const std::int64_t dout = w.dim(0);
  if (w.dim(1) != din) {
    throw ShapeError("linear: input feature axis 1 (=" + std::to_string(din) +
                     ") does not match weight columns (=" +
                     std::to_string(w.dim(1)) + ")");
  }
  if (bias && bias->size() != dout) {
    throw ShapeError("linear: bias length " + std::to_string(bias->size()) +
                     " does not match output features " +
                     std::to_string(dout));
  }
  std::vector<S> out(static_cast<std::size_t>(B * dout));
  detail::ConstMatMap<S> xm(x.data(), B, din);
  detail::ConstMatMap<S> wm(w.data(), dout, din);
  detail::MatMap<S> om(out.data(), B, dout);
  om.noalias() = xm * wm.transpose();
  if (bias) {
    for (std::int64_t i = 0; i < B; ++i)
      for (std::int64_t j = 0; j < dout; ++j)
        out[static_cast<std::size_t>(i * dout + j)] += bias->data()[j];
  }
  auto xn = x.node(), wn = w.node();
  auto bnode = bias ? bias->node() : nullptr;
  std::vector<std::shared_ptr<detail::TensorNode<S>>> parents{xn, wn};
  if (bnode) parents.push_back(bnode);
  return detail::make_op<S>(
      Shape{B, dout}, std::move(out), std::move(parents),
      [xn, wn, bnode, B, din, dout](detail::TensorNode<S>& self) {
        detail::ConstMatMap<S> gm(self.grad.data(), B, dout);
        detail::ConstMatMap<S> xm(xn->value.data(), B, din);
        detail::ConstMatMap<S> wm(wn->value.data(), dout, din);
        if (xn->requires_grad) {
          xn->ensure_grad();
          detail::MatMap<S> gx(xn->grad.data(), B, din);
          gx.noalias() += gm * wm;
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          detail::MatMap<S> gw(wn->grad.data(), dout, din);
          gw.noalias() += gm.transpose() * xm;
        }
        if (bnode && bnode->requires_grad) {
          bnode->ensure_grad();
          for (std::int64_t i = 0; i < B; ++i)
            for (std::int64_t j = 0; j < dout; ++j)
              bnode->grad[static_cast<std::size_t>(j)] +=
                  self.grad[static_cast<std::size_t>(i * dout + j)];
        }
      });
}

namespace detail {

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel,
                                    std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Gathers kernel windows into a [Cin*k*k, Ho*Wo] matrix.
template <typename S>
void im2col(const S* x, std::int64_t cin, std::int64_t h, std::int64_t w,
            std::int64_t k, std::int64_t stride, std::int64_t pad,
            std::int64_t ho, std::int64_t wo, S* cols) {
  const std::int64_t n = ho * wo;
  for (std::int64_t ci = 0; ci < cin; ++ci) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        S* row = cols + ((ci * k + ki) * k + kj) * n;
        for (std::int64_t oi = 0; oi < ho; ++oi) {
          const std::int64_t ih = oi * stride - pad + ki;
          for (std::int64_t oj = 0; oj < wo; ++oj) {
            const std::int64_t iw = oj * stride - pad + kj;
            row[oi * wo + oj] =
                (ih >= 0 && ih < h && iw >= 0 && iw < w)
                    ? x[(ci * h + ih) * w + iw]
                    : S(0);
          }
        }
      }
    }
  }
}

/// Scatter-adds a column matrix back onto the input gradient.
template <typename S>
void col2im_add(const S* cols, std::int64_t cin, std::int64_t h,
                std::int64_t w, std::int64_t k, std::int64_t stride,
                std::int64_t pad, std::int64_t ho, std::int64_t wo, S* gx) {
  const std::int64_t n = ho * wo;
  for (std::int64_t ci = 0; ci < cin; ++ci) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const S* row = cols + ((ci * k + ki) * k + kj) * n;
        for (std::int64_t oi = 0; oi < ho; ++oi) {
          const std::int64_t ih = oi * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          for (std::int64_t oj = 0; oj < wo; ++oj) {
            const std::int64_t iw = oj * stride - pad + kj;
            if (iw < 0 || iw >= w) continue;
            gx[(ci * h + ih) * w + iw] += row[oi * wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-d convolution over x:[B,Cin,H,W] with weight:[Cout,Cin,k,k].
/// Supported hyperparameters: kernel 1 or 3, stride 1 or 2, padding 0 or 1.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w,
                 const std::optional<Tensor<S>>& bias, std::int64_t stride,
                 std::int64_t pad) {
  if (x.ndim() != 4) {
    throw ShapeError("conv2d: expected 4-d input [B,C,H,W], got " +
                     shape_str(x.shape()));
  }
  if (w.ndim() != 4 || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d: expected square weight [Cout,Cin,k,k], got " +
                     shape_str(w.shape()));
  }
  const std::int64_t k = w.dim(2);
  if (k != 1 && k != 3) {
    throw ShapeError("conv2d: unsupported kernel size " + std::to_string(k));
  }
  if (stride != 1 && stride != 2) {
    throw ShapeError("conv2d: unsupported stride " + std::to_string(stride));
  }
  if (pad != 0 && pad != 1) {
    throw ShapeError("conv2d: unsupported padding " + std::to_string(pad));
  }
  const std::int64_t B = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (w.dim(1) != cin) {
    throw ShapeError("conv2d: input channel axis 1 (=" + std::to_string(cin) +
                     ") does not match weight Cin (=" +
                     std::to_string(w.dim(1)) + ")");
  }
  const std::int64_t cout = w.dim(0);
  const std::int64_t ho = detail::conv_out_extent(h, k, stride, pad);
  const std::int64_t wo = detail::conv_out_extent(wd, k, stride, pad);
  if (ho < 1 || wo < 1) {
    throw ShapeError("conv2d: spatial extent " + std::to_string(h) + "x" +
                     std::to_string(wd) + " too small for kernel " +
                     std::to_string(k));
  }
  if (bias && bias->size() != cout) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias->size()) +
                     " does not match Cout " + std::to_string(cout));
  }

  const std::int64_t ck = cin * k * k;
  const std::int64_t n = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  std::vector<S> out(static_cast<std::size_t>(B * cout * n));
  detail::ConstMatMap<S> wm(w.data(), cout, ck);
  std::vector<S> cols;
  if (!pointwise) cols.resize(static_cast<std::size_t>(ck * n));
  for (std::int64_t b = 0; b < B; ++b) {
    const S* xb = x.data() + b * cin * h * wd;
    detail::MatMap<S> ob(out.data() + b * cout * n, cout, n);
    if (pointwise) {
      detail::ConstMatMap<S> cm(xb, ck, n);
      ob.noalias() = wm * cm;
    } else {
      detail::im2col(xb, cin, h, wd, k, stride, pad, ho, wo, cols.data());
      detail::ConstMatMap<S> cm(cols.data(), ck, n);
      ob.noalias() = wm * cm;
    }
    if (bias) {
      for (std::int64_t c = 0; c < cout; ++c) {
        S* orow = out.data() + (b * cout + c) * n;
        const S bv = bias->data()[c];
        for (std::int64_t i = 0; i < n; ++i) orow[i] += bv;
      }
    }
  }

  auto xn = x.node(), wn = w.node();
  auto bnode = bias ? bias->node() : nullptr;
  std::vector<std::shared_ptr<detail::TensorNode<S>>> parents{xn, wn};
  if (bnode) parents.push_back(bnode);
  return detail::make_op<S>(
      Shape{B, cout, ho, wo}, std::move(out), std::move(parents),
      [xn, wn, bnode, B, cin, h, wd, k, stride, pad, cout, ho, wo,
       pointwise](detail::TensorNode<S>& self) {
        const std::int64_t ck = cin * k * k;
        const std::int64_t n = ho * wo;
        detail::ConstMatMap<S> wm(wn->value.data(), cout, ck);
        std::vector<S> cols;
        std::vector<S> gcols;
        if (!pointwise) cols.resize(static_cast<std::size_t>(ck * n));
        if (xn->requires_grad) {
          xn->ensure_grad();
          gcols.resize(static_cast<std::size_t>(ck * n));
        }
        if (wn->requires_grad) wn->ensure_grad();
        if (bnode && bnode->requires_grad) bnode->ensure_grad();
        for (std::int64_t b = 0; b < B; ++b) {
          detail::ConstMatMap<S> gb(self.grad.data() + b * cout * n, cout, n);
          const S* xb = xn->value.data() + b * cin * h * wd;
          if (wn->requires_grad) {
            detail::MatMap<S> gw(wn->grad.data(), cout, ck);
            if (pointwise) {
              detail::ConstMatMap<S> cm(xb, ck, n);
              gw.noalias() += gb * cm.transpose();
            } else {
              detail::im2col(xb, cin, h, wd, k, stride, pad, ho, wo,
                             cols.data());
              detail::ConstMatMap<S> cm(cols.data(), ck, n);
              gw.noalias() += gb * cm.transpose();
            }
          }
          if (xn->requires_grad) {
            if (pointwise) {
              detail::MatMap<S> gx(xn->grad.data() + b * cin * h * wd, ck, n);
              gx.noalias() += wm.transpose() * gb;
            } else {
              detail::MatMap<S> gc(gcols.data(), ck, n);
              gc.noalias() = wm.transpose() * gb;
              detail::col2im_add(gcols.data(), cin, h, wd, k, stride, pad, ho,
                                 wo, xn->grad.data() + b * cin * h * wd);
            }
          }
          if (bnode && bnode->requires_grad) {
            for (std::int64_t c = 0; c < cout; ++c) {
              const S* grow = self.grad.data() + (b * cout + c) * n;
              S acc = S(0);
              for (std::int64_t i = 0; i < n; ++i) acc += grow[i];
              bnode->grad[static_cast<std::size_t>(c)] += acc;
            }
          }
        }
      });
}

/// Per-channel batch normalization over x:[B,C,H,W]. Train mode normalizes
/// with batch statistics and folds them into the running estimates
/// (running <- momentum*running + (1-momentum)*batch); eval mode applies the
/// running estimates.
template <typename S>
Tensor<S> batchnorm(const Tensor<S>& x, const Tensor<S>& gamma,
                    const Tensor<S>& beta, std::vector<S>& running_mean,
                    std::vector<S>& running_var, S momentum, S eps,
                    Mode mode) {
  if (x.ndim() != 4) {
    throw ShapeError("batchnorm: expected 4-d input [B,C,H,W], got " +
                     shape_str(x.shape()));
  }
  const std::int64_t B = x.dim(0), C = x.dim(1), spatial = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C ||
      static_cast<std::int64_t>(running_mean.size()) != C ||
      static_cast<std::int64_t>(running_var.size()) != C) {
    throw ShapeError("batchnorm: parameter length does not match channel "
                     "axis 1 (=" + std::to_string(C) + ")");
  }
  const std::int64_t m = B * spatial;
  if (mode == Mode::Train && m < 2) {
    throw NumericError("batchnorm: train mode needs at least 2 values per "
                       "channel to estimate variance, got " +
                       std::to_string(m));
  }

  std::vector<S> mu(static_cast<std::size_t>(C), S(0));
  std::vector<S> invstd(static_cast<std::size_t>(C), S(0));
  if (mode == Mode::Train) {
    for (std::int64_t c = 0; c < C; ++c) {
      S sum = S(0);
      for (std::int64_t b = 0; b < B; ++b) {
        const S* p = x.data() + (b * C + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) sum += p[i];
      }
      const S mean = sum / static_cast<S>(m);
      S var = S(0);
      for (std::int64_t b = 0; b < B; ++b) {
        const S* p = x.data() + (b * C + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) {
          const S d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<S>(m);
      mu[static_cast<std::size_t>(c)] = mean;
      invstd[static_cast<std::size_t>(c)] = S(1) / std::sqrt(var + eps);
      running_mean[static_cast<std::size_t>(c)] =
          momentum * running_mean[static_cast<std::size_t>(c)] +
          (S(1) - momentum) * mean;
      running_var[static_cast<std::size_t>(c)] =
          momentum * running_var[static_cast<std::size_t>(c)] +
          (S(1) - momentum) * var;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mu[static_cast<std::size_t>(c)] = running_mean[static_cast<std::size_t>(c)];
      invstd[static_cast<std::size_t>(c)] =
          S(1) / std::sqrt(running_var[static_cast<std::size_t>(c)] + eps);
    }
  }

  std::vector<S> out(x.values().size());
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const S* p = x.data() + (b * C + c) * spatial;
      S* o = out.data() + (b * C + c) * spatial;
      const S g = gamma.data()[c], bt = beta.data()[c];
      const S mc = mu[static_cast<std::size_t>(c)];
      const S is = invstd[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < spatial; ++i) {
        o[i] = g * (p[i] - mc) * is + bt;
      }
    }
  }

  auto xn = x.node(), gn = gamma.node(), btn = beta.node();
  const bool train = (mode == Mode::Train);
  return detail::make_op<S>(
      x.shape(), std::move(out), {xn, gn, btn},
      [xn, gn, btn, B, C, spatial, mu = std::move(mu),
       invstd = std::move(invstd), train](detail::TensorNode<S>& self) {
        const std::int64_t m = B * spatial;
        for (std::int64_t c = 0; c < C; ++c) {
          const S mc = mu[static_cast<std::size_t>(c)];
          const S is = invstd[static_cast<std::size_t>(c)];
          const S gv = gn->value[static_cast<std::size_t>(c)];
          S sum_g = S(0), sum_gx = S(0);
          for (std::int64_t b = 0; b < B; ++b) {
            const S* gp = self.grad.data() + (b * C + c) * spatial;
            const S* xp = xn->value.data() + (b * C + c) * spatial;
            for (std::int64_t i = 0; i < spatial; ++i) {
              sum_g += gp[i];
              sum_gx += gp[i] * (xp[i] - mc) * is;
            }
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            gn->grad[static_cast<std::size_t>(c)] += sum_gx;
          }
          if (btn->requires_grad) {
            btn->ensure_grad();
            btn->grad[static_cast<std::size_t>(c)] += sum_g;
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            const S mean_g = sum_g / static_cast<S>(m);
            const S mean_gx = sum_gx / static_cast<S>(m);
            for (std::int64_t b = 0; b < B; ++b) {
              const S* gp = self.grad.data() + (b * C + c) * spatial;
              const S* xp = xn->value.data() + (b * C + c) * spatial;
              S* gx = xn->grad.data() + (b * C + c) * spatial;
              if (train) {
                for (std::int64_t i = 0; i < spatial; ++i) {
                  const S xhat = (xp[i] - mc) * is;
                  gx[i] += gv * is * (gp[i] - mean_g - xhat * mean_gx);
                }
              } else {
                for (std::int64_t i = 0; i < spatial; ++i) {
                  gx[i] += gv * is * gp[i];
                }
              }
            }
          }
        }
      });
}

/// Collapses all axes after the batch axis: [B, ...] -> [B, prod(...)].
template <typename S>
Tensor<S> flatten(const Tensor<S>& x) {
  if (x.ndim() < 2) {
    throw ShapeError("flatten: expected at least 2 axes, got " +
                     shape_str(x.shape()));
  }
  const std::int64_t B = x.dim(0);
  const std::int64_t rest = numel(x.shape()) / B;
  std::vector<S> out(x.values());
  auto xn = x.node();
  return detail::make_op<S>(
      Shape{B, rest}, std::move(out), {xn},
      [xn](detail::TensorNode<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          xn->grad[i] += self.grad[i];
      });
}

/// Concatenates tensors along `axis`; all other axes must agree.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s0));
  }
  std::int64_t axis_total = 0;
  for (const auto& t : xs) {
    if (t.ndim() != s0.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(t.shape()) +
                       " vs " + shape_str(s0));
    }
    for (std::size_t d = 0; d < s0.size(); ++d) {
      if (d != axis && t.shape()[d] != s0[d]) {
        throw ShapeError("concat: inputs disagree on axis " +
                         std::to_string(d) + ": " + shape_str(t.shape()) +
                         " vs " + shape_str(s0));
      }
    }
    axis_total += t.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

  std::vector<S> out(static_cast<std::size_t>(numel(out_shape)));
  std::int64_t offset = 0;
  for (const auto& t : xs) {
    const std::int64_t a = t.shape()[axis];
    for (std::int64_t o = 0; o < outer; ++o) {
      const S* src = t.data() + o * a * inner;
      S* dst = out.data() + (o * axis_total + offset) * inner;
      std::copy(src, src + a * inner, dst);
    }
    offset += a;
  }

  std::vector<std::shared_ptr<detail::TensorNode<S>>> parents;
  std::vector<std::int64_t> sizes;
  parents.reserve(xs.size());
  for (const auto& t : xs) {
    parents.push_back(t.node());
    sizes.push_back(t.shape()[axis]);
  }
  return detail::make_op<S>(
      std::move(out_shape), std::move(out), std::move(parents),
      [outer, inner, axis_total, sizes](detail::TensorNode<S>& self) {
        std::int64_t offset = 0;
        for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
          auto& p = self.parents[pi];
          const std::int64_t a = sizes[pi];
          if (p->requires_grad) {
            p->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
              const S* src = self.grad.data() + (o * axis_total + offset) * inner;
              S* dst = p->grad.data() + o * a * inner;
              for (std::int64_t i = 0; i < a * inner; ++i) dst[i] += src[i];
            }
          }
          offset += a;
        }
      });
}

/// Splits along `axis` into pieces of the given sizes; inverse of concat.
template <typename S>
std::vector<Tensor<S>> split(const Tensor<S>& x, std::size_t axis,
                             const std::vector<std::int64_t>& sizes) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError("split: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  }
  std::int64_t total = 0;
  for (auto v : sizes) total += v;
  if (total != s[axis]) {
    throw ShapeError("split: piece sizes sum to " + std::to_string(total) +
                     " but axis " + std::to_string(axis) + " has extent " +
                     std::to_string(s[axis]));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];

  std::vector<Tensor<S>> pieces;
  auto xn = x.node();
  std::int64_t offset = 0;
  for (auto a : sizes) {
    Shape ps = s;
    ps[axis] = a;
    std::vector<S> val(static_cast<std::size_t>(numel(ps)));
    for (std::int64_t o = 0; o < outer; ++o) {
      const S* src = x.data() + (o * s[axis] + offset) * inner;
      std::copy(src, src + a * inner, val.data() + o * a * inner);
    }
    const std::int64_t off = offset;
    const std::int64_t axis_total = s[axis];
    pieces.push_back(detail::make_op<S>(
        std::move(ps), std::move(val), {xn},
        [xn, outer, inner, off, a, axis_total](detail::TensorNode<S>& self) {
          if (!xn->requires_grad) return;
          xn->ensure_grad();
          for (std::int64_t o = 0; o < outer; ++o) {
            const S* src = self.grad.data() + o * a * inner;
            S* dst = xn->grad.data() + (o * axis_total + off) * inner;
            for (std::int64_t i = 0; i < a * inner; ++i) dst[i] += src[i];
          }
        }));
    offset += a;
  }
  return pieces;
}

/// Sums `chunks` equal channel blocks: [B, C*chunks, H, W] -> [B, C, H, W].
template <typename S>
Tensor<S> chunk_sum(const Tensor<S>& x, std::int64_t chunks) {
  if (x.ndim() != 4) {
    throw ShapeError("chunk_sum: expected 4-d input, got " +
                     shape_str(x.shape()));
  }
  const std::int64_t B = x.dim(0), ctot = x.dim(1),
                     spatial = x.dim(2) * x.dim(3);
  if (chunks < 1 || ctot % chunks != 0) {
    throw ShapeError("chunk_sum: channel axis 1 (=" + std::to_string(ctot) +
                     ") is not divisible into " + std::to_string(chunks) +
                     " chunks");
  }
  const std::int64_t C = ctot / chunks;
  std::vector<S> out(static_cast<std::size_t>(B * C * spatial), S(0));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t k = 0; k < chunks; ++k) {
      for (std::int64_t c = 0; c < C; ++c) {
        const S* src = x.data() + ((b * ctot) + k * C + c) * spatial;
        S* dst = out.data() + (b * C + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) dst[i] += src[i];
      }
    }
  }
  auto xn = x.node();
  return detail::make_op<S>(
      Shape{B, C, x.dim(2), x.dim(3)}, std::move(out), {xn},
      [xn, B, C, chunks, ctot, spatial](detail::TensorNode<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t k = 0; k < chunks; ++k) {
            for (std::int64_t c = 0; c < C; ++c) {
              const S* src = self.grad.data() + (b * C + c) * spatial;
              S* dst = xn->grad.data() + ((b * ctot) + k * C + c) * spatial;
              for (std::int64_t i = 0; i < spatial; ++i) dst[i] += src[i];
            }
          }
        }
      });
}

/// Per-pixel rectified sum-normalization over the channel axis of
/// [B,P,H,W]: v_p = (|h_p| + eps) / (sum_q |h_q| + P*eps). The output lies
/// exactly on the probability simplex; an all-zero code maps to 1/P.
template <typename S>
Tensor<S> simplex_normalize(const Tensor<S>& x, S eps) {
  if (x.ndim() != 4) {
    throw ShapeError("simplex_normalize: expected 4-d input, got " +
                     shape_str(x.shape()));
  }
  const std::int64_t B = x.dim(0), P = x.dim(1),
                     spatial = x.dim(2) * x.dim(3);
  std::vector<S> out(x.values().size());
  std::vector<S> inv_denom(static_cast<std::size_t>(B * spatial));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < spatial; ++i) {
      S s = static_cast<S>(P) * eps;
      for (std::int64_t p = 0; p < P; ++p) {
        s += std::abs(x.data()[(b * P + p) * spatial + i]);
      }
      const S inv = S(1) / s;
      inv_denom[static_cast<std::size_t>(b * spatial + i)] = inv;
      for (std::int64_t p = 0; p < P; ++p) {
        const std::int64_t idx = (b * P + p) * spatial + i;
        out[static_cast<std::size_t>(idx)] =
            (std::abs(x.data()[idx]) + eps) * inv;
      }
    }
  }
  auto xn = x.node();
  return detail::make_op<S>(
      x.shape(), std::move(out), {xn},
      [xn, B, P, spatial, inv_denom = std::move(inv_denom)](
          detail::TensorNode<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t i = 0; i < spatial; ++i) {
            const S inv = inv_denom[static_cast<std::size_t>(b * spatial + i)];
            S dot = S(0);
            for (std::int64_t p = 0; p < P; ++p) {
              const std::int64_t idx = (b * P + p) * spatial + i;
              dot += self.grad[static_cast<std::size_t>(idx)] *
                     self.value[static_cast<std::size_t>(idx)];
            }
            for (std::int64_t p = 0; p < P; ++p) {
              const std::int64_t idx = (b * P + p) * spatial + i;
              const S xv = xn->value[static_cast<std::size_t>(idx)];
              const S sgn = xv > S(0) ? S(1) : (xv < S(0) ? S(-1) : S(0));
              xn->grad[static_cast<std::size_t>(idx)] +=
                  sgn * inv *
                  (self.grad[static_cast<std::size_t>(idx)] - dot);
            }
          }
        }
      });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = S(0);
  for (const auto& v : x.values()) acc += v;
  auto xn = x.node();
  return detail::make_op<S>(
      Shape{1}, std::vector<S>{acc}, {xn},
      [xn](detail::TensorNode<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const S g = self.grad[0];
        for (auto& gv : xn->grad) gv += g;
      });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  const S inv = S(1) / static_cast<S>(x.size());
  S acc = S(0);
  for (const auto& v : x.values()) acc += v;
  acc *= inv;
  auto xn = x.node();
  return detail::make_op<S>(
      Shape{1}, std::vector<S>{acc}, {xn},
      [xn, inv](detail::TensorNode<S>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const S g = self.grad[0] * inv;
        for (auto& gv : xn->grad) gv += g;
      });
}

namespace detail {

/// Spectral angle between two length-L vectors plus the pieces its gradient
/// needs. Cosine is clamped just inside [-1, 1]; a clamped angle contributes
/// zero gradient (the angle is not differentiable at 0 and pi).
template <typename S>
struct AngleParts {
  S theta;
  S dot, nu, nw;
  bool clamped;
};

template <typename S>
AngleParts<S> spectral_angle(const S* u, const S* w, std::int64_t len) {
  S dot = S(0), nu2 = S(0), nw2 = S(0);
  for (std::int64_t i = 0; i < len; ++i) {
    dot += u[i] * w[i];
    nu2 += u[i] * u[i];
    nw2 += w[i] * w[i];
  }
  if (nu2 == S(0) || nw2 == S(0)) {
    throw NumericError("spectral angle undefined for a zero vector");
  }
  const S nu = std::sqrt(nu2), nw = std::sqrt(nw2);
  S c = dot / (nu * nw);
  const S lim = S(1) - S(1e-12);
  bool clamped = false;
  if (c > lim) { c = lim; clamped = true; }
  if (c < -lim) { c = -lim; clamped = true; }
  return {std::acos(c), dot, nu, nw, clamped};
}

template <typename S>
void spectral_angle_backward(const AngleParts<S>& a, const S* u, const S* w,
                             std::int64_t len, S gscale, S* gu, S* gw) {
  if (a.clamped) return;
  const S c = a.dot / (a.nu * a.nw);
  const S coeff = -gscale / std::sqrt(S(1) - c * c);
  const S inv_nunw = S(1) / (a.nu * a.nw);
  if (gu) {
    const S cu = a.dot / (a.nu * a.nu);
    for (std::int64_t i = 0; i < len; ++i) {
      gu[i] += coeff * (w[i] - cu * u[i]) * inv_nunw;
    }
  }
  if (gw) {
    const S cw = a.dot / (a.nw * a.nw);
    for (std::int64_t i = 0; i < len; ++i) {
      gw[i] += coeff * (u[i] - cw * w[i]) * inv_nunw;
    }
  }
}

}  // namespace detail

/// Spectral angle distance between two 1-d spectra, in radians.
template <typename S>
Tensor<S> sad(const Tensor<S>& u, const Tensor<S>& w) {
  detail::check_same_shape(u, w, "sad");
  if (u.ndim() != 1 || u.size() < 2) {
    throw ShapeError("sad: expected 1-d spectra of length >= 2, got " +
                     shape_str(u.shape()));
  }
  auto parts = detail::spectral_angle(u.data(), w.data(), u.size());
  auto un = u.node(), wn = w.node();
  const std::int64_t len = u.size();
  return detail::make_op<S>(
      Shape{1}, std::vector<S>{parts.theta}, {un, wn},
      [un, wn, parts, len](detail::TensorNode<S>& self) {
        S* gu = nullptr;
        S* gw = nullptr;
        if (un->requires_grad) { un->ensure_grad(); gu = un->grad.data(); }
        if (wn->requires_grad) { wn->ensure_grad(); gw = wn->grad.data(); }
        detail::spectral_angle_backward(parts, un->value.data(),
                                        wn->value.data(), len, self.grad[0],
                                        gu, gw);
      });
}

/// Reconstruction loss: mean over batch and pixel positions of the spectral
/// angle between each pixel spectrum of x and xhat ([B,L,H,W] each).
template <typename S>
Tensor<S> re_loss(const Tensor<S>& x, const Tensor<S>& xhat) {
  detail::check_same_shape(x, xhat, "re_loss");
  if (x.ndim() != 4) {
    throw ShapeError("re_loss: expected 4-d patch batches, got " +
                     shape_str(x.shape()));
  }
  const std::int64_t B = x.dim(0), L = x.dim(1),
                     spatial = x.dim(2) * x.dim(3);
  if (L < 2) {
    throw ShapeError("re_loss: spectral axis 1 must have length >= 2, got " +
                     std::to_string(L));
  }
  // Pixel spectra are strided (channel-major layout), gather per pixel.
  std::vector<S> u(static_cast<std::size_t>(L)), w(static_cast<std::size_t>(L));
  S acc = S(0);
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < spatial; ++i) {
      for (std::int64_t l = 0; l < L; ++l) {
        u[static_cast<std::size_t>(l)] = x.data()[(b * L + l) * spatial + i];
        w[static_cast<std::size_t>(l)] =
            xhat.data()[(b * L + l) * spatial + i];
      }
      acc += detail::spectral_angle(u.data(), w.data(), L).theta;
    }
  }
  acc /= static_cast<S>(B * spatial);

  auto xn = x.node(), hn = xhat.node();
  return detail::make_op<S>(
      Shape{1}, std::vector<S>{acc}, {xn, hn},
      [xn, hn, B, L, spatial](detail::TensorNode<S>& self) {
        const S gscale = self.grad[0] / static_cast<S>(B * spatial);
        std::vector<S> u(static_cast<std::size_t>(L)),
            w(static_cast<std::size_t>(L)),
            gu(static_cast<std::size_t>(L)), gw(static_cast<std::size_t>(L));
        if (xn->requires_grad) xn->ensure_grad();
        if (hn->requires_grad) hn->ensure_grad();
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t i = 0; i < spatial; ++i) {
            for (std::int64_t l = 0; l < L; ++l) {
              u[static_cast<std::size_t>(l)] =
                  xn->value[static_cast<std::size_t>((b * L + l) * spatial + i)];
              w[static_cast<std::size_t>(l)] =
                  hn->value[static_cast<std::size_t>((b * L + l) * spatial + i)];
            }
            auto parts = detail::spectral_angle(u.data(), w.data(), L);
            std::fill(gu.begin(), gu.end(), S(0));
            std::fill(gw.begin(), gw.end(), S(0));
            detail::spectral_angle_backward(
                parts, u.data(), w.data(), L, gscale,
                xn->requires_grad ? gu.data() : nullptr,
                hn->requires_grad ? gw.data() : nullptr);
            if (xn->requires_grad) {
              for (std::int64_t l = 0; l < L; ++l) {
                xn->grad[static_cast<std::size_t>((b * L + l) * spatial + i)] +=
                    gu[static_cast<std::size_t>(l)];
              }
            }
            if (hn->requires_grad) {
              for (std::int64_t l = 0; l < L; ++l) {
                hn->grad[static_cast<std::size_t>((b * L + l) * spatial + i)] +=
                    gw[static_cast<std::size_t>(l)];
              }
            }
          }
        }
      });
}

/// Softmax cross-entropy from logits [B,P]; labels are class ids in 1..P.
template <typename S>
Tensor<S> ce_loss(const Tensor<S>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) {
    throw ShapeError("ce_loss: expected 2-d logits [B,P], got " +
                     shape_str(logits.shape()));
  }
  const std::int64_t B = logits.dim(0), P = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("ce_loss: batch axis 0 (=" + std::to_string(B) +
                     ") does not match label count " +
                     std::to_string(labels.size()));
  }
  for (std::int64_t i = 0; i < B; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 1 ||
        labels[static_cast<std::size_t>(i)] > P) {
      throw DataError("ce_loss: label " +
                      std::to_string(labels[static_cast<std::size_t>(i)]) +
                      " at row " + std::to_string(i) + " outside 1.." +
                      std::to_string(P));
    }
  }
  S acc = S(0);
  for (std::int64_t i = 0; i < B; ++i) {
    const S* z = logits.data() + i * P;
    S mx = z[0];
    for (std::int64_t j = 1; j < P; ++j) mx = std::max(mx, z[j]);
    S lse = S(0);
    for (std::int64_t j = 0; j < P; ++j) lse += std::exp(z[j] - mx);
    lse = mx + std::log(lse);
    acc += lse - z[labels[static_cast<std::size_t>(i)] - 1];
  }
  acc /= static_cast<S>(B);
  auto zn = logits.node();
  return detail::make_op<S>(
      Shape{1}, std::vector<S>{acc}, {zn},
      [zn, B, P, labels](detail::TensorNode<S>& self) {
        if (!zn->requires_grad) return;
        zn->ensure_grad();
        const S g = self.grad[0] / static_cast<S>(B);
        for (std::int64_t i = 0; i < B; ++i) {
          const S* z = zn->value.data() + i * P;
          S mx = z[0];
          for (std::int64_t j = 1; j < P; ++j) mx = std::max(mx, z[j]);
          S denom = S(0);
          for (std::int64_t j = 0; j < P; ++j) denom += std::exp(z[j] - mx);
          for (std::int64_t j = 0; j < P; ++j) {
            S p = std::exp(z[j] - mx) / denom;
            if (j == labels[static_cast<std::size_t>(i)] - 1) p -= S(1);
            zn->grad[static_cast<std::size_t>(i * P + j)] += g * p;
          }
        }
      });
}

/// Row-wise softmax of a [B,P] tensor; plain values, no graph.
template <typename S>
std::vector<S> softmax_rows(const Tensor<S>& logits) {
  const std::int64_t B = logits.dim(0), P = logits.dim(1);
  std::vector<S> out(logits.values().size());
  for (std::int64_t i = 0; i < B; ++i) {
    const S* z = logits.data() + i * P;
    S mx = z[0];
    for (std::int64_t j = 1; j < P; ++j) mx = std::max(mx, z[j]);
    S denom = S(0);
    for (std::int64_t j = 0; j < P; ++j) denom += std::exp(z[j] - mx);
    for (std::int64_t j = 0; j < P; ++j) {
      out[static_cast<std::size_t>(i * P + j)] = std::exp(z[j] - mx) / denom;
    }
  }
  return out;
}

}  // namespace dsnet
