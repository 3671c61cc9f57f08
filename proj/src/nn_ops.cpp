#include "biasloss/nn_ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace biasloss::ops {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

using Index = Eigen::Index;

template <typename T>
class Conv2dOp final : public Op<T> {
 public:
  Conv2dOp(ConvParams params, bool has_bias) : p_(params), has_bias_(has_bias) {}

  std::string_view name() const override { return "conv2d"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& w = *in[1];
    setup(x, w, has_bias_ ? in[2] : nullptr);
    Tensor<T> out({B_, Cout_, OH_, OW_});
    if (pointwise()) {
      for (std::size_t b = 0; b < B_; ++b) {
        MapMatrix<T>(out.ptr() + b * Cout_ * P_, Index(Cout_), Index(P_)).noalias() =
            ConstMapMatrix<T>(w.ptr(), Index(Cout_), Index(Cin_)) *
            ConstMapMatrix<T>(x.ptr() + b * Cin_ * H_ * W_, Index(Cin_), Index(P_));
      }
    } else if (depthwise()) {
      depthwise_forward(x, w, out);
    } else {
      const std::size_t cin_g = Cin_ / G_, cout_g = Cout_ / G_, K = cin_g * KH_ * KW_;
      cols_.resize(K * P_);
      for (std::size_t b = 0; b < B_; ++b) {
        for (std::size_t gi = 0; gi < G_; ++gi) {
          im2col(x, b, gi * cin_g, cin_g);
          MapMatrix<T>(out.ptr() + (b * Cout_ + gi * cout_g) * P_, Index(cout_g), Index(P_)).noalias() =
              ConstMapMatrix<T>(w.ptr() + gi * cout_g * K, Index(cout_g), Index(K)) *
              ConstMapMatrix<T>(cols_.data(), Index(K), Index(P_));
        }
      }
    }
    if (has_bias_) {
      const Tensor<T>& bias = *in[2];
      for (std::size_t b = 0; b < B_; ++b)
        for (std::size_t c = 0; c < Cout_; ++c) {
          T* o = out.ptr() + (b * Cout_ + c) * P_;
          const T v = bias[c];
          for (std::size_t i = 0; i < P_; ++i) o[i] += v;
        }
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& w = *in[1];
    Tensor<T>* gx = gin[0];
    Tensor<T>* gw = gin[1];
    if (has_bias_ && gin[2]) {
      Tensor<T>& gb = *gin[2];
      for (std::size_t b = 0; b < B_; ++b)
        for (std::size_t c = 0; c < Cout_; ++c) {
          const T* go = gout.ptr() + (b * Cout_ + c) * P_;
          T acc = T{0};
          for (std::size_t i = 0; i < P_; ++i) acc += go[i];
          gb[c] += acc;
        }
    }
    if (pointwise()) {
      ConstMapMatrix<T> wm(w.ptr(), Index(Cout_), Index(Cin_));
      for (std::size_t b = 0; b < B_; ++b) {
        ConstMapMatrix<T> go(gout.ptr() + b * Cout_ * P_, Index(Cout_), Index(P_));
        if (gw) {
          MapMatrix<T>(gw->ptr(), Index(Cout_), Index(Cin_)).noalias() +=
              go * ConstMapMatrix<T>(x.ptr() + b * Cin_ * P_, Index(Cin_), Index(P_)).transpose();
        }
        if (gx) MapMatrix<T>(gx->ptr() + b * Cin_ * P_, Index(Cin_), Index(P_)).noalias() += wm.transpose() * go;
      }
    } else if (depthwise()) {
      depthwise_backward(x, w, gout, gx, gw);
    } else {
      const std::size_t cin_g = Cin_ / G_, cout_g = Cout_ / G_, K = cin_g * KH_ * KW_;
      cols_.resize(K * P_);
      dcols_.resize(K * P_);
      for (std::size_t b = 0; b < B_; ++b) {
        for (std::size_t gi = 0; gi < G_; ++gi) {
          ConstMapMatrix<T> go(gout.ptr() + (b * Cout_ + gi * cout_g) * P_, Index(cout_g), Index(P_));
          if (gw) {
            im2col(x, b, gi * cin_g, cin_g);
            MapMatrix<T>(gw->ptr() + gi * cout_g * K, Index(cout_g), Index(K)).noalias() +=
                go * ConstMapMatrix<T>(cols_.data(), Index(K), Index(P_)).transpose();
          }
          if (gx) {
            MapMatrix<T>(dcols_.data(), Index(K), Index(P_)).noalias() =
                ConstMapMatrix<T>(w.ptr() + gi * cout_g * K, Index(cout_g), Index(K)).transpose() * go;
            col2im(*gx, b, gi * cin_g, cin_g);
          }
        }
      }
    }
  }

 private:
  bool pointwise() const { return KH_ == 1 && KW_ == 1 && p_.stride == 1 && p_.padding == 0 && G_ == 1; }
  bool depthwise() const { return G_ == Cin_ && Cout_ == Cin_ && G_ > 1; }

  void setup(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
    if (x.rank() != 4) throw ShapeError("conv2d input must be rank 4, got " + shape_str(x.shape()));
    if (w.rank() != 4) throw ShapeError("conv2d weight must be rank 4, got " + shape_str(w.shape()));
    if (p_.stride == 0 || p_.groups == 0) throw ShapeError("conv2d stride and groups must be positive");
    B_ = x.dim(0);
    Cin_ = x.dim(1);
    H_ = x.dim(2);
    W_ = x.dim(3);
    Cout_ = w.dim(0);
    KH_ = w.dim(2);
    KW_ = w.dim(3);
    G_ = p_.groups;
    if (Cin_ % G_ != 0 || Cout_ % G_ != 0) {
      throw ShapeError("conv2d channels (" + std::to_string(Cin_) + "->" + std::to_string(Cout_) +
                       ") not divisible by groups " + std::to_string(G_));
    }
    if (w.dim(1) != Cin_ / G_) {
      throw ShapeError("conv2d weight " + shape_str(w.shape()) + " does not match input channels " +
                       std::to_string(Cin_) + " with groups " + std::to_string(G_));
    }
    if (H_ + 2 * p_.padding < KH_ || W_ + 2 * p_.padding < KW_) {
      throw ShapeError("conv2d kernel larger than padded input " + shape_str(x.shape()));
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != Cout_)) {
      throw ShapeError("conv2d bias shape " + shape_str(bias->shape()));
    }
    OH_ = conv_out_extent(H_, KH_, p_.stride, p_.padding);
    OW_ = conv_out_extent(W_, KW_, p_.stride, p_.padding);
    P_ = OH_ * OW_;
  }

  void im2col(const Tensor<T>& x, std::size_t b, std::size_t c0, std::size_t nc) {
    for (std::size_t c = 0; c < nc; ++c) {
      const T* src = x.ptr() + (b * Cin_ + c0 + c) * H_ * W_;
      for (std::size_t ky = 0; ky < KH_; ++ky)
        for (std::size_t kx = 0; kx < KW_; ++kx) {
          T* dst = cols_.data() + ((c * KH_ + ky) * KW_ + kx) * P_;
          for (std::size_t oy = 0; oy < OH_; ++oy) {
            const long iy = static_cast<long>(oy * p_.stride + ky) - static_cast<long>(p_.padding);
            for (std::size_t ox = 0; ox < OW_; ++ox) {
              const long ix = static_cast<long>(ox * p_.stride + kx) - static_cast<long>(p_.padding);
              const bool inside = iy >= 0 && iy < static_cast<long>(H_) && ix >= 0 && ix < static_cast<long>(W_);
              dst[oy * OW_ + ox] = inside ? src[iy * static_cast<long>(W_) + ix] : T{0};
            }
          }
        }
    }
  }

  void col2im(Tensor<T>& gx, std::size_t b, std::size_t c0, std::size_t nc) const {
    for (std::size_t c = 0; c < nc; ++c) {
      T* dst = gx.ptr() + (b * Cin_ + c0 + c) * H_ * W_;
      for (std::size_t ky = 0; ky < KH_; ++ky)
        for (std::size_t kx = 0; kx < KW_; ++kx) {
          const T* src = dcols_.data() + ((c * KH_ + ky) * KW_ + kx) * P_;
          for (std::size_t oy = 0; oy < OH_; ++oy) {
            const long iy = static_cast<long>(oy * p_.stride + ky) - static_cast<long>(p_.padding);
            if (iy < 0 || iy >= static_cast<long>(H_)) continue;
            for (std::size_t ox = 0; ox < OW_; ++ox) {
              const long ix = static_cast<long>(ox * p_.stride + kx) - static_cast<long>(p_.padding);
              if (ix < 0 || ix >= static_cast<long>(W_)) continue;
              dst[iy * static_cast<long>(W_) + ix] += src[oy * OW_ + ox];
            }
          }
        }
    }
  }

  // Copies one input plane into a zero-padded buffer.
  void pad_plane(const T* src, std::vector<T>& buf, std::size_t& ph, std::size_t& pw) const {
    ph = H_ + 2 * p_.padding;
    pw = W_ + 2 * p_.padding;
    buf.assign(ph * pw, T{0});
    for (std::size_t y = 0; y < H_; ++y)
      std::copy(src + y * W_, src + (y + 1) * W_, buf.data() + (y + p_.padding) * pw + p_.padding);
  }

  void depthwise_forward(const Tensor<T>& x, const Tensor<T>& w, Tensor<T>& out) {
    const std::size_t s = p_.stride;
    std::size_t ph, pw;
    for (std::size_t b = 0; b < B_; ++b)
      for (std::size_t c = 0; c < Cin_; ++c) {
        pad_plane(x.ptr() + (b * Cin_ + c) * H_ * W_, pad_, ph, pw);
        const T* k = w.ptr() + c * KH_ * KW_;
        T* dst = out.ptr() + (b * Cin_ + c) * P_;
        std::fill(dst, dst + P_, T{0});
        for (std::size_t ky = 0; ky < KH_; ++ky)
          for (std::size_t kx = 0; kx < KW_; ++kx) {
            const T kv = k[ky * KW_ + kx];
            for (std::size_t oy = 0; oy < OH_; ++oy) {
              const T* row = pad_.data() + (oy * s + ky) * pw + kx;
              T* d = dst + oy * OW_;
              if (s == 1) {
                for (std::size_t ox = 0; ox < OW_; ++ox) d[ox] += kv * row[ox];
              } else {
                for (std::size_t ox = 0; ox < OW_; ++ox) d[ox] += kv * row[ox * s];
              }
            }
          }
      }
  }

  void depthwise_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, Tensor<T>* gx,
                          Tensor<T>* gw) {
    constexpr std::size_t kLanes = 8;
    const std::size_t s = p_.stride;
    std::size_t ph, pw;
    for (std::size_t b = 0; b < B_; ++b)
      for (std::size_t c = 0; c < Cin_; ++c) {
        const T* k = w.ptr() + c * KH_ * KW_;
        const T* go = gout.ptr() + (b * Cin_ + c) * P_;
        if (gw) {
          pad_plane(x.ptr() + (b * Cin_ + c) * H_ * W_, pad_, ph, pw);
          T* dk = gw->ptr() + c * KH_ * KW_;
          for (std::size_t ky = 0; ky < KH_; ++ky)
            for (std::size_t kx = 0; kx < KW_; ++kx) {
              T lanes[kLanes] = {};
              T tail = T{0};
              for (std::size_t oy = 0; oy < OH_; ++oy) {
                const T* row = pad_.data() + (oy * s + ky) * pw + kx;
                const T* g = go + oy * OW_;
                std::size_t ox = 0;
                for (; ox + kLanes <= OW_; ox += kLanes)
                  for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += g[ox + l] * row[(ox + l) * s];
                for (; ox < OW_; ++ox) tail += g[ox] * row[ox * s];
              }
              T acc = tail;
              for (std::size_t l = 0; l < kLanes; ++l) acc += lanes[l];
              dk[ky * KW_ + kx] += acc;
            }
        }
        if (gx) {
          ph = H_ + 2 * p_.padding;
          pw = W_ + 2 * p_.padding;
          gpad_.assign(ph * pw, T{0});
          for (std::size_t ky = 0; ky < KH_; ++ky)
            for (std::size_t kx = 0; kx < KW_; ++kx) {
              const T kv = k[ky * KW_ + kx];
              for (std::size_t oy = 0; oy < OH_; ++oy) {
                T* row = gpad_.data() + (oy * s + ky) * pw + kx;
                const T* g = go + oy * OW_;
                if (s == 1) {
                  for (std::size_t ox = 0; ox < OW_; ++ox) row[ox] += kv * g[ox];
                } else {
                  for (std::size_t ox = 0; ox < OW_; ++ox) row[ox * s] += kv * g[ox];
                }
              }
            }
          T* dsrc = gx->ptr() + (b * Cin_ + c) * H_ * W_;
          for (std::size_t y = 0; y < H_; ++y) {
            const T* src = gpad_.data() + (y + p_.padding) * pw + p_.padding;
            T* d = dsrc + y * W_;
            for (std::size_t xx = 0; xx < W_; ++xx) d[xx] += src[xx];
          }
        }
      }
  }

  ConvParams p_;
  bool has_bias_;
  std::size_t B_ = 0, Cin_ = 0, H_ = 0, W_ = 0, Cout_ = 0, KH_ = 0, KW_ = 0, OH_ = 0, OW_ = 0, G_ = 1, P_ = 0;
  std::vector<T> cols_, dcols_, pad_, gpad_;
};

template <typename T>
class BatchNormOp final : public Op<T> {
 public:
  BatchNormOp(BatchNormState<T>& state, Mode mode) : state_(state), mode_(mode) {}

  std::string_view name() const override { return "batchnorm"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& gamma = *in[1];
    const Tensor<T>& beta = *in[2];
    if (x.rank() != 4) throw ShapeError("batchnorm expects rank 4, got " + shape_str(x.shape()));
    B_ = x.dim(0);
    C_ = x.dim(1);
    P_ = x.dim(2) * x.dim(3);
    if (gamma.size() != C_ || beta.size() != C_ || state_.running_mean.size() != C_ ||
        state_.running_var.size() != C_) {
      throw ShapeError("batchnorm parameters do not match " + std::to_string(C_) + " channels");
    }
    const std::size_t m = B_ * P_;
    mean_.assign(C_, T{0});
    invstd_.assign(C_, T{0});
    if (mode_ == Mode::Train) {
      if (m < 2) throw ShapeError("batchnorm in train mode needs more than one value per channel");
      for (std::size_t c = 0; c < C_; ++c) {
        double s = 0.0;
        for (std::size_t b = 0; b < B_; ++b) {
          const T* p = x.ptr() + (b * C_ + c) * P_;
          for (std::size_t i = 0; i < P_; ++i) s += p[i];
        }
        const double mu = s / static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t b = 0; b < B_; ++b) {
          const T* p = x.ptr() + (b * C_ + c) * P_;
          for (std::size_t i = 0; i < P_; ++i) {
            const double d = p[i] - mu;
            ss += d * d;
          }
        }
        const double var = ss / static_cast<double>(m);
        mean_[c] = static_cast<T>(mu);
        invstd_[c] = static_cast<T>(1.0 / std::sqrt(var + state_.eps));
        const double mom = state_.momentum;
        state_.running_mean[c] = static_cast<T>((1.0 - mom) * state_.running_mean[c] + mom * mu);
        state_.running_var[c] =
            static_cast<T>((1.0 - mom) * state_.running_var[c] + mom * ss / static_cast<double>(m - 1));
      }
    } else {
      for (std::size_t c = 0; c < C_; ++c) {
        mean_[c] = state_.running_mean[c];
        invstd_[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state_.running_var[c]) + state_.eps));
      }
    }
    Tensor<T> out(x.shape());
    for (std::size_t b = 0; b < B_; ++b)
      for (std::size_t c = 0; c < C_; ++c) {
        const T* p = x.ptr() + (b * C_ + c) * P_;
        T* o = out.ptr() + (b * C_ + c) * P_;
        const T mu = mean_[c], is = invstd_[c], ga = gamma[c], be = beta[c];
        for (std::size_t i = 0; i < P_; ++i) o[i] = (p[i] - mu) * is * ga + be;
      }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& gamma = *in[1];
    const double m = static_cast<double>(B_ * P_);
    for (std::size_t c = 0; c < C_; ++c) {
      const double mu = mean_[c], is = invstd_[c];
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t b = 0; b < B_; ++b) {
        const T* p = x.ptr() + (b * C_ + c) * P_;
        const T* go = gout.ptr() + (b * C_ + c) * P_;
        for (std::size_t i = 0; i < P_; ++i) {
          sum_g += go[i];
          sum_gx += go[i] * ((p[i] - mu) * is);
        }
      }
      if (gin[1]) (*gin[1])[c] += static_cast<T>(sum_gx);
      if (gin[2]) (*gin[2])[c] += static_cast<T>(sum_g);
      if (!gin[0]) continue;
      const double scale = gamma[c] * is;
      for (std::size_t b = 0; b < B_; ++b) {
        const T* p = x.ptr() + (b * C_ + c) * P_;
        const T* go = gout.ptr() + (b * C_ + c) * P_;
        T* gx = gin[0]->ptr() + (b * C_ + c) * P_;
        if (mode_ == Mode::Train) {
          const double mg = sum_g / m, mgx = sum_gx / m;
          for (std::size_t i = 0; i < P_; ++i) {
            const double xhat = (p[i] - mu) * is;
            gx[i] += static_cast<T>(scale * (go[i] - mg - xhat * mgx));
          }
        } else {
          for (std::size_t i = 0; i < P_; ++i) gx[i] += static_cast<T>(scale * go[i]);
        }
      }
    }
  }

 private:
  BatchNormState<T>& state_;
  Mode mode_;
  std::size_t B_ = 0, C_ = 0, P_ = 0;
  std::vector<T> mean_, invstd_;
};

template <typename T>
class AdaptiveAvgPoolOp final : public Op<T> {
 public:
  AdaptiveAvgPoolOp(std::size_t oh, std::size_t ow) : oh_(oh), ow_(ow) {}

  std::string_view name() const override { return "adaptive_avg_pool"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    if (x.rank() != 4) throw ShapeError("adaptive_avg_pool expects rank 4, got " + shape_str(x.shape()));
    H_ = x.dim(2);
    W_ = x.dim(3);
    if (oh_ == 0 || ow_ == 0 || oh_ > H_ || ow_ > W_) {
      throw ShapeError("adaptive_avg_pool target " + std::to_string(oh_) + "x" + std::to_string(ow_) +
                       " exceeds input " + shape_str(x.shape()));
    }
    const std::size_t planes = x.dim(0) * x.dim(1);
    Tensor<T> out({x.dim(0), x.dim(1), oh_, ow_});
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const T* src = x.ptr() + pl * H_ * W_;
      T* dst = out.ptr() + pl * oh_ * ow_;
      for (std::size_t i = 0; i < oh_; ++i) {
        const std::size_t r0 = start(i, H_, oh_), r1 = end(i, H_, oh_);
        for (std::size_t j = 0; j < ow_; ++j) {
          const std::size_t c0 = start(j, W_, ow_), c1 = end(j, W_, ow_);
          T acc = T{0};
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = c0; c < c1; ++c) acc += src[r * W_ + c];
          dst[i * ow_ + j] = acc / static_cast<T>((r1 - r0) * (c1 - c0));
        }
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0]) return;
    const std::size_t planes = in[0]->dim(0) * in[0]->dim(1);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      T* dst = gin[0]->ptr() + pl * H_ * W_;
      const T* go = gout.ptr() + pl * oh_ * ow_;
      for (std::size_t i = 0; i < oh_; ++i) {
        const std::size_t r0 = start(i, H_, oh_), r1 = end(i, H_, oh_);
        for (std::size_t j = 0; j < ow_; ++j) {
          const std::size_t c0 = start(j, W_, ow_), c1 = end(j, W_, ow_);
          const T g = go[i * ow_ + j] / static_cast<T>((r1 - r0) * (c1 - c0));
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = c0; c < c1; ++c) dst[r * W_ + c] += g;
        }
      }
    }
  }

 private:
  static std::size_t start(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
  static std::size_t end(std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; }

  std::size_t oh_, ow_;
  std::size_t H_ = 0, W_ = 0;
};

template <typename T>
class LinearOp final : public Op<T> {
 public:
  explicit LinearOp(bool has_bias) : has_bias_(has_bias) {}

  std::string_view name() const override { return "linear"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    const Tensor<T>& w = *in[1];
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
      throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    }
    const Index n = Index(x.dim(0)), k = Index(x.dim(1)), o = Index(w.dim(0));
    Tensor<T> out({x.dim(0), w.dim(0)});
    MapMatrix<T> om(out.ptr(), n, o);
    om.noalias() = ConstMapMatrix<T>(x.ptr(), n, k) * ConstMapMatrix<T>(w.ptr(), o, k).transpose();
    if (has_bias_) {
      const Tensor<T>& bias = *in[2];
      if (bias.size() != w.dim(0)) throw ShapeError("linear bias shape " + shape_str(bias.shape()));
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < o; ++j) om(i, j) += bias[static_cast<std::size_t>(j)];
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    const Index n = Index(in[0]->dim(0)), k = Index(in[0]->dim(1)), o = Index(in[1]->dim(0));
    ConstMapMatrix<T> go(gout.ptr(), n, o);
    if (gin[0]) MapMatrix<T>(gin[0]->ptr(), n, k).noalias() += go * ConstMapMatrix<T>(in[1]->ptr(), o, k);
    if (gin[1]) {
      MapMatrix<T>(gin[1]->ptr(), o, k).noalias() += go.transpose() * ConstMapMatrix<T>(in[0]->ptr(), n, k);
    }
    if (has_bias_ && gin[2]) {
      for (Index j = 0; j < o; ++j) {
        T acc = T{0};
        for (Index i = 0; i < n; ++i) acc += go(i, j);
        (*gin[2])[static_cast<std::size_t>(j)] += acc;
      }
    }
  }

 private:
  bool has_bias_;
};

}  // namespace

template <typename T>
NodeId conv2d(Graph<T>& g, NodeId x, NodeId weight, std::optional<NodeId> bias, ConvParams params) {
  std::vector<NodeId> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return g.apply(std::make_unique<Conv2dOp<T>>(params, bias.has_value()), std::move(inputs));
}

template <typename T>
NodeId batchnorm(Graph<T>& g, NodeId x, NodeId gamma, NodeId beta, BatchNormState<T>& state, Mode mode) {
  return g.apply(std::make_unique<BatchNormOp<T>>(state, mode), {x, gamma, beta});
}

template <typename T>
NodeId adaptive_avg_pool(Graph<T>& g, NodeId x, std::size_t out_h, std::size_t out_w) {
  return g.apply(std::make_unique<AdaptiveAvgPoolOp<T>>(out_h, out_w), {x});
}

template <typename T>
NodeId linear(Graph<T>& g, NodeId x, NodeId weight, std::optional<NodeId> bias) {
  std::vector<NodeId> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return g.apply(std::make_unique<LinearOp<T>>(bias.has_value()), std::move(inputs));
}

#define BIASLOSS_INSTANTIATE_NN_OPS(T)                                                                 \
  template NodeId conv2d<T>(Graph<T>&, NodeId, NodeId, std::optional<NodeId>, ConvParams);             \
  template NodeId batchnorm<T>(Graph<T>&, NodeId, NodeId, NodeId, BatchNormState<T>&, Mode);           \
  template NodeId adaptive_avg_pool<T>(Graph<T>&, NodeId, std::size_t, std::size_t);                   \
  template NodeId linear<T>(Graph<T>&, NodeId, NodeId, std::optional<NodeId>);

BIASLOSS_INSTANTIATE_NN_OPS(float)
BIASLOSS_INSTANTIATE_NN_OPS(double)

}  // namespace biasloss::ops
