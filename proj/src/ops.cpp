#include "biasloss/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace biasloss::ops {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

enum class BinaryKind { Add, Sub, Mul, Div };

std::vector<std::size_t> broadcast_index_map(const Shape& in, const Shape& out);

// Element-wise binary op with numpy-style broadcasting resolved at forward
// time, so operand shapes need not be known when the graph is declared.
template <typename T>
class BinaryOp final : public Op<T> {
 public:
  explicit BinaryOp(BinaryKind kind) : kind_(kind) {}

  std::string_view name() const override {
    switch (kind_) {
      case BinaryKind::Add: return "add";
      case BinaryKind::Sub: return "sub";
      case BinaryKind::Mul: return "mul";
      case BinaryKind::Div: return "div";
    }
    return "binary";
  }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& a = *in[0];
    const Tensor<T>& b = *in[1];
    same_ = a.shape() == b.shape();
    const Shape out_shape = same_ ? a.shape() : broadcast_shape(a.shape(), b.shape());
    if (!same_) {
      map_a_ = broadcast_index_map(a.shape(), out_shape);
      map_b_ = broadcast_index_map(b.shape(), out_shape);
    }
    Tensor<T> out(out_shape);
    const std::size_t n = out.size();
    if (same_) {
      const T* pa = a.ptr();
      const T* pb = b.ptr();
      T* po = out.ptr();
      switch (kind_) {
        case BinaryKind::Add: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
        case BinaryKind::Sub: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
        case BinaryKind::Mul: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
        case BinaryKind::Div: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = apply(a[map_a_[i]], b[map_b_[i]]);
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    const Tensor<T>& a = *in[0];
    const Tensor<T>& b = *in[1];
    const std::size_t n = gout.size();
    auto ia = [&](std::size_t i) { return same_ ? i : map_a_[i]; };
    auto ib = [&](std::size_t i) { return same_ ? i : map_b_[i]; };
    Tensor<T>* ga = gin[0];
    Tensor<T>* gb = gin[1];
    if (same_ && (kind_ == BinaryKind::Add || kind_ == BinaryKind::Sub)) {
      const T* go = gout.ptr();
      const T sign = kind_ == BinaryKind::Add ? T{1} : T{-1};
      if (ga) {
        T* p = ga->ptr();
        for (std::size_t i = 0; i < n; ++i) p[i] += go[i];
      }
      if (gb) {
        T* p = gb->ptr();
        for (std::size_t i = 0; i < n; ++i) p[i] += sign * go[i];
      }
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const T go = gout[i];
      switch (kind_) {
        case BinaryKind::Add:
          if (ga) (*ga)[ia(i)] += go;
          if (gb) (*gb)[ib(i)] += go;
          break;
        case BinaryKind::Sub:
          if (ga) (*ga)[ia(i)] += go;
          if (gb) (*gb)[ib(i)] -= go;
          break;
        case BinaryKind::Mul:
          if (ga) (*ga)[ia(i)] += go * b[ib(i)];
          if (gb) (*gb)[ib(i)] += go * a[ia(i)];
          break;
        case BinaryKind::Div:
          if (ga) (*ga)[ia(i)] += go / b[ib(i)];
          if (gb) (*gb)[ib(i)] -= go * out[i] / b[ib(i)];
          break;
      }
    }
  }

 private:
  T apply(T x, T y) const {
    switch (kind_) {
      case BinaryKind::Add: return x + y;
      case BinaryKind::Sub: return x - y;
      case BinaryKind::Mul: return x * y;
      case BinaryKind::Div: return x / y;
    }
    return T{0};
  }

  BinaryKind kind_;
  bool same_ = true;
  std::vector<std::size_t> map_a_, map_b_;
};

enum class UnaryKind { Exp, Log, Relu, HardSwish, HardSigmoid, Clamp, Scale, AddScalar };

template <typename T>
class UnaryOp final : public Op<T> {
 public:
  explicit UnaryOp(UnaryKind kind, T p0 = T{0}, T p1 = T{0}) : kind_(kind), p0_(p0), p1_(p1) {}

  std::string_view name() const override {
    switch (kind_) {
      case UnaryKind::Exp: return "exp";
      case UnaryKind::Log: return "log";
      case UnaryKind::Relu: return "relu";
      case UnaryKind::HardSwish: return "hard_swish";
      case UnaryKind::HardSigmoid: return "hard_sigmoid";
      case UnaryKind::Clamp: return "clamp";
      case UnaryKind::Scale: return "scale";
      case UnaryKind::AddScalar: return "add_scalar";
    }
    return "unary";
  }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    Tensor<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    const std::size_t n = x.size();
    switch (kind_) {
      case UnaryKind::Exp: for (std::size_t i = 0; i < n; ++i) po[i] = std::exp(px[i]); break;
      case UnaryKind::Log: for (std::size_t i = 0; i < n; ++i) po[i] = std::log(px[i]); break;
      case UnaryKind::Relu:
        for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > T{0} ? px[i] : T{0};
        break;
      case UnaryKind::HardSwish:
        for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * std::clamp(px[i] + T{3}, T{0}, T{6}) / T{6};
        break;
      case UnaryKind::HardSigmoid:
        for (std::size_t i = 0; i < n; ++i) po[i] = std::clamp(px[i] + T{3}, T{0}, T{6}) / T{6};
        break;
      case UnaryKind::Clamp: for (std::size_t i = 0; i < n; ++i) po[i] = std::clamp(px[i], p0_, p1_); break;
      case UnaryKind::Scale: for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * p0_; break;
      case UnaryKind::AddScalar: for (std::size_t i = 0; i < n; ++i) po[i] = px[i] + p0_; break;
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0]) return;
    const T* px = in[0]->ptr();
    const T* po = out.ptr();
    const T* go = gout.ptr();
    T* gx = gin[0]->ptr();
    const std::size_t n = gout.size();
    switch (kind_) {
      case UnaryKind::Exp: for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * po[i]; break;
      case UnaryKind::Log: for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] / px[i]; break;
      case UnaryKind::Relu:
        for (std::size_t i = 0; i < n; ++i) {
          if (px[i] > T{0}) gx[i] += go[i];
        }
        break;
      case UnaryKind::HardSwish:
        for (std::size_t i = 0; i < n; ++i) {
          const T x = px[i];
          if (x >= T{3}) {
            gx[i] += go[i];
          } else if (x > T{-3}) {
            gx[i] += go[i] * (T{2} * x + T{3}) / T{6};
          }
        }
        break;
      case UnaryKind::HardSigmoid:
        for (std::size_t i = 0; i < n; ++i) {
          if (px[i] > T{-3} && px[i] < T{3}) gx[i] += go[i] / T{6};
        }
        break;
      case UnaryKind::Clamp:
        for (std::size_t i = 0; i < n; ++i) {
          if (px[i] > p0_ && px[i] < p1_) gx[i] += go[i];
        }
        break;
      case UnaryKind::Scale: for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * p0_; break;
      case UnaryKind::AddScalar: for (std::size_t i = 0; i < n; ++i) gx[i] += go[i]; break;
    }
  }

 private:
  UnaryKind kind_;
  T p0_;
  T p1_;
};

template <typename T>
class MatMulOp final : public Op<T> {
 public:
  std::string_view name() const override { return "matmul"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& a = *in[0];
    const Tensor<T>& b = *in[1];
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
      throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    Tensor<T> out({a.dim(0), b.dim(1)});
    MapMatrix<T>(out.ptr(), m, n).noalias() = ConstMapMatrix<T>(a.ptr(), m, k) * ConstMapMatrix<T>(b.ptr(), k, n);
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    const auto m = static_cast<Eigen::Index>(in[0]->dim(0));
    const auto k = static_cast<Eigen::Index>(in[0]->dim(1));
    const auto n = static_cast<Eigen::Index>(in[1]->dim(1));
    ConstMapMatrix<T> a(in[0]->ptr(), m, k);
    ConstMapMatrix<T> b(in[1]->ptr(), k, n);
    ConstMapMatrix<T> go(gout.ptr(), m, n);
    if (gin[0]) MapMatrix<T>(gin[0]->ptr(), m, k).noalias() += go * b.transpose();
    if (gin[1]) MapMatrix<T>(gin[1]->ptr(), k, n).noalias() += a.transpose() * go;
  }
};

template <typename T>
class TransposeOp final : public Op<T> {
 public:
  std::string_view name() const override { return "transpose"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    if (x.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_str(x.shape()));
    const std::size_t r = x.dim(0), c = x.dim(1);
    Tensor<T> out({c, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0]) return;
    const std::size_t r = in[0]->dim(0), c = in[0]->dim(1);
    Tensor<T>& gx = *gin[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gout[j * r + i];
  }
};

template <typename T>
class ReshapeOp final : public Op<T> {
 public:
  explicit ReshapeOp(Shape shape) : shape_(std::move(shape)) {}
  std::string_view name() const override { return "reshape"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override { return in[0]->reshaped(shape_); }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0]) return;
    T* gx = gin[0]->ptr();
    const T* go = gout.ptr();
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += go[i];
  }

 private:
  Shape shape_;
};

template <typename T>
class FlattenOp final : public Op<T> {
 public:
  std::string_view name() const override { return "flatten"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    if (x.rank() < 1) throw ShapeError("flatten: expected rank >= 1, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0);
    return x.reshaped({n, n == 0 ? 0 : x.size() / n});
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0]) return;
    T* gx = gin[0]->ptr();
    const T* go = gout.ptr();
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += go[i];
  }
};

// Maps every output index onto the input index it reads from.
std::vector<std::size_t> broadcast_index_map(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> in_strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    in_strides[k + offset] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  const std::size_t total = shape_numel(out);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t src = 0;
    for (std::size_t k = 0; k < rank; ++k) src += idx[k] * in_strides[k];
    map[flat] = src;
    for (std::size_t k = rank; k-- > 0;) {
      if (++idx[k] < out[k]) break;
      idx[k] = 0;
    }
  }
  return map;
}

template <typename T>
class BroadcastOp final : public Op<T> {
 public:
  explicit BroadcastOp(Shape shape) : shape_(std::move(shape)) {}
  std::string_view name() const override { return "broadcast_to"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    if (broadcast_shape(x.shape(), shape_) != shape_) {
      throw ShapeError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape_));
    }
    map_ = broadcast_index_map(x.shape(), shape_);
    Tensor<T> out(shape_);
    for (std::size_t i = 0; i < map_.size(); ++i) out[i] = x[map_[i]];
    return out;
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0]) return;
    Tensor<T>& gx = *gin[0];
    for (std::size_t i = 0; i < map_.size(); ++i) gx[map_[i]] += gout[i];
  }

 private:
  Shape shape_;
  std::vector<std::size_t> map_;
};

template <typename T>
class DetachOp final : public Op<T> {
 public:
  std::string_view name() const override { return "detach"; }
  bool differentiable() const override { return false; }
  Tensor<T> forward(std::span<const Tensor<T>* const> in) override { return *in[0]; }
  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>&,
                std::span<Tensor<T>* const>) override {}
};

enum class ReduceKind { Sum, Mean, Max, Min };

template <typename T>
class ReduceOp final : public Op<T> {
 public:
  ReduceOp(ReduceKind kind, std::optional<std::size_t> axis, bool keepdim)
      : kind_(kind), axis_(axis), keepdim_(keepdim) {}

  std::string_view name() const override {
    switch (kind_) {
      case ReduceKind::Sum: return "sum";
      case ReduceKind::Mean: return "mean";
      case ReduceKind::Max: return "max";
      case ReduceKind::Min: return "min";
    }
    return "reduce";
  }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    Shape out_shape;
    if (axis_) {
      if (*axis_ >= x.rank()) throw ShapeError("reduction axis out of range for " + shape_str(x.shape()));
      outer_ = 1;
      inner_ = 1;
      for (std::size_t k = 0; k < *axis_; ++k) outer_ *= x.dim(k);
      for (std::size_t k = *axis_ + 1; k < x.rank(); ++k) inner_ *= x.dim(k);
      len_ = x.dim(*axis_);
      out_shape = x.shape();
      if (keepdim_) {
        out_shape[*axis_] = 1;
      } else {
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis_));
      }
    } else {
      outer_ = 1;
      inner_ = 1;
      len_ = x.size();
      if (keepdim_) out_shape.assign(x.rank(), 1);
    }
    if (len_ == 0 && (kind_ == ReduceKind::Max || kind_ == ReduceKind::Min || kind_ == ReduceKind::Mean)) {
      throw ShapeError(std::string(name()) + " over an empty extent");
    }
    Tensor<T> out(out_shape);
    arg_.assign(outer_ * inner_, 0);
    for (std::size_t o = 0; o < outer_; ++o) {
      for (std::size_t i = 0; i < inner_; ++i) {
        const T* base = x.ptr() + o * len_ * inner_ + i;
        T acc;
        if (kind_ == ReduceKind::Sum || kind_ == ReduceKind::Mean) {
          acc = T{0};
          for (std::size_t j = 0; j < len_; ++j) acc += base[j * inner_];
          if (kind_ == ReduceKind::Mean) acc /= static_cast<T>(len_);
        } else {
          std::size_t best = 0;
          acc = base[0];
          for (std::size_t j = 1; j < len_; ++j) {
            const T v = base[j * inner_];
            if (kind_ == ReduceKind::Max ? v > acc : v < acc) {
              acc = v;
              best = j;
            }
          }
          arg_[o * inner_ + i] = best;
        }
        out[o * inner_ + i] = acc;
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0]) return;
    T* gx = gin[0]->ptr();
    for (std::size_t o = 0; o < outer_; ++o) {
      for (std::size_t i = 0; i < inner_; ++i) {
        const T go = gout[o * inner_ + i];
        T* base = gx + o * len_ * inner_ + i;
        switch (kind_) {
          case ReduceKind::Sum:
            for (std::size_t j = 0; j < len_; ++j) base[j * inner_] += go;
            break;
          case ReduceKind::Mean: {
            const T g = go / static_cast<T>(len_);
            for (std::size_t j = 0; j < len_; ++j) base[j * inner_] += g;
            break;
          }
          case ReduceKind::Max:
          case ReduceKind::Min:
            base[arg_[o * inner_ + i] * inner_] += go;
            break;
        }
      }
    }
  }

 private:
  ReduceKind kind_;
  std::optional<std::size_t> axis_;
  bool keepdim_;
  std::size_t outer_ = 1, inner_ = 1, len_ = 0;
  std::vector<std::size_t> arg_;
};

template <typename T>
NodeId unary(Graph<T>& g, NodeId x, UnaryKind kind, T p0 = T{0}, T p1 = T{0}) {
  return g.apply(std::make_unique<UnaryOp<T>>(kind, p0, p1), {x});
}

template <typename T>
NodeId binary(Graph<T>& g, NodeId a, NodeId b, BinaryKind kind) {
  return g.apply(std::make_unique<BinaryOp<T>>(kind), {a, b});
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    }
    out[k] = da == 1 ? db : da;
  }
  return out;
}

template <typename T>
NodeId add(Graph<T>& g, NodeId a, NodeId b) {
  return binary(g, a, b, BinaryKind::Add);
}
template <typename T>
NodeId sub(Graph<T>& g, NodeId a, NodeId b) {
  return binary(g, a, b, BinaryKind::Sub);
}
template <typename T>
NodeId mul(Graph<T>& g, NodeId a, NodeId b) {
  return binary(g, a, b, BinaryKind::Mul);
}
template <typename T>
NodeId div(Graph<T>& g, NodeId a, NodeId b) {
  return binary(g, a, b, BinaryKind::Div);
}
template <typename T>
NodeId scale(Graph<T>& g, NodeId x, T factor) {
  return unary(g, x, UnaryKind::Scale, factor);
}
template <typename T>
NodeId add_scalar(Graph<T>& g, NodeId x, T offset) {
  return unary(g, x, UnaryKind::AddScalar, offset);
}
template <typename T>
NodeId exp(Graph<T>& g, NodeId x) {
  return unary(g, x, UnaryKind::Exp);
}
template <typename T>
NodeId log(Graph<T>& g, NodeId x) {
  return unary(g, x, UnaryKind::Log);
}
template <typename T>
NodeId relu(Graph<T>& g, NodeId x) {
  return unary(g, x, UnaryKind::Relu);
}
template <typename T>
NodeId hard_swish(Graph<T>& g, NodeId x) {
  return unary(g, x, UnaryKind::HardSwish);
}
template <typename T>
NodeId hard_sigmoid(Graph<T>& g, NodeId x) {
  return unary(g, x, UnaryKind::HardSigmoid);
}
template <typename T>
NodeId clamp(Graph<T>& g, NodeId x, T lo, T hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(g, x, UnaryKind::Clamp, lo, hi);
}
template <typename T>
NodeId matmul(Graph<T>& g, NodeId a, NodeId b) {
  return g.apply(std::make_unique<MatMulOp<T>>(), {a, b});
}
template <typename T>
NodeId transpose(Graph<T>& g, NodeId x) {
  return g.apply(std::make_unique<TransposeOp<T>>(), {x});
}
template <typename T>
NodeId reshape(Graph<T>& g, NodeId x, Shape shape) {
  return g.apply(std::make_unique<ReshapeOp<T>>(std::move(shape)), {x});
}
template <typename T>
NodeId flatten(Graph<T>& g, NodeId x) {
  return g.apply(std::make_unique<FlattenOp<T>>(), {x});
}
template <typename T>
NodeId broadcast_to(Graph<T>& g, NodeId x, Shape shape) {
  return g.apply(std::make_unique<BroadcastOp<T>>(std::move(shape)), {x});
}
template <typename T>
NodeId detach(Graph<T>& g, NodeId x) {
  return g.apply(std::make_unique<DetachOp<T>>(), {x});
}
template <typename T>
NodeId sum(Graph<T>& g, NodeId x, std::optional<std::size_t> axis, bool keepdim) {
  return g.apply(std::make_unique<ReduceOp<T>>(ReduceKind::Sum, axis, keepdim), {x});
}
template <typename T>
NodeId mean(Graph<T>& g, NodeId x, std::optional<std::size_t> axis, bool keepdim) {
  return g.apply(std::make_unique<ReduceOp<T>>(ReduceKind::Mean, axis, keepdim), {x});
}
template <typename T>
NodeId max(Graph<T>& g, NodeId x, std::optional<std::size_t> axis, bool keepdim) {
  return g.apply(std::make_unique<ReduceOp<T>>(ReduceKind::Max, axis, keepdim), {x});
}
template <typename T>
NodeId min(Graph<T>& g, NodeId x, std::optional<std::size_t> axis, bool keepdim) {
  return g.apply(std::make_unique<ReduceOp<T>>(ReduceKind::Min, axis, keepdim), {x});
}

#define BIASLOSS_INSTANTIATE_OPS(T)                                                    \
  template NodeId add<T>(Graph<T>&, NodeId, NodeId);                                   \
  template NodeId sub<T>(Graph<T>&, NodeId, NodeId);                                   \
  template NodeId mul<T>(Graph<T>&, NodeId, NodeId);                                   \
  template NodeId div<T>(Graph<T>&, NodeId, NodeId);                                   \
  template NodeId scale<T>(Graph<T>&, NodeId, T);                                      \
  template NodeId add_scalar<T>(Graph<T>&, NodeId, T);                                 \
  template NodeId exp<T>(Graph<T>&, NodeId);                                           \
  template NodeId log<T>(Graph<T>&, NodeId);                                           \
  template NodeId relu<T>(Graph<T>&, NodeId);                                          \
  template NodeId hard_swish<T>(Graph<T>&, NodeId);                                    \
  template NodeId hard_sigmoid<T>(Graph<T>&, NodeId);                                  \
  template NodeId clamp<T>(Graph<T>&, NodeId, T, T);                                   \
  template NodeId matmul<T>(Graph<T>&, NodeId, NodeId);                                \
  template NodeId transpose<T>(Graph<T>&, NodeId);                                     \
  template NodeId reshape<T>(Graph<T>&, NodeId, Shape);                                \
  template NodeId flatten<T>(Graph<T>&, NodeId);                                       \
  template NodeId broadcast_to<T>(Graph<T>&, NodeId, Shape);                           \
  template NodeId detach<T>(Graph<T>&, NodeId);                                        \
  template NodeId sum<T>(Graph<T>&, NodeId, std::optional<std::size_t>, bool);         \
  template NodeId mean<T>(Graph<T>&, NodeId, std::optional<std::size_t>, bool);        \
  template NodeId max<T>(Graph<T>&, NodeId, std::optional<std::size_t>, bool);         \
  template NodeId min<T>(Graph<T>&, NodeId, std::optional<std::size_t>, bool);

BIASLOSS_INSTANTIATE_OPS(float)
BIASLOSS_INSTANTIATE_OPS(double)

}  // namespace biasloss::ops
