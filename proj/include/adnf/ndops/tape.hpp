#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adnf/ndops/dense_array.hpp"

namespace adnf {

namespace detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMajor<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMajor<T>>;

template <typename T>
ConstMatMap<T> as_matrix(const DenseArray<T>& a) {
  return ConstMatMap<T>(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}
template <typename T>
MatMap<T> as_matrix(DenseArray<T>& a) {
  return MatMap<T>(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

template <typename T>
T softplus(T x) {
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, T(0));
}
template <typename T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// Handle to a node on a Tape.
struct Var {
  static constexpr std::uint32_t invalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = invalid;
  bool valid() const { return id != invalid; }
};

// Records primitive operations on DenseArrays in topological order and runs
// reverse-mode differentiation over them. Leaves are the differentiable
// inputs; constants carry data that never receives a gradient.
//
// Every non-leaf node keeps the closure that produced it, so replay() can
// recompute the whole graph after set_leaf() swaps a leaf value. Depth
// values, masks and other non-differentiable data are frozen at record time.
template <typename T>
class Tape {
 public:
  using Array = DenseArray<T>;
  using Inputs = std::span<const Array* const>;
  using GradInputs = std::span<Array* const>;
  using ForwardFn = std::function<Array(Inputs)>;
  // Accumulates into grad_in[k] (null when input k needs no gradient).
  using BackwardFn = std::function<void(Inputs in, const Array& out, const Array& grad_out, GradInputs grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Var leaf(Array value, std::string name = {}) {
    Node node;
    node.value = std::move(value);
    node.leaf = true;
    node.requires_grad = true;
    node.name = std::move(name);
    leaves_.push_back(static_cast<std::uint32_t>(nodes_.size()));
    return push(std::move(node));
  }

  Var constant(Array value) {
    Node node;
    node.value = std::move(value);
    return push(std::move(node));
  }

  // Generic recorded operation; all primitives below go through here.
  Var record(std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
    Node node;
    node.inputs.reserve(inputs.size());
    for (Var v : inputs) {
      require(v.valid() && v.id < nodes_.size(), "Tape::record: input is not on this tape");
      node.inputs.push_back(v.id);
      node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
    }
    std::vector<const Array*> in = input_values(node);
    node.value = forward(in);
    node.forward = std::move(forward);
    node.backward = std::move(backward);
    return push(std::move(node));
  }

  const Array& value(Var v) const { return nodes_.at(v.id).value; }
  const std::string& name(Var v) const { return nodes_.at(v.id).name; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const std::uint32_t> leaf_ids() const { return leaves_; }
  std::vector<Var> leaves() const {
    std::vector<Var> out;
    for (auto id : leaves_) out.push_back(Var{id});
    return out;
  }

  void set_leaf(Var v, Array value) {
    Node& node = nodes_.at(v.id);
    require(node.leaf, "Tape::set_leaf on a non-leaf node");
    require(node.value.shape() == value.shape(), "Tape::set_leaf: shape changed");
    node.value = std::move(value);
  }

  // Recompute every derived node from the current leaf and constant values.
  void replay() {
    for (auto& node : nodes_) {
      if (!node.forward) continue;
      std::vector<const Array*> in = input_values(node);
      node.value = node.forward(in);
    }
  }

  // Reverse sweep from a scalar output. Returns one gradient per leaf, in leaf
  // creation order; leaves the output does not depend on get zeros.
  std::vector<Array> backward(Var output) {
    Node& out = nodes_.at(output.id);
    require(out.value.size() == 1,
            "Tape::backward: output must be scalar, got shape " + shape_string(out.value.shape()));
    for (auto& node : nodes_) node.grad = Array();
    out.grad = Array(out.value.shape(), T(1));
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.grad.empty() || !node.backward || !node.requires_grad) continue;
      std::vector<const Array*> in = input_values(node);
      std::vector<Array*> grad_in(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        Node& src = nodes_[node.inputs[k]];
        if (!src.requires_grad) continue;
        if (src.grad.empty()) src.grad = Array(src.value.shape(), T(0));
        grad_in[k] = &src.grad;
      }
      node.backward(in, node.value, node.grad, grad_in);
      node.grad = Array();
    }
    std::vector<Array> grads;
    grads.reserve(leaves_.size());
    for (auto id : leaves_) {
      Node& leaf = nodes_[id];
      grads.push_back(leaf.grad.empty() ? Array(leaf.value.shape(), T(0)) : leaf.grad);
    }
    return grads;
  }

  // ---- primitives -------------------------------------------------------

  Var matmul(Var a, Var b) {
    check_matmul(value(a), value(b));
    return record(
        {a, b},
        [](Inputs in) {
          Array out = Array::matrix(in[0]->rows(), in[1]->cols());
          detail::as_matrix(out).noalias() = detail::as_matrix(*in[0]) * detail::as_matrix(*in[1]);
          return out;
        },
        [](Inputs in, const Array&, const Array& g, GradInputs gin) {
          if (gin[0]) detail::as_matrix(*gin[0]).noalias() += detail::as_matrix(g) * detail::as_matrix(*in[1]).transpose();
          if (gin[1]) detail::as_matrix(*gin[1]).noalias() += detail::as_matrix(*in[0]).transpose() * detail::as_matrix(g);
        });
  }

  // x * w + bias (bias broadcast over rows). Same as add_row(matmul(x, w), bias).
  Var affine(Var x, Var w, Var bias) {
    check_matmul(value(x), value(w));
    require(value(bias).size() == value(w).cols(), "affine: bias length must equal output width");
    return record(
        {x, w, bias},
        [](Inputs in) {
          Array out = Array::matrix(in[0]->rows(), in[1]->cols());
          auto o = detail::as_matrix(out);
          o.noalias() = detail::as_matrix(*in[0]) * detail::as_matrix(*in[1]);
          const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(in[2]->data(), o.cols());
          o.rowwise() += b;
          return out;
        },
        [](Inputs in, const Array&, const Array& g, GradInputs gin) {
          auto gm = detail::as_matrix(g);
          if (gin[0]) detail::as_matrix(*gin[0]).noalias() += gm * detail::as_matrix(*in[1]).transpose();
          if (gin[1]) detail::as_matrix(*gin[1]).noalias() += detail::as_matrix(*in[0]).transpose() * gm;
          if (gin[2]) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(gin[2]->data(), gm.cols());
            gb += gm.colwise().sum();
          }
        });
  }

  Var add(Var a, Var b) {
    require(same_shape(value(a), value(b)), "add: shape mismatch " + shape_string(value(a).shape()) + " vs " +
                                                shape_string(value(b).shape()));
    return record(
        {a, b},
        [](Inputs in) {
          Array out = *in[0];
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i];
          return out;
        },
        [](Inputs, const Array&, const Array& g, GradInputs gin) {
          for (auto* gi : gin)
            if (gi)
              for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
        });
  }

  Var sub(Var a, Var b) {
    require(same_shape(value(a), value(b)), "sub: shape mismatch");
    return record(
        {a, b},
        [](Inputs in) {
          Array out = *in[0];
          for (std::size_t i = 0; i < out.size(); ++i) out[i] -= (*in[1])[i];
          return out;
        },
        [](Inputs, const Array&, const Array& g, GradInputs gin) {
          if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
          if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
        });
  }

  // [N x C] + [C] broadcast over rows.
  Var add_row(Var a, Var bias) {
    require(value(bias).size() == value(a).cols(), "add_row: bias length must equal column count");
    return record(
        {a, bias},
        [](Inputs in) {
          Array out = *in[0];
          const std::size_t c = out.cols();
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i % c];
          return out;
        },
        [](Inputs, const Array&, const Array& g, GradInputs gin) {
          const std::size_t c = g.cols();
          if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
          if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % c] += g[i];
        });
  }

  Var mul(Var a, Var b) {
    require(same_shape(value(a), value(b)), "mul: shape mismatch");
    return record(
        {a, b},
        [](Inputs in) {
          Array out = *in[0];
          for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
          return out;
        },
        [](Inputs in, const Array&, const Array& g, GradInputs gin) {
          if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*in[1])[i];
          if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*in[0])[i];
        });
  }

  // [N x C] * [N x 1] broadcast over columns.
  Var mul_col(Var a, Var col) {
    require(value(col).size() == value(a).rows(), "mul_col: column length must equal row count");
    return record(
        {a, col},
        [](Inputs in) {
          Array out = *in[0];
          const std::size_t c = out.cols();
          for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i / c];
          return out;
        },
        [](Inputs in, const Array&, const Array& g, GradInputs gin) {
          const std::size_t c = g.cols();
          if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*in[1])[i / c];
          if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i / c] += g[i] * (*in[0])[i];
        });
  }

  Var scale(Var a, T factor) {
    return record(
        {a},
        [factor](Inputs in) {
          Array out = *in[0];
          for (auto& v : out.values()) v *= factor;
          return out;
        },
        [factor](Inputs, const Array&, const Array& g, GradInputs gin) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += factor * g[i];
        });
  }

  Var relu(Var a) {
    return unary(
        a, [](T x) { return x > 0 ? x : T(0); }, [](T, T y) { return y > 0 ? T(1) : T(0); });
  }
  Var softplus(Var a) {
    return unary(a, [](T x) { return detail::softplus(x); }, [](T x, T) { return detail::sigmoid(x); });
  }
  Var sigmoid(Var a) {
    return unary(a, [](T x) { return detail::sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
  }
  Var exp(Var a) {
    return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
  }
  Var sin(Var a) {
    return unary(a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
  }
  Var cos(Var a) {
    return unary(a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
  }

  // Column-wise concatenation of arrays with equal row counts.
  Var concat(std::vector<Var> parts) {
    require(!parts.empty(), "concat: no inputs");
    const std::size_t rows = value(parts[0]).rows();
    for (Var p : parts) require(value(p).rows() == rows, "concat: row counts differ");
    return record(
        parts,
        [](Inputs in) {
          std::size_t total = 0;
          for (auto* a : in) total += a->cols();
          Array out = Array::matrix(in[0]->rows(), total);
          std::size_t offset = 0;
          for (auto* a : in) {
            const std::size_t c = a->cols();
            for (std::size_t r = 0; r < a->rows(); ++r)
              std::copy_n(a->data() + r * c, c, out.data() + r * total + offset);
            offset += c;
          }
          return out;
        },
        [](Inputs in, const Array&, const Array& g, GradInputs gin) {
          const std::size_t total = g.cols();
          std::size_t offset = 0;
          for (std::size_t k = 0; k < in.size(); ++k) {
            const std::size_t c = in[k]->cols();
            if (gin[k])
              for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j) (*gin[k])[r * c + j] += g[r * total + offset + j];
            offset += c;
          }
        });
  }

  // Columns [begin, end).
  Var slice(Var a, std::size_t begin, std::size_t end) {
    require(begin < end && end <= value(a).cols(), "slice: column range out of bounds");
    return record(
        {a},
        [begin, end](Inputs in) {
          const std::size_t c = in[0]->cols(), w = end - begin;
          Array out = Array::matrix(in[0]->rows(), w);
          for (std::size_t r = 0; r < out.rows(); ++r)
            std::copy_n(in[0]->data() + r * c + begin, w, out.data() + r * w);
          return out;
        },
        [begin, end](Inputs in, const Array&, const Array& g, GradInputs gin) {
          const std::size_t c = in[0]->cols(), w = end - begin;
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < w; ++j) (*gin[0])[r * c + begin + j] += g[r * w + j];
        });
  }

  Var sum(Var a) {
    return record(
        {a},
        [](Inputs in) {
          T total = 0;
          for (T v : in[0]->values()) total += v;
          return Array::scalar(total);
        },
        [](Inputs, const Array&, const Array& g, GradInputs gin) {
          for (auto& v : gin[0]->values()) v += g[0];
        });
  }

  Var mean(Var a) {
    const T n = static_cast<T>(value(a).size());
    return scale(sum(a), T(1) / n);
  }

  // Row-wise softmax.
  Var softmax(Var a) {
    return record(
        {a},
        [](Inputs in) {
          Array out = *in[0];
          const std::size_t c = out.cols();
          for (std::size_t r = 0; r < out.rows(); ++r) {
            T* row = out.data() + r * c;
            const T m = *std::max_element(row, row + c);
            T z = 0;
            for (std::size_t j = 0; j < c; ++j) z += (row[j] = std::exp(row[j] - m));
            for (std::size_t j = 0; j < c; ++j) row[j] /= z;
          }
          return out;
        },
        [](Inputs, const Array& y, const Array& g, GradInputs gin) {
          const std::size_t c = y.cols();
          for (std::size_t r = 0; r < y.rows(); ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
            for (std::size_t j = 0; j < c; ++j) (*gin[0])[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
          }
        });
  }

  Var reshape(Var a, Shape shape) {
    require(shape_size(shape) == value(a).size(), "reshape: element count changes");
    return record(
        {a}, [shape](Inputs in) { return in[0]->reshaped(shape); },
        [](Inputs, const Array&, const Array& g, GradInputs gin) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        });
  }

  // out.row(i) = a.row(index[i]); a negative index yields a zero row.
  Var gather_rows(Var a, std::vector<std::int64_t> index) {
    for (auto i : index) require(i < static_cast<std::int64_t>(value(a).rows()), "gather_rows: index out of range");
    auto idx = std::make_shared<const std::vector<std::int64_t>>(std::move(index));
    return record(
        {a},
        [idx](Inputs in) {
          const std::size_t c = in[0]->cols();
          Array out = Array::matrix(idx->size(), c);
          for (std::size_t r = 0; r < idx->size(); ++r)
            if ((*idx)[r] >= 0) std::copy_n(in[0]->data() + (*idx)[r] * c, c, out.data() + r * c);
          return out;
        },
        [idx](Inputs in, const Array&, const Array& g, GradInputs gin) {
          const std::size_t c = in[0]->cols();
          for (std::size_t r = 0; r < idx->size(); ++r) {
            if ((*idx)[r] < 0) continue;
            T* dst = gin[0]->data() + (*idx)[r] * c;
            const T* src = g.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
          }
        });
  }

  // Sums consecutive groups of `group` rows: [G*group x C] -> [G x C].
  Var segment_sum(Var a, std::size_t group) {
    require(group > 0 && value(a).rows() % group == 0, "segment_sum: rows not divisible by group size");
    return record(
        {a},
        [group](Inputs in) {
          const std::size_t c = in[0]->cols();
          Array out = Array::matrix(in[0]->rows() / group, c);
          for (std::size_t r = 0; r < in[0]->rows(); ++r)
            for (std::size_t j = 0; j < c; ++j) out[(r / group) * c + j] += (*in[0])[r * c + j];
          return out;
        },
        [group](Inputs in, const Array&, const Array& g, GradInputs gin) {
          const std::size_t c = in[0]->cols();
          for (std::size_t r = 0; r < in[0]->rows(); ++r)
            for (std::size_t j = 0; j < c; ++j) (*gin[0])[r * c + j] += g[(r / group) * c + j];
        });
  }

 private:
  struct Node {
    std::vector<std::uint32_t> inputs;
    Array value;
    Array grad;
    ForwardFn forward;
    BackwardFn backward;
    bool leaf = false;
    bool requires_grad = false;
    std::string name;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<const Array*> input_values(const Node& node) const {
    std::vector<const Array*> in;
    in.reserve(node.inputs.size());
    for (auto id : node.inputs) in.push_back(&nodes_[id].value);
    return in;
  }

  static void check_matmul(const Array& a, const Array& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
            "matmul: incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }

  template <typename F, typename D>
  Var unary(Var a, F f, D derivative) {
    return record(
        {a},
        [f](Inputs in) {
          Array out = *in[0];
          for (auto& v : out.values()) v = f(v);
          return out;
        },
        [derivative](Inputs in, const Array& y, const Array& g, GradInputs gin) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * derivative((*in[0])[i], y[i]);
        });
  }

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> leaves_;
};

}  // namespace adnf
