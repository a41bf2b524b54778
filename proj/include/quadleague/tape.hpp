#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace quadleague::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Learnable parameter: value plus accumulated gradient.
template <class S>
struct Tensor {
  std::string name;
  Mat<S> value;
  Mat<S> grad;

  Tensor() = default;
  Tensor(std::string n, int rows, int cols) : name(std::move(n)) {
    value = Mat<S>::Zero(rows, cols);
    grad = Mat<S>::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

// Reverse-mode tape over dense matrices. Operations append nodes; backward()
// walks them once in reverse and accumulates parameter gradients into the
// bound Tensor objects. A tape is single-shot: record, backward, clear.
template <class S>
class Tape {
 public:
  using Ref = int;

  explicit Tape(uint64_t param_generation = 0) : generation_(param_generation) {}

  // --- leaves ---

  Ref constant(Mat<S> v) {
    nodes_.push_back(Node{std::move(v), {}, false, nullptr, {}});
    return last();
  }

  Ref parameter(Tensor<S>* t) {
    // parameter nodes reference the tensor's storage instead of copying it
    nodes_.push_back(Node{{}, {}, true, t, {}});
    return last();
  }

  // --- elementwise / structural ops ---

  Ref add(Ref a, Ref b) {
    check_same_shape(a, b, "add");
    return unary_or_binary(val(a) + val(b), {a, b}, [a, b](Tape& t, int self) {
      if (t.needs(a)) t.grad_of(a) += t.grad_ref(self);
      if (t.needs(b)) t.grad_of(b) += t.grad_ref(self);
    });
  }

  Ref sub(Ref a, Ref b) {
    check_same_shape(a, b, "sub");
    return unary_or_binary(val(a) - val(b), {a, b}, [a, b](Tape& t, int self) {
      if (t.needs(a)) t.grad_of(a) += t.grad_ref(self);
      if (t.needs(b)) t.grad_of(b) -= t.grad_ref(self);
    });
  }

  // A (m x n) + row r (1 x n) broadcast over rows.
  Ref add_rowvec(Ref a, Ref r) {
    if (val(r).rows() != 1 || val(r).cols() != val(a).cols())
      throw std::invalid_argument("tape add_rowvec: shape mismatch");
    Mat<S> out = val(a).rowwise() + val(r).row(0);
    return unary_or_binary(std::move(out), {a, r}, [a, r](Tape& t, int self) {
      if (t.needs(a)) t.grad_of(a) += t.grad_ref(self);
      if (t.needs(r)) t.grad_of(r).row(0) += t.grad_ref(self).colwise().sum();
    });
  }

  // A (m x n) + scalar node s (1 x 1) broadcast.
  Ref add_scalar_node(Ref a, Ref s) {
    if (val(s).size() != 1) throw std::invalid_argument("tape add_scalar_node: s must be 1x1");
    Mat<S> out = val(a).array() + val(s)(0, 0);
    return unary_or_binary(std::move(out), {a, s}, [a, s](Tape& t, int self) {
      if (t.needs(a)) t.grad_of(a) += t.grad_ref(self);
      if (t.needs(s)) t.grad_of(s)(0, 0) += t.grad_ref(self).sum();
    });
  }

  Ref mul(Ref a, Ref b) {  // hadamard
    check_same_shape(a, b, "mul");
    return unary_or_binary(val(a).cwiseProduct(val(b)), {a, b}, [a, b](Tape& t, int self) {
      if (t.needs(a)) t.grad_of(a) += t.grad_ref(self).cwiseProduct(t.val(b));
      if (t.needs(b)) t.grad_of(b) += t.grad_ref(self).cwiseProduct(t.val(a));
    });
  }

  // A (m x n) * column c (m x 1) broadcast over columns.
  Ref mul_colvec(Ref a, Ref c) {
    if (val(c).cols() != 1 || val(c).rows() != val(a).rows())
      throw std::invalid_argument("tape mul_colvec: shape mismatch");
    Mat<S> out = val(a).array().colwise() * val(c).col(0).array();
    return unary_or_binary(std::move(out), {a, c}, [a, c](Tape& t, int self) {
      if (t.needs(a))
        t.grad_of(a).array() += t.grad_ref(self).array().colwise() * t.val(c).col(0).array();
      if (t.needs(c))
        t.grad_of(c).col(0) += t.grad_ref(self).cwiseProduct(t.val(a)).rowwise().sum();
    });
  }

  // A (m x n) * row r (1 x n) broadcast over rows.
  Ref mul_rowvec(Ref a, Ref r) {
    if (val(r).rows() != 1 || val(r).cols() != val(a).cols())
      throw std::invalid_argument("tape mul_rowvec: shape mismatch");
    Mat<S> out = val(a).array().rowwise() * val(r).row(0).array();
    return unary_or_binary(std::move(out), {a, r}, [a, r](Tape& t, int self) {
      if (t.needs(a))
        t.grad_of(a).array() += t.grad_ref(self).array().rowwise() * t.val(r).row(0).array();
      if (t.needs(r))
        t.grad_of(r).row(0) += t.grad_ref(self).cwiseProduct(t.val(a)).colwise().sum();
    });
  }

  Ref scale(Ref a, S k) {
    return unary_or_binary(Mat<S>(k * val(a)), {a}, [a, k](Tape& t, int self) {
      if (t.needs(a)) t.grad_of(a) += k * t.grad_ref(self);
    });
  }

  // --- matrix products ---

  Ref matmul(Ref a, Ref b) {  // A * B
    if (val(a).cols() != val(b).rows()) throw std::invalid_argument("tape matmul: shape mismatch");
    return unary_or_binary(Mat<S>(val(a) * val(b)), {a, b}, [a, b](Tape& t, int self) {
      if (t.needs(a)) t.grad_of(a).noalias() += t.grad_ref(self) * t.val(b).transpose();
      if (t.needs(b)) t.grad_of(b).noalias() += t.val(a).transpose() * t.grad_ref(self);
    });
  }

  Ref matmul_nt(Ref a, Ref b) {  // A * B^T
    if (val(a).cols() != val(b).cols())
      throw std::invalid_argument("tape matmul_nt: shape mismatch");
    return unary_or_binary(Mat<S>(val(a) * val(b).transpose()), {a, b},
                           [a, b](Tape& t, int self) {
      if (t.needs(a)) t.grad_of(a).noalias() += t.grad_ref(self) * t.val(b);
      if (t.needs(b)) t.grad_of(b).noalias() += t.grad_ref(self).transpose() * t.val(a);
    });
  }

  // --- nonlinearities ---

  Ref tanh(Ref a) {
    Mat<S> out = val(a).array().tanh();
    Ref self = unary_or_binary(std::move(out), {a}, [a](Tape& t, int self_) {
      if (!t.needs(a)) return;
      t.grad_of(a).array() +=
          t.grad_ref(self_).array() * (S(1) - t.val(self_).array().square());
    });
    return self;
  }

  Ref sigmoid(Ref a) {
    Mat<S> out = (S(1) / (S(1) + (-val(a).array()).exp())).matrix();
    return unary_or_binary(std::move(out), {a}, [a](Tape& t, int self_) {
      if (!t.needs(a)) return;
      t.grad_of(a).array() +=
          t.grad_ref(self_).array() * t.val(self_).array() * (S(1) - t.val(self_).array());
    });
  }

  Ref leaky_relu(Ref a, S slope) {
    Mat<S> out = val(a).array().max(S(0)) + slope * val(a).array().min(S(0));
    return unary_or_binary(std::move(out), {a}, [a, slope](Tape& t, int self_) {
      if (!t.needs(a)) return;
      t.grad_of(a).array() += t.grad_ref(self_).array() *
          (t.val(a).array() > S(0)).template cast<S>().max(slope);
    });
  }

  Ref exp(Ref a) {
    Mat<S> out = val(a).array().exp();
    return unary_or_binary(std::move(out), {a}, [a](Tape& t, int self_) {
      if (t.needs(a)) t.grad_of(a).array() += t.grad_ref(self_).array() * t.val(self_).array();
    });
  }

  Ref square(Ref a) {
    Mat<S> out = val(a).array().square();
    return unary_or_binary(std::move(out), {a}, [a](Tape& t, int self_) {
      if (t.needs(a))
        t.grad_of(a).array() += S(2) * t.grad_ref(self_).array() * t.val(a).array();
    });
  }

  Ref clamp(Ref a, S lo, S hi) {
    Mat<S> out = val(a).array().max(lo).min(hi);
    return unary_or_binary(std::move(out), {a}, [a, lo, hi](Tape& t, int self_) {
      if (!t.needs(a)) return;
      auto inside = (t.val(a).array() > lo && t.val(a).array() < hi).template cast<S>();
      t.grad_of(a).array() += t.grad_ref(self_).array() * inside;
    });
  }

  Ref cwise_min(Ref a, Ref b) {
    check_same_shape(a, b, "cwise_min");
    Mat<S> out = val(a).cwiseMin(val(b));
    return unary_or_binary(std::move(out), {a, b}, [a, b](Tape& t, int self_) {
      auto a_wins = (t.val(a).array() <= t.val(b).array()).template cast<S>();
      if (t.needs(a)) t.grad_of(a).array() += t.grad_ref(self_).array() * a_wins;
      if (t.needs(b)) t.grad_of(b).array() += t.grad_ref(self_).array() * (S(1) - a_wins);
    });
  }

  // --- structure ---

  Ref concat_cols(Ref a, Ref b) {
    if (val(a).rows() != val(b).rows())
      throw std::invalid_argument("tape concat_cols: row mismatch");
    Mat<S> out(val(a).rows(), val(a).cols() + val(b).cols());
    out << val(a), val(b);
    const int ca = static_cast<int>(val(a).cols());
    return unary_or_binary(std::move(out), {a, b}, [a, b, ca](Tape& t, int self_) {
      if (t.needs(a)) t.grad_of(a) += t.grad_ref(self_).leftCols(ca);
      if (t.needs(b))
        t.grad_of(b) += t.grad_ref(self_).rightCols(t.grad_ref(self_).cols() - ca);
    });
  }

  Ref slice_cols(Ref a, int col0, int n) {
    if (col0 < 0 || col0 + n > val(a).cols())
      throw std::invalid_argument("tape slice_cols: out of range");
    return unary_or_binary(Mat<S>(val(a).middleCols(col0, n)), {a},
                           [a, col0, n](Tape& t, int self_) {
      if (t.needs(a)) t.grad_of(a).middleCols(col0, n) += t.grad_ref(self_);
    });
  }

  Ref slice_rows(Ref a, int row0, int n) {
    if (row0 < 0 || row0 + n > val(a).rows())
      throw std::invalid_argument("tape slice_rows: out of range");
    return unary_or_binary(Mat<S>(val(a).middleRows(row0, n)), {a},
                           [a, row0, n](Tape& t, int self_) {
      if (t.needs(a)) t.grad_of(a).middleRows(row0, n) += t.grad_ref(self_);
    });
  }

  Ref concat_rows(const std::vector<Ref>& parts) {
    if (parts.empty()) throw std::invalid_argument("tape concat_rows: empty");
    Eigen::Index rows = 0;
    for (Ref p : parts) rows += val(p).rows();
    Mat<S> out(rows, val(parts[0]).cols());
    Eigen::Index r = 0;
    for (Ref p : parts) {
      out.middleRows(r, val(p).rows()) = val(p);
      r += val(p).rows();
    }
    std::vector<Ref> ps = parts;
    return unary_or_binary(std::move(out), ps, [ps](Tape& t, int self_) {
      Eigen::Index r = 0;
      for (Ref p : ps) {
        const auto n = t.val(p).rows();
        if (t.needs(p)) t.grad_of(p) += t.grad_ref(self_).middleRows(r, n);
        r += n;
      }
    });
  }

  Ref broadcast_rows(Ref a, int m) {  // (1 x n) -> (m x n)
    if (val(a).rows() != 1) throw std::invalid_argument("tape broadcast_rows: need row vector");
    Mat<S> out = val(a).replicate(m, 1);
    return unary_or_binary(std::move(out), {a}, [a](Tape& t, int self_) {
      if (t.needs(a)) t.grad_of(a).row(0) += t.grad_ref(self_).colwise().sum();
    });
  }

  Ref sum_all(Ref a) {
    Mat<S> out(1, 1);
    out(0, 0) = val(a).sum();
    return unary_or_binary(std::move(out), {a}, [a](Tape& t, int self_) {
      if (t.needs(a)) t.grad_of(a).array() += t.grad_ref(self_)(0, 0);
    });
  }

  Ref rowsum(Ref a) {  // (m x n) -> (m x 1)
    Mat<S> out = val(a).rowwise().sum();
    return unary_or_binary(std::move(out), {a}, [a](Tape& t, int self_) {
      if (t.needs(a)) t.grad_of(a).array().colwise() += t.grad_ref(self_).col(0).array();
    });
  }

  // --- grouped attention ops (rows in consecutive groups of `group`) ---

  // Column-wise softmax within each row group, entries with mask 0 excluded.
  Ref softmax_groups(Ref scores, int group, Ref mask) {
    const auto& z = val(scores);
    const auto& m = val(mask);
    if (z.rows() % group != 0) throw std::invalid_argument("softmax_groups: bad group size");
    if (m.rows() != z.rows() || m.cols() != 1)
      throw std::invalid_argument("softmax_groups: mask shape");
    Mat<S> out = Mat<S>::Zero(z.rows(), z.cols());
    const int ngroups = static_cast<int>(z.rows()) / group;
    for (int g = 0; g < ngroups; ++g) {
      for (int cidx = 0; cidx < z.cols(); ++cidx) {
        S zmax = std::numeric_limits<S>::lowest();
        for (int i = 0; i < group; ++i)
          if (m(g * group + i, 0) > S(0.5)) zmax = std::max(zmax, z(g * group + i, cidx));
        S denom = S(0);
        for (int i = 0; i < group; ++i) {
          if (m(g * group + i, 0) > S(0.5)) {
            const S e = std::exp(z(g * group + i, cidx) - zmax);
            out(g * group + i, cidx) = e;
            denom += e;
          }
        }
        if (denom > S(0))
          for (int i = 0; i < group; ++i) out(g * group + i, cidx) /= denom;
      }
    }
    return unary_or_binary(std::move(out), {scores}, [scores, group](Tape& t, int self_) {
      if (!t.needs(scores)) return;
      const auto& p = t.val(self_);
      const auto& dp = t.grad_ref(self_);
      auto& dz = t.grad_of(scores);
      const int ngroups = static_cast<int>(p.rows()) / group;
      for (int g = 0; g < ngroups; ++g) {
        for (int cidx = 0; cidx < p.cols(); ++cidx) {
          S dot = S(0);
          for (int i = 0; i < group; ++i) dot += p(g * group + i, cidx) * dp(g * group + i, cidx);
          for (int i = 0; i < group; ++i)
            dz(g * group + i, cidx) += p(g * group + i, cidx) * (dp(g * group + i, cidx) - dot);
        }
      }
    });
  }

  // Per group g: out_g (L x D) = P_g^T (M x L)^T * V_g (M x D); groups stacked.
  Ref attn_mix(Ref p, Ref v, int group) {
    const auto& pw = val(p);
    const auto& vv = val(v);
    if (pw.rows() != vv.rows() || pw.rows() % group != 0)
      throw std::invalid_argument("attn_mix: shape mismatch");
    const int ngroups = static_cast<int>(pw.rows()) / group;
    const int latents = static_cast<int>(pw.cols());
    Mat<S> out(static_cast<Eigen::Index>(ngroups) * latents, vv.cols());
    for (int g = 0; g < ngroups; ++g)
      out.middleRows(g * latents, latents).noalias() =
          pw.middleRows(g * group, group).transpose() * vv.middleRows(g * group, group);
    return unary_or_binary(std::move(out), {p, v}, [p, v, group, latents](Tape& t, int self_) {
      const auto& pw_ = t.val(p);
      const auto& vv_ = t.val(v);
      const auto& dout = t.grad_ref(self_);
      const int ngroups_ = static_cast<int>(pw_.rows()) / group;
      for (int g = 0; g < ngroups_; ++g) {
        auto dblock = dout.middleRows(g * latents, latents);
        if (t.needs(p))
          t.grad_of(p).middleRows(g * group, group).noalias() +=
              vv_.middleRows(g * group, group) * dblock.transpose();
        if (t.needs(v))
          t.grad_of(v).middleRows(g * group, group).noalias() +=
              pw_.middleRows(g * group, group) * dblock;
      }
    });
  }

  // (N*R x C) -> (N x R*C), row blocks flattened row-major into single rows.
  Ref group_flatten(Ref a, int rows_per_group) {
    const auto& av = val(a);
    if (av.rows() % rows_per_group != 0)
      throw std::invalid_argument("group_flatten: bad group size");
    const int n = static_cast<int>(av.rows()) / rows_per_group;
    const int c = static_cast<int>(av.cols());
    Mat<S> out(n, rows_per_group * c);
    for (int g = 0; g < n; ++g)
      for (int r = 0; r < rows_per_group; ++r)
        out.block(g, r * c, 1, c) = av.row(g * rows_per_group + r);
    return unary_or_binary(std::move(out), {a}, [a, rows_per_group, c](Tape& t, int self_) {
      if (!t.needs(a)) return;
      const auto& dout = t.grad_ref(self_);
      auto& da = t.grad_of(a);
      for (int g = 0; g < dout.rows(); ++g)
        for (int r = 0; r < rows_per_group; ++r)
          da.row(g * rows_per_group + r) += dout.block(g, r * c, 1, c);
    });
  }

  // --- access ---

  const Mat<S>& val(Ref i) const {
    const Node& n = nodes_[static_cast<size_t>(i)];
    return n.param ? n.param->value : n.value;
  }
  S scalar(Ref i) const { return val(i)(0, 0); }
  bool needs(Ref i) const { return nodes_[static_cast<size_t>(i)].requires_grad; }
  size_t size() const { return nodes_.size(); }
  uint64_t generation() const { return generation_; }

  // Reverse pass from a 1x1 loss node; accumulates into parameter tensors.
  void backward(Ref loss, uint64_t current_generation = 0) {
    if (consumed_) throw std::runtime_error("Tape::backward: tape already consumed");
    if (current_generation != generation_)
      throw std::runtime_error("Tape::backward: stale tape (parameters changed since forward)");
    if (val(loss).size() != 1) throw std::invalid_argument("Tape::backward: loss must be 1x1");
    consumed_ = true;
    grad_of(loss)(0, 0) = S(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.param) {
        n.param->grad += n.grad;
      } else if (n.back) {
        n.back(*this, i);
      }
    }
  }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

  Mat<S>& grad_of(Ref i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.size() == 0) {
      const Mat<S>& v = val(i);
      n.grad = Mat<S>::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool requires_grad = false;
    Tensor<S>* param = nullptr;
    std::function<void(Tape&, int)> back;
  };

  const Mat<S>& grad_ref(Ref i) const { return nodes_[static_cast<size_t>(i)].grad; }

  Ref last() const { return static_cast<int>(nodes_.size()) - 1; }

  void check_same_shape(Ref a, Ref b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument(std::string("tape ") + op + ": shape mismatch");
  }

  Ref unary_or_binary(Mat<S> value, const std::vector<Ref>& parents,
                      std::function<void(Tape&, int)> back) {
    bool req = false;
    for (Ref p : parents) req = req || nodes_[static_cast<size_t>(p)].requires_grad;
    Node n;
    n.value = std::move(value);
    n.requires_grad = req;
    if (req) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return last();
  }

  std::vector<Node> nodes_;
  uint64_t generation_ = 0;
  bool consumed_ = false;
};

}  // namespace quadleague::nn
