// Reverse-mode autodiff on a single-threaded tape.
//
// Ops append nodes in execution order, so the node list is already a
// topological order; backward() walks it once in reverse, accumulating
// gradients into parent slots. Values are immutable once recorded. Every op
// verifies its output is finite and throws ErrorKind::numeric otherwise.
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cplab/linalg.hpp"
#include "cplab/tensor.hpp"
#include "cplab/types.hpp"

namespace cplab::nd {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename S>
class TapeT {
 public:
  using Tensor = TensorT<S>;
  using Mat = MatX<S>;

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  Var leaf(Tensor t) {
    require(t.finite(), ErrorKind::numeric, "leaf: non-finite values");
    return push(std::move(t), nullptr);
  }

  Var leaf(const Mat& m, bool requires_grad = false) {
    return leaf(Tensor::from_matrix(m, requires_grad));
  }

  Var scalar_leaf(S v, bool requires_grad = false) {
    return leaf(Tensor::scalar(v, requires_grad));
  }

  const Tensor& value(Var v) const { return node(v).value; }
  const Mat& mat(Var v) const { return node(v).value.data; }

  // ---- ops ----

  Var matmul(Var a, Var b) {
    const Mat& am = mat(a);
    const Mat& bm = mat(b);
    require(am.cols() == bm.rows(), ErrorKind::dimension,
            "matmul: inner dimensions differ");
    Tensor out = Tensor::from_matrix(am * bm, grad_of(a, b));
    return push(std::move(out), [a, b](TapeT& t, const Mat& g) {
      t.acc(a, g * t.mat(b).transpose());
      t.acc(b, t.mat(a).transpose() * g);
    }, "matmul");
  }

  // a * b^T; the natural form for similarity logits between two embeddings.
  Var matmul_nt(Var a, Var b) {
    const Mat& am = mat(a);
    const Mat& bm = mat(b);
    require(am.cols() == bm.cols(), ErrorKind::dimension,
            "matmul_nt: trailing dimensions differ");
    Tensor out = Tensor::from_matrix(am * bm.transpose(), grad_of(a, b));
    return push(std::move(out), [a, b](TapeT& t, const Mat& g) {
      t.acc(a, g * t.mat(b));
      t.acc(b, g.transpose() * t.mat(a));
    }, "matmul_nt");
  }

  Var transpose(Var a) {
    Tensor out = Tensor::from_matrix(mat(a).transpose(), grad_of(a));
    return push(std::move(out), [a](TapeT& t, const Mat& g) {
      t.acc(a, g.transpose());
    }, "transpose");
  }

  Var add(Var a, Var b) {
    require(mat(a).rows() == mat(b).rows() && mat(a).cols() == mat(b).cols(),
            ErrorKind::dimension, "add: shape mismatch");
    Tensor out = Tensor::from_matrix(mat(a) + mat(b), grad_of(a, b));
    return push(std::move(out), [a, b](TapeT& t, const Mat& g) {
      t.acc(a, g);
      t.acc(b, g);
    }, "add");
  }

  // Broadcast a 1 x n bias over every row of a.
  Var add_rowvec(Var a, Var bias) {
    require(mat(bias).rows() == 1 && mat(bias).cols() == mat(a).cols(),
            ErrorKind::dimension, "add_rowvec: bias must be 1 x cols(a)");
    Tensor out = Tensor::from_matrix(
        mat(a).rowwise() + mat(bias).row(0), grad_of(a, bias));
    return push(std::move(out), [a, bias](TapeT& t, const Mat& g) {
      t.acc(a, g);
      t.acc(bias, g.colwise().sum());
    }, "add_rowvec");
  }

  Var scale(Var a, S c) {
    Tensor out = Tensor::from_matrix(mat(a) * c, grad_of(a));
    return push(std::move(out), [a, c](TapeT& t, const Mat& g) {
      t.acc(a, g * c);
    }, "scale");
  }

  // Multiply a matrix by a 1x1 tensor, with gradient into both.
  Var mul_scalar(Var a, Var s) {
    require(mat(s).size() == 1, ErrorKind::dimension,
            "mul_scalar: s must be a scalar");
    S sv = mat(s)(0, 0);
    Tensor out = Tensor::from_matrix(mat(a) * sv, grad_of(a, s));
    return push(std::move(out), [a, s, sv](TapeT& t, const Mat& g) {
      t.acc(a, g * sv);
      Mat ds = Mat::Constant(1, 1, (g.array() * t.mat(a).array()).sum());
      t.acc(s, ds);
    }, "mul_scalar");
  }

  Var relu(Var a) {
    Tensor out = Tensor::from_matrix(mat(a).cwiseMax(S(0)), grad_of(a));
    return push(std::move(out), [a](TapeT& t, const Mat& g) {
      t.acc(a, ((t.mat(a).array() > S(0)).template cast<S>() * g.array())
                   .matrix());
    }, "relu");
  }

  Var exp(Var a) {
    Tensor out = Tensor::from_matrix(mat(a).array().exp().matrix(), grad_of(a));
    Var v = push(std::move(out), nullptr, "exp");
    node(v).backprop = [a, v](TapeT& t, const Mat& g) {
      t.acc(a, (g.array() * t.mat(v).array()).matrix());
    };
    return v;
  }

  Var l2_normalize(Var a, S eps = S(1e-12)) {
    const Mat& x = mat(a);
    Tensor out = Tensor::from_matrix(l2_normalize_rows(x, eps), grad_of(a));
    return push(std::move(out), [a, eps](TapeT& t, const Mat& g) {
      const Mat& x = t.mat(a);
      ArrX<S> s = x.rowwise().squaredNorm().array() + eps;
      ArrX<S> inv = s.rsqrt();                               // s^-1/2
      ArrX<S> gx = (g.array() * x.array()).rowwise().sum();  // per-row g.x
      Mat dx = inv.matrix().asDiagonal() * g -
               (gx * inv * inv * inv).matrix().asDiagonal() * x;
      t.acc(a, dx);
    }, "l2_normalize");
  }

  // Mean cross-entropy over rows of `logits` against integer targets,
  // computed with max subtraction. Returns a scalar node.
  Var softmax_xent(Var logits, std::vector<int> targets) {
    const Mat& lm = mat(logits);
    S loss = softmax_xent_value(lm, targets);
    Tensor out = Tensor::scalar(loss);
    out.requires_grad = grad_of(logits);
    return push(std::move(out),
                [logits, targets = std::move(targets)](TapeT& t, const Mat& g) {
      const Mat& lm = t.mat(logits);
      Mat d = row_softmax(lm);
      for (Index i = 0; i < lm.rows(); ++i)
        d(i, targets[size_t(i)]) -= S(1);
      d *= g(0, 0) / S(lm.rows());
      t.acc(logits, d);
    }, "softmax_xent");
  }

  // Mean of non-pad token embeddings per sequence. Rows whose tokens are all
  // pad produce a zero row.
  Var embedding_mean(Var table, const MatI& tokens, int pad_id) {
    const Mat& tab = mat(table);
    const Index n = tokens.rows(), L = tokens.cols(), e = tab.cols();
    Mat out = Mat::Zero(n, e);
    for (Index i = 0; i < n; ++i) {
      int cnt = 0;
      for (Index j = 0; j < L; ++j) {
        int tok = tokens(i, j);
        if (tok == pad_id) continue;
        require(tok >= 0 && Index(tok) < tab.rows(), ErrorKind::argument,
                "embedding_mean: token id out of range");
        out.row(i) += tab.row(tok);
        ++cnt;
      }
      if (cnt > 0) out.row(i) /= S(cnt);
    }
    Tensor t = Tensor::from_matrix(std::move(out), grad_of(table));
    return push(std::move(t), [table, tokens, pad_id](TapeT& t, const Mat& g) {
      Mat dtab = Mat::Zero(t.mat(table).rows(), t.mat(table).cols());
      for (Index i = 0; i < tokens.rows(); ++i) {
        int cnt = 0;
        for (Index j = 0; j < tokens.cols(); ++j)
          if (tokens(i, j) != pad_id) ++cnt;
        if (cnt == 0) continue;
        for (Index j = 0; j < tokens.cols(); ++j) {
          int tok = tokens(i, j);
          if (tok != pad_id) dtab.row(tok) += g.row(i) / S(cnt);
        }
      }
      t.acc(table, dtab);
    }, "embedding_mean");
  }

  // Valid (no padding) 2D convolution over channel-interleaved image rows.
  // images: n x (H*W*C); kernel: (k*k*C) x F; bias: 1 x F.
  // Output: n x (OH*OW*F) with OH = H-k+1, OW = W-k+1, laid out
  // (oy, ox, f) row-major, matching the input pixel layout.
  Var conv2d(Var images, Var kernel, Var bias, const ImageDims& dims, int k) {
    const Mat& img = mat(images);
    const Mat& ker = mat(kernel);
    const Index f = ker.cols();
    require(mat(bias).rows() == 1 && mat(bias).cols() == f,
            ErrorKind::dimension, "conv2d: bias must be 1 x filters");
    require(img.cols() == dims.pixels(), ErrorKind::dimension,
            "conv2d: image row length does not match dims");
    require(k >= 1 && k <= dims.height && k <= dims.width,
            ErrorKind::dimension, "conv2d: kernel does not fit image");
    require(ker.rows() == Index(k) * k * dims.channels, ErrorKind::dimension,
            "conv2d: kernel rows must be k*k*channels");

    const Index oh = dims.height - k + 1, ow = dims.width - k + 1;
    std::vector<Index> srccol = conv_source_columns(dims, k);
    const Index n = img.rows(), pr = oh * ow, pc = Index(k) * k * dims.channels;

    Mat patches(n * pr, pc);
    for (Index i = 0; i < n; ++i)
      for (Index p = 0; p < pr; ++p)
        for (Index q = 0; q < pc; ++q)
          patches(i * pr + p, q) = img(i, srccol[size_t(p * pc + q)]);

    Mat prod = patches * ker;                       // (n*pr) x F
    prod.rowwise() += mat(bias).row(0);
    Mat out = Eigen::Map<Mat>(prod.data(), n, pr * f);  // same linear order

    Tensor t = Tensor::from_matrix(std::move(out),
                                   grad_of(images, kernel) || grad_of(bias));
    return push(std::move(t),
                [images, kernel, bias, dims, k, f, n, pr, pc,
                 patches = std::move(patches), srccol = std::move(srccol)](
                    TapeT& t, const Mat& g) {
      Eigen::Map<const Mat> gp(g.data(), n * pr, f);
      t.acc(kernel, patches.transpose() * gp);
      t.acc(bias, gp.colwise().sum());
      if (t.node(images).requires_grad) {
        Mat dp = gp * t.mat(kernel).transpose();  // (n*pr) x pc
        Mat dimg = Mat::Zero(n, dims.pixels());
        for (Index i = 0; i < n; ++i)
          for (Index p = 0; p < pr; ++p)
            for (Index q = 0; q < pc; ++q)
              dimg(i, srccol[size_t(p * pc + q)]) += dp(i * pr + p, q);
        t.acc(images, dimg);
      }
    }, "conv2d");
  }

  Var sum(Var a) {
    Tensor out = Tensor::scalar(mat(a).sum());
    out.requires_grad = grad_of(a);
    return push(std::move(out), [a](TapeT& t, const Mat& g) {
      t.acc(a, Mat::Constant(t.mat(a).rows(), t.mat(a).cols(), g(0, 0)));
    }, "sum");
  }

  // ---- backward ----

  void backward(Var loss) {
    require(value(loss).is_scalar(), ErrorKind::argument,
            "backward: loss must be a scalar");
    grads_.assign(nodes_.size(), Mat());
    grad_set_.assign(nodes_.size(), false);
    grads_[size_t(loss.id)] = Mat::Constant(1, 1, S(1));
    grad_set_[size_t(loss.id)] = true;
    for (int id = loss.id; id >= 0; --id) {
      Node& nd = nodes_[size_t(id)];
      if (!grad_set_[size_t(id)] || !nd.requires_grad || !nd.backprop)
        continue;
      nd.backprop(*this, grads_[size_t(id)]);
    }
  }

  // Gradient of the last backward() pass w.r.t. v; zeros if the loss did not
  // depend on v.
  const Mat& grad(Var v) {
    require(!grads_.empty(), ErrorKind::argument,
            "grad: call backward() first");
    size_t i = size_t(check(v).id);
    if (!grad_set_[i]) {
      grads_[i] = Mat::Zero(mat(v).rows(), mat(v).cols());
      grad_set_[i] = true;
    }
    return grads_[i];
  }

  size_t size() const { return nodes_.size(); }

 private:
  using BackFn = std::function<void(TapeT&, const Mat&)>;

  struct Node {
    Tensor value;
    BackFn backprop;
    bool requires_grad = false;
  };

  bool grad_of(Var a) const { return node(a).requires_grad; }
  bool grad_of(Var a, Var b) const {
    return node(a).requires_grad || node(b).requires_grad;
  }

  Var check(Var v) const {
    require(v.id >= 0 && size_t(v.id) < nodes_.size(), ErrorKind::argument,
            "invalid tape variable");
    return v;
  }

  Node& node(Var v) { return nodes_[size_t(check(v).id)]; }
  const Node& node(Var v) const { return nodes_[size_t(check(v).id)]; }

  Var push(Tensor value, BackFn fn, const char* op = "leaf") {
    require(value.finite(), ErrorKind::numeric,
            std::string(op) + ": non-finite values in output");
    bool rg = value.requires_grad;
    nodes_.push_back(Node{std::move(value), std::move(fn), rg});
    return Var{int(nodes_.size()) - 1};
  }

  template <class D>
  void acc(Var v, const Eigen::MatrixBase<D>& g) {
    Node& nd = node(v);
    if (!nd.requires_grad) return;
    size_t i = size_t(v.id);
    if (!grad_set_[i]) {
      grads_[i] = g;
      grad_set_[i] = true;
    } else {
      grads_[i] += g;
    }
  }

  static std::vector<Index> conv_source_columns(const ImageDims& dims, int k) {
    const Index oh = dims.height - k + 1, ow = dims.width - k + 1;
    const Index pc = Index(k) * k * dims.channels;
    std::vector<Index> src(size_t(oh * ow * pc));
    Index q = 0;
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx)
            for (Index c = 0; c < dims.channels; ++c)
              src[size_t(q++)] =
                  ((oy + ky) * dims.width + (ox + kx)) * dims.channels + c;
    return src;
  }

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  std::vector<bool> grad_set_;
};

using Tape = TapeT<float>;

}  // namespace cplab::nd
