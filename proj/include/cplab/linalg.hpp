// Free-function kernels on Eigen matrices. These are shared between the
// autodiff ops and the plain inference paths so both compute bit-identical
// values.
#pragma once

#include <vector>

#include "cplab/error.hpp"
#include "cplab/types.hpp"

namespace cplab::nd {

// Rows scaled to unit L2 norm; eps sits under the square root so zero rows
// map to (near) zero instead of NaN.
template <typename T>
MatX<T> l2_normalize_rows(const MatX<T>& x, T eps = T(1e-12)) {
  ArrX<T> inv = (x.rowwise().squaredNorm().array() + eps).rsqrt();
  return inv.matrix().asDiagonal() * x;
}

template <typename T>
ArrX<T> row_logsumexp(const MatX<T>& x) {
  VecX<T> mx = x.rowwise().maxCoeff();
  ArrX<T> sum = (x.colwise() - mx).array().exp().rowwise().sum();
  return sum.log() + mx.array();
}

// Max-subtracted softmax per row.
template <typename T>
MatX<T> row_softmax(const MatX<T>& x) {
  VecX<T> mx = x.rowwise().maxCoeff();
  MatX<T> e = (x.colwise() - mx).array().exp().matrix();
  ArrX<T> inv = e.rowwise().sum().array().inverse();
  return inv.matrix().asDiagonal() * e;
}

// Mean cross-entropy of row-wise softmax against integer targets.
template <typename T>
T softmax_xent_value(const MatX<T>& logits, const std::vector<int>& targets) {
  require(logits.rows() > 0, ErrorKind::argument, "softmax_xent: empty batch");
  require(Index(targets.size()) == logits.rows(), ErrorKind::dimension,
          "softmax_xent: one target per row required");
  ArrX<T> lse = row_logsumexp(logits);
  T total = T(0);
  for (Index i = 0; i < logits.rows(); ++i) {
    int t = targets[size_t(i)];
    require(t >= 0 && Index(t) < logits.cols(), ErrorKind::argument,
            "softmax_xent: target index out of range");
    total += lse[i] - logits(i, t);
  }
  return total / T(logits.rows());
}

template <typename T>
MatX<T> cosine_similarity_matrix(const MatX<T>& a, const MatX<T>& b) {
  MatX<T> an = l2_normalize_rows(a);
  MatX<T> bn = l2_normalize_rows(b);
  return an * bn.transpose();
}

// Per-row argmax with ties broken toward the lowest column index.
template <typename T>
std::vector<int> row_argmax(const MatX<T>& scores) {
  std::vector<int> out(size_t(scores.rows()));
  for (Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    T best_v = scores(i, 0);
    for (Index j = 1; j < scores.cols(); ++j) {
      if (scores(i, j) > best_v) {
        best_v = scores(i, j);
        best = int(j);
      }
    }
    out[size_t(i)] = best;
  }
  return out;
}

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;  // population variance
};

// Population mean/variance accumulated in double.
template <typename T>
MeanVar mean_var(const std::vector<T>& xs) {
  require(!xs.empty(), ErrorKind::argument, "mean_var: empty sample");
  double m = 0.0;
  for (T x : xs) m += double(x);
  m /= double(xs.size());
  double v = 0.0;
  for (T x : xs) {
    double d = double(x) - m;
    v += d * d;
  }
  v /= double(xs.size());
  return {m, v};
}

}  // namespace cplab::nd
