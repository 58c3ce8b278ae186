// Dense tensor value type, templated on scalar. Storage is a row-major
// matrix: a tensor of logical shape (d0, ..., dk) is stored as
// (d0*...*d(k-1)) x dk; a scalar is 1x1 with an empty shape list.
#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "cplab/error.hpp"
#include "cplab/types.hpp"

namespace cplab::nd {

template <typename S>
struct TensorT {
  std::vector<Index> shape;
  MatX<S> data;
  bool requires_grad = false;

  TensorT() : data(MatX<S>::Zero(1, 1)) {}

  static TensorT from_matrix(MatX<S> m, bool requires_grad = false) {
    TensorT t;
    t.shape = {m.rows(), m.cols()};
    t.data = std::move(m);
    t.requires_grad = requires_grad;
    return t;
  }

  static TensorT scalar(S v, bool requires_grad = false) {
    TensorT t;
    t.shape = {};
    t.data = MatX<S>::Constant(1, 1, v);
    t.requires_grad = requires_grad;
    return t;
  }

  static TensorT with_shape(std::vector<Index> shape, MatX<S> m,
                            bool requires_grad = false) {
    Index n = std::accumulate(shape.begin(), shape.end(), Index(1),
                              std::multiplies<Index>());
    require(n == m.size(), ErrorKind::dimension,
            "tensor shape does not match element count");
    TensorT t;
    t.shape = std::move(shape);
    t.data = std::move(m);
    t.requires_grad = requires_grad;
    return t;
  }

  Index size() const { return data.size(); }
  Index rows() const { return data.rows(); }
  Index cols() const { return data.cols(); }
  bool is_scalar() const { return data.size() == 1; }
  S scalar_value() const { return data(0, 0); }
  bool finite() const { return data.allFinite(); }
};

using Tensor = TensorT<float>;

}  // namespace cplab::nd
