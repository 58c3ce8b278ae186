// SGD with classical momentum and decoupled-from-schedule weight decay folded
// into the gradient:  v <- mu*v + (g + lambda*theta);  theta <- theta - lr*v.
#pragma once

#include <vector>

#include "cplab/error.hpp"
#include "cplab/types.hpp"

namespace cplab::nd {

template <typename S>
void sgd_momentum_step(MatX<S>& theta, MatX<S>& velocity, const MatX<S>& grad,
                       S lr, S momentum, S weight_decay) {
  require(theta.rows() == grad.rows() && theta.cols() == grad.cols(),
          ErrorKind::dimension, "sgd step: gradient shape mismatch");
  if (velocity.size() == 0) velocity = MatX<S>::Zero(theta.rows(), theta.cols());
  require(velocity.rows() == theta.rows() && velocity.cols() == theta.cols(),
          ErrorKind::dimension, "sgd step: velocity shape mismatch");
  velocity = momentum * velocity + grad + weight_decay * theta;
  theta -= lr * velocity;
}

// Per-parameter velocity buffers, lazily sized on first step.
template <typename S>
struct SgdMomentumT {
  S lr = S(1e-3);
  S momentum = S(0.9);
  S weight_decay = S(1e-4);
  std::vector<MatX<S>> velocity;

  // `decay` lets callers exempt individual parameters (e.g. a temperature
  // scalar) from weight decay.
  void step(size_t slot, MatX<S>& theta, const MatX<S>& grad,
            bool decay = true) {
    if (velocity.size() <= slot) velocity.resize(slot + 1);
    sgd_momentum_step(theta, velocity[slot], grad, lr, momentum,
                      decay ? weight_decay : S(0));
  }
};

using SgdMomentum = SgdMomentumT<float>;

}  // namespace cplab::nd
