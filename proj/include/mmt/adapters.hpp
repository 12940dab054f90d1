#pragma once

#include "mmt/errors.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

// Residual bottleneck: x + Up(ReLU(Down(x))). With a zero-initialized up
// projection the forward is exactly the identity, so inserting adapters into
// a frozen backbone leaves its behavior untouched until training moves them.
struct BottleneckAdapter {
  Tensor down;    // d_model x d_bottleneck
  Tensor down_b;  // d_bottleneck
  Tensor up;      // d_bottleneck x d_model
  Tensor up_b;    // d_model
};

inline Tensor adapter_forward(const Tensor& x, const BottleneckAdapter& a,
                              Tape* tape = nullptr) {
  if (x.ndim() != 2 || x.cols() != a.down.rows())
    throw DimensionError("adapter expects input with last axis " +
                         std::to_string(a.down.rows()));
  Tensor h = relu(add_bias(matmul(x, a.down, tape), a.down_b, tape), tape);
  Tensor u = add_bias(matmul(h, a.up, tape), a.up_b, tape);
  return add(x, u, tape);
}

}  // namespace mmt
