#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "interrogate/rng.hpp"
#include "interrogate/tensor.hpp"

namespace testutil {

using interrogate::Rng;
using interrogate::Shape;
using interrogate::Tensor;

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1e-6, std::fabs(a), std::fabs(b)});
}

inline Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad,
                            double stddev = 1.0) {
  return Tensor::from_data(
      shape,
      rng.normal_vec(static_cast<size_t>(interrogate::shape_size(shape)), 0.0,
                     stddev),
      requires_grad);
}

inline double grad_at(const Tensor& t, size_t idx) {
  return t.has_grad() ? t.grad()[idx] : 0.0;
}

// Central-difference gradient oracle. Runs the builder once under a tape
// for reverse-mode gradients, then probes coordinates of every leaf by
// re-evaluating the forward pass with nudged values.
inline double check_grads(const std::function<Tensor()>& build,
                          std::vector<Tensor> leaves, Rng& rng,
                          int probes_per_leaf = 4, double tol = 1e-4,
                          double h = 1e-5) {
  for (auto& leaf : leaves) leaf.zero_grad();
  {
    interrogate::Tape tape;
    Tensor loss = build();
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const int n = static_cast<int>(leaf.size());
    for (int p = 0; p < probes_per_leaf; ++p) {
      const size_t idx = static_cast<size_t>(rng.uniform_int(n));
      const double saved = leaf.data()[idx];
      leaf.data()[idx] = saved + h;
      const double up = build().item();
      leaf.data()[idx] = saved - h;
      const double down = build().item();
      leaf.data()[idx] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double ad = grad_at(leaf, idx);
      const double err = rel_err(ad, fd);
      worst = std::max(worst, err);
      CHECK_MESSAGE(err < tol, "autodiff ", ad, " vs fd ", fd, " at coord ",
                    idx);
    }
  }
  return worst;
}

}  // namespace testutil
