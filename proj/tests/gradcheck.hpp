#pragma once

// Central finite-difference oracle for parameter gradients. Independent of
// the backward pass: it only perturbs values and re-evaluates the loss.

#include <cmath>
#include <functional>
#include <string>

#include "dcrl/core.hpp"

namespace testing_util {

struct GradReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t checked = 0;
  std::string worst;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares store grads (already populated) with central differences of loss.
// floor bounds the denominator for gradients that are zero up to rounding.
template <class Real>
GradReport check_store_gradients(dcrl::ParameterStore<Real>& store, const std::function<double()>& loss,
                                 double step, double floor = 1e-6) {
  GradReport rep;
  for (auto& e : store) {
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      const Real saved = e.value[k];
      e.value[k] = saved + Real(step);
      const double up = loss();
      e.value[k] = saved - Real(step);
      const double down = loss();
      e.value[k] = saved;
      const double numeric = (up - down) / (2 * step);
      const double analytic = e.grad[k];
      const double rel = rel_error(analytic, numeric, floor);
      ++rep.checked;
      rep.max_abs_error = std::max(rep.max_abs_error, std::abs(analytic - numeric));
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst = e.name + "[" + std::to_string(k) + "] analytic=" + std::to_string(analytic) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return rep;
}

}  // namespace testing_util
