#pragma once

// Central finite-difference check of tape gradients over every scalar of
// every parameter.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>

#include "mmst/losses_metrics.hpp"
#include "mmst/model.hpp"

namespace mmst {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  double max_abs_gradient = 0.0;
  double loss = 0.0;
  double floor = 0.0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is zero from dividing rounding noise by zero.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::fabs(analytic - numeric) /
         std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

// Smallest gradient a central difference at `step` can resolve to relative
// accuracy `tolerance`. A loss averaged over `terms` elements carries about
// sqrt(terms) * eps * |L| of rounding (random-walk accumulation in the sum),
// so the difference quotient is off by that much over step.
inline double resolution_floor(double loss, double step, double tolerance = 1e-4,
                               std::size_t terms = 1) {
  return std::numeric_limits<double>::epsilon() * std::fabs(loss) *
         std::sqrt(static_cast<double>(std::max<std::size_t>(terms, 1))) / (step * tolerance);
}

using LossFn = std::function<Var(const ForwardContext&)>;

// `terms` is the number of elements the loss averages; it sets the default floor.
inline GradCheckResult grad_check(ParameterStore& params, const LossFn& loss_fn, double step,
                                  std::optional<double> floor = std::nullopt,
                                  std::size_t terms = 1) {
  ag::Tape tape;
  ForwardContext ctx{tape, params, false, nullptr};
  Var l = loss_fn(ctx);
  tape.backward(l);
  Gradients analytic(params);
  analytic.add_from(tape);

  auto value = [&]() {
    ag::Tape t;
    ForwardContext c{t, params, false, nullptr};
    return loss_fn(c).scalar();
  };

  GradCheckResult r;
  r.loss = l.scalar();
  const double fl = floor.value_or(resolution_floor(r.loss, step, 1e-4, terms));
  r.floor = fl;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value;
    for (Index k = 0; k < w.size(); ++k) {
      const double orig = w.data()[k];
      // Divide by the step as represented, not the nominal 2*step.
      const double hi = orig + step;
      const double lo = orig - step;
      w.data()[k] = hi;
      const double up = value();
      w.data()[k] = lo;
      const double down = value();
      w.data()[k] = orig;
      const double numeric = (up - down) / (hi - lo);
      const double a = analytic[i].data()[k];
      r.max_abs_gradient = std::max(r.max_abs_gradient, std::fabs(a));
      const double e = relative_error(a, numeric, fl);
      ++r.checked;
      if (e > r.max_relative_error || r.worst_parameter.empty()) {
        r.max_relative_error = e;
        r.worst_parameter = params[i].name;
        r.worst_index = k;
        r.analytic = a;
        r.numeric = numeric;
      }
    }
  }
  return r;
}

// Model loss on one batch in evaluation mode (dropout off).
inline GradCheckResult model_grad_check(Model& model, const Batch& batch, double step,
                                        std::optional<double> floor = std::nullopt) {
  const LossConfig lc = model.config().loss;
  return grad_check(
      model.params(),
      [&](const ForwardContext& ctx) {
        return loss(lc, ctx.constant(batch.target), model.forward(ctx, batch));
      },
      step, floor, static_cast<std::size_t>(batch.target.size()));
}

}  // namespace mmst
