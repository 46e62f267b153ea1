#pragma once

// Forward-pass context: the tape being recorded, the parameter store it
// reads from, and train/eval mode.

#include <random>
#include <string>

#include "mmst/autograd.hpp"
#include "mmst/params.hpp"

namespace mmst {

using ag::Var;

struct ForwardContext {
  ag::Tape& tape;
  const ParameterStore& params;
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout masks; required when training

  Var param(const std::string& name) const {
    const std::size_t slot = params.slot(name);
    return tape.param(slot, params[slot].value);
  }

  Var constant(ag::Matrix m) const { return tape.constant(std::move(m)); }

  Var dropout(const Var& x, double rate) const {
    if (!training || rate <= 0.0) return x;
    if (rng == nullptr) throw ConfigError("training forward pass needs an rng for dropout");
    return ag::dropout(x, rate, *rng);
  }
};

// Affine map x W + b with parameters `<prefix>.w` [in x out] and `<prefix>.b` [1 x out].
inline void add_linear(ParameterStore& store, const std::string& prefix, Index in, Index out,
                       std::mt19937_64& rng) {
  store.add(prefix + ".w", in, out, static_cast<double>(in), rng);
  store.add(prefix + ".b", 1, out, static_cast<double>(in), rng);
}

inline Var linear(const ForwardContext& ctx, const std::string& prefix, const Var& x) {
  return ag::add_row(ag::matmul(x, ctx.param(prefix + ".w")), ctx.param(prefix + ".b"));
}

}  // namespace mmst
