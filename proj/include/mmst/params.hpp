#pragma once

// Named trainable parameters and gradient buffers.

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mmst/autograd.hpp"
#include "mmst/error.hpp"

namespace mmst {

using ag::Index;
using ag::Matrix;

struct Parameter {
  std::string name;
  Matrix value;
};

class ParameterStore {
 public:
  // Uniform init in +-1/sqrt(fan_in); fan_in <= 0 means zero init.
  std::size_t add(const std::string& name, Index rows, Index cols,
                  double fan_in, std::mt19937_64& rng) {
    Matrix m = Matrix::Zero(rows, cols);
    if (fan_in > 0.0) {
      const double bound = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Index c = 0; c < cols; ++c) {
        for (Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
      }
    }
    return add(name, std::move(m));
  }

  std::size_t add(const std::string& name, Matrix value) {
    if (index_.count(name) != 0) {
      throw ConfigError("duplicate parameter name: " + name);
    }
    index_.emplace(name, params_.size());
    params_.push_back({name, std::move(value)});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }

  // Total scalar count.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  const Parameter* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  std::size_t slot(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Scalar count of every parameter whose name starts with `prefix`.
  std::size_t scalar_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p.name.rfind(prefix, 0) == 0) n += static_cast<std::size_t>(p.value.size());
    }
    return n;
  }

  void set_zero() {
    for (auto& p : params_) p.value.setZero();
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// One matrix per parameter, same shapes as the store.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterStore& store) {
    grads_.reserve(store.size());
    for (const auto& p : store) grads_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }

  void add_from(const ag::Tape& tape, double weight = 1.0) {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      if (const Matrix* g = tape.param_grad(i)) grads_[i] += weight * *g;
    }
  }

  double global_norm() const {
    double s = 0.0;
    for (const auto& g : grads_) s += g.squaredNorm();
    return std::sqrt(s);
  }

  void scale(double f) {
    for (auto& g : grads_) g *= f;
  }

  bool all_finite() const {
    for (const auto& g : grads_) {
      if (!g.allFinite()) return false;
    }
    return true;
  }

  Matrix& operator[](std::size_t i) { return grads_[i]; }
  const Matrix& operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Matrix> grads_;
};

}  // namespace mmst
