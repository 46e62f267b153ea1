#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mmst/error.hpp"

namespace mmst {

// Dense [time x node x channel] array, row-major in that order.
class FlowTensor {
 public:
  FlowTensor() = default;
  FlowTensor(std::size_t time, std::size_t nodes, std::size_t channels,
             double fill = 0.0)
      : time_(time), nodes_(nodes), channels_(channels),
        data_(time * nodes * channels, fill) {}

  std::size_t time() const { return time_; }
  std::size_t nodes() const { return nodes_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t t, std::size_t n, std::size_t c) {
    return data_[(t * nodes_ + n) * channels_ + c];
  }
  double operator()(std::size_t t, std::size_t n, std::size_t c) const {
    return data_[(t * nodes_ + n) * channels_ + c];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  // Copy of one node's channel over time.
  std::vector<double> series(std::size_t node, std::size_t channel = 0) const {
    std::vector<double> s(time_);
    for (std::size_t t = 0; t < time_; ++t) s[t] = (*this)(t, node, channel);
    return s;
  }

  void set_series(std::size_t node, std::size_t channel,
                  std::span<const double> values) {
    if (values.size() != time_) throw ShapeError("set_series: length mismatch");
    for (std::size_t t = 0; t < time_; ++t) (*this)(t, node, channel) = values[t];
  }

  // Steps [start, start + count).
  FlowTensor slice_time(std::size_t start, std::size_t count) const {
    if (start + count > time_) throw ShapeError("slice_time: out of range");
    FlowTensor out(count, nodes_, channels_);
    const std::size_t stride = nodes_ * channels_;
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(start * stride),
              data_.begin() + static_cast<std::ptrdiff_t>((start + count) * stride),
              out.data_.begin());
    return out;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const FlowTensor&, const FlowTensor&) = default;

 private:
  std::size_t time_ = 0;
  std::size_t nodes_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

}  // namespace mmst
