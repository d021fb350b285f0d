#pragma once

#include <Eigen/Core>

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>

namespace disarm {

using Bits = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

// Black-box score over binary vectors. Only ever evaluated at discrete
// points; every call bumps eval_count.
class ObjectiveFunction {
 public:
  using Fn = std::function<double(const Bits&)>;

  explicit ObjectiveFunction(Fn fn) : fn_(std::move(fn)) {}

  double operator()(const Bits& b) {
    eval_count_.fetch_add(1, std::memory_order_relaxed);
    return fn_(b);
  }

  std::size_t eval_count() const { return eval_count_.load(std::memory_order_relaxed); }
  void reset_count() { eval_count_.store(0, std::memory_order_relaxed); }

 private:
  Fn fn_;
  std::atomic<std::size_t> eval_count_{0};
};

}  // namespace disarm
