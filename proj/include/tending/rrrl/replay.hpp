#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../transforms.hpp"

namespace tending::rrrl {

struct Transition {
  Vec6 s = Vec6::Zero();
  int a = 0;
  double r = 0;
  Vec6 s_next = Vec6::Zero();
  bool terminal = false;
};

/// Complete binary tree over a power-of-two leaf count; internal nodes hold
/// the sum (or max) of their children.
template <class Combine>
class SegmentTree {
 public:
  explicit SegmentTree(std::size_t capacity) {
    leaves_ = 1;
    while (leaves_ < capacity) leaves_ <<= 1;
    nodes_.assign(2 * leaves_, 0.0);
  }

  void set(std::size_t i, double value) {
    std::size_t n = i + leaves_;
    nodes_[n] = value;
    for (n /= 2; n >= 1; n /= 2) nodes_[n] = Combine{}(nodes_[2 * n], nodes_[2 * n + 1]);
  }

  double get(std::size_t i) const { return nodes_[i + leaves_]; }
  double root() const { return nodes_[1]; }
  std::size_t leaf_count() const { return leaves_; }

  /// Sum trees only: first leaf whose prefix sum exceeds `mass`.
  std::size_t find_prefix(double mass) const {
    std::size_t n = 1;
    while (n < leaves_) {
      if (mass < nodes_[2 * n]) {
        n = 2 * n;
      } else {
        mass -= nodes_[2 * n];
        n = 2 * n + 1;
      }
    }
    return n - leaves_;
  }

 private:
  std::size_t leaves_ = 1;
  std::vector<double> nodes_;
};

struct SumOp {
  double operator()(double a, double b) const { return a + b; }
};
struct MaxOp {
  double operator()(double a, double b) const { return std::max(a, b); }
};

struct SampledBatch {
  std::vector<Transition> transitions;
  std::vector<std::size_t> indices;
  std::vector<double> weights;
};

/// Proportional prioritized replay: ring buffer plus a sum tree of p^α and a
/// max tree of the raw priorities.
class ReplayMemory {
 public:
  ReplayMemory(std::size_t capacity, double alpha)
      : capacity_(capacity), alpha_(alpha), sum_(capacity), max_(capacity) {
    if (capacity == 0) raise(Errc::validation_error, "replay capacity must be positive");
    if (!(alpha >= 0)) raise(Errc::validation_error, "per_alpha must be non-negative");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  double alpha() const { return alpha_; }
  double total() const { return sum_.root(); }
  const SegmentTree<SumOp>& sum_tree() const { return sum_; }

  double priority(std::size_t i) const { return max_.get(i); }
  double max_priority() const { return size_ == 0 ? 1.0 : max_.root(); }
  const Transition& at(std::size_t i) const { return data_.at(i); }

  /// Inserts with the current max priority (1 when empty); evicts the oldest
  /// entry once full. Returns the slot used.
  std::size_t insert(const Transition& t) {
    const double p = max_priority();
    const std::size_t slot = next_;
    if (slot < data_.size()) {
      data_[slot] = t;
    } else {
      data_.push_back(t);
    }
    set_priority(slot, p);
    next_ = (next_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
    return slot;
  }

  void update_priority(std::size_t i, double p) {
    if (i >= size_) raise(Errc::out_of_range, "replay index out of range");
    if (!(p > 0) || !std::isfinite(p)) raise(Errc::non_finite, "priority must be positive and finite");
    set_priority(i, p);
  }

  /// Stratified proportional draw; IS weights (N·P(i))^−β divided by the
  /// batch maximum.
  SampledBatch sample(std::size_t batch, double beta, std::mt19937_64& rng) const {
    if (batch == 0 || size_ < batch) {
      raise(Errc::underfull_memory,
            "replay holds " + std::to_string(size_) + " transitions, batch needs " + std::to_string(batch));
    }
    SampledBatch out;
    const double tot = total();
    const double seg = tot / static_cast<double>(batch);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double wmax = 0;
    for (std::size_t j = 0; j < batch; ++j) {
      const double mass = std::min((static_cast<double>(j) + u(rng)) * seg, std::nextafter(tot, 0.0));
      std::size_t i = std::min(sum_.find_prefix(mass), size_ - 1);
      const double prob = sum_.get(i) / tot;
      const double w = std::pow(static_cast<double>(size_) * prob, -beta);
      out.indices.push_back(i);
      out.transitions.push_back(data_[i]);
      out.weights.push_back(w);
      wmax = std::max(wmax, w);
    }
    for (double& w : out.weights) w /= wmax;
    return out;
  }

 private:
  void set_priority(std::size_t i, double p) {
    max_.set(i, p);
    sum_.set(i, std::pow(p, alpha_));
  }

  std::size_t capacity_;
  double alpha_;
  std::vector<Transition> data_;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
  SegmentTree<SumOp> sum_;
  SegmentTree<MaxOp> max_;
};

}  // namespace tending::rrrl
