#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "../error.hpp"

namespace tending::rrrl {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Fully connected action-value network: ReLU hidden layers, linear output.
/// Layer l maps sizes[l] → sizes[l+1] with weights[l] of shape (out × in).
struct QNetwork {
  std::vector<int> sizes;
  std::vector<MatX> weights;
  std::vector<VecX> biases;

  static QNetwork zeros(const std::vector<int>& sizes) {
    if (sizes.size() < 2) raise(Errc::validation_error, "network needs at least two layer sizes");
    QNetwork n;
    n.sizes = sizes;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      if (sizes[l] <= 0 || sizes[l + 1] <= 0) raise(Errc::validation_error, "layer sizes must be positive");
      n.weights.push_back(MatX::Zero(sizes[l + 1], sizes[l]));
      n.biases.push_back(VecX::Zero(sizes[l + 1]));
    }
    return n;
  }

  /// He-uniform weights, zero biases.
  static QNetwork random(const std::vector<int>& sizes, std::mt19937_64& rng) {
    QNetwork n = zeros(sizes);
    for (std::size_t l = 0; l < n.weights.size(); ++l) {
      const double lim = std::sqrt(6.0 / sizes[l]);
      std::uniform_real_distribution<double> u(-lim, lim);
      for (Eigen::Index i = 0; i < n.weights[l].size(); ++i) n.weights[l].data()[i] = u(rng);
    }
    return n;
  }

  int layers() const { return static_cast<int>(weights.size()); }
  int input_size() const { return sizes.front(); }
  int output_size() const { return sizes.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layers(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  bool finite() const {
    for (int l = 0; l < layers(); ++l) {
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    }
    return true;
  }
};

/// Per-layer activations kept for backprop; a[0] is the input.
struct ForwardCache {
  std::vector<VecX> a;
};

inline VecX q_forward(const QNetwork& net, const VecX& s, ForwardCache* cache = nullptr) {
  if (s.size() != net.input_size()) raise(Errc::out_of_range, "network input has wrong size");
  if (!s.allFinite()) raise(Errc::non_finite, "network input is not finite");
  VecX a = s;
  if (cache) cache->a.assign(1, a);
  for (int l = 0; l < net.layers(); ++l) {
    VecX z = net.weights[l] * a + net.biases[l];
    if (l + 1 < net.layers()) z = z.cwiseMax(0.0);
    a = std::move(z);
    if (cache) cache->a.push_back(a);
  }
  return a;
}

/// Same shapes as the network.
struct Gradients {
  std::vector<MatX> dw;
  std::vector<VecX> db;

  static Gradients zeros_like(const QNetwork& n) {
    Gradients g;
    for (int l = 0; l < n.layers(); ++l) {
      g.dw.push_back(MatX::Zero(n.weights[l].rows(), n.weights[l].cols()));
      g.db.push_back(VecX::Zero(n.biases[l].size()));
    }
    return g;
  }
};

/// Accumulates ∂L/∂θ given ∂L/∂output for one forward pass.
inline void q_backward(const QNetwork& net, const ForwardCache& cache, const VecX& d_out, Gradients& g) {
  VecX delta = d_out;
  for (int l = net.layers() - 1; l >= 0; --l) {
    const VecX& in = cache.a[l];
    g.dw[l].noalias() += delta * in.transpose();
    g.db[l] += delta;
    if (l == 0) break;
    VecX back = net.weights[l].transpose() * delta;
    // ReLU derivative; the cached activation is already rectified.
    for (Eigen::Index i = 0; i < back.size(); ++i) {
      if (!(in[i] > 0)) back[i] = 0;
    }
    delta = std::move(back);
  }
}

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  Gradients m, v;

  static AdamState for_network(const QNetwork& n, double lr) {
    AdamState s;
    s.lr = lr;
    s.m = Gradients::zeros_like(n);
    s.v = Gradients::zeros_like(n);
    return s;
  }
};

inline void adam_step(QNetwork& net, AdamState& st, const Gradients& g) {
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    m = st.beta1 * m + (1 - st.beta1) * grad;
    v = st.beta2 * v + (1 - st.beta2) * grad.cwiseAbs2();
    param.array() -= st.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + st.eps);
  };
  for (int l = 0; l < net.layers(); ++l) {
    update(net.weights[l], st.m.dw[l], st.v.dw[l], g.dw[l]);
    update(net.biases[l], st.m.db[l], st.v.db[l], g.db[l]);
  }
}

inline int argmax(const VecX& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

}  // namespace tending::rrrl
