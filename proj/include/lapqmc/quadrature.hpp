#pragma once

// Gaussian quadrature rules (Golub-Welsch) and tensor-product drivers used
// for reference solutions.

#include "lapqmc/common.hpp"

#include <Eigen/Eigenvalues>

namespace lapqmc {

struct Rule1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

// Nodes/weights from the symmetric Jacobi matrix with zero diagonal and
// off-diagonal beta_k, k = 1..m-1; `mass` is the integral of the weight.
inline Rule1D golub_welsch(int m, double mass, const std::function<double(int)>& beta) {
  if (m < 1) throw ConfigError("quadrature: need at least one node");
  Matrix j = Matrix::Zero(m, m);
  for (int k = 1; k < m; ++k) {
    j(k, k - 1) = beta(k);
    j(k - 1, k) = beta(k);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(j);
  Rule1D r;
  for (int i = 0; i < m; ++i) {
    r.nodes.push_back(es.eigenvalues()[i]);
    const double v = es.eigenvectors()(0, i);
    r.weights.push_back(mass * v * v);
  }
  // Enforce exact symmetry of the rule about zero.
  for (int i = 0; i < m / 2; ++i) {
    const int k = m - 1 - i;
    const double x = 0.5 * (r.nodes[static_cast<std::size_t>(k)] - r.nodes[static_cast<std::size_t>(i)]);
    const double w = 0.5 * (r.weights[static_cast<std::size_t>(k)] + r.weights[static_cast<std::size_t>(i)]);
    r.nodes[static_cast<std::size_t>(i)] = -x;
    r.nodes[static_cast<std::size_t>(k)] = x;
    r.weights[static_cast<std::size_t>(i)] = w;
    r.weights[static_cast<std::size_t>(k)] = w;
  }
  if (m % 2 == 1) r.nodes[static_cast<std::size_t>(m / 2)] = 0.0;
  return r;
}

}  // namespace detail

/// m-point Gauss-Legendre rule on [-1, 1].
inline Rule1D gauss_legendre(int m) {
  return detail::golub_welsch(m, 2.0, [](int k) {
    const double kk = k;
    return kk / std::sqrt(4.0 * kk * kk - 1.0);
  });
}

/// m-point Gauss-Hermite rule for the standard normal density (weights sum to 1).
inline Rule1D gauss_hermite_normal(int m) {
  return detail::golub_welsch(m, 1.0, [](int k) { return std::sqrt(static_cast<double>(k)); });
}

/// Composite Gauss-Legendre on [a, b] with `panels` equal panels.
inline Rule1D composite_gauss_legendre(double a, double b, int panels, int order) {
  if (!(a < b) || panels < 1) throw ConfigError("composite rule: need a < b and panels >= 1");
  const Rule1D base = gauss_legendre(order);
  const double h = (b - a) / panels;
  Rule1D r;
  for (int p = 0; p < panels; ++p) {
    const double c = a + (p + 0.5) * h;
    for (std::size_t i = 0; i < base.nodes.size(); ++i) {
      r.nodes.push_back(c + 0.5 * h * base.nodes[i]);
      r.weights.push_back(0.5 * h * base.weights[i]);
    }
  }
  return r;
}

/// Neumaier-compensated accumulator.
class Accumulator {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Calls fn(x, w) for every node of the tensor product of `rules` (the last
/// axis varies fastest).
template <class Fn>
void for_each_tensor_node(const std::vector<Rule1D>& rules, Fn&& fn) {
  const std::size_t d = rules.size();
  if (d == 0) throw ConfigError("tensor rule: no axes");
  std::vector<std::size_t> idx(d, 0);
  Vector x(static_cast<Eigen::Index>(d));
  for (;;) {
    double w = 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      x[static_cast<Eigen::Index>(j)] = rules[j].nodes[idx[j]];
      w *= rules[j].weights[idx[j]];
    }
    fn(x, w);
    std::size_t j = d;
    while (j > 0) {
      --j;
      if (++idx[j] < rules[j].nodes.size()) break;
      idx[j] = 0;
      if (j == 0) return;
    }
  }
}

}  // namespace lapqmc
