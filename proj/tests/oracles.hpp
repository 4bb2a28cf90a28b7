#pragma once

// Reference implementations used only by the tests. They recompute
// quantities from the raw parameter vector in long double, without going
// through the library's views, Jacobians or gradient code.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "finch/model.hpp"

namespace oracle {

using finch::Vector;
using LVec = std::vector<long double>;

/// Logits from the flat layout, in long double.
inline LVec ld_logits(const finch::ModelParams& p, const Vector& x) {
  const auto& th = p.theta();
  const std::size_t k = finch::num_classes(p.arch());
  const std::size_t d = finch::input_dim(p.arch());
  LVec z(k, 0.0L);
  if (finch::is_linear(p.arch())) {
    for (std::size_t c = 0; c < k; ++c) {
      long double s = th[static_cast<Eigen::Index>(k * d + c)];
      for (std::size_t j = 0; j < d; ++j) s += static_cast<long double>(th[static_cast<Eigen::Index>(c * d + j)]) * x[static_cast<Eigen::Index>(j)];
      z[c] = s;
    }
    return z;
  }
  const std::size_t h = std::get<finch::Mlp2Arch>(p.arch()).hidden;
  LVec hid(h);
  for (std::size_t u = 0; u < h; ++u) {
    long double a = th[static_cast<Eigen::Index>(h * d + u)];
    for (std::size_t j = 0; j < d; ++j) a += static_cast<long double>(th[static_cast<Eigen::Index>(u * d + j)]) * x[static_cast<Eigen::Index>(j)];
    hid[u] = std::tanh(a);
  }
  const std::size_t w2 = h * d + h;
  for (std::size_t c = 0; c < k; ++c) {
    long double s = th[static_cast<Eigen::Index>(w2 + k * h + c)];
    for (std::size_t u = 0; u < h; ++u) s += static_cast<long double>(th[static_cast<Eigen::Index>(w2 + c * h + u)]) * hid[u];
    z[c] = s;
  }
  return z;
}

inline LVec ld_log_probs(const finch::ModelParams& p, const Vector& x) {
  LVec z = ld_logits(p, x);
  long double m = z[0];
  for (auto v : z) m = std::max(m, v);
  long double s = 0.0L;
  for (auto v : z) s += std::exp(v - m);
  const long double lse = m + std::log(s);
  for (auto& v : z) v -= lse;
  return z;
}

/// Context encoding rebuilt independently: slot j-1 holds the token j back.
inline Vector context(std::size_t vocab, std::size_t window, const std::vector<int>& tokens, std::size_t t) {
  Vector x = Vector::Zero(static_cast<Eigen::Index>(vocab * window));
  for (std::size_t j = 1; j <= window; ++j) {
    if (t < j) break;
    x[static_cast<Eigen::Index>((j - 1) * vocab + static_cast<std::size_t>(tokens[t - j]))] = 1.0;
  }
  return x;
}

/// Mean cross-entropy by explicit loops; sequences average tokens, then sequences.
inline long double ld_ce_loss(const finch::ModelParams& p, const finch::ExampleList& ex) {
  long double total = 0.0L;
  if (const auto* lab = std::get_if<std::vector<finch::LabeledExample>>(&ex)) {
    for (const auto& e : *lab) {
      const LVec lp = ld_log_probs(p, e.x);
      for (std::size_t k = 0; k < lp.size(); ++k)
        if (e.q[static_cast<Eigen::Index>(k)] > 0) total -= e.q[static_cast<Eigen::Index>(k)] * lp[k];
    }
    return total / static_cast<long double>(lab->size());
  }
  const auto& a = std::get<finch::SeqLinearArch>(p.arch());
  const auto& seqs = std::get<std::vector<finch::SequenceExample>>(ex);
  for (const auto& s : seqs) {
    long double seq = 0.0L;
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      const LVec lp = ld_log_probs(p, context(a.vocab, a.context, s.tokens, t));
      if (!s.targets.empty()) {
        const auto& q = s.targets[t];
        for (std::size_t k = 0; k < lp.size(); ++k)
          if (q[static_cast<Eigen::Index>(k)] > 0) seq -= q[static_cast<Eigen::Index>(k)] * lp[k];
      } else {
        seq -= lp[static_cast<std::size_t>(s.tokens[t])];
      }
    }
    total += seq / static_cast<long double>(s.tokens.size());
  }
  return total / static_cast<long double>(seqs.size());
}

/// Central differences of a scalar function of theta.
template <typename F>
Vector fd_gradient(const finch::ModelParams& p, F&& f, double h) {
  Vector g(p.size());
  finch::ModelParams q = p;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double o = q.theta()[i];
    q.theta_mut()[i] = o + h;
    const long double up = f(q);
    q.theta_mut()[i] = o - h;
    const long double down = f(q);
    q.theta_mut()[i] = o;
    g[i] = static_cast<double>((up - down) / (2.0L * h));
  }
  return g;
}

/// Dense Hessian of log p(y|x) by second differences of the long double log-probability.
inline finch::Matrix fd_logp_hessian(const finch::ModelParams& p, const Vector& x, std::size_t y, double h) {
  const auto n = static_cast<Eigen::Index>(p.size());
  finch::Matrix H(n, n);
  finch::ModelParams q = p;
  auto f = [&](void) { return ld_log_probs(q, x)[y]; };
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const double oi = q.theta()[i];
      const double oj = q.theta()[j];
      auto at = [&](double si, double sj) {
        q.theta_mut()[i] = oi;
        q.theta_mut()[j] = oj;
        q.theta_mut()[i] += si * h;
        q.theta_mut()[j] += sj * h;
        const long double v = f();
        q.theta_mut()[i] = oi;
        q.theta_mut()[j] = oj;
        return v;
      };
      const long double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0L * h * h);
      H(i, j) = H(j, i) = static_cast<double>(v);
    }
  }
  return H;
}

/// Exact Hessian of log p(y|x) for linear softmax: -(diag p - p p^T) kron (x~ x~^T),
/// laid out for theta = [W row-major, b].
inline finch::Matrix linear_logp_hessian(const finch::ModelParams& p, const Vector& x) {
  const std::size_t k = finch::num_classes(p.arch());
  const std::size_t d = finch::input_dim(p.arch());
  const LVec lp = ld_log_probs(p, x);
  std::vector<double> pr(k);
  for (std::size_t c = 0; c < k; ++c) pr[c] = static_cast<double>(std::exp(lp[c]));
  auto index = [&](std::size_t c, std::size_t j) {  // j == d is the bias slot
    return static_cast<Eigen::Index>(j < d ? c * d + j : k * d + c);
  };
  auto xa = [&](std::size_t j) { return j < d ? x[static_cast<Eigen::Index>(j)] : 1.0; };
  const auto n = static_cast<Eigen::Index>(p.size());
  finch::Matrix H = finch::Matrix::Zero(n, n);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      const double cov = (a == b ? pr[a] : 0.0) - pr[a] * pr[b];
      for (std::size_t i = 0; i <= d; ++i)
        for (std::size_t j = 0; j <= d; ++j) H(index(a, i), index(b, j)) = -cov * xa(i) * xa(j);
    }
  return H;
}

inline double top_abs_eigenvalue(const finch::Matrix& m) {
  Eigen::SelfAdjointEigenSolver<finch::Matrix> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

inline double spectral_norm(const finch::Matrix& m) {
  Eigen::JacobiSVD<finch::Matrix> svd(m);
  return svd.singularValues()(0);
}

/// Distance in units in the last place between two finite doubles.
inline std::uint64_t ulp_distance(double a, double b) {
  auto key = [](double v) {
    std::int64_t i;
    std::memcpy(&i, &v, sizeof i);
    return i < 0 ? std::numeric_limits<std::int64_t>::min() - i : i;
  };
  const std::int64_t x = key(a), y = key(b);
  return x > y ? static_cast<std::uint64_t>(x - y) : static_cast<std::uint64_t>(y - x);
}

inline Vector dirichlet(std::mt19937_64& rng, std::size_t k, double concentration) {
  std::gamma_distribution<double> g(concentration, 1.0);
  Vector v(static_cast<Eigen::Index>(k));
  for (auto& e : v) e = g(rng);
  const double s = v.sum();
  if (s == 0.0) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  auto p = std::filesystem::temp_directory_path() / ("finch_" + tag + "_" + std::to_string(rng() % 1000000000ULL));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
