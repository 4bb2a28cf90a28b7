#pragma once

// Finite-difference audit of the analytic cross-entropy gradient on random
// (parameters, batch) draws.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "finch/model.hpp"

namespace finch {

struct GradCheckOptions {
  std::size_t cases = 100;
  std::size_t batch_size = 4;
  double fd_step = 1e-5;
  double param_scale = 0.5;
  double tolerance = 1e-5;
  unsigned long long seed = 2024;
};

struct GradCheckResult {
  std::string arch;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
};

/// Random batch for `arch`: Gaussian inputs and, for labeled data, a mix of
/// one-hot and soft targets; random token sequences for seq_linear.
inline ExampleList random_examples(const Architecture& arch, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t k = num_classes(arch);
  if (const auto* s = std::get_if<SeqLinearArch>(&arch)) {
    std::vector<SequenceExample> out;
    for (std::size_t i = 0; i < n; ++i) {
      SequenceExample e;
      const std::size_t len = 1 + static_cast<std::size_t>(rng() % 6);
      for (std::size_t t = 0; t < len; ++t) e.tokens.push_back(static_cast<int>(rng() % s->vocab));
      out.push_back(std::move(e));
    }
    return out;
  }
  std::vector<LabeledExample> out;
  const std::size_t d = input_dim(arch);
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(d);
    for (auto& v : x) v = normal(rng);
    Vector q;
    if (unit(rng) < 0.5) {
      q = one_hot(k, static_cast<std::size_t>(rng() % k));
    } else {
      q = Vector(k);
      for (auto& v : q) v = unit(rng) + 1e-3;
      q /= q.sum();
    }
    out.push_back({std::move(x), std::move(q)});
  }
  return out;
}

/// Norm-wise relative error of the analytic gradient against central differences.
inline double gradient_rel_error(const ModelParams& params, const ExampleList& examples, double step) {
  const Vector g = loss_and_grad(params, examples).grad;
  Vector fd(params.size());
  ModelParams probe = params;
  for (Eigen::Index i = 0; i < fd.size(); ++i) {
    const double orig = probe.theta()[i];
    probe.theta_mut()[i] = orig + step;
    const double up = ce_loss(probe, examples);
    probe.theta_mut()[i] = orig - step;
    const double down = ce_loss(probe, examples);
    probe.theta_mut()[i] = orig;
    fd[i] = (up - down) / (2.0 * step);
  }
  const double scale = std::max({g.norm(), fd.norm(), 1e-8});
  return (g - fd).norm() / scale;
}

inline GradCheckResult gradient_check(const Architecture& arch, const GradCheckOptions& opt = {}) {
  GradCheckResult r;
  r.arch = arch_name(arch);
  std::mt19937_64 rng(opt.seed);
  for (std::size_t c = 0; c < opt.cases; ++c) {
    const ModelParams params = init_params(arch, rng(), opt.param_scale);
    const ExampleList batch = random_examples(arch, opt.batch_size, rng);
    const double err = gradient_rel_error(params, batch, opt.fd_step);
    r.max_rel_error = std::max(r.max_rel_error, err);
    if (!(err < opt.tolerance)) ++r.failures;
    ++r.cases;
  }
  return r;
}

/// Small architectures covering every model kind.
inline std::vector<Architecture> gradcheck_architectures() {
  return {LinearSoftmaxArch{4, 6}, Mlp2Arch{3, 5, 6}, SeqLinearArch{4, 2}};
}

}  // namespace finch
