#pragma once

// Small softmax networks with analytic cross-entropy gradients, logit
// Jacobians and log-probability curvature probes.
//
// Parameter layouts (row-major weight blocks, flattened into one vector):
//   linear_softmax: W (K x d), b (K)                 logits = W x + b
//   mlp2:           W1 (h x d), b1 (h), W2 (K x h), b2 (K)
//                   logits = W2 tanh(W1 x + b1) + b2
//   seq_linear:     linear_softmax over the concatenated one-hot encoding of
//                   the previous `context` tokens (d = context * vocab)

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "finch/errors.hpp"

namespace finch {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LinearSoftmaxArch {
  std::size_t classes = 2;
  std::size_t features = 1;

  bool operator==(const LinearSoftmaxArch&) const = default;
};

/// One hidden tanh layer. |tanh'| <= 1 and |tanh''| <= 4 / (3 sqrt 3).
struct Mlp2Arch {
  std::size_t classes = 2;
  std::size_t features = 1;
  std::size_t hidden = 8;

  bool operator==(const Mlp2Arch&) const = default;
};

struct SeqLinearArch {
  std::size_t vocab = 4;
  std::size_t context = 1;

  bool operator==(const SeqLinearArch&) const = default;
};

using Architecture = std::variant<LinearSoftmaxArch, Mlp2Arch, SeqLinearArch>;

inline std::size_t num_classes(const Architecture& a) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, SeqLinearArch>) return s.vocab;
        else return s.classes;
      },
      a);
}

inline std::size_t input_dim(const Architecture& a) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, SeqLinearArch>) return s.vocab * s.context;
        else return s.features;
      },
      a);
}

inline std::size_t param_count(const Architecture& a) {
  const std::size_t k = num_classes(a);
  const std::size_t d = input_dim(a);
  if (const auto* m = std::get_if<Mlp2Arch>(&a)) return m->hidden * d + m->hidden + k * m->hidden + k;
  return k * d + k;
}

inline std::string arch_name(const Architecture& a) {
  switch (a.index()) {
    case 0: return "linear_softmax";
    case 1: return "mlp2";
    default: return "seq_linear";
  }
}

/// Linear and seq_linear share the same parameterization.
inline bool is_linear(const Architecture& a) { return !std::holds_alternative<Mlp2Arch>(a); }

class ModelParams {
 public:
  explicit ModelParams(Architecture arch) : arch_(arch), theta_(Vector::Zero(param_count(arch))) {
    check_arch();
  }

  ModelParams(Architecture arch, Vector theta) : arch_(arch), theta_(std::move(theta)) {
    check_arch();
    if (static_cast<std::size_t>(theta_.size()) != param_count(arch_))
      throw DomainError("parameter vector has " + std::to_string(theta_.size()) + " entries, " + arch_name(arch_) +
                        " needs " + std::to_string(param_count(arch_)));
    if (!theta_.allFinite()) throw DomainError("parameter vector has non-finite entries");
  }

  const Architecture& arch() const noexcept { return arch_; }
  const Vector& theta() const noexcept { return theta_; }
  /// Unchecked mutable access for optimizer updates; callers keep entries finite.
  Vector& theta_mut() noexcept { return theta_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(theta_.size()); }
  double norm() const { return theta_.norm(); }

  bool operator==(const ModelParams& o) const {
    return arch_.index() == o.arch_.index() && param_count(arch_) == param_count(o.arch_) &&
           num_classes(arch_) == num_classes(o.arch_) && theta_.size() == o.theta_.size() && theta_ == o.theta_;
  }

 private:
  void check_arch() const {
    if (num_classes(arch_) < 2) throw DomainError("architecture needs at least 2 classes");
    if (input_dim(arch_) < 1) throw DomainError("architecture needs at least 1 input feature");
    if (const auto* m = std::get_if<Mlp2Arch>(&arch_); m && m->hidden < 1)
      throw DomainError("mlp2 needs at least 1 hidden unit");
  }

  Architecture arch_;
  Vector theta_;
};

/// Small random initialization, deterministic in `seed`.
inline ModelParams init_params(const Architecture& arch, unsigned long long seed, double scale) {
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw DomainError("init scale must be finite and nonnegative");
  if (scale == 0.0) return ModelParams(arch);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Vector theta(param_count(arch));
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = normal(rng);
  return ModelParams(arch, std::move(theta));
}

struct LabeledExample {
  Vector x;
  Vector q;  // target distribution over classes
};

/// Tokens t_1..t_T. Position t predicts t_t from the `context` previous
/// tokens (missing ones encode as all-zero slots). Targets default to one-hot.
struct SequenceExample {
  std::vector<int> tokens;
  std::vector<Vector> targets;  // empty, or one distribution per position
};

using ExampleList = std::variant<std::vector<LabeledExample>, std::vector<SequenceExample>>;

inline std::size_t example_count(const ExampleList& e) {
  return std::visit([](const auto& v) { return v.size(); }, e);
}

inline bool is_sequence(const ExampleList& e) { return e.index() == 1; }

/// Nonempty, uniform-kind list of training units.
class Batch {
 public:
  explicit Batch(ExampleList examples) : examples_(std::move(examples)) {
    if (example_count(examples_) == 0) throw DomainError("batch must be nonempty");
  }
  Batch(std::vector<LabeledExample> v) : Batch(ExampleList(std::move(v))) {}
  Batch(std::vector<SequenceExample> v) : Batch(ExampleList(std::move(v))) {}

  const ExampleList& examples() const noexcept { return examples_; }
  std::size_t size() const noexcept { return example_count(examples_); }
  bool is_sequence() const noexcept { return finch::is_sequence(examples_); }

 private:
  ExampleList examples_;
};

inline Vector one_hot(std::size_t n, std::size_t k) {
  Vector v = Vector::Zero(n);
  v[k] = 1.0;
  return v;
}

/// Dense context encoding of position t (0-based) of a sequence.
inline Vector encode_context(const SeqLinearArch& a, const std::vector<int>& tokens, std::size_t t) {
  Vector x = Vector::Zero(a.vocab * a.context);
  for (std::size_t j = 1; j <= a.context && j <= t; ++j) {
    const int tok = tokens[t - j];
    x[(j - 1) * a.vocab + static_cast<std::size_t>(tok)] = 1.0;
  }
  return x;
}

inline void check_sequence(const SeqLinearArch& a, const SequenceExample& s) {
  if (s.tokens.empty()) throw DomainError("sequence must contain at least one token");
  for (int t : s.tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= a.vocab) throw DomainError("token id out of vocabulary range");
  if (!s.targets.empty() && s.targets.size() != s.tokens.size())
    throw DomainError("sequence targets must be empty or one per position");
}

inline Vector sequence_target(const SeqLinearArch& a, const SequenceExample& s, std::size_t t) {
  if (!s.targets.empty()) return s.targets[t];
  return one_hot(a.vocab, static_cast<std::size_t>(s.tokens[t]));
}

namespace detail {

inline void check_input(const ModelParams& params, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != input_dim(params.arch()))
    throw DomainError("input has " + std::to_string(x.size()) + " features, model expects " +
                      std::to_string(input_dim(params.arch())));
}

struct LinearView {
  Eigen::Map<const RowMatrix> w;
  Eigen::Map<const Vector> b;
};

inline LinearView linear_view(const ModelParams& p) {
  const auto k = static_cast<Eigen::Index>(num_classes(p.arch()));
  const auto d = static_cast<Eigen::Index>(input_dim(p.arch()));
  const double* data = p.theta().data();
  return {Eigen::Map<const RowMatrix>(data, k, d), Eigen::Map<const Vector>(data + k * d, k)};
}

struct Mlp2View {
  Eigen::Map<const RowMatrix> w1;
  Eigen::Map<const Vector> b1;
  Eigen::Map<const RowMatrix> w2;
  Eigen::Map<const Vector> b2;
};

inline Mlp2View mlp2_view(const ModelParams& p) {
  const auto& a = std::get<Mlp2Arch>(p.arch());
  const auto k = static_cast<Eigen::Index>(a.classes);
  const auto d = static_cast<Eigen::Index>(a.features);
  const auto h = static_cast<Eigen::Index>(a.hidden);
  const double* data = p.theta().data();
  return {Eigen::Map<const RowMatrix>(data, h, d), Eigen::Map<const Vector>(data + h * d, h),
          Eigen::Map<const RowMatrix>(data + h * d + h, k, h), Eigen::Map<const Vector>(data + h * d + h + k * h, k)};
}

inline double log_sum_exp(const Vector& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

}  // namespace detail

/// Pre-softmax outputs.
inline Vector logits(const ModelParams& params, const Vector& x) {
  detail::check_input(params, x);
  if (is_linear(params.arch())) {
    const auto v = detail::linear_view(params);
    return v.w * x + v.b;
  }
  const auto v = detail::mlp2_view(params);
  const Vector hid = (v.w1 * x + v.b1).array().tanh().matrix();
  return v.w2 * hid + v.b2;
}

inline Vector log_probs(const ModelParams& params, const Vector& x) {
  const Vector z = logits(params, x);
  return (z.array() - detail::log_sum_exp(z)).matrix();
}

inline Vector probs(const ModelParams& params, const Vector& x) { return log_probs(params, x).array().exp().matrix(); }

/// CE(q || p) = -sum_k q_k log p_k; zero-mass classes contribute nothing.
inline double cross_entropy(const Vector& q, const Vector& log_p) {
  double ce = 0.0;
  for (Eigen::Index k = 0; k < q.size(); ++k)
    if (q[k] > 0.0) ce -= q[k] * log_p[k];
  return ce;
}

/// grad += scale * J(x)^T v, where J is the logit Jacobian at x.
inline void accumulate_jacobian_transpose(const ModelParams& params, const Vector& x, const Vector& v, double scale,
                                          Vector& grad) {
  const auto k = static_cast<Eigen::Index>(num_classes(params.arch()));
  const auto d = static_cast<Eigen::Index>(input_dim(params.arch()));
  if (is_linear(params.arch())) {
    Eigen::Map<RowMatrix> gw(grad.data(), k, d);
    gw.noalias() += scale * v * x.transpose();
    grad.segment(k * d, k) += scale * v;
    return;
  }
  const auto h = static_cast<Eigen::Index>(std::get<Mlp2Arch>(params.arch()).hidden);
  const auto m = detail::mlp2_view(params);
  const Vector hid = (m.w1 * x + m.b1).array().tanh().matrix();
  const Vector delta_a = ((m.w2.transpose() * v).array() * (1.0 - hid.array().square())).matrix();
  Eigen::Map<RowMatrix> gw1(grad.data(), h, d);
  gw1.noalias() += scale * delta_a * x.transpose();
  grad.segment(h * d, h) += scale * delta_a;
  Eigen::Map<RowMatrix> gw2(grad.data() + h * d + h, k, h);
  gw2.noalias() += scale * v * hid.transpose();
  grad.segment(h * d + h + k * h, k) += scale * v;
}

/// Single-position CE and its gradient J^T (p - q), accumulated with weight `scale`.
inline double accumulate_position(const ModelParams& params, const Vector& x, const Vector& q, double scale,
                                  Vector* grad) {
  const Vector lp = log_probs(params, x);
  const double ce = cross_entropy(q, lp);
  if (grad) accumulate_jacobian_transpose(params, x, lp.array().exp().matrix() - q, scale, *grad);
  return ce;
}

/// Calls fn(x, q, weight) for every prediction position of `examples`, with
/// weights implementing the mean over examples (and, for sequences, the inner
/// mean over positions). Visiting order is fixed.
template <typename Fn>
void for_each_position(const Architecture& arch, const ExampleList& examples, Fn&& fn) {
  if (const auto* labeled = std::get_if<std::vector<LabeledExample>>(&examples)) {
    const double w = 1.0 / static_cast<double>(labeled->size());
    for (const auto& e : *labeled) fn(e.x, e.q, w);
    return;
  }
  const auto* seq_arch = std::get_if<SeqLinearArch>(&arch);
  if (!seq_arch) throw DomainError("sequence examples require the seq_linear architecture");
  const auto& seqs = std::get<std::vector<SequenceExample>>(examples);
  const double outer = 1.0 / static_cast<double>(seqs.size());
  for (const auto& s : seqs) {
    check_sequence(*seq_arch, s);
    const double w = outer / static_cast<double>(s.tokens.size());
    for (std::size_t t = 0; t < s.tokens.size(); ++t)
      fn(encode_context(*seq_arch, s.tokens, t), sequence_target(*seq_arch, s, t), w);
  }
}

struct LossAndGrad {
  double loss;
  Vector grad;
};

/// Mean cross-entropy and its gradient, summed left to right.
inline LossAndGrad loss_and_grad(const ModelParams& params, const ExampleList& examples) {
  LossAndGrad out{0.0, Vector::Zero(params.size())};
  for_each_position(params.arch(), examples, [&](const Vector& x, const Vector& q, double w) {
    detail::check_input(params, x);
    out.loss += w * accumulate_position(params, x, q, w, &out.grad);
  });
  return out;
}

inline double ce_loss(const ModelParams& params, const ExampleList& examples) {
  double loss = 0.0;
  for_each_position(params.arch(), examples, [&](const Vector& x, const Vector& q, double w) {
    loss += w * accumulate_position(params, x, q, w, nullptr);
  });
  return loss;
}

inline double ce_loss(const ModelParams& params, const Batch& batch) { return ce_loss(params, batch.examples()); }

inline Vector grad_ce(const ModelParams& params, const Batch& batch) {
  return loss_and_grad(params, batch.examples()).grad;
}

/// Fraction of positions whose argmax prediction matches the target's argmax.
inline double accuracy(const ModelParams& params, const ExampleList& examples) {
  double hits = 0.0;
  for_each_position(params.arch(), examples, [&](const Vector& x, const Vector& q, double w) {
    Eigen::Index pred = 0;
    Eigen::Index truth = 0;
    logits(params, x).maxCoeff(&pred);
    q.maxCoeff(&truth);
    if (pred == truth) hits += w;
  });
  return hits;
}

/// grad_theta log p(y | x) = J^T (e_y - p).
inline Vector log_prob_grad(const ModelParams& params, const Vector& x, std::size_t y) {
  const std::size_t k = num_classes(params.arch());
  if (y >= k) throw DomainError("class index out of range");
  Vector g = Vector::Zero(params.size());
  const Vector p = probs(params, x);
  accumulate_jacobian_transpose(params, x, one_hot(k, y) - p, 1.0, g);
  return g;
}

inline double score_norm(const ModelParams& params, const Vector& x, std::size_t y) {
  return log_prob_grad(params, x, y).norm();
}

inline constexpr std::size_t kDenseParamCap = 5000;

/// Exact K x dim(theta) Jacobian of the logits.
inline Matrix logit_jacobian(const ModelParams& params, const Vector& x, std::size_t cap = kDenseParamCap) {
  detail::check_input(params, x);
  if (params.size() > cap)
    throw DomainError("dense Jacobian needs dim(theta) <= " + std::to_string(cap) + " (have " +
                      std::to_string(params.size()) + "); use the gradient / Hessian-vector product paths instead");
  const auto k = static_cast<Eigen::Index>(num_classes(params.arch()));
  const auto d = static_cast<Eigen::Index>(input_dim(params.arch()));
  Matrix j = Matrix::Zero(k, static_cast<Eigen::Index>(params.size()));
  if (is_linear(params.arch())) {
    for (Eigen::Index c = 0; c < k; ++c) {
      j.block(c, c * d, 1, d) = x.transpose();
      j(c, k * d + c) = 1.0;
    }
    return j;
  }
  const auto h = static_cast<Eigen::Index>(std::get<Mlp2Arch>(params.arch()).hidden);
  const auto m = detail::mlp2_view(params);
  const Vector hid = (m.w1 * x + m.b1).array().tanh().matrix();
  const Vector dact = (1.0 - hid.array().square()).matrix();
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index u = 0; u < h; ++u) {
      const double s = m.w2(c, u) * dact[u];
      j.block(c, u * d, 1, d) = s * x.transpose();
      j(c, h * d + u) = s;
      j(c, h * d + h + c * h + u) = hid[u];
    }
    j(c, h * d + h + k * h + c) = 1.0;
  }
  return j;
}

/// Operator norm of the logit Jacobian, from the K x K Gram matrix J J^T.
///   linear:  J J^T = (|x|^2 + 1) I
///   mlp2:    J J^T = (|x|^2 + 1) W2 D^2 W2^T + (|tanh(a)|^2 + 1) I,  D = diag(tanh'(a))
inline double jacobian_opnorm(const ModelParams& params, const Vector& x) {
  detail::check_input(params, x);
  const double aug = x.squaredNorm() + 1.0;
  if (is_linear(params.arch())) return std::sqrt(aug);
  const auto m = detail::mlp2_view(params);
  const Vector hid = (m.w1 * x + m.b1).array().tanh().matrix();
  const Vector dact = (1.0 - hid.array().square()).matrix();
  const Matrix scaled = m.w2 * dact.asDiagonal();
  Matrix gram = aug * (scaled * scaled.transpose());
  gram.diagonal().array() += hid.squaredNorm() + 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(eig.eigenvalues().maxCoeff(), 0.0));
}

/// Largest eigenvalue of the softmax covariance diag(p) - p p^T.
inline double softmax_covariance_top_eigenvalue(const Vector& p) {
  Matrix cov = -p * p.transpose();
  cov.diagonal() += p;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
  return std::max(eig.eigenvalues().maxCoeff(), 0.0);
}

/// Closed-form Hessian operator norm of log p(y|x) for the linear
/// architectures: the Hessian is -(diag(p) - p p^T) kron (x~ x~^T) with
/// x~ = [x; 1], independent of y.
inline double linear_logp_hessian_opnorm(const ModelParams& params, const Vector& x) {
  if (!is_linear(params.arch())) throw DomainError("closed-form Hessian norm needs a linear architecture");
  return softmax_covariance_top_eigenvalue(probs(params, x)) * (x.squaredNorm() + 1.0);
}

struct HessianEstimate {
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct PowerIterationOptions {
  double fd_step = 1e-4;
  std::size_t min_iterations = 50;
  std::size_t max_iterations = 1000;
  double rel_tol = 1e-6;
  unsigned long long seed = 0x9e3779b97f4a7c15ULL;
  std::size_t cap = kDenseParamCap;
};

/// Hessian-vector product of log p(y|x) by central differences of its gradient.
inline Vector logp_hvp(const ModelParams& params, const Vector& x, std::size_t y, const Vector& v, double step) {
  ModelParams plus = params;
  ModelParams minus = params;
  plus.theta_mut() += step * v;
  minus.theta_mut() -= step * v;
  return (log_prob_grad(plus, x, y) - log_prob_grad(minus, x, y)) / (2.0 * step);
}

/// Largest absolute eigenvalue of the Hessian of log p(y|x), by power iteration.
inline HessianEstimate logp_hessian_opnorm(const ModelParams& params, const Vector& x, std::size_t y,
                                           const PowerIterationOptions& opt = {}) {
  detail::check_input(params, x);
  if (params.size() > opt.cap)
    throw DomainError("Hessian probe needs dim(theta) <= " + std::to_string(opt.cap));
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  Vector v(params.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  v.normalize();
  HessianEstimate est;
  double previous = 0.0;
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    const Vector w = logp_hvp(params, x, y, v, opt.fd_step);
    const double norm = w.norm();
    est.iterations = it;
    est.value = norm;
    if (norm == 0.0) {
      est.converged = true;
      return est;
    }
    v = w / norm;
    if (it >= opt.min_iterations && std::abs(norm - previous) <= opt.rel_tol * norm) {
      est.converged = true;
      return est;
    }
    previous = norm;
  }
  return est;
}

}  // namespace finch
