#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "finch/gradcheck.hpp"
#include "finch/model.hpp"
#include "oracles.hpp"

using namespace finch;

namespace {

Vector gaussian(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& e : v) e = g(rng);
  return v;
}

std::vector<Architecture> all_archs() { return gradcheck_architectures(); }

}  // namespace

TEST(Model, ZeroParametersGiveUniformPrediction) {
  for (const auto& arch : all_archs()) {
    const ModelParams p(arch);
    std::mt19937_64 rng(1);
    const std::size_t k = num_classes(arch);
    const Vector lp = log_probs(p, gaussian(rng, input_dim(arch)));
    for (Eigen::Index c = 0; c < lp.size(); ++c) EXPECT_NEAR(lp[c], -std::log(static_cast<double>(k)), 1e-15);
  }
}

TEST(Model, TwoClassLogitExample) {
  // W = [[1, 0], [0, 1]], b = 0, x = (ln 3, 0): p = (3/4, 1/4).
  Vector th = Vector::Zero(6);
  th << 1, 0, 0, 1, 0, 0;
  const ModelParams p(LinearSoftmaxArch{2, 2}, th);
  Vector x(2);
  x << std::log(3.0), 0.0;
  const Vector pr = probs(p, x);
  EXPECT_NEAR(pr[0], 0.75, 1e-15);
  EXPECT_NEAR(pr[1], 0.25, 1e-15);
}

TEST(Model, LogProbsMatchExtendedPrecision) {
  std::mt19937_64 rng(4);
  for (const auto& arch : all_archs()) {
    for (int trial = 0; trial < 50; ++trial) {
      const ModelParams p = init_params(arch, rng(), 2.0);
      const Vector x = gaussian(rng, input_dim(arch), 3.0);
      const Vector lp = log_probs(p, x);
      const auto ref = oracle::ld_log_probs(p, x);
      for (Eigen::Index c = 0; c < lp.size(); ++c)
        EXPECT_NEAR(lp[c], static_cast<double>(ref[static_cast<std::size_t>(c)]), 1e-12);
      EXPECT_NEAR(lp.array().exp().sum(), 1.0, 1e-12);
    }
  }
}

TEST(Model, ExtremeLogitsStayFinite) {
  Vector th = Vector::Zero(6);
  th << 1e3, 0, -1e3, 0, 0, 0;
  const ModelParams p(LinearSoftmaxArch{2, 2}, th);
  Vector x(2);
  x << 1.0, 0.0;
  const Vector lp = log_probs(p, x);
  EXPECT_TRUE(lp.allFinite());
  EXPECT_NEAR(lp[1], -2e3, 1e-9);
}

TEST(Model, CrossEntropyAtZeroIsLogK) {
  std::mt19937_64 rng(5);
  for (const auto& arch : all_archs()) {
    const ModelParams p(arch);
    const auto ex = random_examples(arch, 6, rng);
    EXPECT_NEAR(ce_loss(p, ex), std::log(static_cast<double>(num_classes(arch))), 1e-14);
  }
}

TEST(Model, CrossEntropyMatchesNaiveOracle) {
  std::mt19937_64 rng(6);
  for (const auto& arch : all_archs()) {
    for (int trial = 0; trial < 30; ++trial) {
      const ModelParams p = init_params(arch, rng(), 1.0);
      const auto ex = random_examples(arch, 5, rng);
      EXPECT_NEAR(ce_loss(p, ex), static_cast<double>(oracle::ld_ce_loss(p, ex)), 1e-12);
    }
  }
}

TEST(Model, TwoClassGradientExample) {
  // theta = 0, x = (1, 0), target class 0: p - q = (-1/2, 1/2).
  const ModelParams p(LinearSoftmaxArch{2, 2});
  Vector x(2);
  x << 1.0, 0.0;
  const std::vector<LabeledExample> ex{{x, one_hot(2, 0)}};
  const Vector g = loss_and_grad(p, ex).grad;
  Vector expect(6);
  expect << -0.5, 0, 0.5, 0, -0.5, 0.5;
  EXPECT_LT((g - expect).norm(), 1e-15);
}

TEST(Model, GradientAgreesWithFiniteDifferences) {
  for (const auto& arch : all_archs()) {
    GradCheckOptions opt;
    opt.cases = 100;
    const auto r = gradient_check(arch, opt);
    EXPECT_EQ(r.failures, 0u) << r.arch << " max rel error " << r.max_rel_error;
    EXPECT_LT(r.max_rel_error, 1e-5);
  }
}

TEST(Model, GradientAgreesWithLongDoubleDifferences) {
  std::mt19937_64 rng(7);
  for (const auto& arch : all_archs()) {
    const ModelParams p = init_params(arch, rng(), 0.7);
    const auto ex = random_examples(arch, 4, rng);
    const Vector g = loss_and_grad(p, ex).grad;
    const Vector fd = oracle::fd_gradient(p, [&](const ModelParams& q) { return oracle::ld_ce_loss(q, ex); }, 1e-5);
    EXPECT_LT((g - fd).norm() / std::max(g.norm(), 1e-8), 1e-7) << arch_name(arch);
  }
}

TEST(Model, GradientFactorsThroughLogitJacobian) {
  std::mt19937_64 rng(8);
  for (const auto& arch : {Architecture{LinearSoftmaxArch{4, 6}}, Architecture{Mlp2Arch{3, 5, 6}}}) {
    for (int trial = 0; trial < 20; ++trial) {
      const ModelParams p = init_params(arch, rng(), 1.0);
      const Vector x = gaussian(rng, input_dim(arch));
      const std::size_t y = rng() % num_classes(arch);
      const std::vector<LabeledExample> ex{{x, one_hot(num_classes(arch), y)}};
      const Vector g = loss_and_grad(p, ex).grad;
      const Vector factored = logit_jacobian(p, x).transpose() * (probs(p, x) - one_hot(num_classes(arch), y));
      EXPECT_LT((g - factored).norm(), 1e-10);
    }
  }
}

TEST(Model, LinearJacobianExample) {
  // ||x|| = 1: J J^T = 2 I, so the operator norm is sqrt 2.
  const ModelParams p = init_params(LinearSoftmaxArch{3, 2}, 1, 0.3);
  Vector x(2);
  x << 0.6, 0.8;
  EXPECT_NEAR(oracle::spectral_norm(logit_jacobian(p, x)), std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(jacobian_opnorm(p, x), std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(jacobian_opnorm(p, Vector::Zero(2)), 1.0, 1e-15);
}

TEST(Model, JacobianOpnormMatchesDenseSvd) {
  std::mt19937_64 rng(9);
  for (const auto& arch : all_archs()) {
    for (int trial = 0; trial < 20; ++trial) {
      const ModelParams p = init_params(arch, rng(), 1.0);
      const Vector x = gaussian(rng, input_dim(arch));
      EXPECT_NEAR(jacobian_opnorm(p, x), oracle::spectral_norm(logit_jacobian(p, x)), 1e-10);
    }
  }
}

TEST(Model, Mlp2JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const Architecture arch = Mlp2Arch{3, 4, 5};
  const ModelParams p = init_params(arch, 3, 0.8);
  const Vector x = gaussian(rng, 4);
  const Matrix j = logit_jacobian(p, x);
  for (std::size_t c = 0; c < 3; ++c) {
    const Vector fd = oracle::fd_gradient(p, [&](const ModelParams& q) { return oracle::ld_logits(q, x)[c]; }, 1e-6);
    EXPECT_LT((j.row(static_cast<Eigen::Index>(c)).transpose() - fd).norm(), 1e-6);
  }
}

TEST(Model, DenseJacobianRespectsCap) {
  const ModelParams p(LinearSoftmaxArch{10, 600});
  EXPECT_THROW(logit_jacobian(p, Vector::Zero(600)), DomainError);
}

TEST(Model, LinearHessianMatchesClosedForm) {
  std::mt19937_64 rng(11);
  const Architecture arch = LinearSoftmaxArch{3, 2};
  for (int trial = 0; trial < 10; ++trial) {
    const ModelParams p = init_params(arch, rng(), 1.0);
    const Vector x = gaussian(rng, 2);
    const Matrix exact = oracle::linear_logp_hessian(p, x);
    const Matrix fd = oracle::fd_logp_hessian(p, x, rng() % 3, 1e-4);
    EXPECT_LT((exact - fd).norm(), 1e-6);
    EXPECT_NEAR(linear_logp_hessian_opnorm(p, x), oracle::top_abs_eigenvalue(exact), 1e-12);
  }
}

TEST(Model, LinearHessianExample) {
  // theta = 0, K = 2, ||x|| = 1: (1/2) * (||x||^2 + 1) = 1.
  const ModelParams p(LinearSoftmaxArch{2, 2});
  Vector x(2);
  x << 0.6, 0.8;
  EXPECT_NEAR(linear_logp_hessian_opnorm(p, x), 1.0, 1e-15);
}

TEST(Model, Mlp2PowerIterationAgreesWithDenseHessian) {
  std::mt19937_64 rng(12);
  const Architecture arch = Mlp2Arch{3, 3, 4};
  for (int trial = 0; trial < 5; ++trial) {
    const ModelParams p = init_params(arch, rng(), 1.0);
    const Vector x = gaussian(rng, 3);
    const std::size_t y = rng() % 3;
    const double dense = oracle::top_abs_eigenvalue(oracle::fd_logp_hessian(p, x, y, 1e-4));
    const auto est = logp_hessian_opnorm(p, x, y);
    EXPECT_TRUE(est.converged);
    EXPECT_NEAR(est.value, dense, 0.05 * dense);
  }
}

TEST(Model, ScoreNormExamples) {
  // theta = 0, K = 2, x = 0: score is (e_y - 1/2) on the biases, norm sqrt(1/2).
  const ModelParams p(LinearSoftmaxArch{2, 2});
  EXPECT_NEAR(score_norm(p, Vector::Zero(2), 0), std::sqrt(0.5), 1e-15);
  Vector x(2);
  x << 0.6, 0.8;
  EXPECT_NEAR(score_norm(p, x, 1), 1.0, 1e-15);
}

TEST(Model, ScoreNormBoundedByJacobian) {
  std::mt19937_64 rng(13);
  for (const auto& arch : all_archs()) {
    for (int trial = 0; trial < 100; ++trial) {
      const ModelParams p = init_params(arch, rng(), 1.5);
      const Vector x = gaussian(rng, input_dim(arch));
      const std::size_t y = rng() % num_classes(arch);
      EXPECT_LE(score_norm(p, x, y), std::sqrt(2.0) * jacobian_opnorm(p, x) * (1 + 1e-12));
    }
  }
}

TEST(Model, RejectsMalformedInputs) {
  const ModelParams p(LinearSoftmaxArch{3, 2});
  EXPECT_THROW(log_probs(p, Vector::Zero(3)), DomainError);
  EXPECT_THROW(ModelParams(LinearSoftmaxArch{1, 2}), DomainError);
  EXPECT_THROW(ModelParams(LinearSoftmaxArch{3, 2}, Vector::Zero(4)), DomainError);
  EXPECT_THROW(init_params(LinearSoftmaxArch{3, 2}, 1, -1.0), DomainError);
  EXPECT_THROW(Batch(std::vector<LabeledExample>{}), DomainError);
  const ModelParams s(SeqLinearArch{4, 2});
  EXPECT_THROW(ce_loss(s, ExampleList(std::vector<SequenceExample>{{{0, 7}, {}}})), DomainError);
  EXPECT_THROW(ce_loss(s, ExampleList(std::vector<SequenceExample>{{{}, {}}})), DomainError);
}

TEST(Model, InitIsDeterministic) {
  for (const auto& arch : all_archs()) {
    EXPECT_EQ(init_params(arch, 42, 0.1), init_params(arch, 42, 0.1));
    EXPECT_FALSE(init_params(arch, 42, 0.1) == init_params(arch, 43, 0.1));
  }
}
