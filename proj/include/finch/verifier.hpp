#pragma once

// Empirical certification of the per-step forgetting bound
//
//   delta_old(i) <= C1 * lr_i * sqrt(L_B(i)) + C2 * lr_i^2 * L_B(i),
//   C1 = sqrt(2) * G * M_train,  C2 = H * M_train^2,
//
// and of the intermediate inequalities it is composed from. Constants are
// suprema measured along a recorded trajectory, never assumed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "finch/data.hpp"
#include "finch/errors.hpp"
#include "finch/format.hpp"
#include "finch/lab.hpp"
#include "finch/model.hpp"
#include "finch/scheduler.hpp"

namespace finch {

inline constexpr double kViolationTolerance = 1e-9;
inline constexpr double kCompositionTolerance = 1e-10;
inline constexpr double kGradLossTolerance = 1e-8;
inline constexpr double kPinskerTolerance = 1e-10;

struct ProbeOptions {
  std::size_t interior_points = 3;        // per segment between consecutive checkpoints
  std::size_t train_probe_full_max = 4096;
  std::size_t train_probe_draw = 256;
  unsigned long long probe_seed = 17;
  // Nonlinear models only: power iteration runs on an evenly spaced subset.
  std::size_t hessian_max_points = 12;
  std::size_t hessian_max_inputs = 24;
  PowerIterationOptions power;
};

struct BoundConstants {
  double M_train = 0.0;
  double M_old = 0.0;
  double G = 0.0;
  double H = 0.0;
  double C1 = 0.0;
  double C2 = 0.0;
  double B_x = 0.0;
  double B_theta = 0.0;
  std::size_t points = 0;
  std::size_t old_probes = 0;
  std::size_t train_probes = 0;
  std::size_t hessian_probes = 0;
  std::size_t hessian_nonconverged = 0;
  bool reliable = true;
  std::string description;
};

namespace detail {

struct Probe {
  Vector x;
  std::vector<std::size_t> labels;  // classes with positive target mass
};

inline std::vector<Probe> position_probes(const Architecture& arch, const ExampleList& data) {
  std::vector<Probe> out;
  for_each_position(arch, data, [&](const Vector& x, const Vector& q, double) {
    Probe p{x, {}};
    for (Eigen::Index k = 0; k < q.size(); ++k)
      if (q[k] > 0.0) p.labels.push_back(static_cast<std::size_t>(k));
    out.push_back(std::move(p));
  });
  return out;
}

/// Checkpoints followed by `interior` evenly spaced points on every segment.
inline std::vector<Vector> probe_points(const std::vector<Checkpoint>& cps, std::size_t interior) {
  std::vector<Vector> pts;
  for (const auto& c : cps) pts.push_back(c.theta);
  for (std::size_t s = 0; s + 1 < cps.size(); ++s) {
    for (std::size_t j = 1; j <= interior; ++j) {
      const double t = static_cast<double>(j) / static_cast<double>(interior + 1);
      pts.push_back(cps[s].theta + t * (cps[s + 1].theta - cps[s].theta));
    }
  }
  return pts;
}

template <typename T>
std::vector<T> evenly_spaced(const std::vector<T>& v, std::size_t limit) {
  if (limit == 0 || v.size() <= limit) return v;
  std::vector<T> out;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t idx = limit == 1 ? 0 : i * (v.size() - 1) / (limit - 1);
    out.push_back(v[idx]);
  }
  return out;
}

}  // namespace detail

/// Measures M, G, H over checkpoints plus interior segment points. Old
/// probes are every held-out old position; train probes are every training
/// position for linear models (the Jacobian norm is parameter-free there) and
/// for small training sets, otherwise a seeded draw.
inline BoundConstants estimate_constants(const Trajectory& traj, const TaskData& data, const ProbeOptions& opt = {}) {
  if (traj.checkpoints.empty()) throw DomainError("trajectory has no checkpoints");
  const Architecture& arch = traj.arch;
  const bool linear = is_linear(arch);
  const auto old_probes = detail::position_probes(arch, data.old_holdout);
  auto train_probes = detail::position_probes(arch, data.new_train);
  bool train_subsampled = false;
  if (!linear && train_probes.size() > opt.train_probe_full_max) {
    std::vector<detail::Probe> draw;
    auto rng = counter_rng(opt.probe_seed, 6, 0);
    for (std::size_t i = 0; i < opt.train_probe_draw; ++i) draw.push_back(train_probes[rng() % train_probes.size()]);
    train_probes = std::move(draw);
    train_subsampled = true;
  }
  const auto points = detail::probe_points(traj.checkpoints, opt.interior_points);

  BoundConstants c;
  c.points = points.size();
  c.old_probes = old_probes.size();
  c.train_probes = train_probes.size();
  for (const auto& p : old_probes) c.B_x = std::max(c.B_x, p.x.norm());
  for (const auto& p : train_probes) c.B_x = std::max(c.B_x, p.x.norm());
  for (const auto& th : points) c.B_theta = std::max(c.B_theta, th.norm());

  if (linear) {
    // J J^T = (|x|^2 + 1) I, independent of theta.
    for (const auto& p : train_probes) c.M_train = std::max(c.M_train, std::sqrt(p.x.squaredNorm() + 1.0));
    for (const auto& p : old_probes) c.M_old = std::max(c.M_old, std::sqrt(p.x.squaredNorm() + 1.0));
    for (const auto& th : points) {
      const ModelParams params(arch, th);
      for (const auto& p : old_probes) {
        const Vector pr = probs(params, p.x);
        const double aug = std::sqrt(p.x.squaredNorm() + 1.0);
        for (const auto y : p.labels) c.G = std::max(c.G, (one_hot(pr.size(), y) - pr).norm() * aug);
        c.H = std::max(c.H, softmax_covariance_top_eigenvalue(pr) * (p.x.squaredNorm() + 1.0));
        ++c.hessian_probes;
      }
    }
  } else {
    for (const auto& th : points) {
      const ModelParams params(arch, th);
      for (const auto& p : train_probes) c.M_train = std::max(c.M_train, jacobian_opnorm(params, p.x));
      for (const auto& p : old_probes) {
        c.M_old = std::max(c.M_old, jacobian_opnorm(params, p.x));
        for (const auto y : p.labels) c.G = std::max(c.G, score_norm(params, p.x, y));
      }
    }
    const auto h_points = detail::evenly_spaced(points, opt.hessian_max_points);
    const auto h_inputs = detail::evenly_spaced(old_probes, opt.hessian_max_inputs);
    for (const auto& th : h_points) {
      const ModelParams params(arch, th);
      for (const auto& p : h_inputs) {
        for (const auto y : p.labels) {
          const auto est = logp_hessian_opnorm(params, p.x, y, opt.power);
          c.H = std::max(c.H, est.value);
          ++c.hessian_probes;
          if (!est.converged) ++c.hessian_nonconverged;
        }
      }
    }
  }
  c.C1 = std::sqrt(2.0) * c.G * c.M_train;
  c.C2 = c.H * c.M_train * c.M_train;
  c.reliable = c.hessian_probes == 0 ||
               static_cast<double>(c.hessian_nonconverged) <= 0.01 * static_cast<double>(c.hessian_probes);

  std::ostringstream d;
  d << traj.checkpoints.size() << " checkpoints + " << opt.interior_points << " interior points per segment ("
    << c.points << " parameter points); old probes: " << c.old_probes << " held-out positions; train probes: "
    << c.train_probes << (train_subsampled ? " sampled" : "") << " training positions; ";
  if (linear) {
    d << "M and H in closed form";
  } else {
    d << "H by power iteration on " << c.hessian_probes << " (point, input, label) probes, "
      << c.hessian_nonconverged << " not converged";
  }
  c.description = d.str();
  return c;
}

/// Theorem bound with the measured constants.
inline double theorem_bound(const BoundConstants& c, double lr, double batch_loss) {
  return c.C1 * lr * std::sqrt(batch_loss) + c.C2 * lr * lr * batch_loss;
}

/// Fills StepRecord::bound and ::slack.
inline void annotate_bounds(Trajectory& traj, const BoundConstants& c) {
  for (auto& r : traj.records) {
    r.bound = theorem_bound(c, r.lr, r.batch_loss);
    r.slack = r.bound - r.delta_old;
  }
}

// ---------------------------------------------------------------------------
// Per-step certification

struct StepCheck {
  std::size_t step = 0;
  double lr = 0.0;
  double batch_loss = 0.0;
  double grad_norm = 0.0;
  double update_norm = 0.0;  // norm of the direction scaled by lr: clipped grad plus L2 pull
  double delta_old = 0.0;
  double recomputed_delta = std::numeric_limits<double>::quiet_NaN();
  double log_ratio_max = std::numeric_limits<double>::quiet_NaN();
  double taylor_bound = 0.0;
  double bound = 0.0;
  double slack = 0.0;
  bool consistent = true;
  bool violation = false;
  std::string reason;
};

struct BoundReport {
  std::vector<StepCheck> steps;
  double min_slack = std::numeric_limits<double>::infinity();
  double composition_max_error = 0.0;
  double pinsker_max_ratio = 0.0;  // max over steps of |g| / (M_train sqrt(2 L_B))
  std::size_t log_ratio_steps = 0;
  std::vector<std::size_t> violating_steps;
  bool passed() const { return violating_steps.empty(); }
};

/// Checks delta_old <= max|log-ratio| <= Taylor bound <= theorem bound for
/// every logged step, plus the log's own telescoping consistency.
/// `old_holdout` must be the set the run evaluated old loss on.
inline BoundReport check_step_bound(const Trajectory& traj, const BoundConstants& c, const ExampleList& old_holdout) {
  const auto& recs = traj.records;
  const bool l2 = traj.l2_to_init_lambda > 0.0;
  if (l2 && traj.checkpoints.size() < recs.size() + 1)
    throw DomainError("bounds with an L2-to-init term need a checkpoint at every step");
  const Checkpoint* anchor = traj.checkpoint_at(0);
  if (l2 && !anchor) throw DomainError("bounds with an L2-to-init term need the initial checkpoint");

  // Log-probabilities and old loss per checkpoint, computed lazily.
  const auto probes = detail::position_probes(traj.arch, old_holdout);
  struct Eval {
    std::vector<Vector> lp;
    double loss = 0.0;
  };
  auto evaluate = [&](const Vector& theta) {
    const ModelParams params(traj.arch, theta);
    Eval e;
    for_each_position(traj.arch, old_holdout, [&](const Vector& x, const Vector& q, double w) {
      e.lp.push_back(log_probs(params, x));
      e.loss += w * cross_entropy(q, e.lp.back());
    });
    return e;
  };

  BoundReport report;
  report.steps.reserve(recs.size());
  std::optional<Eval> prev;
  std::size_t prev_step = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const StepRecord& r = recs[i];
    StepCheck s;
    s.step = r.step;
    s.lr = r.lr;
    s.batch_loss = r.batch_loss;
    s.grad_norm = r.grad_norm;
    s.delta_old = r.delta_old;
    auto fail = [&](const std::string& why) {
      s.violation = true;
      if (!s.reason.empty()) s.reason += "; ";
      s.reason += why;
    };

    const double next_old = i + 1 < recs.size() ? recs[i + 1].old_loss : traj.final_old_loss;
    if (r.delta_old != next_old - r.old_loss) {
      s.consistent = false;
      fail("logged delta_old differs from the logged old-loss difference");
    }

    const Checkpoint* a = traj.checkpoint_at(r.step);
    const Checkpoint* b = traj.checkpoint_at(r.step + 1);
    if (a && b) {
      if (!prev || prev_step != r.step) prev = evaluate(a->theta);
      Eval next = evaluate(b->theta);
      s.recomputed_delta = next.loss - prev->loss;
      if (std::abs(s.recomputed_delta - r.delta_old) > 1e-12 * (1.0 + std::abs(r.old_loss))) {
        s.consistent = false;
        fail("logged delta_old differs from the loss recomputed at the checkpoints");
      }
      double m = 0.0;
      for (std::size_t p = 0; p < probes.size(); ++p)
        for (const auto y : probes[p].labels) m = std::max(m, std::abs(next.lp[p][y] - prev->lp[p][y]));
      s.log_ratio_max = m;
      ++report.log_ratio_steps;
      prev = std::move(next);
      prev_step = r.step + 1;
    }

    double pull = 0.0;
    if (l2) {
      if (!a) throw DomainError("missing checkpoint at step " + std::to_string(r.step));
      pull = traj.l2_to_init_lambda * (a->theta - anchor->theta).norm();
    }
    const double clipped = traj.grad_clip_max_norm ? std::min(r.grad_norm, *traj.grad_clip_max_norm) : r.grad_norm;
    s.update_norm = clipped + pull;
    const double step_len = r.lr * s.update_norm;
    s.taylor_bound = c.G * step_len + 0.5 * c.H * step_len * step_len;

    const double cap = c.M_train * std::sqrt(2.0 * r.batch_loss) + pull;
    const double cap_len = r.lr * cap;
    s.bound = c.G * cap_len + 0.5 * c.H * cap_len * cap_len;
    if (!l2) {
      const double composed = theorem_bound(c, r.lr, r.batch_loss);
      report.composition_max_error =
          std::max(report.composition_max_error, std::abs(composed - s.bound) / std::max(1.0, std::abs(s.bound)));
      if (std::abs(composed - s.bound) > kCompositionTolerance * std::max(1.0, std::abs(s.bound)))
        fail("constant composition disagrees with the capped Taylor bound");
    }
    s.slack = s.bound - r.delta_old;

    if (c.M_train > 0.0 && r.batch_loss > 0.0)
      report.pinsker_max_ratio =
          std::max(report.pinsker_max_ratio, r.grad_norm / (c.M_train * std::sqrt(2.0 * r.batch_loss)));

    const double upper = std::isnan(s.log_ratio_max) ? s.taylor_bound : s.log_ratio_max;
    if (!std::isnan(s.log_ratio_max) && r.delta_old - s.log_ratio_max > kViolationTolerance)
      fail("delta_old exceeds the max log-ratio");
    if (upper - s.taylor_bound > kViolationTolerance) fail("max log-ratio exceeds the Taylor bound");
    if (s.taylor_bound - s.bound > kViolationTolerance) fail("Taylor bound exceeds the theorem bound");
    if (s.slack < -kViolationTolerance) fail("negative slack");

    report.min_slack = std::min(report.min_slack, s.slack);
    if (s.violation) report.violating_steps.push_back(s.step);
    report.steps.push_back(std::move(s));
  }
  if (recs.empty()) report.min_slack = 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// Gradient-vs-loss bound

struct GradLossCheck {
  std::size_t step;
  double grad_norm;
  double cap;  // M_train * sqrt(2 L_B)
  bool ok;
};

inline std::vector<GradLossCheck> check_grad_loss_bound(const Trajectory& traj, const BoundConstants& c) {
  std::vector<GradLossCheck> out;
  out.reserve(traj.records.size());
  for (const auto& r : traj.records) {
    const double cap = c.M_train * std::sqrt(2.0 * r.batch_loss);
    out.push_back({r.step, r.grad_norm, cap, r.grad_norm <= cap + kGradLossTolerance});
  }
  return out;
}

/// The chain behind |g_B| <= M sqrt(2 L_B), one level per inequality:
///   batch    |g_B|
///   seq      mean_s |g_s|
///   token    mean_s mean_t |g_st|
///   pinsker  mean_s mean_t M_st sqrt(2 CE_st)
///   jensen   mean_s M sqrt(2 L_s)
///   cap      M sqrt(2 L_B)
/// M is the largest logit-Jacobian norm over the batch's positions. Labeled
/// examples are sequences of length one.
struct JensenChain {
  double batch = 0.0;
  double seq = 0.0;
  double token = 0.0;
  double pinsker = 0.0;
  double jensen = 0.0;
  double cap = 0.0;
  double M = 0.0;
  double loss = 0.0;

  std::vector<double> levels() const { return {batch, seq, token, pinsker, jensen, cap}; }
  /// Index of the first failing inequality, or -1.
  int first_violation(double tol = kGradLossTolerance) const {
    const auto l = levels();
    for (std::size_t i = 0; i + 1 < l.size(); ++i)
      if (l[i] > l[i + 1] + tol) return static_cast<int>(i);
    return -1;
  }
};

inline JensenChain check_jensen_chain(const ModelParams& params, const Batch& batch) {
  JensenChain ch;
  const auto& arch = params.arch();
  std::vector<std::vector<std::pair<Vector, Vector>>> units;  // positions grouped by sequence
  if (const auto* labeled = std::get_if<std::vector<LabeledExample>>(&batch.examples())) {
    for (const auto& e : *labeled) units.push_back({{e.x, e.q}});
  } else {
    const auto* seq_arch = std::get_if<SeqLinearArch>(&arch);
    if (!seq_arch) throw DomainError("sequence examples require the seq_linear architecture");
    for (const auto& s : std::get<std::vector<SequenceExample>>(batch.examples())) {
      check_sequence(*seq_arch, s);
      std::vector<std::pair<Vector, Vector>> u;
      for (std::size_t t = 0; t < s.tokens.size(); ++t)
        u.emplace_back(encode_context(*seq_arch, s.tokens, t), sequence_target(*seq_arch, s, t));
      units.push_back(std::move(u));
    }
  }
  for (const auto& u : units)
    for (const auto& [x, q] : u) ch.M = std::max(ch.M, jacobian_opnorm(params, x));

  const auto ns = static_cast<double>(units.size());
  Vector g_batch = Vector::Zero(params.size());
  for (const auto& u : units) {
    const auto nt = static_cast<double>(u.size());
    Vector g_seq = Vector::Zero(params.size());
    double seq_loss = 0.0;
    double token_norms = 0.0;
    double pinsker = 0.0;
    for (const auto& [x, q] : u) {
      Vector g_tok = Vector::Zero(params.size());
      const double ce = accumulate_position(params, x, q, 1.0, &g_tok);
      g_seq += g_tok / nt;
      seq_loss += ce / nt;
      token_norms += g_tok.norm() / nt;
      pinsker += jacobian_opnorm(params, x) * std::sqrt(2.0 * ce) / nt;
    }
    g_batch += g_seq / ns;
    ch.loss += seq_loss / ns;
    ch.seq += g_seq.norm() / ns;
    ch.token += token_norms / ns;
    ch.pinsker += pinsker / ns;
    ch.jensen += ch.M * std::sqrt(2.0 * seq_loss) / ns;
  }
  ch.batch = g_batch.norm();
  ch.cap = ch.M * std::sqrt(2.0 * ch.loss);
  return ch;
}

// ---------------------------------------------------------------------------
// Pinsker chain: |p-q|_2 <= |p-q|_1 <= sqrt(2 KL(q||p)) <= sqrt(2 CE(q||p))

struct PinskerChain {
  double l2 = 0.0;
  double l1 = 0.0;
  double sqrt_2kl = 0.0;
  double sqrt_2ce = 0.0;
  bool infinite_kl = false;  // q has mass where p has none: vacuously satisfied

  bool ok(double tol = kPinskerTolerance) const {
    if (infinite_kl) return true;
    return l2 <= l1 + tol && l1 <= sqrt_2kl + tol && sqrt_2kl <= sqrt_2ce + tol;
  }
};

inline PinskerChain check_pinsker_chain(const Vector& p, const Vector& q) {
  if (p.size() != q.size() || p.size() == 0) throw DomainError("distributions must have equal nonzero length");
  auto valid = [](const Vector& v) {
    return (v.array() >= 0.0).all() && v.allFinite() && std::abs(v.sum() - 1.0) <= 1e-9;
  };
  if (!valid(p) || !valid(q)) throw DomainError("inputs must be probability vectors");
  PinskerChain ch;
  ch.l2 = (p - q).norm();
  ch.l1 = (p - q).lpNorm<1>();
  double kl = 0.0;
  double ce = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (q[k] <= 0.0) continue;
    if (p[k] <= 0.0) {
      ch.infinite_kl = true;
      ch.sqrt_2kl = ch.sqrt_2ce = std::numeric_limits<double>::infinity();
      return ch;
    }
    kl += q[k] * std::log(q[k] / p[k]);
    ce -= q[k] * std::log(p[k]);
  }
  ch.sqrt_2kl = std::sqrt(2.0 * std::max(kl, 0.0));
  ch.sqrt_2ce = std::sqrt(2.0 * std::max(ce, 0.0));
  return ch;
}

// ---------------------------------------------------------------------------
// Cumulative bound under the adaptive schedule

enum class Verdict { passed, failed, inconclusive };

inline std::string verdict_name(Verdict v) {
  switch (v) {
    case Verdict::passed: return "passed";
    case Verdict::failed: return "failed";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

struct CorollaryReport {
  std::size_t steps = 0;
  std::size_t unclamped_steps = 0;
  double unclamped_fraction = 0.0;
  double leading_ratio = 0.0;      // max/min of C1 lr sqrt(L_B) over unclamped steps
  double leading_ratio_ema = 0.0;  // same with sqrt(ema + eps) in place of sqrt(L_B)
  double sum_leading_unclamped = 0.0;
  double sum_bounds = 0.0;
  double cumulative_forgetting = 0.0;
  double total_slack = 0.0;
  bool ratio_ok = false;
  bool sum_ok = false;
  Verdict verdict = Verdict::inconclusive;
  std::string note;
};

struct CorollaryOptions {
  double ratio_limit = 3.0;
  double min_unclamped_fraction = 0.9;
};

inline CorollaryReport check_corollary(const Trajectory& traj, const BoundConstants& c,
                                       const CorollaryOptions& opt = {}) {
  const auto* f = std::get_if<FinchConfig>(&traj.schedule);
  if (!f) throw DomainError("the cumulative check needs a finch trajectory");
  CorollaryReport rep;
  rep.steps = traj.records.size();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  double lo_ema = std::numeric_limits<double>::infinity(), hi_ema = 0.0;
  for (const auto& r : traj.records) {
    rep.sum_bounds += theorem_bound(c, r.lr, r.batch_loss);
    rep.cumulative_forgetting += r.delta_old;
    if (finch_raw_rate(*f, r.ema_loss) > f->eta_max) continue;
    ++rep.unclamped_steps;
    const double lead = c.C1 * r.lr * std::sqrt(r.batch_loss);
    const double lead_ema = c.C1 * r.lr * std::sqrt(r.ema_loss + f->epsilon);
    rep.sum_leading_unclamped += lead;
    lo = std::min(lo, lead);
    hi = std::max(hi, lead);
    lo_ema = std::min(lo_ema, lead_ema);
    hi_ema = std::max(hi_ema, lead_ema);
  }
  rep.total_slack = rep.sum_bounds - rep.cumulative_forgetting;
  rep.sum_ok = rep.total_slack > 0.0 || (rep.steps == 0);
  if (rep.steps == 0) {
    rep.note = "empty trajectory";
    return rep;
  }
  rep.unclamped_fraction = static_cast<double>(rep.unclamped_steps) / static_cast<double>(rep.steps);
  if (rep.unclamped_steps > 0) {
    rep.leading_ratio = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    rep.leading_ratio_ema = lo_ema > 0.0 ? hi_ema / lo_ema : std::numeric_limits<double>::infinity();
    if (hi == 0.0) rep.leading_ratio = rep.leading_ratio_ema = 1.0;
  }
  rep.ratio_ok = rep.leading_ratio <= opt.ratio_limit;
  if (rep.unclamped_fraction < opt.min_unclamped_fraction) {
    rep.verdict = Verdict::inconclusive;
    rep.note = "clamp active on too many steps";
    return rep;
  }
  rep.verdict = rep.ratio_ok && rep.sum_ok ? Verdict::passed : Verdict::failed;
  return rep;
}

// ---------------------------------------------------------------------------
// Rendering

inline constexpr std::string_view kBoundCsvHeader =
    "step,lr,batch_loss,grad_norm,update_norm,delta_old,recomputed_delta,log_ratio_max,taylor_bound,bound,slack,"
    "consistent,violation";

inline void write_bound_csv(std::ostream& out, const BoundReport& rep) {
  out << kBoundCsvHeader << '\n';
  for (const auto& s : rep.steps) {
    out << s.step << ',' << format_double(s.lr) << ',' << format_double(s.batch_loss) << ','
        << format_double(s.grad_norm) << ',' << format_double(s.update_norm) << ',' << format_double(s.delta_old)
        << ',' << format_double(s.recomputed_delta) << ',' << format_double(s.log_ratio_max) << ','
        << format_double(s.taylor_bound) << ',' << format_double(s.bound) << ',' << format_double(s.slack) << ','
        << (s.consistent ? 1 : 0) << ',' << (s.violation ? 1 : 0) << '\n';
  }
}

inline void write_bound_summary(std::ostream& out, const BoundReport& rep, const BoundConstants& c) {
  out << "steps=" << rep.steps.size() << '\n'
      << "violations=" << rep.violating_steps.size() << '\n'
      << "min_slack=" << format_double(rep.min_slack) << '\n'
      << "pinsker_max_ratio=" << format_double(rep.pinsker_max_ratio) << '\n'
      << "composition_max_error=" << format_double(rep.composition_max_error) << '\n'
      << "log_ratio_steps=" << rep.log_ratio_steps << '\n'
      << "M_train=" << format_double(c.M_train) << '\n'
      << "M_old=" << format_double(c.M_old) << '\n'
      << "G=" << format_double(c.G) << '\n'
      << "H=" << format_double(c.H) << '\n'
      << "C1=" << format_double(c.C1) << '\n'
      << "C2=" << format_double(c.C2) << '\n'
      << "B_x=" << format_double(c.B_x) << '\n'
      << "B_theta=" << format_double(c.B_theta) << '\n'
      << "constants_reliable=" << (c.reliable ? "yes" : "no") << '\n'
      << "probes=" << c.description << '\n';
  for (const auto& s : rep.steps)
    if (s.violation) out << "violation step=" << s.step << " slack=" << format_double(s.slack) << " : " << s.reason << '\n';
}

inline void write_corollary_summary(std::ostream& out, const CorollaryReport& r) {
  out << "corollary=" << verdict_name(r.verdict) << '\n'
      << "unclamped_fraction=" << format_double(r.unclamped_fraction) << '\n'
      << "leading_ratio=" << format_double(r.leading_ratio) << '\n'
      << "leading_ratio_ema=" << format_double(r.leading_ratio_ema) << '\n'
      << "sum_bounds=" << format_double(r.sum_bounds) << '\n'
      << "cumulative_forgetting=" << format_double(r.cumulative_forgetting) << '\n'
      << "total_slack=" << format_double(r.total_slack) << '\n';
  if (!r.note.empty()) out << "note=" << r.note << '\n';
}

}  // namespace finch
