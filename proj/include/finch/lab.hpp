#pragma once

// Continual fine-tuning engine: pretrain on an old task, fine-tune on a new
// task with plain SGD under a chosen schedule, and log per-step forgetting
// (the change in held-out old-task loss caused by each update).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "finch/data.hpp"
#include "finch/errors.hpp"
#include "finch/format.hpp"
#include "finch/model.hpp"
#include "finch/scheduler.hpp"

namespace finch {

struct ModelSpec {
  Architecture arch = LinearSoftmaxArch{5, 20};
  unsigned long long init_seed = 3;
  double init_scale = 0.01;
};

struct TrainConfig {
  ScheduleSpec schedule = ConstantSchedule{1e-2};
  std::size_t steps = 500;
  std::size_t batch_size = 32;
  std::optional<double> grad_clip_max_norm = 1.0;
  double l2_to_init_lambda = 0.0;
  unsigned long long seed = 11;
  std::size_t eval_every = 10;
  std::size_t checkpoint_stride = 1;  // 0 disables checkpointing
};

inline void validate(const TrainConfig& c) {
  validate(c.schedule);
  if (c.batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (c.eval_every < 1) throw DomainError("eval_every must be >= 1");
  if (c.grad_clip_max_norm && !(std::isfinite(*c.grad_clip_max_norm) && *c.grad_clip_max_norm > 0.0))
    throw DomainError("grad_clip_max_norm must be positive");
  if (!(std::isfinite(c.l2_to_init_lambda) && c.l2_to_init_lambda >= 0.0))
    throw DomainError("l2_to_init_lambda must be nonnegative");
  if (const auto* w = std::get_if<WarmupCosineSchedule>(&c.schedule); w && w->total_steps < c.steps)
    throw DomainError("warmup_cosine total_steps is shorter than the run");
}

/// One row of the training log. old_loss is measured before the update and
/// delta_old = old_loss(i+1) - old_loss(i). bound/slack are NaN until the
/// run is annotated with estimated constants.
struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double batch_loss = 0.0;
  double ema_loss = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
  double old_loss = 0.0;
  double delta_old = 0.0;
  double bound = std::numeric_limits<double>::quiet_NaN();
  double slack = std::numeric_limits<double>::quiet_NaN();

  bool operator==(const StepRecord&) const = default;
};

struct Checkpoint {
  std::size_t step;
  Vector theta;
};

struct EvalPoint {
  std::size_t step;
  double loss;
  double accuracy;
};

/// Everything the bound verifier needs from a run.
struct Trajectory {
  Architecture arch = LinearSoftmaxArch{};
  ScheduleSpec schedule = ConstantSchedule{};
  std::optional<double> grad_clip_max_norm;
  double l2_to_init_lambda = 0.0;
  std::vector<StepRecord> records;
  double initial_old_loss = 0.0;
  double final_old_loss = 0.0;
  std::vector<Checkpoint> checkpoints;  // ascending steps; step 0 is always present

  const Checkpoint* checkpoint_at(std::size_t step) const {
    const auto it = std::lower_bound(checkpoints.begin(), checkpoints.end(), step,
                                     [](const Checkpoint& c, std::size_t s) { return c.step < s; });
    return it != checkpoints.end() && it->step == step ? &*it : nullptr;
  }
};

struct RunResult {
  Trajectory trajectory;
  ModelParams final_params;
  double cumulative_forgetting = 0.0;  // sum of delta_old
  double initial_old_accuracy = 0.0;
  double final_old_accuracy = 0.0;
  std::vector<EvalPoint> new_eval;
  TrainConfig config;
  double wall_seconds = 0.0;

  const std::vector<StepRecord>& records() const { return trajectory.records; }
  double final_new_loss() const { return new_eval.back().loss; }
  double final_new_accuracy() const { return new_eval.back().accuracy; }
  double clamp_active_fraction() const;
};

inline double RunResult::clamp_active_fraction() const {
  const auto* f = std::get_if<FinchConfig>(&config.schedule);
  if (!f || trajectory.records.empty()) return 0.0;
  std::size_t clamped = 0;
  for (const auto& r : trajectory.records)
    if (finch_raw_rate(*f, r.ema_loss) > f->eta_max) ++clamped;
  return static_cast<double>(clamped) / static_cast<double>(trajectory.records.size());
}

namespace detail {

inline void require_finite(double v, const char* what, std::size_t step) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string("non-finite ") + what + " at step " + std::to_string(step),
                          static_cast<long>(step) - 1);
}

struct SgdStep {
  double loss;
  double lr;
  double grad_norm;
  bool clipped;
  double ema;
};

/// Shared update: sample, observe, clip, add the L2-to-init pull, step.
inline SgdStep sgd_step(ModelParams& params, const ModelParams& anchor, const ExampleList& data,
                        const TrainConfig& cfg, ScheduleState& schedule, EmaTracker& monitor, std::size_t step) {
  const Batch batch = sample_batch(data, cfg.batch_size, cfg.seed, step);
  LossAndGrad lg = loss_and_grad(params, batch.examples());
  require_finite(lg.loss, "batch loss", step);
  if (!lg.grad.allFinite()) throw DivergenceError("non-finite gradient at step " + std::to_string(step),
                                                  static_cast<long>(step) - 1);
  const double lr = schedule.observe(lg.loss);
  monitor.observe(lg.loss);
  const double ema = schedule.ema() ? *schedule.ema()->value() : *monitor.value();
  const double gnorm = lg.grad.norm();
  bool clipped = false;
  if (cfg.grad_clip_max_norm && gnorm > *cfg.grad_clip_max_norm) {
    lg.grad *= *cfg.grad_clip_max_norm / gnorm;
    clipped = true;
  }
  if (cfg.l2_to_init_lambda > 0.0) lg.grad += cfg.l2_to_init_lambda * (params.theta() - anchor.theta());
  params.theta_mut() -= lr * lg.grad;
  if (!params.theta().allFinite())
    throw DivergenceError("non-finite parameters after step " + std::to_string(step), static_cast<long>(step) - 1);
  return {lg.loss, lr, gnorm, clipped, ema};
}

}  // namespace detail

/// Trains from a seeded initialization on the old task. Deterministic.
inline ModelParams pretrain(const TaskData& data, const ModelSpec& model, const TrainConfig& cfg) {
  validate(cfg);
  ModelParams params = init_params(model.arch, model.init_seed, model.init_scale);
  const ModelParams anchor = params;
  ScheduleState schedule(cfg.schedule);
  EmaTracker monitor(0.9);
  for (std::size_t i = 0; i < cfg.steps; ++i) detail::sgd_step(params, anchor, data.old_train, cfg, schedule, monitor, i);
  return params;
}

/// T steps of SGD on the new task, evaluating held-out old-task loss after every step.
inline RunResult finetune(const ModelParams& theta0, const TaskData& data, const TrainConfig& cfg) {
  validate(cfg);
  const auto started = std::chrono::steady_clock::now();
  ModelParams params = theta0;
  // Dimension check against the data before doing anything else.
  (void)ce_loss(params, data.old_holdout);

  RunResult result{Trajectory{}, theta0, 0.0, 0.0, 0.0, {}, cfg, 0.0};
  Trajectory& traj = result.trajectory;
  traj.arch = theta0.arch();
  traj.schedule = cfg.schedule;
  traj.grad_clip_max_norm = cfg.grad_clip_max_norm;
  traj.l2_to_init_lambda = cfg.l2_to_init_lambda;
  traj.records.reserve(cfg.steps);

  auto evaluate_new = [&](std::size_t step) {
    result.new_eval.push_back({step, ce_loss(params, data.new_eval), accuracy(params, data.new_eval)});
  };

  ScheduleState schedule(cfg.schedule);
  EmaTracker monitor(0.9);
  double old_loss = ce_loss(params, data.old_holdout);
  traj.initial_old_loss = old_loss;
  result.initial_old_accuracy = accuracy(params, data.old_holdout);
  evaluate_new(0);
  traj.checkpoints.push_back({0, params.theta()});

  for (std::size_t i = 0; i < cfg.steps; ++i) {
    const auto s = detail::sgd_step(params, theta0, data.new_train, cfg, schedule, monitor, i);
    const double next_old = ce_loss(params, data.old_holdout);
    detail::require_finite(next_old, "old-task loss", i);
    StepRecord r;
    r.step = i;
    r.lr = s.lr;
    r.batch_loss = s.loss;
    r.ema_loss = s.ema;
    r.grad_norm = s.grad_norm;
    r.clipped = s.clipped;
    r.old_loss = old_loss;
    r.delta_old = next_old - old_loss;
    traj.records.push_back(r);
    result.cumulative_forgetting += r.delta_old;
    old_loss = next_old;
    const std::size_t done = i + 1;
    if (cfg.checkpoint_stride > 0 && (done % cfg.checkpoint_stride == 0 || done == cfg.steps))
      traj.checkpoints.push_back({done, params.theta()});
    if (done % cfg.eval_every == 0 && done != cfg.steps) evaluate_new(done);
  }
  if (cfg.steps > 0) evaluate_new(cfg.steps);
  traj.final_old_loss = old_loss;
  result.final_old_accuracy = accuracy(params, data.old_holdout);
  result.final_params = params;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ---------------------------------------------------------------------------
// Matched comparison

enum class MatchKnob { steps, rate };

struct MatchOptions {
  MatchKnob knob = MatchKnob::steps;
  double rel_tol = 0.05;
  std::size_t max_rounds = 24;  // training runs of the adjusted schedule
  std::size_t max_steps = 20000;
};

struct MatchResult {
  TrainConfig a;
  TrainConfig b;
  bool matched = false;
  std::size_t rounds = 0;
  double loss_a = 0.0;
  double loss_b = 0.0;
  std::string note;
};

/// Multiplies the schedule's rate scale (finch scales eta_base and eta_max together).
inline ScheduleSpec scale_rate(const ScheduleSpec& spec, double factor) {
  return std::visit(
      [&](auto s) -> ScheduleSpec {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FinchConfig>) {
          s.eta_base *= factor;
          s.eta_max *= factor;
        } else if constexpr (std::is_same_v<T, WarmupCosineSchedule>) {
          s.peak_lr *= factor;
        } else {
          s.lr *= factor;
        }
        return s;
      },
      spec);
}

inline TrainConfig with_steps(TrainConfig cfg, std::size_t steps) {
  cfg.steps = steps;
  if (auto* w = std::get_if<WarmupCosineSchedule>(&cfg.schedule)) w->total_steps = steps;
  return cfg;
}

inline bool same_config(const TrainConfig& a, const TrainConfig& b) {
  return snapshot(ScheduleState(a.schedule)) == snapshot(ScheduleState(b.schedule)) && a.steps == b.steps &&
         a.batch_size == b.batch_size && a.grad_clip_max_norm == b.grad_clip_max_norm &&
         a.l2_to_init_lambda == b.l2_to_init_lambda && a.seed == b.seed;
}

/// Adjusts one schedule until both runs reach the same final new-task loss
/// within `rel_tol` (relative to the target run). With MatchKnob::steps the
/// weaker run's step count grows (or the stronger one's shrinks); with
/// MatchKnob::rate config `b`'s rate scale is bisected in log space.
inline MatchResult match_final_loss(const ModelParams& theta0, const TaskData& data, const TrainConfig& a,
                                    const TrainConfig& b, const MatchOptions& opt = {}) {
  MatchResult out{a, b, false, 0, 0.0, 0.0, {}};
  if (same_config(a, b)) {
    out.matched = true;
    out.note = "identical configs";
    return out;
  }
  auto final_loss = [&](const TrainConfig& c) {
    TrainConfig lean = c;
    lean.checkpoint_stride = 0;
    lean.eval_every = std::max<std::size_t>(c.steps, 1);
    return finetune(theta0, data, lean).final_new_loss();
  };
  out.loss_a = final_loss(a);
  out.loss_b = final_loss(b);
  auto within = [&](double target, double v) { return std::abs(v - target) <= opt.rel_tol * target; };
  if (within(out.loss_a, out.loss_b)) {
    out.matched = true;
    return out;
  }

  if (opt.knob == MatchKnob::rate) {
    // Final loss need not be monotone in the rate (a large rate raises the
    // noise floor), so the search direction is taken from the first move and
    // flipped once if that move lands farther from the target.
    const double target = out.loss_a;
    const bool too_weak = out.loss_b > target;
    auto trial_loss = [&](double f, TrainConfig& trial) {
      trial = b;
      trial.schedule = scale_rate(b.schedule, std::exp(f));
      ++out.rounds;
      try {
        return final_loss(trial);
      } catch (const DivergenceError&) {
        return std::numeric_limits<double>::infinity();
      }
    };
    double dir = too_weak ? std::log(2.0) : -std::log(2.0);
    double f = 0.0, prev_gap = std::abs(out.loss_b - target);
    double same = 0.0;  // log factor whose loss lies on the starting side of the target
    bool flipped = false, crossed = false;
    while (out.rounds < opt.max_rounds) {
      TrainConfig trial;
      const double loss = trial_loss(f + dir, trial);
      if (within(target, loss)) {
        out.b = trial;
        out.loss_b = loss;
        out.matched = true;
        return out;
      }
      if ((loss > target) != too_weak) {
        f += dir;
        crossed = true;
        break;
      }
      const double gap = std::abs(loss - target);
      if (gap >= prev_gap) {
        if (flipped) break;
        flipped = true;
        dir = -dir;
        f = same;
        continue;
      }
      f += dir;
      same = f;
      prev_gap = gap;
    }
    if (!crossed) {
      out.note = "could not bracket the target loss by rescaling the rate";
      return out;
    }
    double other = f;  // loss on the far side of the target
    while (out.rounds < opt.max_rounds) {
      const double mid = 0.5 * (same + other);
      TrainConfig trial;
      const double loss = trial_loss(mid, trial);
      if (within(target, loss)) {
        out.b = trial;
        out.loss_b = loss;
        out.matched = true;
        return out;
      }
      ((loss > target) == too_weak ? same : other) = mid;
    }
    out.note = "rate bisection exhausted its budget";
    return out;
  }

  // Steps knob: adjust whichever run is weaker, toward the other's loss.
  const bool adjust_b = out.loss_b > out.loss_a;
  const TrainConfig& base = adjust_b ? b : a;
  const double target = adjust_b ? out.loss_a : out.loss_b;
  std::size_t lo = base.steps;  // loss(lo) > target
  std::size_t hi = 0;           // loss(hi) < target
  double loss = 0.0;
  std::size_t n = std::max<std::size_t>(base.steps, 1);
  auto accept = [&](std::size_t steps, double l) {
    (adjust_b ? out.b : out.a) = with_steps(base, steps);
    (adjust_b ? out.loss_b : out.loss_a) = l;
    out.matched = true;
    return out;
  };
  while (out.rounds < opt.max_rounds) {
    n = std::min(n * 2, opt.max_steps);
    loss = final_loss(with_steps(base, n));
    ++out.rounds;
    if (within(target, loss)) return accept(n, loss);
    if (loss < target) {
      hi = n;
      break;
    }
    lo = n;
    if (n == opt.max_steps) break;
  }
  if (hi == 0) {
    out.note = "weaker schedule never reached the target loss within max_steps";
    return out;
  }
  while (out.rounds < opt.max_rounds && hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    loss = final_loss(with_steps(base, mid));
    ++out.rounds;
    if (within(target, loss)) return accept(mid, loss);
    (loss > target ? lo : hi) = mid;
  }
  out.note = "step bisection did not land inside the tolerance";
  return out;
}

// ---------------------------------------------------------------------------
// Step log CSV (v1): fixed column order, round-trip decimals, LF endings.

inline constexpr std::string_view kStepCsvHeader =
    "step,lr,batch_loss,ema_loss,grad_norm,clipped,old_loss,delta_old,bound,slack";

inline void write_step_csv(std::ostream& out, const std::vector<StepRecord>& records) {
  out << kStepCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.step << ',' << format_double(r.lr) << ',' << format_double(r.batch_loss) << ','
        << format_double(r.ema_loss) << ',' << format_double(r.grad_norm) << ',' << (r.clipped ? 1 : 0) << ','
        << format_double(r.old_loss) << ',' << format_double(r.delta_old) << ',' << format_double(r.bound) << ','
        << format_double(r.slack) << '\n';
  }
}

inline std::vector<StepRecord> read_step_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kStepCsvHeader) throw ParseError("step CSV header mismatch", 1, 1);
  std::vector<StepRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw ParseError("step CSV row needs 10 cells", line_no, 1);
    auto real = [&](std::size_t i) {
      const auto v = parse_double(cells[i]);
      if (!v) throw ParseError("malformed number '" + cells[i] + "'", line_no, i + 1);
      return *v;
    };
    const auto step = parse_integer(cells[0]);
    if (!step || *step < 0) throw ParseError("malformed step index", line_no, 1);
    StepRecord r;
    r.step = static_cast<std::size_t>(*step);
    r.lr = real(1);
    r.batch_loss = real(2);
    r.ema_loss = real(3);
    r.grad_norm = real(4);
    r.clipped = cells[5] == "1";
    r.old_loss = real(6);
    r.delta_old = real(7);
    r.bound = real(8);
    r.slack = real(9);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint dump (v1):
//   finch-checkpoints v1
//   arch=<name>
//   <architecture fields, one key=value per line>
//   dim=<n>
//   @ <step>
//   <n space-separated values>
//   ...

inline void write_checkpoints(std::ostream& out, const Architecture& arch, const std::vector<Checkpoint>& cps) {
  out << "finch-checkpoints v1\n" << "arch=" << arch_name(arch) << '\n';
  std::visit(
      [&](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, SeqLinearArch>) {
          out << "vocab=" << a.vocab << "\ncontext=" << a.context << '\n';
        } else {
          out << "classes=" << a.classes << "\nfeatures=" << a.features << '\n';
          if constexpr (std::is_same_v<T, Mlp2Arch>) out << "hidden=" << a.hidden << '\n';
        }
      },
      arch);
  out << "dim=" << param_count(arch) << '\n';
  for (const auto& c : cps) {
    out << "@ " << c.step << '\n';
    for (Eigen::Index i = 0; i < c.theta.size(); ++i) out << (i ? " " : "") << format_double(c.theta[i]);
    out << '\n';
  }
}

struct CheckpointFile {
  Architecture arch;
  std::vector<Checkpoint> checkpoints;
};

inline CheckpointFile read_checkpoints(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::string {
    if (!std::getline(in, line)) throw ParseError("truncated checkpoint file", line_no + 1, 1);
    ++line_no;
    return line;
  };
  auto field = [&](const std::string& key) -> std::size_t {
    const auto l = next();
    if (l.rfind(key + "=", 0) != 0) throw ParseError("expected '" + key + "='", line_no, 1);
    const auto v = parse_integer(l.substr(key.size() + 1));
    if (!v || *v < 0) throw ParseError("malformed value for '" + key + "'", line_no, key.size() + 2);
    return static_cast<std::size_t>(*v);
  };
  if (next() != "finch-checkpoints v1") throw ParseError("missing 'finch-checkpoints v1' header", 1, 1);
  const auto arch_line = next();
  CheckpointFile out;
  if (arch_line == "arch=linear_softmax") {
    const auto k = field("classes");
    out.arch = LinearSoftmaxArch{k, field("features")};
  } else if (arch_line == "arch=mlp2") {
    const auto k = field("classes");
    const auto d = field("features");
    out.arch = Mlp2Arch{k, d, field("hidden")};
  } else if (arch_line == "arch=seq_linear") {
    const auto v = field("vocab");
    out.arch = SeqLinearArch{v, field("context")};
  } else {
    throw ParseError("unknown architecture line '" + arch_line + "'", line_no, 1);
  }
  const auto dim = field("dim");
  if (dim != param_count(out.arch)) throw ParseError("dim does not match architecture", line_no, 1);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("@ ", 0) != 0) throw ParseError("expected '@ <step>'", line_no, 1);
    const auto step = parse_integer(line.substr(2));
    if (!step || *step < 0) throw ParseError("malformed checkpoint step", line_no, 3);
    const auto values = next();
    std::istringstream row(values);
    Vector theta(dim);
    std::string tok;
    std::size_t i = 0;
    while (row >> tok) {
      const auto v = parse_double(tok);
      if (!v || i >= dim) throw ParseError("malformed checkpoint value", line_no, 1);
      theta[static_cast<Eigen::Index>(i++)] = *v;
    }
    if (i != dim) throw ParseError("checkpoint has " + std::to_string(i) + " values, expected " + std::to_string(dim), line_no, 1);
    out.checkpoints.push_back({static_cast<std::size_t>(*step), std::move(theta)});
  }
  return out;
}

}  // namespace finch
