#pragma once

// Loss-adaptive learning-rate schedule and the baseline schedules it is
// compared against. Everything here is a pure state machine over a stream of
// observed mini-batch losses; no optimizer state lives in this header.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "finch/errors.hpp"
#include "finch/format.hpp"

namespace finch {

class ScheduleState;
std::string snapshot(const ScheduleState& state);
ScheduleState restore(std::string_view text);

/// Exponential moving average of observed losses. The first observation
/// initializes the average; afterwards value = alpha * value + (1 - alpha) * x.
class EmaTracker {
 public:
  explicit EmaTracker(double alpha = 0.9) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("ema alpha must lie in (0, 1)");
  }

  void observe(double x) {
    if (count_ == 0) {
      value_ = x;
    } else {
      value_ = alpha_ * value_ + (1.0 - alpha_) * x;
    }
    ++count_;
  }

  double alpha() const noexcept { return alpha_; }
  std::size_t count() const noexcept { return count_; }
  bool has_value() const noexcept { return count_ > 0; }
  std::optional<double> value() const {
    if (count_ == 0) return std::nullopt;
    return value_;
  }

 private:
  friend class ScheduleState;
  friend std::string snapshot(const ScheduleState& state);
  friend ScheduleState restore(std::string_view text);
  double alpha_;
  double value_ = 0.0;
  std::size_t count_ = 0;
};

/// Parameters of the adaptive rule lr = min(eta_base / sqrt(ema + epsilon), eta_max).
struct FinchConfig {
  double eta_base = 2e-5;
  double eta_max = 5e-5;
  double epsilon = 1e-8;
  double alpha = 0.9;
};

struct ConstantSchedule {
  double lr = 1e-2;
};

/// Same as ConstantSchedule; kept distinct so logs and summaries name the baseline.
struct FixedSmallSchedule {
  double lr = 1e-3;
};

/// Linear warmup over ceil(warmup_frac * total_steps) steps, then cosine decay to zero.
struct WarmupCosineSchedule {
  double peak_lr = 1e-2;
  double warmup_frac = 0.05;
  std::size_t total_steps = 1000;

  std::size_t warmup_steps() const {
    return static_cast<std::size_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
  }
};

using ScheduleSpec = std::variant<FinchConfig, ConstantSchedule, WarmupCosineSchedule, FixedSmallSchedule>;

inline std::string schedule_kind(const ScheduleSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FinchConfig>) return "finch";
        if constexpr (std::is_same_v<T, ConstantSchedule>) return "constant";
        if constexpr (std::is_same_v<T, WarmupCosineSchedule>) return "warmup_cosine";
        if constexpr (std::is_same_v<T, FixedSmallSchedule>) return "fixed_small";
      },
      spec);
}

inline void validate(const ScheduleSpec& spec) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FinchConfig>) {
          if (!positive(s.eta_base)) throw DomainError("finch eta_base must be positive");
          if (!positive(s.eta_max)) throw DomainError("finch eta_max must be positive");
          if (!positive(s.epsilon)) throw DomainError("finch epsilon must be positive");
          if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw DomainError("finch alpha must lie in (0, 1)");
        } else if constexpr (std::is_same_v<T, ConstantSchedule>) {
          // lr == 0 is the neutral control run.
          if (!(std::isfinite(s.lr) && s.lr >= 0.0)) throw DomainError("constant lr must be nonnegative");
        } else if constexpr (std::is_same_v<T, FixedSmallSchedule>) {
          if (!positive(s.lr)) throw DomainError("fixed_small lr must be positive");
        } else {
          if (!positive(s.peak_lr)) throw DomainError("warmup_cosine peak_lr must be positive");
          if (!(s.warmup_frac >= 0.0 && s.warmup_frac < 1.0))
            throw DomainError("warmup_cosine warmup_frac must lie in [0, 1)");
          if (s.total_steps < 1) throw DomainError("warmup_cosine total_steps must be >= 1");
        }
      },
      spec);
}

/// Unclamped adaptive rate for a given smoothed loss.
inline double finch_raw_rate(const FinchConfig& cfg, double ema_value) {
  return cfg.eta_base / std::sqrt(ema_value + cfg.epsilon);
}

inline double finch_rate(const FinchConfig& cfg, double ema_value) {
  return std::min(finch_raw_rate(cfg, ema_value), cfg.eta_max);
}

/// Rate of the warmup-cosine baseline at zero-based step index `step`.
inline double warmup_cosine_rate(const WarmupCosineSchedule& s, std::size_t step) {
  const std::size_t warmup = s.warmup_steps();
  if (step < warmup) {
    return s.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const double span = static_cast<double>(s.total_steps - warmup);
  const double progress = static_cast<double>(step - warmup) / span;
  return s.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

class ScheduleState {
 public:
  explicit ScheduleState(ScheduleSpec spec) : spec_(std::move(spec)) {
    validate(spec_);
    if (const auto* f = std::get_if<FinchConfig>(&spec_)) ema_.emplace(f->alpha);
  }

  /// Consumes one mini-batch loss and returns the learning rate for this step.
  double observe(double batch_loss) {
    if (!std::isfinite(batch_loss) || batch_loss < 0.0)
      throw DomainError("batch loss must be finite and nonnegative, got " + format_double(batch_loss));
    double lr = 0.0;
    bool clamped = false;
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, FinchConfig>) {
            ema_->observe(batch_loss);
            const double raw = finch_raw_rate(s, ema_->value_);
            clamped = raw > s.eta_max;
            lr = clamped ? s.eta_max : raw;
          } else if constexpr (std::is_same_v<T, WarmupCosineSchedule>) {
            if (step_ >= s.total_steps)
              throw DomainError("warmup_cosine observed beyond total_steps (" + std::to_string(s.total_steps) + ")");
            lr = warmup_cosine_rate(s, step_);
          } else {
            lr = s.lr;
          }
        },
        spec_);
    ++step_;
    last_lr_ = lr;
    last_clamped_ = clamped;
    return lr;
  }

  const ScheduleSpec& spec() const noexcept { return spec_; }
  std::size_t step() const noexcept { return step_; }
  std::optional<double> last_lr() const noexcept { return last_lr_; }
  /// True when the most recent finch rate hit eta_max.
  bool last_clamped() const noexcept { return last_clamped_; }
  const std::optional<EmaTracker>& ema() const noexcept { return ema_; }

  friend std::string snapshot(const ScheduleState& state);
  friend ScheduleState restore(std::string_view text);

 private:
  ScheduleSpec spec_;
  std::optional<EmaTracker> ema_;
  std::size_t step_ = 0;
  std::optional<double> last_lr_;
  bool last_clamped_ = false;
};

/// Value-semantic form of ScheduleState::observe.
inline std::pair<ScheduleState, double> observe(ScheduleState state, double batch_loss) {
  const double lr = state.observe(batch_loss);
  return {std::move(state), lr};
}

inline constexpr std::string_view kStateHeader = "finch-schedule v1";

// Serialized layout (v1), one key=value per line, LF endings, fixed order:
//   finch-schedule v1
//   kind=<finch|constant|warmup_cosine|fixed_small>
//   <spec fields in declaration order>
//   step=<n>
//   ema_count=<n>, ema_value=<x|unset>      (finch only)
//   last_lr=<x|unset>
//   last_clamped=<0|1>
inline std::string snapshot(const ScheduleState& state) {
  std::ostringstream out;
  out << kStateHeader << '\n' << "kind=" << schedule_kind(state.spec_) << '\n';
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FinchConfig>) {
          out << "eta_base=" << format_double(s.eta_base) << '\n'
              << "eta_max=" << format_double(s.eta_max) << '\n'
              << "epsilon=" << format_double(s.epsilon) << '\n'
              << "alpha=" << format_double(s.alpha) << '\n';
        } else if constexpr (std::is_same_v<T, WarmupCosineSchedule>) {
          out << "peak_lr=" << format_double(s.peak_lr) << '\n'
              << "warmup_frac=" << format_double(s.warmup_frac) << '\n'
              << "total_steps=" << s.total_steps << '\n';
        } else {
          out << "lr=" << format_double(s.lr) << '\n';
        }
      },
      state.spec_);
  out << "step=" << state.step_ << '\n';
  if (state.ema_) {
    out << "ema_count=" << state.ema_->count() << '\n'
        << "ema_value=" << (state.ema_->has_value() ? format_double(state.ema_->value_) : "unset") << '\n';
  }
  out << "last_lr=" << (state.last_lr_ ? format_double(*state.last_lr_) : "unset") << '\n';
  out << "last_clamped=" << (state.last_clamped_ ? 1 : 0) << '\n';
  return out.str();
}

namespace detail {

class StateReader {
 public:
  explicit StateReader(std::string_view text) : text_(text) {}

  std::string_view line() {
    if (pos_ >= text_.size()) throw ParseError("unexpected end of serialized state", line_no_ + 1, 1);
    const auto nl = text_.find('\n', pos_);
    if (nl == std::string_view::npos)
      throw ParseError("serialized state line is not LF-terminated", line_no_ + 1, text_.size() - pos_ + 1);
    auto l = text_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    ++line_no_;
    return l;
  }

  std::string_view field(std::string_view key) {
    const auto l = line();
    if (l.size() <= key.size() || l.substr(0, key.size()) != key || l[key.size()] != '=')
      throw ParseError("expected field '" + std::string(key) + "'", line_no_, 1);
    return l.substr(key.size() + 1);
  }

  double real(std::string_view key) {
    const auto v = field(key);
    const auto d = parse_double(v);
    if (!d) throw ParseError("malformed number for '" + std::string(key) + "'", line_no_, key.size() + 2);
    return *d;
  }

  std::optional<double> optional_real(std::string_view key) {
    const auto v = field(key);
    if (v == "unset") return std::nullopt;
    const auto d = parse_double(v);
    if (!d) throw ParseError("malformed number for '" + std::string(key) + "'", line_no_, key.size() + 2);
    return d;
  }

  std::size_t count(std::string_view key) {
    const auto v = field(key);
    const auto n = parse_integer(v);
    if (!n || *n < 0) throw ParseError("malformed count for '" + std::string(key) + "'", line_no_, key.size() + 2);
    return static_cast<std::size_t>(*n);
  }

  std::size_t line_no() const noexcept { return line_no_; }

  void expect_end() const {
    if (pos_ != text_.size()) throw ParseError("trailing data after serialized state", line_no_ + 1, 1);
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

}  // namespace detail

inline ScheduleState restore(std::string_view text) {
  detail::StateReader in(text);
  if (in.line() != kStateHeader) throw ParseError("missing 'finch-schedule v1' header", 1, 1);
  const auto kind = std::string(in.field("kind"));
  ScheduleSpec spec;
  if (kind == "finch") {
    FinchConfig c;
    c.eta_base = in.real("eta_base");
    c.eta_max = in.real("eta_max");
    c.epsilon = in.real("epsilon");
    c.alpha = in.real("alpha");
    spec = c;
  } else if (kind == "constant") {
    spec = ConstantSchedule{in.real("lr")};
  } else if (kind == "fixed_small") {
    spec = FixedSmallSchedule{in.real("lr")};
  } else if (kind == "warmup_cosine") {
    WarmupCosineSchedule w;
    w.peak_lr = in.real("peak_lr");
    w.warmup_frac = in.real("warmup_frac");
    w.total_steps = in.count("total_steps");
    spec = w;
  } else {
    throw ParseError("unknown schedule kind '" + kind + "'", 2, 6);
  }
  ScheduleState state = [&] {
    try {
      return ScheduleState(spec);
    } catch (const DomainError& e) {
      throw ParseError(std::string("invalid schedule parameters: ") + e.what(), 3, 1);
    }
  }();
  state.step_ = in.count("step");
  if (state.ema_) {
    state.ema_->count_ = in.count("ema_count");
    const auto v = in.optional_real("ema_value");
    if (v.has_value() != (state.ema_->count_ > 0))
      throw ParseError("ema_value must be set iff ema_count > 0", in.line_no(), 1);
    state.ema_->value_ = v.value_or(0.0);
  }
  state.last_lr_ = in.optional_real("last_lr");
  state.last_clamped_ = in.count("last_clamped") != 0;
  in.expect_end();
  return state;
}

/// One finch step as seen by the corollary check: smoothed loss and emitted rate.
struct KappaSample {
  double ema_value;
  double lr;
};

/// lr * sqrt(ema + epsilon) per step; equals eta_base exactly up to rounding
/// whenever the clamp was inactive.
inline std::vector<double> kappa_trace(std::span<const KappaSample> history, double epsilon) {
  std::vector<double> out;
  out.reserve(history.size());
  for (const auto& h : history) out.push_back(h.lr * std::sqrt(h.ema_value + epsilon));
  return out;
}

}  // namespace finch
