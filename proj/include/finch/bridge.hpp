#pragma once

// Native half of the scheduler binding: a handle built from a string map,
// driven one loss at a time, and persisted through the v1 state text. A
// foreign-language wrapper only has to forward these four calls.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>

#include "finch/errors.hpp"
#include "finch/format.hpp"
#include "finch/scheduler.hpp"

namespace finch {

using BridgeConfig = std::map<std::string, std::string>;

class SchedulerHandle {
 public:
  /// Keys: kind (default finch) plus that kind's fields. finch requires
  /// eta_base; eta_max defaults to 5e-5, epsilon to 1e-8, alpha to 0.9.
  static SchedulerHandle create(const BridgeConfig& cfg) {
    const std::string kind = cfg.count("kind") ? cfg.at("kind") : "finch";
    std::set<std::string> allowed{"kind"};
    auto number = [&](const std::string& key, std::optional<double> fallback) {
      allowed.insert(key);
      const auto it = cfg.find(key);
      if (it == cfg.end()) {
        if (!fallback) throw DomainError("missing required key '" + key + "'");
        return *fallback;
      }
      const auto v = parse_double(trim(it->second));
      if (!v) throw DomainError("key '" + key + "': malformed number '" + it->second + "'");
      return *v;
    };
    ScheduleSpec spec;
    if (kind == "finch") {
      FinchConfig f;
      f.eta_base = number("eta_base", std::nullopt);
      f.eta_max = number("eta_max", 5e-5);
      f.epsilon = number("epsilon", 1e-8);
      f.alpha = number("alpha", 0.9);
      spec = f;
    } else if (kind == "constant") {
      spec = ConstantSchedule{number("lr", std::nullopt)};
    } else if (kind == "fixed_small") {
      spec = FixedSmallSchedule{number("lr", std::nullopt)};
    } else if (kind == "warmup_cosine") {
      WarmupCosineSchedule w;
      w.peak_lr = number("peak_lr", std::nullopt);
      w.warmup_frac = number("warmup_frac", 0.05);
      const double total = number("total_steps", std::nullopt);
      if (!(total >= 1.0) || total != static_cast<double>(static_cast<std::size_t>(total)))
        throw DomainError("key 'total_steps': must be a positive integer");
      w.total_steps = static_cast<std::size_t>(total);
      spec = w;
    } else {
      throw DomainError("key 'kind': unknown schedule '" + kind + "'");
    }
    for (const auto& [k, v] : cfg)
      if (!allowed.count(k)) throw DomainError("unknown key '" + k + "' for kind " + kind);
    try {
      return SchedulerHandle(ScheduleState(std::move(spec)));
    } catch (const DomainError& e) {
      throw DomainError(std::string("invalid configuration: ") + e.what());
    }
  }

  /// Rebuilds a handle from v1 state text; ParseError carries the position.
  static SchedulerHandle from_state(std::string_view text) { return SchedulerHandle(restore(text)); }

  /// Next learning rate. A rejected loss leaves the handle unchanged.
  double observe(double loss) { return state_.observe(loss); }

  std::string state() const { return snapshot(state_); }
  const ScheduleState& native() const { return state_; }

 private:
  explicit SchedulerHandle(ScheduleState s) : state_(std::move(s)) {}
  ScheduleState state_;
};

}  // namespace finch
