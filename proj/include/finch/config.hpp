#pragma once

// Flat run configuration: one `section.key = value` per line, '#' comments.
// Unknown keys are rejected; every key has a default, and render_config()
// writes the complete effective configuration back in canonical order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "finch/data.hpp"
#include "finch/errors.hpp"
#include "finch/format.hpp"
#include "finch/lab.hpp"
#include "finch/model.hpp"
#include "finch/scheduler.hpp"
#include "finch/verifier.hpp"

namespace finch {

enum class ArchKind { linear_softmax, mlp2, seq_linear };

struct VerifyConfig {
  bool enabled = true;
  ProbeOptions probes;
  CorollaryOptions corollary;
};

/// Schedule fields for every kind; only the selected kind's fields are used.
struct ScheduleFields {
  std::string kind = "constant";
  double lr = 1e-2;
  double eta_base = 0.05;
  double eta_max = 0.5;
  double epsilon = 1e-8;
  double alpha = 0.9;
  double peak_lr = 1e-2;
  double warmup_frac = 0.05;
  std::size_t total_steps = 0;  // 0: the run's step count
};

struct RunConfig {
  TaskPair task;
  ArchKind arch = ArchKind::linear_softmax;
  std::size_t hidden = 16;
  std::size_t context = 2;
  unsigned long long init_seed = 3;
  double init_scale = 0.01;
  double pretrain_lr = 1e-2;
  std::size_t pretrain_steps = 500;
  std::size_t pretrain_batch_size = 32;
  unsigned long long pretrain_seed = 11;
  std::optional<double> pretrain_clip = 1.0;
  ScheduleFields schedule;
  std::size_t steps = 500;
  std::size_t batch_size = 8;
  std::optional<double> grad_clip_max_norm = 1.0;
  bool l2_to_init = false;
  double l2_to_init_lambda = 1e-3;
  unsigned long long train_seed = 51;
  std::size_t eval_every = 10;
  std::size_t checkpoint_stride = 1;
  VerifyConfig verify;
  std::string output_dir;  // empty: chosen by the caller

  ModelSpec model_spec() const;
  ScheduleSpec schedule_spec() const;
  TrainConfig pretrain_config() const;
  TrainConfig train_config() const;
};

/// The bundled continual task: a well-separated 5-class Gaussian mixture as
/// the old task, and the same mixture with displaced means and heavier noise
/// as the new task, so that the new-task loss has a floor. `index`
/// shifts every seed together.
inline RunConfig reference_config(unsigned index = 1) {
  RunConfig c;
  c.task.old_task.family = TaskFamily::gaussian_mixture_shift;
  c.task.old_task.seed = index;
  c.task.old_task.variant_seed = 100 + index;
  c.task.old_task.noise = 1.0;
  c.task.old_task.shift = 0.0;
  c.task.new_task = c.task.old_task;
  c.task.new_task.noise = 2.5;
  c.task.new_task.shift = 1.0;
  c.task.data_seed = 1000 + index;
  c.train_seed = 50 + index;
  return c;
}

inline ModelSpec RunConfig::model_spec() const {
  ModelSpec m;
  const std::size_t k = task.new_task.classes;
  const std::size_t d = task.new_task.features;
  switch (arch) {
    case ArchKind::linear_softmax: m.arch = LinearSoftmaxArch{k, d}; break;
    case ArchKind::mlp2: m.arch = Mlp2Arch{k, d, hidden}; break;
    case ArchKind::seq_linear: m.arch = SeqLinearArch{k, context}; break;
  }
  m.init_seed = init_seed;
  m.init_scale = init_scale;
  return m;
}

inline ScheduleSpec RunConfig::schedule_spec() const {
  const auto& s = schedule;
  if (s.kind == "finch") return FinchConfig{s.eta_base, s.eta_max, s.epsilon, s.alpha};
  if (s.kind == "constant") return ConstantSchedule{s.lr};
  if (s.kind == "fixed_small") return FixedSmallSchedule{s.lr};
  if (s.kind == "warmup_cosine") return WarmupCosineSchedule{s.peak_lr, s.warmup_frac, s.total_steps ? s.total_steps : steps};
  throw DomainError("schedule.kind: unknown schedule '" + s.kind + "'");
}

inline TrainConfig RunConfig::pretrain_config() const {
  TrainConfig t;
  t.schedule = ConstantSchedule{pretrain_lr};
  t.steps = pretrain_steps;
  t.batch_size = pretrain_batch_size;
  t.seed = pretrain_seed;
  t.grad_clip_max_norm = pretrain_clip;
  t.checkpoint_stride = 0;
  return t;
}

inline TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.schedule = schedule_spec();
  t.steps = steps;
  t.batch_size = batch_size;
  t.grad_clip_max_norm = grad_clip_max_norm;
  t.l2_to_init_lambda = l2_to_init ? l2_to_init_lambda : 0.0;
  t.seed = train_seed;
  t.eval_every = eval_every;
  t.checkpoint_stride = checkpoint_stride;
  return t;
}

namespace detail {

inline std::string arch_kind_name(ArchKind a) {
  switch (a) {
    case ArchKind::linear_softmax: return "linear_softmax";
    case ArchKind::mlp2: return "mlp2";
    case ArchKind::seq_linear: return "seq_linear";
  }
  return "?";
}

struct KeyValue {
  std::string_view key;
  std::string_view value;
  std::size_t line;
  std::size_t value_column;
};

/// Typed accessors for one key; errors point at the value.
class Field {
 public:
  explicit Field(const KeyValue& kv) : kv_(kv) {}

  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError(std::string(kv_.key) + ": " + why, kv_.line, kv_.value_column);
  }
  double real() const {
    const auto v = parse_double(kv_.value);
    if (!v || !std::isfinite(*v)) fail("expected a finite number, got '" + std::string(kv_.value) + "'");
    return *v;
  }
  double positive() const {
    const double v = real();
    if (!(v > 0.0)) fail("must be positive");
    return v;
  }
  double nonnegative() const {
    const double v = real();
    if (!(v >= 0.0)) fail("must be nonnegative");
    return v;
  }
  unsigned long long count(unsigned long long min = 0) const {
    const auto v = parse_integer(kv_.value);
    if (!v) fail("expected an integer, got '" + std::string(kv_.value) + "'");
    if (*v < 0 || static_cast<unsigned long long>(*v) < min) fail("must be >= " + std::to_string(min));
    return static_cast<unsigned long long>(*v);
  }
  bool boolean() const {
    if (kv_.value == "true" || kv_.value == "on" || kv_.value == "1") return true;
    if (kv_.value == "false" || kv_.value == "off" || kv_.value == "0") return false;
    fail("expected true or false");
  }
  std::string text() const { return std::string(kv_.value); }

 private:
  const KeyValue& kv_;
};

using Setter = std::function<void(RunConfig&, const Field&)>;

inline std::string clip_text(const std::optional<double>& v) { return v ? format_short(*v) : "none"; }

/// Canonical key order and how to set / render each key.
struct KeySpec {
  std::string key;
  Setter set;
  std::function<std::string(const RunConfig&)> get;
};

inline void add_generator_keys(std::vector<KeySpec>& keys, const std::string& prefix,
                               GeneratorSpec TaskPair::*member) {
  keys.push_back({prefix + ".family",
                  [member](RunConfig& c, const Field& f) {
                    try {
                      (c.task.*member).family = parse_family(f.text());
                    } catch (const DomainError& e) {
                      f.fail(e.what());
                    }
                  },
                  [member](const RunConfig& c) { return family_name((c.task.*member).family); }});
  keys.push_back({prefix + ".seed", [member](RunConfig& c, const Field& f) { (c.task.*member).seed = f.count(); },
                  [member](const RunConfig& c) { return std::to_string((c.task.*member).seed); }});
  keys.push_back({prefix + ".variant_seed",
                  [member](RunConfig& c, const Field& f) { (c.task.*member).variant_seed = f.count(); },
                  [member](const RunConfig& c) { return std::to_string((c.task.*member).variant_seed); }});
  keys.push_back({prefix + ".separation",
                  [member](RunConfig& c, const Field& f) { (c.task.*member).separation = f.nonnegative(); },
                  [member](const RunConfig& c) { return format_short((c.task.*member).separation); }});
  keys.push_back({prefix + ".noise", [member](RunConfig& c, const Field& f) { (c.task.*member).noise = f.nonnegative(); },
                  [member](const RunConfig& c) { return format_short((c.task.*member).noise); }});
  keys.push_back({prefix + ".shift", [member](RunConfig& c, const Field& f) { (c.task.*member).shift = f.real(); },
                  [member](const RunConfig& c) { return format_short((c.task.*member).shift); }});
}

inline const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = [] {
    std::vector<KeySpec> k;
    auto both = [](RunConfig& c, auto fn) {
      fn(c.task.old_task);
      fn(c.task.new_task);
    };
    k.push_back({"task.classes",
                 [both](RunConfig& c, const Field& f) {
                   const auto v = f.count(2);
                   both(c, [&](GeneratorSpec& g) { g.classes = v; });
                 },
                 [](const RunConfig& c) { return std::to_string(c.task.old_task.classes); }});
    k.push_back({"task.features",
                 [both](RunConfig& c, const Field& f) {
                   const auto v = f.count(1);
                   both(c, [&](GeneratorSpec& g) { g.features = v; });
                 },
                 [](const RunConfig& c) { return std::to_string(c.task.old_task.features); }});
    k.push_back({"task.seq_length",
                 [both](RunConfig& c, const Field& f) {
                   const auto v = f.count(1);
                   both(c, [&](GeneratorSpec& g) { g.seq_length = v; });
                 },
                 [](const RunConfig& c) { return std::to_string(c.task.old_task.seq_length); }});
    add_generator_keys(k, "task.old", &TaskPair::old_task);
    add_generator_keys(k, "task.new", &TaskPair::new_task);
    auto size_key = [&](const std::string& name, std::size_t TaskPair::*m) {
      k.push_back({name, [m](RunConfig& c, const Field& f) { c.task.*m = f.count(1); },
                   [m](const RunConfig& c) { return std::to_string(c.task.*m); }});
    };
    size_key("task.old_train_size", &TaskPair::old_train_size);
    size_key("task.old_holdout_size", &TaskPair::old_holdout_size);
    size_key("task.train_size", &TaskPair::train_size);
    size_key("task.new_eval_size", &TaskPair::new_eval_size);
    k.push_back({"task.data_seed", [](RunConfig& c, const Field& f) { c.task.data_seed = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.task.data_seed); }});

    k.push_back({"model.arch",
                 [](RunConfig& c, const Field& f) {
                   const auto v = f.text();
                   if (v == "linear_softmax") c.arch = ArchKind::linear_softmax;
                   else if (v == "mlp2") c.arch = ArchKind::mlp2;
                   else if (v == "seq_linear") c.arch = ArchKind::seq_linear;
                   else f.fail("expected linear_softmax, mlp2 or seq_linear");
                 },
                 [](const RunConfig& c) { return arch_kind_name(c.arch); }});
    k.push_back({"model.hidden", [](RunConfig& c, const Field& f) { c.hidden = f.count(1); },
                 [](const RunConfig& c) { return std::to_string(c.hidden); }});
    k.push_back({"model.context", [](RunConfig& c, const Field& f) { c.context = f.count(1); },
                 [](const RunConfig& c) { return std::to_string(c.context); }});
    k.push_back({"model.init_seed", [](RunConfig& c, const Field& f) { c.init_seed = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.init_seed); }});
    k.push_back({"model.init_scale", [](RunConfig& c, const Field& f) { c.init_scale = f.nonnegative(); },
                 [](const RunConfig& c) { return format_short(c.init_scale); }});

    k.push_back({"pretrain.lr", [](RunConfig& c, const Field& f) { c.pretrain_lr = f.nonnegative(); },
                 [](const RunConfig& c) { return format_short(c.pretrain_lr); }});
    k.push_back({"pretrain.steps", [](RunConfig& c, const Field& f) { c.pretrain_steps = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.pretrain_steps); }});
    k.push_back({"pretrain.batch_size", [](RunConfig& c, const Field& f) { c.pretrain_batch_size = f.count(1); },
                 [](const RunConfig& c) { return std::to_string(c.pretrain_batch_size); }});
    k.push_back({"pretrain.seed", [](RunConfig& c, const Field& f) { c.pretrain_seed = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.pretrain_seed); }});
    k.push_back({"pretrain.grad_clip_max_norm",
                 [](RunConfig& c, const Field& f) {
                   if (f.text() == "none") c.pretrain_clip.reset();
                   else c.pretrain_clip = f.positive();
                 },
                 [](const RunConfig& c) { return clip_text(c.pretrain_clip); }});

    k.push_back({"schedule.kind",
                 [](RunConfig& c, const Field& f) {
                   const auto v = f.text();
                   if (v != "finch" && v != "constant" && v != "fixed_small" && v != "warmup_cosine")
                     f.fail("expected finch, constant, fixed_small or warmup_cosine");
                   c.schedule.kind = v;
                 },
                 [](const RunConfig& c) { return c.schedule.kind; }});
    k.push_back({"schedule.lr", [](RunConfig& c, const Field& f) { c.schedule.lr = f.nonnegative(); },
                 [](const RunConfig& c) { return format_short(c.schedule.lr); }});
    k.push_back({"schedule.eta_base", [](RunConfig& c, const Field& f) { c.schedule.eta_base = f.positive(); },
                 [](const RunConfig& c) { return format_short(c.schedule.eta_base); }});
    k.push_back({"schedule.eta_max", [](RunConfig& c, const Field& f) { c.schedule.eta_max = f.positive(); },
                 [](const RunConfig& c) { return format_short(c.schedule.eta_max); }});
    k.push_back({"schedule.epsilon", [](RunConfig& c, const Field& f) { c.schedule.epsilon = f.positive(); },
                 [](const RunConfig& c) { return format_short(c.schedule.epsilon); }});
    k.push_back({"schedule.alpha",
                 [](RunConfig& c, const Field& f) {
                   const double v = f.real();
                   if (!(v > 0.0 && v < 1.0)) f.fail("must lie in (0, 1)");
                   c.schedule.alpha = v;
                 },
                 [](const RunConfig& c) { return format_short(c.schedule.alpha); }});
    k.push_back({"schedule.peak_lr", [](RunConfig& c, const Field& f) { c.schedule.peak_lr = f.positive(); },
                 [](const RunConfig& c) { return format_short(c.schedule.peak_lr); }});
    k.push_back({"schedule.warmup_frac",
                 [](RunConfig& c, const Field& f) {
                   const double v = f.real();
                   if (!(v >= 0.0 && v < 1.0)) f.fail("must lie in [0, 1)");
                   c.schedule.warmup_frac = v;
                 },
                 [](const RunConfig& c) { return format_short(c.schedule.warmup_frac); }});
    k.push_back({"schedule.total_steps", [](RunConfig& c, const Field& f) { c.schedule.total_steps = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.schedule.total_steps); }});

    k.push_back({"train.steps", [](RunConfig& c, const Field& f) { c.steps = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.steps); }});
    k.push_back({"train.batch_size", [](RunConfig& c, const Field& f) { c.batch_size = f.count(1); },
                 [](const RunConfig& c) { return std::to_string(c.batch_size); }});
    k.push_back({"train.grad_clip_max_norm",
                 [](RunConfig& c, const Field& f) {
                   if (f.text() == "none") c.grad_clip_max_norm.reset();
                   else c.grad_clip_max_norm = f.positive();
                 },
                 [](const RunConfig& c) { return clip_text(c.grad_clip_max_norm); }});
    k.push_back({"train.l2_to_init", [](RunConfig& c, const Field& f) { c.l2_to_init = f.boolean(); },
                 [](const RunConfig& c) { return std::string(c.l2_to_init ? "true" : "false"); }});
    k.push_back({"train.l2_to_init_lambda", [](RunConfig& c, const Field& f) { c.l2_to_init_lambda = f.nonnegative(); },
                 [](const RunConfig& c) { return format_short(c.l2_to_init_lambda); }});
    k.push_back({"train.seed", [](RunConfig& c, const Field& f) { c.train_seed = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.train_seed); }});
    k.push_back({"train.eval_every", [](RunConfig& c, const Field& f) { c.eval_every = f.count(1); },
                 [](const RunConfig& c) { return std::to_string(c.eval_every); }});
    k.push_back({"train.checkpoint_stride", [](RunConfig& c, const Field& f) { c.checkpoint_stride = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.checkpoint_stride); }});

    k.push_back({"verify.enabled", [](RunConfig& c, const Field& f) { c.verify.enabled = f.boolean(); },
                 [](const RunConfig& c) { return std::string(c.verify.enabled ? "true" : "false"); }});
    k.push_back({"verify.interior_points",
                 [](RunConfig& c, const Field& f) { c.verify.probes.interior_points = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.verify.probes.interior_points); }});
    k.push_back({"verify.hessian_max_points",
                 [](RunConfig& c, const Field& f) { c.verify.probes.hessian_max_points = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.verify.probes.hessian_max_points); }});
    k.push_back({"verify.hessian_max_inputs",
                 [](RunConfig& c, const Field& f) { c.verify.probes.hessian_max_inputs = f.count(); },
                 [](const RunConfig& c) { return std::to_string(c.verify.probes.hessian_max_inputs); }});
    k.push_back({"verify.corollary_ratio",
                 [](RunConfig& c, const Field& f) {
                   const double v = f.real();
                   if (!(v >= 1.0)) f.fail("must be >= 1");
                   c.verify.corollary.ratio_limit = v;
                 },
                 [](const RunConfig& c) { return format_short(c.verify.corollary.ratio_limit); }});

    k.push_back({"output.dir", [](RunConfig& c, const Field& f) { c.output_dir = f.text(); },
                 [](const RunConfig& c) { return c.output_dir; }});
    return k;
  }();
  return table;
}

}  // namespace detail

/// Cross-field checks that a single key cannot express. Messages name keys.
inline void validate(const RunConfig& c) {
  try {
    validate(c.task);
  } catch (const DomainError& e) {
    throw DomainError(std::string("task: ") + e.what());
  }
  const bool seq_task = c.task.new_task.family == TaskFamily::seq_bigram_shift;
  if (seq_task != (c.arch == ArchKind::seq_linear))
    throw DomainError("model.arch: seq_linear goes with task family seq_bigram_shift and only with it");
  if (c.schedule.kind == "warmup_cosine" && c.schedule.total_steps != 0 && c.schedule.total_steps < c.steps)
    throw DomainError("schedule.total_steps: shorter than train.steps");
  if ((c.schedule.kind == "fixed_small") && !(c.schedule.lr > 0.0))
    throw DomainError("schedule.lr: fixed_small needs a positive rate");
  if (c.schedule.kind == "warmup_cosine" && c.steps == 0 && c.schedule.total_steps == 0)
    throw DomainError("schedule.total_steps: needed when train.steps is 0");
  if (c.l2_to_init && c.checkpoint_stride != 1 && c.verify.enabled)
    throw DomainError("train.checkpoint_stride: must be 1 when train.l2_to_init is on and verification is enabled");
  if (c.verify.enabled && (c.checkpoint_stride == 0 || c.checkpoint_stride > 10))
    throw DomainError("train.checkpoint_stride: verification needs a stride between 1 and 10");
  try {
    validate(c.train_config());
    validate(c.pretrain_config());
  } catch (const DomainError& e) {
    throw DomainError(std::string("schedule: ") + e.what());
  }
}

/// Parses on top of `base`. Throws ParseError with 1-based line and column.
inline RunConfig parse_config(std::string_view text, RunConfig base = reference_config()) {
  const auto& table = detail::key_table();
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view raw = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    std::string_view body = raw;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    if (trim(body).empty()) continue;
    const auto eq = body.find('=');
    const auto key_start = body.find_first_not_of(" \t") + 1;
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no, key_start);
    const auto key = trim(body.substr(0, eq));
    const auto value_part = body.substr(eq + 1);
    const auto value = trim(value_part);
    const auto lead = value_part.find_first_not_of(" \t");
    const std::size_t value_col = eq + 2 + (lead == std::string_view::npos ? 0 : lead);
    const auto it = std::find_if(table.begin(), table.end(), [&](const detail::KeySpec& k) { return k.key == key; });
    if (it == table.end()) throw ParseError("unknown key '" + std::string(key) + "'", line_no, key_start);
    if (const auto prev = seen.find(std::string(key)); prev != seen.end())
      throw ParseError("duplicate key '" + std::string(key) + "' (first set on line " + std::to_string(prev->second) + ")",
                       line_no, key_start);
    seen.emplace(std::string(key), line_no);
    if (value.empty() && key != "output.dir") throw ParseError(std::string(key) + ": missing value", line_no, value_col);
    const detail::KeyValue kv{key, value, line_no, value_col};
    it->set(base, detail::Field(kv));
  }
  return base;
}

/// Every key in canonical order; parse_config(render_config(c)) == c.
inline std::string render_config(const RunConfig& c) {
  std::ostringstream out;
  std::string section;
  for (const auto& k : detail::key_table()) {
    const auto s = k.key.substr(0, k.key.find('.'));
    if (s != section) {
      if (!section.empty()) out << '\n';
      section = s;
    }
    out << k.key << " = " << k.get(c) << '\n';
  }
  return out.str();
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : detail::key_table()) out.push_back(k.key);
  return out;
}

}  // namespace finch
