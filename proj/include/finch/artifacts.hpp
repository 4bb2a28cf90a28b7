#pragma once

// Run directory layout (all text, LF line endings):
//   config.cfg          effective configuration, every key
//   steps.csv           per-step log
//   checkpoints.txt     parameter dumps at the checkpoint stride
//   new_eval.csv        step,loss,accuracy on the new-task evaluation set
//   summary.txt         "finch-run v1" then key=value lines
//   bound_report.csv    per-step certification (after verification)
//   bound_summary.txt   constants, probe metadata, violations

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "finch/config.hpp"
#include "finch/errors.hpp"
#include "finch/format.hpp"
#include "finch/lab.hpp"
#include "finch/summary.hpp"
#include "finch/verifier.hpp"

namespace finch {

/// A run directory is missing a file or holds one that cannot be used.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace files {
inline constexpr const char* config = "config.cfg";
inline constexpr const char* steps = "steps.csv";
inline constexpr const char* checkpoints = "checkpoints.txt";
inline constexpr const char* new_eval = "new_eval.csv";
inline constexpr const char* summary = "summary.txt";
inline constexpr const char* bound_report = "bound_report.csv";
inline constexpr const char* bound_summary = "bound_summary.txt";
}  // namespace files

struct Verification {
  BoundConstants constants;
  BoundReport report;
  std::vector<GradLossCheck> grad_loss;
  std::size_t grad_loss_violations = 0;
  std::optional<CorollaryReport> corollary;

  bool passed() const { return report.passed() && grad_loss_violations == 0; }
};

/// Estimates constants and runs every trajectory-level check.
inline Verification verify_trajectory(const Trajectory& traj, const TaskData& data, const VerifyConfig& cfg) {
  Verification v;
  v.constants = estimate_constants(traj, data, cfg.probes);
  v.report = check_step_bound(traj, v.constants, data.old_holdout);
  v.grad_loss = check_grad_loss_bound(traj, v.constants);
  for (const auto& g : v.grad_loss)
    if (!g.ok) ++v.grad_loss_violations;
  if (std::holds_alternative<FinchConfig>(traj.schedule)) v.corollary = check_corollary(traj, v.constants, cfg.corollary);
  return v;
}

struct RunSummaryFile {
  std::map<std::string, std::string> values;

  double real(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) throw ArtifactError("summary.txt lacks '" + key + "'");
    const auto v = parse_double(it->second);
    if (!v) throw ArtifactError("summary.txt: malformed value for '" + key + "'");
    return *v;
  }
  std::string text(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) throw ArtifactError("summary.txt lacks '" + key + "'");
    return it->second;
  }
};

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write " + p.string());
  out << content;
  if (!out) throw ArtifactError("failed writing " + p.string());
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ArtifactError("missing " + p.filename().string() + " in " + p.parent_path().string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace detail

inline std::string render_run_summary(const RunResult& r, const std::optional<Verification>& v) {
  std::ostringstream s;
  s << "finch-run v1\n"
    << "schedule=" << schedule_kind(r.config.schedule) << '\n'
    << "steps=" << r.records().size() << '\n'
    << "initial_old_loss=" << format_double(r.trajectory.initial_old_loss) << '\n'
    << "final_old_loss=" << format_double(r.trajectory.final_old_loss) << '\n'
    << "cumulative_forgetting=" << format_double(r.cumulative_forgetting) << '\n'
    << "initial_old_accuracy=" << format_double(r.initial_old_accuracy) << '\n'
    << "final_old_accuracy=" << format_double(r.final_old_accuracy) << '\n'
    << "final_new_loss=" << format_double(r.final_new_loss()) << '\n'
    << "final_new_accuracy=" << format_double(r.final_new_accuracy()) << '\n'
    << "clamp_active_fraction=" << format_double(r.clamp_active_fraction()) << '\n';
  if (v) {
    s << "verified=yes\n"
      << "violations=" << v->report.violating_steps.size() + v->grad_loss_violations << '\n'
      << "min_slack=" << format_double(v->report.min_slack) << '\n';
  } else {
    s << "verified=no\n";
  }
  return s.str();
}

inline RunSummaryFile parse_run_summary(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "finch-run v1") throw ArtifactError("summary.txt: missing 'finch-run v1' header");
  RunSummaryFile f;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ArtifactError("summary.txt: malformed line '" + line + "'");
    f.values[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return f;
}

inline void write_verification(const std::filesystem::path& dir, const Verification& v) {
  std::ostringstream csv;
  write_bound_csv(csv, v.report);
  detail::write_file(dir / files::bound_report, csv.str());
  std::ostringstream sum;
  write_bound_summary(sum, v.report, v.constants);
  sum << "grad_loss_violations=" << v.grad_loss_violations << '\n';
  if (v.corollary) write_corollary_summary(sum, *v.corollary);
  detail::write_file(dir / files::bound_summary, sum.str());
}

/// Writes every run artifact into an existing directory.
inline void write_run(const std::filesystem::path& dir, const RunConfig& cfg, const RunResult& r,
                      const std::optional<Verification>& v) {
  detail::write_file(dir / files::config, render_config(cfg));
  std::ostringstream steps;
  write_step_csv(steps, r.records());
  detail::write_file(dir / files::steps, steps.str());
  std::ostringstream cps;
  write_checkpoints(cps, r.trajectory.arch, r.trajectory.checkpoints);
  detail::write_file(dir / files::checkpoints, cps.str());
  std::ostringstream ev;
  ev << "step,loss,accuracy\n";
  for (const auto& e : r.new_eval) ev << e.step << ',' << format_double(e.loss) << ',' << format_double(e.accuracy) << '\n';
  detail::write_file(dir / files::new_eval, ev.str());
  detail::write_file(dir / files::summary, render_run_summary(r, v));
  if (v) write_verification(dir, *v);
}

struct LoadedRun {
  RunConfig config;
  Trajectory trajectory;
  RunSummaryFile summary;
};

/// Reassembles a trajectory from a run directory. Checkpoints are optional
/// here; the caller decides whether their absence is fatal.
inline LoadedRun load_run(const std::filesystem::path& dir, bool require_checkpoints) {
  if (!std::filesystem::is_directory(dir)) throw ArtifactError("not a run directory: " + dir.string());
  LoadedRun out;
  out.config = parse_config(detail::read_file(dir / files::config));
  out.summary = parse_run_summary(detail::read_file(dir / files::summary));
  std::istringstream steps(detail::read_file(dir / files::steps));
  Trajectory& t = out.trajectory;
  t.records = read_step_csv(steps);
  t.arch = out.config.model_spec().arch;
  t.schedule = out.config.schedule_spec();
  t.grad_clip_max_norm = out.config.grad_clip_max_norm;
  t.l2_to_init_lambda = out.config.train_config().l2_to_init_lambda;
  t.initial_old_loss = out.summary.real("initial_old_loss");
  t.final_old_loss = out.summary.real("final_old_loss");
  const auto cp_path = dir / files::checkpoints;
  if (std::filesystem::exists(cp_path)) {
    std::istringstream cps(detail::read_file(cp_path));
    auto file = read_checkpoints(cps);
    if (file.arch != t.arch) throw ArtifactError("checkpoint architecture does not match config.cfg");
    t.checkpoints = std::move(file.checkpoints);
  }
  if (require_checkpoints) {
    if (!t.checkpoint_at(0)) throw ArtifactError("checkpoints.txt lacks the initial checkpoint");
    for (std::size_t i = 0; i < t.records.size(); i += 10) {
      // Every window of 10 steps must contain a checkpoint.
      bool any = false;
      for (std::size_t j = i + 1; j <= std::min(i + 10, t.records.size()); ++j) any = any || t.checkpoint_at(j);
      if (!any) throw ArtifactError("checkpoints.txt has no checkpoint within 10 steps after step " + std::to_string(i));
    }
  }
  return out;
}

inline SummaryRow summary_row(const std::string& label, const LoadedRun& run) {
  SummaryRow r;
  r.label = label;
  r.schedule = run.summary.text("schedule");
  r.final_new_loss = run.summary.real("final_new_loss");
  r.final_new_accuracy = run.summary.real("final_new_accuracy");
  r.cumulative_forgetting = run.summary.real("cumulative_forgetting");
  r.clamp_active_fraction = run.summary.real("clamp_active_fraction");
  if (run.summary.text("verified") == "yes") r.min_slack = run.summary.real("min_slack");
  return r;
}

}  // namespace finch
