// finch_lab: run, verify, gradcheck, sweep and compare continual fine-tuning
// experiments.
//
// Exit codes
//   0  success, no violations
//   1  bound violations found, or gradient check failed
//   2  usage or config error, task mismatch, missing or unusable artifacts,
//      refusal to overwrite a non-empty output directory
//   3  a training run diverged

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "finch/finch.hpp"

namespace fs = std::filesystem;
using namespace finch;

namespace {

enum Exit { kOk = 0, kViolation = 1, kUsage = 2, kDiverged = 3 };

constexpr const char* kOutputRootEnv = "FINCH_LAB_OUT";

/// Recoverable CLI failure carrying its exit code.
struct CliFailure {
  int code;
  std::string message;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CliFailure{kUsage, "cannot read " + p.string()};
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig load_config(const std::string& path, std::optional<unsigned long long> seed) {
  RunConfig cfg = reference_config();
  if (!path.empty()) {
    try {
      cfg = parse_config(read_text(path));
    } catch (const ParseError& e) {
      throw CliFailure{kUsage, path + ": " + e.what()};
    }
  }
  if (seed) cfg.train_seed = *seed;
  try {
    validate(cfg);
  } catch (const DomainError& e) {
    throw CliFailure{kUsage, (path.empty() ? std::string("config") : path) + ": " + e.what()};
  }
  return cfg;
}

/// --out, then output.dir, then $FINCH_LAB_OUT/<name>, then runs/<name>.
fs::path resolve_out(const std::string& flag, const RunConfig& cfg, const std::string& config_path,
                     const std::string& fallback_name) {
  if (!flag.empty()) return flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const std::string name = config_path.empty() ? fallback_name : fs::path(config_path).stem().string();
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / name;
  return fs::path("runs") / name;
}

/// Creates `dir`, refusing a non-empty one unless `overwrite`.
void prepare_dir(const fs::path& dir, bool overwrite) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir)) throw CliFailure{kUsage, dir.string() + " exists and is not a directory"};
    if (!fs::is_empty(dir)) {
      if (!overwrite)
        throw CliFailure{kUsage, dir.string() + " is not empty; pass --overwrite to replace its contents"};
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir, ec);
  if (ec) throw CliFailure{kUsage, "cannot create " + dir.string() + ": " + ec.message()};
}

struct RunOutcome {
  RunResult result;
  std::optional<Verification> verification;
};

RunOutcome execute(const RunConfig& cfg) {
  const TaskData data = make_task_data(cfg.task);
  const ModelParams theta0 = pretrain(data, cfg.model_spec(), cfg.pretrain_config());
  RunOutcome out{finetune(theta0, data, cfg.train_config()), std::nullopt};
  if (cfg.verify.enabled) {
    out.verification = verify_trajectory(out.result.trajectory, data, cfg.verify);
    annotate_bounds(out.result.trajectory, out.verification->constants);
  }
  return out;
}

void print_verification(std::ostream& os, const Verification& v) {
  os << "bound check: " << v.report.steps.size() << " steps, " << v.report.violating_steps.size()
     << " violations, min slack " << format_double(v.report.min_slack) << '\n'
     << "grad-vs-loss check: " << v.grad_loss_violations << " violations, max |g|/(M sqrt(2L)) "
     << format_double(v.report.pinsker_max_ratio) << '\n'
     << "constants: M_train " << format_double(v.constants.M_train) << ", G " << format_double(v.constants.G)
     << ", H " << format_double(v.constants.H) << (v.constants.reliable ? "" : " (unreliable)") << '\n';
  if (v.corollary) {
    os << "cumulative check: " << verdict_name(v.corollary->verdict) << ", total slack "
       << format_double(v.corollary->total_slack) << ", leading-term ratio " << format_double(v.corollary->leading_ratio)
       << " (ema " << format_double(v.corollary->leading_ratio_ema) << ")";
    if (!v.corollary->note.empty()) os << ", " << v.corollary->note;
    os << '\n';
  }
  for (const auto s : v.report.violating_steps) os << "  violating step " << s << '\n';
}

int cmd_run(const std::string& config_path, const std::string& out_flag, std::optional<unsigned long long> seed,
            bool overwrite) {
  const RunConfig cfg = load_config(config_path, seed);
  const fs::path dir = resolve_out(out_flag, cfg, config_path, "reference");
  prepare_dir(dir, overwrite);
  std::optional<RunOutcome> outcome;
  try {
    outcome = execute(cfg);
  } catch (const DivergenceError& e) {
    std::cerr << "run diverged: " << e.what() << " (last good step " << e.last_good_step() << ")\n";
    return kDiverged;
  }
  const RunOutcome& o = *outcome;
  write_run(dir, cfg, o.result, o.verification);
  std::cout << "run written to " << dir.string() << '\n'
            << "final new-task loss " << format_double(o.result.final_new_loss()) << ", accuracy "
            << format_double(o.result.final_new_accuracy()) << '\n'
            << "cumulative forgetting " << format_double(o.result.cumulative_forgetting) << '\n';
  if (o.verification) {
    print_verification(std::cout, *o.verification);
    if (!o.verification->passed()) return kViolation;
  }
  return kOk;
}

int cmd_verify(const std::string& run_dir) {
  LoadedRun run;
  try {
    run = load_run(run_dir, true);
  } catch (const ArtifactError& e) {
    throw CliFailure{kUsage, e.what()};
  } catch (const ParseError& e) {
    throw CliFailure{kUsage, run_dir + ": " + e.what()};
  }
  const TaskData data = make_task_data(run.config.task);
  const Verification v = verify_trajectory(run.trajectory, data, run.config.verify);
  write_verification(run_dir, v);
  print_verification(std::cout, v);
  return v.passed() ? kOk : kViolation;
}

int cmd_gradcheck(std::size_t cases, unsigned long long seed) {
  GradCheckOptions opt;
  opt.cases = cases;
  opt.seed = seed;
  bool ok = true;
  for (const auto& arch : gradcheck_architectures()) {
    const auto r = gradient_check(arch, opt);
    std::cout << r.arch << ": " << r.cases << " cases, max relative error " << format_double(r.max_rel_error) << ", "
              << r.failures << " above " << format_short(opt.tolerance) << '\n';
    ok = ok && r.failures == 0;
  }
  return ok ? kOk : kViolation;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto v = parse_double(trim(tok));
    if (!v || !std::isfinite(*v)) throw CliFailure{kUsage, "malformed grid value '" + tok + "'"};
    out.push_back(*v);
  }
  if (out.empty()) throw CliFailure{kUsage, "empty grid"};
  return out;
}

int cmd_sweep(const std::string& config_path, const std::string& out_flag, std::optional<unsigned long long> seed,
              bool overwrite, std::string param, const std::string& grid_text) {
  const RunConfig base = load_config(config_path, seed);
  if (param.empty()) param = base.schedule.kind == "finch" ? "eta_base" : "lr";
  if (param != "eta_base" && param != "lr" && param != "batch_size")
    throw CliFailure{kUsage, "--param must be eta_base, lr or batch_size"};
  if (param == "eta_base" && base.schedule.kind != "finch")
    throw CliFailure{kUsage, "--param eta_base needs schedule.kind = finch"};
  if (param == "lr" && base.schedule.kind == "finch")
    throw CliFailure{kUsage, "--param lr does not apply to schedule.kind = finch; use eta_base"};

  std::vector<double> grid;
  std::set<double> seen;
  for (const double v : parse_grid(grid_text)) {
    if (!seen.insert(v).second) {
      std::cerr << "warning: duplicate grid point " << format_short(v) << " ignored\n";
      continue;
    }
    grid.push_back(v);
  }

  const fs::path dir = resolve_out(out_flag, base, config_path, "sweep");
  prepare_dir(dir, overwrite);
  ComparisonSummary summary;
  bool any_violation = false;
  bool any_diverged = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = grid[i];
    const std::string label = param + "=" + format_short(v);
    SummaryRow row;
    row.label = label;
    row.schedule = base.schedule.kind;
    RunConfig cfg = base;
    try {
      if (param == "eta_base") {
        cfg.schedule.eta_base = v;
      } else if (param == "lr") {
        (cfg.schedule.kind == "warmup_cosine" ? cfg.schedule.peak_lr : cfg.schedule.lr) = v;
      } else {
        if (!(v >= 1.0) || v != std::floor(v)) throw DomainError("batch_size grid values must be positive integers");
        cfg.batch_size = static_cast<std::size_t>(v);
      }
      if (param != "batch_size" && !(v > 0.0)) throw DomainError(param + " must be positive");
      validate(cfg);
      std::ostringstream name;
      name << (i < 10 ? "0" : "") << i << '_' << label;
      const fs::path child = dir / name.str();
      fs::create_directories(child);
      const RunOutcome o = execute(cfg);
      write_run(child, cfg, o.result, o.verification);
      row.final_new_loss = o.result.final_new_loss();
      row.final_new_accuracy = o.result.final_new_accuracy();
      row.cumulative_forgetting = o.result.cumulative_forgetting;
      row.clamp_active_fraction = o.result.clamp_active_fraction();
      if (o.verification) {
        row.min_slack = o.verification->report.min_slack;
        if (!o.verification->passed()) {
          row.status = "violations";
          any_violation = true;
        }
      }
    } catch (const DivergenceError& e) {
      row.status = std::string("diverged: ") + e.what();
      any_diverged = true;
    } catch (const DomainError& e) {
      row.status = std::string("invalid: ") + e.what();
    }
    std::cerr << label << ": " << row.status << '\n';
    summary.rows.push_back(row);
  }
  mark_pareto(summary);
  sort_by_new_task(summary);
  std::ostringstream csv;
  write_summary_csv(csv, summary);
  std::ofstream(dir / "sweep_summary.csv", std::ios::binary) << csv.str();
  std::cout << csv.str();
  bool any_invalid = false;
  for (const auto& r : summary.rows) any_invalid = any_invalid || r.status.rfind("invalid", 0) == 0;
  if (any_invalid) return kUsage;
  if (any_violation) return kViolation;
  if (any_diverged) return kDiverged;
  return kOk;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out_flag, bool overwrite) {
  if (dirs.size() < 2) throw CliFailure{kUsage, "compare needs at least two run directories"};
  std::vector<LoadedRun> runs;
  for (const auto& d : dirs) {
    try {
      runs.push_back(load_run(d, false));
    } catch (const ArtifactError& e) {
      throw CliFailure{kUsage, e.what()};
    } catch (const ParseError& e) {
      throw CliFailure{kUsage, d + ": " + e.what()};
    }
  }
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (!(runs[i].config.task == runs[0].config.task))
      throw CliFailure{kUsage, "task mismatch: " + dirs[i] + " was run on a different task pair than " + dirs[0]};
  }
  ComparisonSummary summary;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::string label = fs::path(dirs[i]).lexically_normal().filename().string();
    if (label.empty()) label = fs::path(dirs[i]).lexically_normal().parent_path().filename().string();
    summary.rows.push_back(summary_row(label, runs[i]));
  }
  mark_pareto(summary);
  std::ostringstream csv;
  write_summary_csv(csv, summary);
  if (!out_flag.empty()) {
    prepare_dir(out_flag, overwrite);
    std::ofstream(fs::path(out_flag) / "comparison.csv", std::ios::binary) << csv.str();
  }
  std::cout << csv.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual fine-tuning lab for the loss-adaptive learning-rate schedule"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 ok, 1 violations, 2 usage/config/artifact error, 3 divergence.\n"
             "Default output root: $" + std::string(kOutputRootEnv) + " (else ./runs).");

  std::string config_path, out_dir, grid = "5e-6,1e-5,2e-5,3e-5,5e-5,1e-4", param, run_dir;
  std::optional<unsigned long long> seed;
  bool overwrite = false;
  std::size_t cases = 100;
  unsigned long long gc_seed = 2024;
  std::vector<std::string> compare_dirs;

  auto* run = app.add_subcommand("run", "pretrain, fine-tune, and (by default) certify the bounds");
  run->add_option("--config", config_path, "config file (default: the bundled reference task)");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--seed", seed, "override train.seed");
  run->add_flag("--overwrite", overwrite, "replace the contents of a non-empty output directory");

  auto* verify = app.add_subcommand("verify", "re-certify the bounds of a finished run directory");
  verify->add_option("run_dir", run_dir, "run directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  gradcheck->add_option("--cases", cases, "random cases per architecture")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", gc_seed, "random seed");

  auto* sweep = app.add_subcommand("sweep", "one run per grid point, merged summary");
  sweep->add_option("--config", config_path, "base config file");
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--seed", seed, "override train.seed");
  sweep->add_flag("--overwrite", overwrite, "replace the contents of a non-empty output directory");
  sweep->add_option("--param", param, "eta_base, lr or batch_size (default: the schedule's rate)");
  sweep->add_option("--grid", grid, "comma-separated values")->capture_default_str();

  auto* compare = app.add_subcommand("compare", "merge finished runs into a summary with Pareto flags");
  compare->add_option("run_dirs", compare_dirs, "run directories")->required()->expected(2, -1);
  compare->add_option("--out", out_dir, "directory for comparison.csv");
  compare->add_flag("--overwrite", overwrite, "replace the contents of a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, seed, overwrite);
    if (verify->parsed()) return cmd_verify(run_dir);
    if (gradcheck->parsed()) return cmd_gradcheck(cases, gc_seed);
    if (sweep->parsed()) return cmd_sweep(config_path, out_dir, seed, overwrite, param, grid);
    if (compare->parsed()) return cmd_compare(compare_dirs, out_dir, overwrite);
  } catch (const CliFailure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.code;
  } catch (const ArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "run diverged: " << e.what() << '\n';
    return kDiverged;
  }
  return kUsage;
}
