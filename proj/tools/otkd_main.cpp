// Command-line front end for the otkd shared library. Uses the C API only.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "otkd/otkd.h"

namespace {

// spec'd exit codes: 0 ok, 2 schema/input error, 3 kind mismatch,
// 4 non-convergence under --strict, 5 oracle size cap, 6 unwritable output
int exit_code_for(otkd_status status) {
  switch (status) {
    case OTKD_OK: return 0;
    case OTKD_ERR_PARSE:
    case OTKD_ERR_INVALID_INPUT:
    case OTKD_ERR_EMPTY_DISTRIBUTION: return 2;
    case OTKD_ERR_KIND_MISMATCH: return 3;
    case OTKD_ERR_UNSUPPORTED_SIZE: return 5;
    case OTKD_ERR_IO: return 6;
    default: return 1;
  }
}

int fail(otkd_status status) {
  std::fprintf(stderr, "error: %s\n", otkd_last_error());
  return exit_code_for(status);
}

struct PredictionsDeleter {
  void operator()(otkd_predictions* p) const { otkd_predictions_free(p); }
};
using PredictionsPtr = std::unique_ptr<otkd_predictions, PredictionsDeleter>;

struct StringDeleter {
  void operator()(char* s) const { otkd_string_free(s); }
};
using StringPtr = std::unique_ptr<char, StringDeleter>;

otkd_status load(const std::string& path, PredictionsPtr& out) {
  otkd_predictions* raw = nullptr;
  const otkd_status status = otkd_predictions_from_file(path.c_str(), &raw);
  out.reset(raw);
  return status;
}

otkd_loss_kind parse_loss_kind(const std::string& name) {
  if (name == "naive") return OTKD_LOSS_NAIVE;
  if (name == "ot-dense") return OTKD_LOSS_OT_DENSE;
  return OTKD_LOSS_OT_KEYPOINT;
}

struct LossFlags {
  std::string loss = "ot-keypoint";
  std::string preset;
  double epsilon = -1.0;
  double rho = -1.0;
  int p = 2;
  bool raw = false;
  bool no_anneal = false;
  int block = 8;
  int max_iter = -1;
  double tol = -1.0;
};

void add_loss_flags(CLI::App* cmd, LossFlags& flags) {
  cmd->add_option("--loss", flags.loss, "loss kind: naive, ot-keypoint or ot-dense")
      ->check(CLI::IsMember({"naive", "ot-keypoint", "ot-dense"}));
  cmd->add_option("--preset", flags.preset,
                  "hyperparameter preset: linemod-kp, occ-kp or zebrapose");
  cmd->add_option("--epsilon", flags.epsilon, "entropic scale");
  cmd->add_option("--rho", flags.rho, "marginal-relaxation scale");
  cmd->add_option("--p", flags.p, "ground-cost norm")->check(CLI::IsMember({1, 2}));
  cmd->add_flag("--raw", flags.raw, "disable debiasing (report the raw objective)");
  cmd->add_flag("--no-anneal", flags.no_anneal, "disable the epsilon-scaling schedule");
  cmd->add_option("--block", flags.block, "dense pooling size");
  cmd->add_option("--max-iter", flags.max_iter, "solver iteration budget");
  cmd->add_option("--solver-tol", flags.tol, "solver convergence tolerance");
}

// Preset first, then explicit flags override it.
otkd_status build_options(const LossFlags& flags, otkd_loss_options& opt, double* weight_out) {
  const otkd_loss_kind kind = parse_loss_kind(flags.loss);
  otkd_loss_options_init(&opt, kind);
  if (!flags.preset.empty()) {
    const otkd_status status = otkd_loss_options_preset(&opt, flags.preset.c_str(), weight_out);
    if (status != OTKD_OK) return status;
  }
  if (flags.epsilon > 0.0) opt.epsilon = flags.epsilon;
  if (flags.rho > 0.0) opt.rho = flags.rho;
  opt.p = flags.p;
  if (flags.raw) opt.debiased = 0;
  if (flags.no_anneal) opt.anneal = 0;
  opt.block = flags.block;
  if (flags.max_iter > 0) opt.max_iter = flags.max_iter;
  if (flags.tol > 0.0) opt.tol = flags.tol;
  return OTKD_OK;
}

void add_scenario_flags(CLI::App* cmd, otkd_scenario& scenario) {
  cmd->add_option("--seed", scenario.seed, "scenario seed");
  cmd->add_option("--n-teacher", scenario.n_teacher, "teacher cell count");
  cmd->add_option("--n-student", scenario.n_student, "student cell count");
  cmd->add_option("--sigma-teacher", scenario.sigma_teacher, "teacher vote spread");
  cmd->add_option("--sigma-student", scenario.sigma_student_init, "initial student spread");
  cmd->add_option("--outlier-fraction", scenario.outlier_fraction,
                  "fraction of low-score displaced teacher cells");
  cmd->add_option("--cell-overlap", scenario.cell_overlap,
                  "fraction of student cells on teacher grid positions");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transport-based distillation losses for local-prediction pose networks"};
  app.require_subcommand(1);

  // ---- loss ----
  auto* loss_cmd = app.add_subcommand("loss", "evaluate a distillation loss on two files");
  std::string student_path, teacher_path;
  LossFlags loss_flags;
  bool strict = false;
  loss_cmd->add_option("student", student_path, "student prediction file")->required();
  loss_cmd->add_option("teacher", teacher_path, "teacher prediction file")->required();
  add_loss_flags(loss_cmd, loss_flags);
  loss_cmd->add_flag("--strict", strict, "fail (exit 4) if a solve does not converge");

  // ---- oracle ----
  auto* oracle_cmd = app.add_subcommand("oracle", "reference solvers on small instances");
  std::string oracle_a, oracle_b, oracle_mode = "balanced";
  int oracle_corner = 0;
  bool oracle_raw_weights = false;
  LossFlags oracle_flags;
  oracle_cmd->add_option("a", oracle_a, "first prediction file")->required();
  oracle_cmd->add_option("b", oracle_b, "second prediction file")->required();
  oracle_cmd->add_option("--mode", oracle_mode, "balanced (simplex) or primal (relaxed)")
      ->check(CLI::IsMember({"balanced", "primal"}));
  oracle_cmd->add_option("--corner", oracle_corner, "keypoint corner index");
  oracle_cmd->add_flag("--raw-weights", oracle_raw_weights,
                       "use scores as masses without unit normalization");
  add_loss_flags(oracle_cmd, oracle_flags);

  // ---- demo ----
  auto* demo_cmd = app.add_subcommand("demo", "synthetic distillation run, naive vs transport");
  otkd_scenario scenario;
  otkd_scenario_init(&scenario);
  otkd_train_options train;
  otkd_train_options_init(&train);
  std::string demo_out;
  bool timing = false;
  demo_cmd->add_option("--out", demo_out, "output directory")->required();
  add_scenario_flags(demo_cmd, scenario);
  demo_cmd->add_option("--steps", train.steps, "training steps");
  demo_cmd->add_option("--step-size", train.step_size, "descent step size");
  demo_cmd->add_option("--epsilon", train.epsilon, "training-loss entropic scale");
  demo_cmd->add_option("--rho", train.rho, "training-loss relaxation scale");
  demo_cmd->add_flag("--timing", timing,
                     "record real per-step wallclock (output is no longer byte-reproducible)");

  // ---- sweep ----
  auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter grid of training runs");
  otkd_scenario sweep_scenario;
  otkd_scenario_init(&sweep_scenario);
  otkd_train_options sweep_train;
  otkd_train_options_init(&sweep_train);
  sweep_train.steps = 200;
  std::vector<std::string> sweep_losses = {"naive", "ot-keypoint"};
  std::vector<double> sweep_eps = {1e-3, 1e-4};
  std::vector<double> sweep_rho = {0.1, 0.5, 10.0};
  std::vector<double> sweep_steps_sizes = {0.2};
  std::string sweep_out;
  add_scenario_flags(sweep_cmd, sweep_scenario);
  sweep_cmd->add_option("--loss", sweep_losses, "loss kinds to sweep")
      ->check(CLI::IsMember({"naive", "ot-keypoint"}));
  sweep_cmd->add_option("--eps", sweep_eps, "entropic scales to sweep");
  sweep_cmd->add_option("--rho", sweep_rho, "relaxation scales to sweep");
  sweep_cmd->add_option("--step-size", sweep_steps_sizes, "step sizes to sweep");
  sweep_cmd->add_option("--steps", sweep_train.steps, "training steps per run");
  sweep_cmd->add_option("--out", sweep_out, "write the CSV here instead of stdout");

  // ---- grad-check ----
  auto* grad_cmd = app.add_subcommand("grad-check", "analytic gradients vs central differences");
  std::string grad_student, grad_teacher;
  int grad_random = 0;
  unsigned long long grad_seed = 7;
  double grad_h = 1e-5;
  double grad_tol = 1e-4;
  double grad_floor = 1e-7;
  LossFlags grad_flags;
  grad_cmd->add_option("--student", grad_student, "student prediction file");
  grad_cmd->add_option("--teacher", grad_teacher, "teacher prediction file");
  grad_cmd->add_option("--random", grad_random, "check N seeded random instances instead");
  grad_cmd->add_option("--seed", grad_seed, "seed for --random");
  grad_cmd->add_option("--fd-step", grad_h, "finite-difference step");
  grad_cmd->add_option("--tol", grad_tol, "pass threshold on the max relative error");
  grad_cmd->add_option("--abs-floor", grad_floor, "ignore disagreements below this");
  add_loss_flags(grad_cmd, grad_flags);

  auto* version_cmd = app.add_subcommand("version", "print the library version");

  CLI11_PARSE(app, argc, argv);

  if (version_cmd->parsed()) {
    std::printf("otkd %s\n", otkd_version());
    return 0;
  }

  if (loss_cmd->parsed()) {
    PredictionsPtr student, teacher;
    otkd_status status = load(student_path, student);
    if (status != OTKD_OK) return fail(status);
    status = load(teacher_path, teacher);
    if (status != OTKD_OK) return fail(status);
    otkd_loss_options opt;
    status = build_options(loss_flags, opt, nullptr);
    if (status != OTKD_OK) return fail(status);

    char* report = nullptr;
    int converged = 1;
    status = otkd_loss_eval(student.get(), teacher.get(), &opt, nullptr, &converged, &report);
    if (status != OTKD_OK) return fail(status);
    const StringPtr report_owner(report);
    std::fputs(report, stdout);
    if (strict && !converged) {
      std::fprintf(stderr, "error: solver did not converge within %d iterations\n",
                   opt.max_iter);
      return 4;
    }
    return 0;
  }

  if (oracle_cmd->parsed()) {
    PredictionsPtr a, b;
    otkd_status status = load(oracle_a, a);
    if (status != OTKD_OK) return fail(status);
    status = load(oracle_b, b);
    if (status != OTKD_OK) return fail(status);
    otkd_loss_options opt;
    status = build_options(oracle_flags, opt, nullptr);
    if (status != OTKD_OK) return fail(status);

    char* out = nullptr;
    status = otkd_oracle_eval(a.get(), b.get(), oracle_mode == "balanced" ? 0 : 1, &opt,
                              oracle_corner, oracle_raw_weights ? 1 : 0, &out);
    if (status != OTKD_OK) return fail(status);
    const StringPtr out_owner(out);
    std::fputs(out, stdout);
    return 0;
  }

  if (demo_cmd->parsed()) {
    train.timing = timing ? 1 : 0;
    char* summary = nullptr;
    const otkd_status status = otkd_demo_run(&scenario, &train, demo_out.c_str(), &summary);
    if (status != OTKD_OK) return fail(status);
    const StringPtr summary_owner(summary);
    std::fputs(summary, stdout);
    return 0;
  }

  if (sweep_cmd->parsed()) {
    std::vector<int> kinds;
    for (const auto& name : sweep_losses) kinds.push_back(parse_loss_kind(name));
    char* csv = nullptr;
    const otkd_status status = otkd_sweep_run(
        &sweep_scenario, &sweep_train, kinds.data(), static_cast<int>(kinds.size()),
        sweep_eps.data(), static_cast<int>(sweep_eps.size()), sweep_rho.data(),
        static_cast<int>(sweep_rho.size()), sweep_steps_sizes.data(),
        static_cast<int>(sweep_steps_sizes.size()), &csv);
    if (status != OTKD_OK) return fail(status);
    const StringPtr csv_owner(csv);
    if (sweep_out.empty()) {
      std::fputs(csv, stdout);
    } else {
      std::FILE* f = std::fopen(sweep_out.c_str(), "wb");
      if (!f) {
        std::fprintf(stderr, "error: cannot write '%s'\n", sweep_out.c_str());
        return 6;
      }
      std::fputs(csv, f);
      std::fclose(f);
    }
    return 0;
  }

  if (grad_cmd->parsed()) {
    otkd_loss_options opt;
    otkd_status status = build_options(grad_flags, opt, nullptr);
    if (status != OTKD_OK) return fail(status);

    double max_rel = 0.0;
    if (grad_random > 0) {
      status = otkd_grad_check_random(static_cast<otkd_loss_kind>(opt.loss_kind), grad_random,
                                      grad_seed, &opt, grad_h, grad_floor, &max_rel);
    } else {
      if (grad_student.empty() || grad_teacher.empty()) {
        std::fprintf(stderr, "error: give --student and --teacher files, or --random N\n");
        return 2;
      }
      PredictionsPtr student, teacher;
      status = load(grad_student, student);
      if (status != OTKD_OK) return fail(status);
      status = load(grad_teacher, teacher);
      if (status != OTKD_OK) return fail(status);
      status = otkd_grad_check(student.get(), teacher.get(), &opt, grad_h, grad_floor, &max_rel);
    }
    if (status != OTKD_OK) return fail(status);
    const bool pass = max_rel <= grad_tol;
    std::printf("{\n  \"max_relative_error\": %.17g,\n  \"tolerance\": %.17g,\n  \"pass\": %s\n}\n",
                max_rel, grad_tol, pass ? "true" : "false");
    return pass ? 0 : 1;
  }

  return 0;
}
