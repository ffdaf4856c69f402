#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sensiat/bundle.hpp"
#include "sensiat/sensitivity.hpp"
#include "sensiat/simulate.hpp"
#include "sensiat/trial_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sensiat;

namespace {

// outputs written so far; removed if the command fails partway
std::vector<std::string> g_outputs;

void write_table(const ResultTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write output: " + path);
  g_outputs.push_back(path);
  table.emit(out);
}

void cleanup_outputs() {
  for (const auto& p : g_outputs) {
    std::error_code ec;
    fs::remove(p, ec);
  }
}

TrialFrame load_data(const AnalysisConfig& cfg) {
  std::ifstream in(cfg.data_path);
  if (!in) throw ValidationError("cannot read data file: " + cfg.data_path);
  TrialFrame frame = ingest_long_table(in, cfg.schema);
  if (!is_missing(cfg.end_time)) {
    int maxv = cfg.max_visits > 0 ? cfg.max_visits : frame.inferred_max_visits();
    frame = add_terminal_observations(frame, cfg.end_time, maxv);
  }
  return frame;
}

std::vector<double> parse_knots(const std::string& text) {
  std::vector<double> knots;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) knots.push_back(std::stod(tok));
  return knots;
}

ArmSimSpec arm_spec_from_json(const json& j) {
  ArmSimSpec spec;
  spec.baseline_pool = j.at("baseline_pool").get<std::vector<double>>();
  for (const auto& pw : j.at("baseline_intensity")) {
    PiecewiseRate rate;
    rate.breaks = pw.at("breaks").get<std::vector<double>>();
    rate.rates = pw.at("rates").get<std::vector<double>>();
    spec.baseline_intensity.push_back(std::move(rate));
  }
  spec.gamma_prev_outcome = j.value("gamma_prev_outcome", 0.0);
  spec.b0 = j.value("b0", 0.0);
  spec.b_prev = j.value("b_prev", 0.0);
  spec.b_time = j.value("b_time", 0.0);
  spec.b_delta = j.value("b_delta", 0.0);
  spec.dispersion = j.value("dispersion", 1.0);
  spec.outcome_scale = j.value("outcome_scale", 1.0);
  spec.true_alpha = j.value("true_alpha", 0.0);
  return spec;
}

// wide per-time result rows across the (alpha_control, alpha_treatment) grid
ResultTable wide_table(const SensitivityModel& model, const std::vector<double>& times,
                       const ResultTable* jk_trt, const ResultTable* jk_ctl) {
  const auto& at = model.treatment.alphas;
  const auto& ac = model.control.alphas;
  ResultTable table;
  table.columns = {"time",         "alpha_control", "alpha_treatment", "mean_control",
                   "var_control",  "mean_treatment", "var_treatment",  "mean_effect",
                   "var_effect"};
  const bool jk = jk_trt != nullptr;
  if (jk) {
    table.columns.insert(table.columns.end(),
                         {"mean_control_jackknife_var", "mean_treatment_jackknife_var",
                          "mean_effect_jackknife_var"});
  }
  for (std::size_t t = 0; t < times.size(); ++t) {
    for (std::size_t c = 0; c < ac.size(); ++c) {
      for (std::size_t a = 0; a < at.size(); ++a) {
        double mc = model.control.mean_at(times[t], static_cast<int>(c));
        double mt = model.treatment.mean_at(times[t], static_cast<int>(a));
        double vc = model.control.if_var_at(times[t], static_cast<int>(c));
        double vt = model.treatment.if_var_at(times[t], static_cast<int>(a));
        std::vector<double> row = {times[t], ac[c], at[a], mc, vc, mt, vt, mt - mc,
                                   vt + vc};
        if (jk) {
          double jvc = jk_ctl->rows[t * ac.size() + c][4];
          double jvt = jk_trt->rows[t * at.size() + a][4];
          row.insert(row.end(), {jvc, jvt, jvc + jvt});
        }
        table.rows.push_back(std::move(row));
      }
    }
  }
  return table;
}

int run(int argc, char** argv) {
  CLI::App app{"Sensitivity analysis for randomized trials with "
               "outcome-informative assessment times"};
  app.require_subcommand(1);

  // ---- fit ----
  auto* fit = app.add_subcommand("fit", "Fit both arms and persist a model bundle");
  std::string cfg_path, data_path, out_path, treatment_label;
  std::vector<double> alphas;
  std::vector<std::string> knots_args;
  double end_time = kMissing, iband = kMissing, abs_tol = kMissing;
  int max_visits = 0, degree = -1, threads = 0, resolution = 0;
  std::string ikernel, okernel, iformula, oformula, omods, fitter, bw_method,
      quad_method;
  double quad_tol = kMissing, delta = kMissing, bw_lo = kMissing, bw_hi = kMissing;
  fit->add_option("--config", cfg_path, "Analysis config (JSON)");
  fit->add_option("--data", data_path, "Long-format data table");
  fit->add_option("--output", out_path, "Bundle output path")->required();
  fit->add_option("--treatment", treatment_label, "Treatment arm label");
  fit->add_option("--alpha", alphas, "Sensitivity parameter grid");
  fit->add_option("--knots", knots_args,
                  "Comma-separated knots; repeat for multiple intervals");
  fit->add_option("--degree", degree, "Spline degree");
  fit->add_option("--end", end_time, "End-of-study time for terminal rows");
  fit->add_option("--max-visits", max_visits, "Maximum assessments per subject");
  fit->add_option("--intensity-kernel", ikernel, "Baseline smoothing kernel");
  fit->add_option("--intensity-bandwidth", iband, "Baseline smoothing bandwidth");
  fit->add_option("--intensity-formula", iformula, "Intensity model formula");
  fit->add_option("--outcome-formula", oformula, "Outcome model formula");
  fit->add_option("--outcome-mods", omods, "Outcome model modifications (+/- terms)");
  fit->add_option("--fitter", fitter, "fixed-coef | fixed-bandwidth | norm1");
  fit->add_option("--outcome-kernel", okernel, "Outcome model kernel");
  fit->add_option("--abs-tol", abs_tol, "Outcome optimizer absolute tolerance");
  fit->add_option("--bw-method", bw_method,
                  "bounded-quasi-newton | golden-section | grid");
  fit->add_option("--bw-lo", bw_lo, "Bandwidth ratio lower bound");
  fit->add_option("--bw-hi", bw_hi, "Bandwidth ratio upper bound");
  fit->add_option("--quad-method", quad_method, "adaptive | fixed");
  fit->add_option("--quad-tol", quad_tol, "Adaptive quadrature tolerance");
  fit->add_option("--resolution", resolution, "Fixed quadrature resolution");
  fit->add_option("--delta", delta, "Fixed quadrature grid spacing");
  fit->add_option("--threads", threads, "Worker thread bound");

  // ---- predict / jackknife / effect ----
  std::string bundle_path;
  std::vector<double> times;
  auto* predict = app.add_subcommand("predict", "Marginal means and effects");
  auto* jack = app.add_subcommand("jackknife", "Jackknife variances");
  auto* effect = app.add_subcommand("effect", "Treatment effect table");
  for (auto* cmd : {predict, jack, effect}) {
    cmd->add_option("--bundle", bundle_path, "Fitted model bundle")->required();
    cmd->add_option("--times", times, "Evaluation times")->required();
    cmd->add_option("--output", out_path, "Output table path")->required();
    cmd->add_option("--threads", threads, "Worker thread bound");
  }

  // ---- restrict ----
  auto* restrict_cmd = app.add_subcommand("restrict", "Plausible alpha range filter");
  double mu_min = 0.0, mu_max = 0.0, spacing = 1.0;
  restrict_cmd->add_option("--bundle", bundle_path)->required();
  restrict_cmd->add_option("--mu-min", mu_min, "Lower plausible mean")->required();
  restrict_cmd->add_option("--mu-max", mu_max, "Upper plausible mean")->required();
  restrict_cmd->add_option("--spacing", spacing, "Evaluation grid spacing");
  restrict_cmd->add_option("--output", out_path)->required();

  // ---- simulate ----
  auto* sim = app.add_subcommand("simulate", "Bias/coverage simulation study");
  int reps = 0, truth_reps = 0;
  bool no_jackknife = false;
  sim->add_option("--config", cfg_path, "Simulation config (JSON)")->required();
  sim->add_option("--reps", reps, "Number of simulated trials");
  sim->add_option("--truth-reps", truth_reps, "Monte-Carlo truth sample size");
  sim->add_flag("--no-jackknife", no_jackknife, "Skip jackknife coverage");
  sim->add_option("--output", out_path)->required();
  sim->add_option("--threads", threads, "Worker thread bound");

  // ---- plot-data ----
  auto* plot = app.add_subcommand("plot-data", "Emit plot-ready tables");
  std::string prefix;
  int grid_points = 101;
  plot->add_option("--bundle", bundle_path)->required();
  plot->add_option("--times", times, "Dot-whisker and surface times")->required();
  plot->add_option("--grid-points", grid_points, "Mean-curve grid size per interval");
  plot->add_option("--output-prefix", prefix)->required();

  CLI11_PARSE(app, argc, argv);

  if (fit->parsed()) {
    AnalysisConfig cfg;
    if (!cfg_path.empty()) cfg = load_analysis_config(cfg_path);
    if (!data_path.empty()) cfg.data_path = data_path;
    if (!treatment_label.empty()) cfg.treatment_label = treatment_label;
    if (!alphas.empty()) cfg.engine.alphas = alphas;
    if (!knots_args.empty()) {
      cfg.engine.knot_sets.clear();
      for (const auto& k : knots_args) cfg.engine.knot_sets.push_back(parse_knots(k));
    }
    if (degree >= 0) cfg.engine.degree = degree;
    if (!is_missing(end_time)) cfg.end_time = end_time;
    if (max_visits > 0) cfg.max_visits = max_visits;
    if (!ikernel.empty()) cfg.engine.intensity.kernel = kernel_from_string(ikernel);
    if (!is_missing(iband)) cfg.engine.intensity.bandwidth = iband;
    if (!iformula.empty()) {
      cfg.engine.intensity_formula = IntensityFormula::parse(iformula);
    }
    if (!oformula.empty()) cfg.engine.outcome_formula = OutcomeFormula::parse(oformula);
    if (!omods.empty()) {
      cfg.engine.outcome_formula = cfg.engine.outcome_formula.modified(omods);
    }
    if (!fitter.empty()) {
      if (fitter == "fixed-coef") cfg.engine.mode = SIMode::FixedCoef;
      else if (fitter == "fixed-bandwidth") cfg.engine.mode = SIMode::FixedBandwidth;
      else if (fitter == "norm1") cfg.engine.mode = SIMode::Norm1;
      else throw ValidationError("unknown fitter: " + fitter);
    }
    if (!okernel.empty()) cfg.engine.outcome.kernel = kernel_from_string(okernel);
    if (!is_missing(abs_tol)) cfg.engine.outcome.abs_tol = abs_tol;
    if (!bw_method.empty()) {
      if (bw_method == "bounded-quasi-newton") {
        cfg.engine.outcome.bw_method = BwMethod::BoundedQuasiNewton;
      } else if (bw_method == "golden-section") {
        cfg.engine.outcome.bw_method = BwMethod::GoldenSection;
      } else if (bw_method == "grid") {
        cfg.engine.outcome.bw_method = BwMethod::Grid;
      } else {
        throw ValidationError("unknown bandwidth method: " + bw_method);
      }
    }
    if (!is_missing(bw_lo)) cfg.engine.outcome.bw_lo = bw_lo;
    if (!is_missing(bw_hi)) cfg.engine.outcome.bw_hi = bw_hi;
    if (!quad_method.empty()) {
      cfg.engine.quad.method =
          quad_method == "fixed" ? QuadMethod::Fixed : QuadMethod::Adaptive;
    }
    if (!is_missing(quad_tol)) cfg.engine.quad.tolerance = quad_tol;
    if (resolution > 0) cfg.engine.quad.resolution = resolution;
    if (!is_missing(delta)) cfg.engine.quad.delta = delta;
    if (threads > 0) cfg.engine.threads = threads;

    TrialFrame frame = load_data(cfg);
    auto [trt, ctl] = split_by_arm(frame, cfg.treatment_label);
    SensitivityModel model;
    model.treatment_label = cfg.treatment_label;
    try {
      model.treatment = fit_arm(trt, cfg.engine);
    } catch (const std::exception& e) {
      throw FitError(std::string("treatment arm fit failed: ") + e.what());
    }
    try {
      model.control = fit_arm(ctl, cfg.engine);
    } catch (const std::exception& e) {
      throw FitError(std::string("control arm fit failed: ") + e.what());
    }
    g_outputs.push_back(out_path);
    g_outputs.push_back(out_path + ".txt");
    save_bundle(model, out_path);
    return 0;
  }

  if (predict->parsed() || jack->parsed() || effect->parsed()) {
    SensitivityModel model = load_bundle(bundle_path);
    if (threads > 0) {
      model.treatment.options.threads = threads;
      model.control.options.threads = threads;
    }
    if (effect->parsed()) {
      write_table(treatment_effect(model, times), out_path);
    } else if (predict->parsed()) {
      write_table(wide_table(model, times, nullptr, nullptr), out_path);
    } else {
      ResultTable jt = jackknife(model.treatment, times);
      ResultTable jc = jackknife(model.control, times);
      write_table(wide_table(model, times, &jt, &jc), out_path);
    }
    return 0;
  }

  if (restrict_cmd->parsed()) {
    SensitivityModel model = load_bundle(bundle_path);
    ResultTable table;
    table.columns = {"arm", "alpha", "retained"};
    for (int arm = 0; arm < 2; ++arm) {
      const ArmModel& am = arm == 1 ? model.treatment : model.control;
      auto kept = restrict_alpha_range(am, mu_min, mu_max, spacing);
      for (double a : am.alphas) {
        bool in = std::find(kept.begin(), kept.end(), a) != kept.end();
        table.rows.push_back({double(arm), a, in ? 1.0 : 0.0});
      }
    }
    write_table(table, out_path);
    return 0;
  }

  if (sim->parsed()) {
    std::ifstream in(cfg_path);
    if (!in) throw ValidationError("cannot read config: " + cfg_path);
    json j;
    in >> j;
    SimConfig config;
    config.treatment = arm_spec_from_json(j.at("treatment"));
    config.control = arm_spec_from_json(j.at("control"));
    config.n_per_arm = j.at("n_per_arm");
    config.end_time = j.at("end_time");
    config.max_visits = j.at("max_visits");
    config.seed = j.value("seed", 0);

    const json& js = j.at("study");
    StudyOptions opts;
    opts.times = js.at("times").get<std::vector<double>>();
    opts.analysis_alphas = js.at("alphas").get<std::vector<double>>();
    opts.reps = js.value("reps", 50);
    opts.truth_mc_reps = js.value("truth_mc_reps", 100000);
    opts.with_jackknife = js.value("with_jackknife", true);
    opts.truth_at_true_alpha = js.value("truth_at_true_alpha", false);
    opts.engine = parse_analysis_config_text(js.at("analysis").dump()).engine;
    if (reps > 0) opts.reps = reps;
    if (truth_reps > 0) opts.truth_mc_reps = truth_reps;
    if (no_jackknife) opts.with_jackknife = false;
    if (threads > 0) opts.engine.threads = threads;

    write_table(run_simulation_study(config, opts), out_path);
    return 0;
  }

  if (plot->parsed()) {
    SensitivityModel model = load_bundle(bundle_path);
    ResultTable curves;
    curves.columns = {"arm", "time", "alpha", "mean"};
    for (int arm = 0; arm < 2; ++arm) {
      const ArmModel& am = arm == 1 ? model.treatment : model.control;
      for (const auto& basis : am.bases) {
        for (int g = 0; g < grid_points; ++g) {
          double t = basis.t1() + (basis.t2() - basis.t1()) * g / (grid_points - 1);
          for (std::size_t a = 0; a < am.alphas.size(); ++a) {
            curves.rows.push_back(
                {double(arm), t, am.alphas[a], am.mean_at(t, static_cast<int>(a))});
          }
        }
      }
    }
    write_table(curves, prefix + "_mean_curves.csv");

    ResultTable dots;
    dots.columns = {"arm", "time", "alpha", "mean", "lo", "hi"};
    for (int arm = 0; arm < 2; ++arm) {
      const ArmModel& am = arm == 1 ? model.treatment : model.control;
      for (double t : times) {
        for (std::size_t a = 0; a < am.alphas.size(); ++a) {
          double m = am.mean_at(t, static_cast<int>(a));
          double s = std::sqrt(am.if_var_at(t, static_cast<int>(a)));
          dots.rows.push_back(
              {double(arm), t, am.alphas[a], m, m - kZ95 * s, m + kZ95 * s});
        }
      }
    }
    write_table(dots, prefix + "_dot_whisker.csv");

    ResultTable surface, bound;
    surface.columns = {"time", "alpha_control", "alpha_treatment", "mean_effect"};
    bound.columns = {"time", "alpha_control", "alpha_treatment", "ci_bound"};
    for (double t : times) {
      for (std::size_t c = 0; c < model.control.alphas.size(); ++c) {
        for (std::size_t a = 0; a < model.treatment.alphas.size(); ++a) {
          double mt = model.treatment.mean_at(t, static_cast<int>(a));
          double mc = model.control.mean_at(t, static_cast<int>(c));
          double var = model.treatment.if_var_at(t, static_cast<int>(a)) +
                       model.control.if_var_at(t, static_cast<int>(c));
          double lo = mt - mc - kZ95 * std::sqrt(var);
          double hi = mt - mc + kZ95 * std::sqrt(var);
          double b = (lo <= 0.0 && hi >= 0.0) ? 0.0 : (lo > 0.0 ? lo : hi);
          surface.rows.push_back(
              {t, model.control.alphas[c], model.treatment.alphas[a], mt - mc});
          bound.rows.push_back(
              {t, model.control.alphas[c], model.treatment.alphas[a], b});
        }
      }
    }
    write_table(surface, prefix + "_effect_surface.csv");
    write_table(bound, prefix + "_ci_bound_surface.csv");
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    int code = run(argc, argv);
    if (code != 0) cleanup_outputs();
    return code;
  } catch (const ValidationError& e) {
    cleanup_outputs();
    std::cerr << "error: " << e.what() << "\n";
    std::string msg = e.what();
    return msg.rfind("cannot read", 0) == 0 ? 2 : 1;
  } catch (const std::exception& e) {
    cleanup_outputs();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
