#include "sensiat/bundle.hpp"

#include <fstream>
#include <iterator>

#include "json.hpp"

namespace sensiat {

using nlohmann::json;

namespace {

constexpr const char* kSchemaId = "sensiat-bundle/1";

json num(double v) { return is_missing(v) ? json(nullptr) : json(v); }
double num_back(const json& j) { return j.is_null() ? kMissing : j.get<double>(); }

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (int r = 0; r < m.rows(); ++r) a.push_back(vec_to_json(m.row(r).transpose()));
  return a;
}

Eigen::MatrixXd mat_from_json(const json& a) {
  if (a.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd m(a.size(), a[0].size());
  for (std::size_t r = 0; r < a.size(); ++r) m.row(r) = vec_from_json(a[r]).transpose();
  return m;
}

std::string mode_to_string(SIMode m) {
  switch (m) {
    case SIMode::FixedCoef: return "fixed-coef";
    case SIMode::FixedBandwidth: return "fixed-bandwidth";
    case SIMode::Norm1: return "norm1";
  }
  return "fixed-coef";
}

SIMode mode_from_string(const std::string& s) {
  if (s == "fixed-coef") return SIMode::FixedCoef;
  if (s == "fixed-bandwidth") return SIMode::FixedBandwidth;
  if (s == "norm1") return SIMode::Norm1;
  throw ValidationError("unknown fitter mode: " + s);
}

std::string bw_to_string(BwMethod m) {
  switch (m) {
    case BwMethod::BoundedQuasiNewton: return "bounded-quasi-newton";
    case BwMethod::GoldenSection: return "golden-section";
    case BwMethod::Grid: return "grid";
  }
  return "bounded-quasi-newton";
}

BwMethod bw_from_string(const std::string& s) {
  if (s == "bounded-quasi-newton") return BwMethod::BoundedQuasiNewton;
  if (s == "golden-section") return BwMethod::GoldenSection;
  if (s == "grid") return BwMethod::Grid;
  throw ValidationError("unknown bandwidth method: " + s);
}

json frame_to_json(const TrialFrame& frame) {
  json j;
  j["num_cov_names"] = frame.num_cov_names;
  j["cat_cov_names"] = frame.cat_cov_names;
  j["end_time"] = num(frame.end_time);
  j["max_visits"] = frame.max_visits;
  json subjects = json::array();
  for (const auto& s : frame.subjects) {
    json js;
    js["id"] = s.id;
    js["arm"] = s.arm;
    json rows = json::array();
    for (const auto& r : s.rows) {
      json jr;
      jr["time"] = r.time;
      jr["outcome"] = num(r.outcome);
      jr["num_cov"] = r.num_cov;
      jr["cat_cov"] = r.cat_cov;
      rows.push_back(jr);
    }
    js["rows"] = rows;
    subjects.push_back(js);
  }
  j["subjects"] = subjects;
  return j;
}

TrialFrame frame_from_json(const json& j) {
  TrialFrame frame;
  frame.num_cov_names = j.at("num_cov_names").get<std::vector<std::string>>();
  frame.cat_cov_names = j.at("cat_cov_names").get<std::vector<std::string>>();
  frame.end_time = num_back(j.at("end_time"));
  frame.max_visits = j.at("max_visits").get<int>();
  for (const auto& js : j.at("subjects")) {
    Subject s;
    s.id = js.at("id").get<std::string>();
    s.arm = js.at("arm").get<std::string>();
    for (const auto& jr : js.at("rows")) {
      AssessmentRecord r;
      r.time = jr.at("time").get<double>();
      r.outcome = num_back(jr.at("outcome"));
      r.num_cov = jr.at("num_cov").get<std::map<std::string, double>>();
      r.cat_cov = jr.at("cat_cov").get<std::map<std::string, std::string>>();
      s.rows.push_back(std::move(r));
    }
    frame.subjects.push_back(std::move(s));
  }
  return frame;
}

json options_to_json(const EngineOptions& o) {
  json j;
  j["intensity_formula"] = o.intensity_formula.to_string();
  j["intensity"] = {{"kernel", kernel_to_string(o.intensity.kernel)},
                    {"bandwidth", o.intensity.bandwidth ? json(*o.intensity.bandwidth)
                                                        : json(nullptr)},
                    {"grad_tol", o.intensity.grad_tol},
                    {"loglik_rel_tol", o.intensity.loglik_rel_tol},
                    {"max_iter", o.intensity.max_iter}};
  j["outcome_formula"] = o.outcome_formula.to_string();
  j["mode"] = mode_to_string(o.mode);
  j["outcome"] = {{"kernel", kernel_to_string(o.outcome.kernel)},
                  {"abs_tol", o.outcome.abs_tol},
                  {"max_evals", o.outcome.max_evals},
                  {"bw_method", bw_to_string(o.outcome.bw_method)},
                  {"bw_lo", o.outcome.bw_lo},
                  {"bw_hi", o.outcome.bw_hi}};
  j["knot_sets"] = o.knot_sets;
  j["degree"] = o.degree;
  j["alphas"] = o.alphas;
  j["quad"] = {{"method", o.quad.method == QuadMethod::Adaptive ? "adaptive" : "fixed"},
               {"tolerance", o.quad.tolerance},
               {"resolution", o.quad.resolution},
               {"delta", o.quad.delta ? json(*o.quad.delta) : json(nullptr)}};
  // the worker-thread bound is a runtime resource hint, not part of the
  // model; keeping it out makes bundles byte-identical across thread counts
  j["jackknife_max_evals"] = o.jackknife_max_evals;
  return j;
}

EngineOptions options_from_json(const json& j) {
  EngineOptions o;
  o.intensity_formula = IntensityFormula::parse(j.at("intensity_formula"));
  const json& ji = j.at("intensity");
  o.intensity.kernel = kernel_from_string(ji.at("kernel"));
  if (!ji.at("bandwidth").is_null()) o.intensity.bandwidth = ji.at("bandwidth").get<double>();
  o.intensity.grad_tol = ji.at("grad_tol");
  o.intensity.loglik_rel_tol = ji.at("loglik_rel_tol");
  o.intensity.max_iter = ji.at("max_iter");
  o.outcome_formula = OutcomeFormula::parse(j.at("outcome_formula"));
  o.mode = mode_from_string(j.at("mode"));
  const json& jo = j.at("outcome");
  o.outcome.kernel = kernel_from_string(jo.at("kernel"));
  o.outcome.abs_tol = jo.at("abs_tol");
  o.outcome.max_evals = jo.at("max_evals");
  o.outcome.bw_method = bw_from_string(jo.at("bw_method"));
  o.outcome.bw_lo = jo.at("bw_lo");
  o.outcome.bw_hi = jo.at("bw_hi");
  o.knot_sets = j.at("knot_sets").get<std::vector<std::vector<double>>>();
  o.degree = j.at("degree");
  o.alphas = j.at("alphas").get<std::vector<double>>();
  const json& jq = j.at("quad");
  o.quad.method =
      jq.at("method") == "adaptive" ? QuadMethod::Adaptive : QuadMethod::Fixed;
  o.quad.tolerance = jq.at("tolerance");
  o.quad.resolution = jq.at("resolution");
  if (!jq.at("delta").is_null()) o.quad.delta = jq.at("delta").get<double>();
  o.threads = 1;
  o.jackknife_max_evals = j.at("jackknife_max_evals");
  return o;
}

json arm_to_json(const ArmModel& arm) {
  json j;
  j["frame"] = frame_to_json(arm.frame);
  j["options"] = options_to_json(arm.options);

  json ji;
  ji["gamma"] = vec_to_json(arm.intensity.gamma);
  ji["gamma_cov"] = mat_to_json(arm.intensity.gamma_cov);
  json base = json::array();
  for (const auto& b : arm.intensity.baseline) {
    base.push_back({{"times", b.times}, {"jumps", b.jumps}});
  }
  ji["baseline"] = base;
  ji["kernel"] = kernel_to_string(arm.intensity.kernel);
  ji["bandwidth"] = arm.intensity.bandwidth;
  ji["formula"] = arm.intensity.formula.to_string();
  ji["colnames"] = arm.intensity.colnames;
  ji["cat_levels"] = arm.intensity.cat_levels;
  ji["iterations"] = arm.intensity.iterations;
  ji["loglik"] = arm.intensity.loglik;
  ji["warnings"] = arm.intensity.warnings;
  j["intensity"] = ji;

  json jo;
  jo["theta"] = vec_to_json(arm.outcome.theta);
  jo["h"] = arm.outcome.h;
  jo["hstar"] = num(arm.outcome.hstar);
  jo["kernel"] = kernel_to_string(arm.outcome.kernel);
  jo["mode"] = mode_to_string(arm.outcome.mode);
  json spec;
  spec["formula"] = arm.outcome.spec.formula.to_string();
  json frozen = json::array();
  for (const auto& ft : arm.outcome.spec.frozen) {
    frozen.push_back({{"term", ft.term.to_string()},
                      {"center", ft.center},
                      {"scale", ft.scale},
                      {"ns_knots", ft.ns_knots}});
  }
  spec["frozen"] = frozen;
  spec["colnames"] = arm.outcome.spec.colnames;
  spec["dim"] = arm.outcome.spec.dim;
  jo["spec"] = spec;
  jo["train_y"] = vec_to_json(arm.outcome.train_y);
  jo["train_index"] = vec_to_json(arm.outcome.train_index);
  jo["train_subject"] = arm.outcome.train_subject;
  jo["evaluations"] = arm.outcome.evaluations;
  jo["final_psis"] = arm.outcome.final_psis;
  jo["converged"] = arm.outcome.converged;
  jo["trace"] = arm.outcome.trace;
  j["outcome"] = jo;

  j["alphas"] = arm.alphas;
  json beta = json::array(), t1 = json::array(), t2 = json::array(),
       cov = json::array();
  for (std::size_t m = 0; m < arm.bases.size(); ++m) {
    json bm = json::array(), t1m = json::array(), t2m = json::array(),
         covm = json::array();
    for (std::size_t a = 0; a < arm.alphas.size(); ++a) {
      bm.push_back(vec_to_json(arm.beta[m][a]));
      t1m.push_back(mat_to_json(arm.term1[m][a]));
      t2m.push_back(mat_to_json(arm.term2[m][a]));
      covm.push_back(mat_to_json(arm.beta_cov[m][a]));
    }
    beta.push_back(bm);
    t1.push_back(t1m);
    t2.push_back(t2m);
    cov.push_back(covm);
  }
  j["beta"] = beta;
  j["term1"] = t1;
  j["term2"] = t2;
  j["beta_cov"] = cov;
  return j;
}

ArmModel arm_from_json(const json& j) {
  ArmModel arm;
  arm.frame = frame_from_json(j.at("frame"));
  arm.options = options_from_json(j.at("options"));
  arm.alphas = j.at("alphas").get<std::vector<double>>();
  arm.cp = derive_counting_process(arm.frame);
  arm.idesign =
      build_intensity_design(arm.frame, arm.cp, arm.options.intensity_formula);

  const json& ji = j.at("intensity");
  arm.intensity.gamma = vec_from_json(ji.at("gamma"));
  arm.intensity.gamma_cov = mat_from_json(ji.at("gamma_cov"));
  for (const auto& b : ji.at("baseline")) {
    BaselineSteps steps;
    steps.times = b.at("times").get<std::vector<double>>();
    steps.jumps = b.at("jumps").get<std::vector<double>>();
    arm.intensity.baseline.push_back(std::move(steps));
  }
  arm.intensity.kernel = kernel_from_string(ji.at("kernel"));
  arm.intensity.bandwidth = ji.at("bandwidth");
  arm.intensity.formula = IntensityFormula::parse(ji.at("formula"));
  arm.intensity.colnames = ji.at("colnames").get<std::vector<std::string>>();
  arm.intensity.cat_levels =
      ji.at("cat_levels").get<std::map<std::string, std::vector<std::string>>>();
  arm.intensity.iterations = ji.at("iterations");
  arm.intensity.loglik = ji.at("loglik");
  arm.intensity.warnings = ji.at("warnings").get<std::vector<std::string>>();

  const json& jo = j.at("outcome");
  arm.outcome.theta = vec_from_json(jo.at("theta"));
  arm.outcome.h = jo.at("h");
  arm.outcome.hstar = num_back(jo.at("hstar"));
  arm.outcome.kernel = kernel_from_string(jo.at("kernel"));
  arm.outcome.mode = mode_from_string(jo.at("mode"));
  const json& spec = jo.at("spec");
  arm.outcome.spec.formula = OutcomeFormula::parse(spec.at("formula"));
  for (const auto& jf : spec.at("frozen")) {
    OutcomeModelSpec::FrozenTerm ft;
    OutcomeFormula parsed = OutcomeFormula::parse("outcome ~ " +
                                                  jf.at("term").get<std::string>());
    ft.term = parsed.terms.at(0);
    ft.center = jf.at("center");
    ft.scale = jf.at("scale");
    ft.ns_knots = jf.at("ns_knots").get<std::vector<double>>();
    arm.outcome.spec.frozen.push_back(std::move(ft));
  }
  arm.outcome.spec.colnames = spec.at("colnames").get<std::vector<std::string>>();
  arm.outcome.spec.dim = spec.at("dim");
  arm.outcome.train_y = vec_from_json(jo.at("train_y"));
  arm.outcome.train_index = vec_from_json(jo.at("train_index"));
  arm.outcome.train_subject = jo.at("train_subject").get<std::vector<int>>();
  arm.outcome.evaluations = jo.at("evaluations");
  arm.outcome.final_psis = jo.at("final_psis");
  arm.outcome.converged = jo.at("converged");
  arm.outcome.trace = jo.at("trace").get<std::vector<double>>();

  for (const auto& knots : arm.options.knot_sets) {
    arm.bases.push_back(make_basis(knots, arm.options.degree));
    arm.gram.push_back(gram_matrix(arm.bases.back()));
  }
  const std::size_t M = arm.bases.size(), na = arm.alphas.size();
  arm.beta.assign(M, std::vector<Eigen::VectorXd>(na));
  arm.term1.assign(M, std::vector<Eigen::MatrixXd>(na));
  arm.term2.assign(M, std::vector<Eigen::MatrixXd>(na));
  arm.beta_cov.assign(M, std::vector<Eigen::MatrixXd>(na));
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t a = 0; a < na; ++a) {
      arm.beta[m][a] = vec_from_json(j.at("beta")[m][a]);
      arm.term1[m][a] = mat_from_json(j.at("term1")[m][a]);
      arm.term2[m][a] = mat_from_json(j.at("term2")[m][a]);
      arm.beta_cov[m][a] = mat_from_json(j.at("beta_cov")[m][a]);
    }
  }
  return arm;
}

}  // namespace

void save_bundle(const SensitivityModel& model, const std::string& path) {
  json j;
  j["schema"] = kSchemaId;
  j["treatment_label"] = model.treatment_label;
  j["treatment"] = arm_to_json(model.treatment);
  j["control"] = arm_to_json(model.control);

  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write bundle: " + path);
  out << j.dump() << '\n';
  out.close();

  std::ofstream side(path + ".txt");
  if (side) {
    side << "schema: " << kSchemaId << "\n";
    side << "treatment label: " << model.treatment_label << "\n";
    for (const auto* arm : {&model.treatment, &model.control}) {
      side << "arm " << (arm == &model.treatment ? "treatment" : "control") << ": "
           << arm->frame.subjects.size() << " subjects, "
           << arm->alphas.size() << " alpha values, "
           << arm->bases.size() << " interval(s)\n";
      side << "  intensity gamma:";
      for (int i = 0; i < arm->intensity.gamma.size(); ++i) {
        side << " " << format_double(arm->intensity.gamma[i]);
      }
      side << " (bandwidth " << format_double(arm->intensity.bandwidth) << ")\n";
      side << "  outcome theta:";
      for (int i = 0; i < arm->outcome.theta.size(); ++i) {
        side << " " << format_double(arm->outcome.theta[i]);
      }
      side << " (h " << format_double(arm->outcome.h) << ")\n";
    }
  }
}

SensitivityModel load_bundle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read bundle: " + path);
  json j;
  in >> j;
  if (j.value("schema", "") != kSchemaId) {
    throw ValidationError("unrecognized bundle schema in " + path);
  }
  SensitivityModel model;
  model.treatment_label = j.at("treatment_label");
  model.treatment = arm_from_json(j.at("treatment"));
  model.control = arm_from_json(j.at("control"));
  return model;
}

AnalysisConfig load_analysis_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_analysis_config_text(text);
}

AnalysisConfig parse_analysis_config_text(const std::string& text) {
  json j = json::parse(text);
  AnalysisConfig cfg;
  cfg.data_path = j.value("data", "");
  if (j.contains("schema")) {
    const json& s = j["schema"];
    cfg.schema.id = s.value("id", cfg.schema.id);
    cfg.schema.arm = s.value("arm", cfg.schema.arm);
    cfg.schema.time = s.value("time", cfg.schema.time);
    cfg.schema.outcome = s.value("outcome", cfg.schema.outcome);
    if (s.contains("delimiter")) {
      cfg.schema.delimiter = s["delimiter"].get<std::string>().at(0);
    }
  }
  cfg.treatment_label = j.value("treatment_label", cfg.treatment_label);
  if (j.contains("end_time")) cfg.end_time = j["end_time"].get<double>();
  cfg.max_visits = j.value("max_visits", 0);

  EngineOptions& o = cfg.engine;
  if (j.contains("alphas")) o.alphas = j["alphas"].get<std::vector<double>>();
  if (j.contains("knots")) {
    const json& k = j["knots"];
    if (!k.empty() && k[0].is_array()) {
      o.knot_sets = k.get<std::vector<std::vector<double>>>();
    } else {
      o.knot_sets = {k.get<std::vector<double>>()};
    }
  }
  o.degree = j.value("degree", o.degree);
  if (j.contains("intensity")) {
    const json& ji = j["intensity"];
    if (ji.contains("formula")) {
      o.intensity_formula = IntensityFormula::parse(ji["formula"]);
    }
    if (ji.contains("kernel")) o.intensity.kernel = kernel_from_string(ji["kernel"]);
    if (ji.contains("bandwidth")) o.intensity.bandwidth = ji["bandwidth"].get<double>();
  }
  if (j.contains("outcome")) {
    const json& jo = j["outcome"];
    if (jo.contains("formula")) o.outcome_formula = OutcomeFormula::parse(jo["formula"]);
    if (jo.contains("modifications")) {
      o.outcome_formula = o.outcome_formula.modified(jo["modifications"]);
    }
    if (jo.contains("mode")) o.mode = mode_from_string(jo["mode"]);
    if (jo.contains("kernel")) o.outcome.kernel = kernel_from_string(jo["kernel"]);
    o.outcome.abs_tol = jo.value("abs_tol", o.outcome.abs_tol);
    o.outcome.max_evals = jo.value("max_evals", o.outcome.max_evals);
    if (jo.contains("bw_method")) o.outcome.bw_method = bw_from_string(jo["bw_method"]);
    o.outcome.bw_lo = jo.value("bw_lo", o.outcome.bw_lo);
    o.outcome.bw_hi = jo.value("bw_hi", o.outcome.bw_hi);
  }
  if (j.contains("quadrature")) {
    const json& jq = j["quadrature"];
    if (jq.contains("method")) {
      o.quad.method = jq["method"] == "fixed" ? QuadMethod::Fixed : QuadMethod::Adaptive;
    }
    o.quad.tolerance = jq.value("tolerance", o.quad.tolerance);
    o.quad.resolution = jq.value("resolution", o.quad.resolution);
    if (jq.contains("delta")) o.quad.delta = jq["delta"].get<double>();
  }
  o.threads = j.value("threads", o.threads);
  o.jackknife_max_evals = j.value("jackknife_max_evals", o.jackknife_max_evals);
  return cfg;
}

}  // namespace sensiat
