#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "sensiat/simulate.hpp"
#include "sensiat/trial_data.hpp"

namespace fs = std::filesystem;
using namespace sensiat;

namespace {

std::string cli_binary() {
  const char* env = std::getenv("SENSIAT_CLI");
  return env ? env : "tools/sensiat";
}

int run(const std::string& args) {
  std::string cmd = cli_binary() + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string header(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  return line;
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "sensiat_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

SimConfig cli_config() {
  SimConfig config;
  ArmSimSpec spec;
  spec.baseline_pool = {0.5, 1.0, 1.5, 2.0};
  PiecewiseRate rate;
  rate.rates = {2.0};
  spec.baseline_intensity = {rate};
  spec.gamma_prev_outcome = 0.1;
  spec.b0 = 0.3;
  spec.b_prev = 0.2;
  spec.b_time = 0.05;
  spec.dispersion = 3.0;
  spec.outcome_scale = 0.5;
  config.treatment = spec;
  config.control = spec;
  config.n_per_arm = 12;
  config.end_time = 3.0;
  config.max_visits = 6;
  config.seed = 4242;
  return config;
}

void write_data(const Workspace& ws, const std::string& name) {
  SimConfig config = cli_config();
  TrialFrame frame = simulate_trial(config, config.seed);
  std::ofstream out(ws.path(name));
  emit_long_table(frame, out, TableSchema{});
}

// the simulated export already carries terminal rows, so no --end here
const std::string kFitArgs =
    "--treatment treatment --alpha=-0.3 --alpha=0 --alpha=0.3 "
    "--knots 0.3,1.5,2.7 "
    "--quad-method fixed --resolution 32 --intensity-bandwidth 0.5";

}  // namespace

TEST_CASE("cli end-to-end: fit, predict, jackknife, effect, restrict, plot-data") {
  Workspace ws;
  write_data(ws, "data.csv");

  REQUIRE(run("fit --data " + ws.path("data.csv") + " --output " +
              ws.path("bundle.json") + " " + kFitArgs) == 0);
  CHECK(fs::exists(ws.path("bundle.json")));
  CHECK(fs::exists(ws.path("bundle.json") + ".txt"));

  // refit is byte-identical
  REQUIRE(run("fit --data " + ws.path("data.csv") + " --output " +
              ws.path("bundle2.json") + " " + kFitArgs) == 0);
  CHECK(slurp(ws.path("bundle.json")) == slurp(ws.path("bundle2.json")));

  REQUIRE(run("predict --bundle " + ws.path("bundle.json") +
              " --times 0.5 1.5 2.5 --output " + ws.path("predict.csv")) == 0);
  CHECK(header(ws.path("predict.csv")) ==
        "time,alpha_control,alpha_treatment,mean_control,var_control,"
        "mean_treatment,var_treatment,mean_effect,var_effect");
  // 3 times x 3 control alphas x 3 treatment alphas + header
  std::string predict_text = slurp(ws.path("predict.csv"));
  CHECK(std::count(predict_text.begin(), predict_text.end(), '\n') == 28);

  // prediction from a model refit under a different thread bound is identical
  REQUIRE(run("fit --data " + ws.path("data.csv") + " --output " +
              ws.path("bundle_mt.json") + " --threads 3 " + kFitArgs) == 0);
  REQUIRE(run("predict --bundle " + ws.path("bundle_mt.json") +
              " --times 0.5 1.5 2.5 --output " + ws.path("predict_mt.csv")) == 0);
  CHECK(slurp(ws.path("predict_mt.csv")) == predict_text);

  REQUIRE(run("jackknife --bundle " + ws.path("bundle.json") +
              " --times 1.5 --output " + ws.path("jack.csv")) == 0);
  CHECK(header(ws.path("jack.csv")) ==
        "time,alpha_control,alpha_treatment,mean_control,var_control,"
        "mean_treatment,var_treatment,mean_effect,var_effect,"
        "mean_control_jackknife_var,mean_treatment_jackknife_var,"
        "mean_effect_jackknife_var");
  REQUIRE(run("jackknife --bundle " + ws.path("bundle.json") +
              " --times 1.5 --threads 3 --output " + ws.path("jack_mt.csv")) == 0);
  CHECK(slurp(ws.path("jack_mt.csv")) == slurp(ws.path("jack.csv")));

  REQUIRE(run("effect --bundle " + ws.path("bundle.json") +
              " --times 0.5 2.5 --output " + ws.path("effect.csv")) == 0);
  CHECK(header(ws.path("effect.csv")) ==
        "time,alpha_control,alpha_treatment,mean_treatment,mean_control,"
        "mean_effect,var_effect");

  REQUIRE(run("restrict --bundle " + ws.path("bundle.json") +
              " --mu-min 0 --mu-max 10 --spacing 0.1 --output " +
              ws.path("restrict.csv")) == 0);
  CHECK(header(ws.path("restrict.csv")) == "arm,alpha,retained");
  std::string restrict_text = slurp(ws.path("restrict.csv"));
  // generous bounds keep every alpha in both arms
  CHECK(std::count(restrict_text.begin(), restrict_text.end(), '\n') == 7);
  CHECK(restrict_text.find(",0") != std::string::npos);

  REQUIRE(run("plot-data --bundle " + ws.path("bundle.json") +
              " --times 0.5 1.5 2.5 --grid-points 21 --output-prefix " +
              ws.path("plots")) == 0);
  CHECK(header(ws.path("plots_mean_curves.csv")) == "arm,time,alpha,mean");
  CHECK(header(ws.path("plots_dot_whisker.csv")) == "arm,time,alpha,mean,lo,hi");
  CHECK(header(ws.path("plots_effect_surface.csv")) ==
        "time,alpha_control,alpha_treatment,mean_effect");
  CHECK(header(ws.path("plots_ci_bound_surface.csv")) ==
        "time,alpha_control,alpha_treatment,ci_bound");
}

TEST_CASE("cli error handling and exit codes") {
  Workspace ws;
  // missing data file -> exit 2, and no partial bundle left behind
  CHECK(run("fit --data " + ws.path("absent.csv") + " --output " +
            ws.path("bundle.json") + " " + kFitArgs) == 2);
  CHECK(!fs::exists(ws.path("bundle.json")));

  // unreadable bundle -> exit 2
  CHECK(run("predict --bundle " + ws.path("absent.json") +
            " --times 1 --output " + ws.path("p.csv")) == 2);
  CHECK(!fs::exists(ws.path("p.csv")));

  // bad usage -> CLI parse failure, nonzero exit
  CHECK(run("predict") != 0);
  CHECK(run("definitely-not-a-subcommand") != 0);
}

TEST_CASE("cli data round trip: ingest and re-emit are byte-stable") {
  Workspace ws;
  write_data(ws, "data.csv");
  std::ifstream in(ws.path("data.csv"));
  TrialFrame frame = ingest_long_table(in, TableSchema{});
  std::ostringstream out;
  emit_long_table(frame, out, TableSchema{});
  CHECK(out.str() == slurp(ws.path("data.csv")));
}
