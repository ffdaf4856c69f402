#pragma once

#include <string>

#include "sensiat/sensitivity.hpp"
#include "sensiat/trial_data.hpp"

namespace sensiat {

// Analysis configuration shared by the CLI and the config file loader.
struct AnalysisConfig {
  std::string data_path;
  TableSchema schema;
  std::string treatment_label = "treatment";
  double end_time = kMissing;  // terminal observations added when set
  int max_visits = 0;          // 0 = inferred from the data
  EngineOptions engine;
};

AnalysisConfig load_analysis_config(const std::string& path);
AnalysisConfig parse_analysis_config_text(const std::string& json_text);

// Versioned self-describing JSON container with everything prediction and
// jackknife need (no refitting); writes a human-readable .txt sidecar.
void save_bundle(const SensitivityModel& model, const std::string& path);
SensitivityModel load_bundle(const std::string& path);

}  // namespace sensiat
