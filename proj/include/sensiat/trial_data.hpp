#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sensiat/common.hpp"

namespace sensiat {

struct AssessmentRecord {
  double time = 0.0;
  double outcome = kMissing;  // NaN only on terminal rows
  std::map<std::string, double> num_cov;
  std::map<std::string, std::string> cat_cov;
};

struct Subject {
  std::string id;
  std::string arm;
  std::vector<AssessmentRecord> rows;  // time-sorted, rows[0] is baseline (t=0)

  int post_baseline_events() const;  // non-missing rows after baseline
  bool has_terminal_row() const;
};

// Long-format trial data grouped by subject.  Subjects keep their input
// order so that downstream reductions are stable under id relabeling.
struct TrialFrame {
  std::vector<Subject> subjects;
  std::vector<std::string> num_cov_names;
  std::vector<std::string> cat_cov_names;
  double end_time = kMissing;
  int max_visits = 0;  // 0 = not yet set/inferred

  std::vector<std::string> arm_labels() const;  // distinct, in appearance order
  int inferred_max_visits() const;
  void validate() const;
};

struct TableSchema {
  std::string id = "id";
  std::string arm = "arm";
  std::string time = "time";
  std::string outcome = "outcome";
  char delimiter = ',';
};

TrialFrame ingest_long_table(std::istream& in, const TableSchema& schema);
void emit_long_table(const TrialFrame& frame, std::ostream& out, const TableSchema& schema);

// Adds one non-event row at end_time for every subject with fewer than
// max_visits post-baseline assessments.
TrialFrame add_terminal_observations(const TrialFrame& frame, double end_time, int max_visits);

struct CountingProcessRecord {
  int subject_index = 0;
  int visit_number = 0;  // k, starting at 1 for the first post-baseline row
  double time = 0.0;
  double outcome = kMissing;
  double prev_outcome = 0.0;
  double prev_time = 0.0;
  double delta_time = 0.0;
  bool event = false;
  int row_index = 0;  // index into subjects[subject_index].rows
};

std::vector<CountingProcessRecord> derive_counting_process(const TrialFrame& frame);

// Returns (treatment, control).
std::pair<TrialFrame, TrialFrame> split_by_arm(const TrialFrame& frame,
                                               const std::string& treatment_label);

// Shortest round-trip decimal formatting used for all emitted numbers.
std::string format_double(double v);

}  // namespace sensiat
