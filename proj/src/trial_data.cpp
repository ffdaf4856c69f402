#include "sensiat/trial_data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace sensiat {

int Subject::post_baseline_events() const {
  int n = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (!is_missing(rows[i].outcome)) ++n;
  }
  return n;
}

bool Subject::has_terminal_row() const {
  return !rows.empty() && is_missing(rows.back().outcome);
}

std::vector<std::string> TrialFrame::arm_labels() const {
  std::vector<std::string> labels;
  for (const auto& s : subjects) {
    if (std::find(labels.begin(), labels.end(), s.arm) == labels.end()) {
      labels.push_back(s.arm);
    }
  }
  return labels;
}

int TrialFrame::inferred_max_visits() const {
  int m = 0;
  for (const auto& s : subjects) m = std::max(m, s.post_baseline_events());
  return m;
}

void TrialFrame::validate() const {
  for (const auto& s : subjects) {
    if (s.rows.empty()) {
      throw ValidationError("subject " + s.id + ": no records");
    }
    if (s.rows.front().time != 0.0) {
      throw ValidationError("subject " + s.id + ": missing baseline row at time 0");
    }
    if (is_missing(s.rows.front().outcome)) {
      throw ValidationError("subject " + s.id + ": baseline outcome is missing");
    }
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
      const auto& r = s.rows[i];
      if (r.time < 0.0) {
        throw ValidationError("subject " + s.id + ": negative time at row " +
                              std::to_string(i + 1));
      }
      if (i > 0 && r.time <= s.rows[i - 1].time) {
        throw ValidationError("subject " + s.id + ": duplicate assessment time at t=" +
                              format_double(r.time));
      }
      if (is_missing(r.outcome) && i + 1 != s.rows.size()) {
        throw ValidationError("subject " + s.id +
                              ": missing outcome on non-terminal row at t=" +
                              format_double(r.time));
      }
    }
  }
}

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.push_back("");
  return out;
}

bool parse_number(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return false;
  *out = v;
  return true;
}

bool field_missing(const std::string& s) { return s.empty() || s == "NA"; }

}  // namespace

TrialFrame ingest_long_table(std::istream& in, const TableSchema& schema) {
  std::string header;
  if (!std::getline(in, header)) {
    throw ValidationError("empty input: header row required");
  }
  if (!header.empty() && header.back() == '\r') header.pop_back();
  const auto cols = split_line(header, schema.delimiter);

  int id_col = -1, arm_col = -1, time_col = -1, outcome_col = -1;
  std::vector<int> cov_cols;
  for (int c = 0; c < static_cast<int>(cols.size()); ++c) {
    if (cols[c] == schema.id) id_col = c;
    else if (cols[c] == schema.arm) arm_col = c;
    else if (cols[c] == schema.time) time_col = c;
    else if (cols[c] == schema.outcome) outcome_col = c;
    else cov_cols.push_back(c);
  }
  if (id_col < 0 || arm_col < 0 || time_col < 0 || outcome_col < 0) {
    throw ValidationError("header must contain columns " + schema.id + ", " + schema.arm +
                          ", " + schema.time + ", " + schema.outcome);
  }

  // Covariate columns are numeric unless any non-missing value fails to parse.
  struct RawRow {
    std::string id, arm;
    double time, outcome;
    std::vector<std::string> cov;
  };
  std::vector<RawRow> raw;
  std::vector<bool> cov_numeric(cov_cols.size(), true);
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_line(line, schema.delimiter);
    if (f.size() != cols.size()) {
      throw ValidationError("line " + std::to_string(lineno) + ": expected " +
                            std::to_string(cols.size()) + " fields, got " +
                            std::to_string(f.size()));
    }
    RawRow r;
    r.id = f[id_col];
    r.arm = f[arm_col];
    if (!parse_number(f[time_col], &r.time)) {
      throw ValidationError("line " + std::to_string(lineno) + ": bad time value '" +
                            f[time_col] + "'");
    }
    if (field_missing(f[outcome_col])) {
      r.outcome = kMissing;
    } else if (!parse_number(f[outcome_col], &r.outcome)) {
      throw ValidationError("line " + std::to_string(lineno) + ": bad outcome value '" +
                            f[outcome_col] + "'");
    }
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      const std::string& v = f[cov_cols[j]];
      r.cov.push_back(v);
      double dummy;
      if (!field_missing(v) && !parse_number(v, &dummy)) cov_numeric[j] = false;
    }
    raw.push_back(std::move(r));
  }

  TrialFrame frame;
  for (std::size_t j = 0; j < cov_cols.size(); ++j) {
    if (cov_numeric[j]) frame.num_cov_names.push_back(cols[cov_cols[j]]);
    else frame.cat_cov_names.push_back(cols[cov_cols[j]]);
  }

  std::unordered_map<std::string, int> index;
  for (auto& r : raw) {
    auto [it, inserted] = index.try_emplace(r.id, static_cast<int>(frame.subjects.size()));
    if (inserted) {
      frame.subjects.push_back(Subject{r.id, r.arm, {}});
    }
    Subject& s = frame.subjects[it->second];
    if (s.arm != r.arm) {
      throw ValidationError("subject " + r.id + ": inconsistent arm labels");
    }
    AssessmentRecord rec;
    rec.time = r.time;
    rec.outcome = r.outcome;
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      const std::string& name = cols[cov_cols[j]];
      if (cov_numeric[j]) {
        double v = kMissing;
        if (!field_missing(r.cov[j])) parse_number(r.cov[j], &v);
        rec.num_cov[name] = v;
      } else {
        rec.cat_cov[name] = r.cov[j];
      }
    }
    s.rows.push_back(std::move(rec));
  }

  for (auto& s : frame.subjects) {
    std::stable_sort(s.rows.begin(), s.rows.end(),
                     [](const AssessmentRecord& a, const AssessmentRecord& b) {
                       return a.time < b.time;
                     });
  }
  frame.validate();
  return frame;
}

void emit_long_table(const TrialFrame& frame, std::ostream& out, const TableSchema& schema) {
  const char d = schema.delimiter;
  out << schema.id << d << schema.arm << d << schema.time << d << schema.outcome;
  for (const auto& n : frame.num_cov_names) out << d << n;
  for (const auto& n : frame.cat_cov_names) out << d << n;
  out << '\n';
  for (const auto& s : frame.subjects) {
    for (const auto& r : s.rows) {
      out << s.id << d << s.arm << d << format_double(r.time) << d
          << (is_missing(r.outcome) ? std::string("NA") : format_double(r.outcome));
      for (const auto& n : frame.num_cov_names) {
        auto it = r.num_cov.find(n);
        out << d;
        if (it == r.num_cov.end() || is_missing(it->second)) out << "NA";
        else out << format_double(it->second);
      }
      for (const auto& n : frame.cat_cov_names) {
        auto it = r.cat_cov.find(n);
        out << d << (it == r.cat_cov.end() ? std::string("NA") : it->second);
      }
      out << '\n';
    }
  }
}

TrialFrame add_terminal_observations(const TrialFrame& frame, double end_time,
                                     int max_visits) {
  frame.validate();
  for (const auto& s : frame.subjects) {
    if (s.has_terminal_row()) {
      throw ValidationError("subject " + s.id +
                            ": frame already contains missing outcomes; terminal rows "
                            "must not be mixed with add_terminal_observations");
    }
    if (!s.rows.empty() && end_time <= s.rows.back().time) {
      throw ValidationError("end_time " + format_double(end_time) +
                            " does not exceed last observed time for subject " + s.id);
    }
  }
  int observed_max = frame.inferred_max_visits();
  if (max_visits < observed_max) {
    throw ValidationError("max_visits " + std::to_string(max_visits) +
                          " below observed maximum " + std::to_string(observed_max));
  }

  TrialFrame out = frame;
  out.end_time = end_time;
  out.max_visits = max_visits;
  for (auto& s : out.subjects) {
    if (s.post_baseline_events() < max_visits) {
      AssessmentRecord term;
      term.time = end_time;
      term.outcome = kMissing;
      // carry covariates forward from the last assessment
      term.num_cov = s.rows.back().num_cov;
      term.cat_cov = s.rows.back().cat_cov;
      s.rows.push_back(std::move(term));
    }
  }
  return out;
}

std::vector<CountingProcessRecord> derive_counting_process(const TrialFrame& frame) {
  frame.validate();
  std::vector<CountingProcessRecord> out;
  for (int si = 0; si < static_cast<int>(frame.subjects.size()); ++si) {
    const Subject& s = frame.subjects[si];
    for (std::size_t ri = 1; ri < s.rows.size(); ++ri) {
      const AssessmentRecord& prev = s.rows[ri - 1];
      const AssessmentRecord& cur = s.rows[ri];
      CountingProcessRecord r;
      r.subject_index = si;
      r.visit_number = static_cast<int>(ri);
      r.time = cur.time;
      r.outcome = cur.outcome;
      r.prev_outcome = prev.outcome;
      r.prev_time = prev.time;
      r.delta_time = cur.time - prev.time;
      r.event = !is_missing(cur.outcome);
      r.row_index = static_cast<int>(ri);
      out.push_back(r);
    }
  }
  return out;
}

std::pair<TrialFrame, TrialFrame> split_by_arm(const TrialFrame& frame,
                                               const std::string& treatment_label) {
  auto labels = frame.arm_labels();
  if (labels.size() != 2) {
    throw ValidationError("expected exactly 2 arms, found " +
                          std::to_string(labels.size()));
  }
  if (std::find(labels.begin(), labels.end(), treatment_label) == labels.end()) {
    throw ValidationError("treatment label '" + treatment_label + "' not present");
  }
  TrialFrame trt = frame, ctl = frame;
  trt.subjects.clear();
  ctl.subjects.clear();
  for (const auto& s : frame.subjects) {
    (s.arm == treatment_label ? trt : ctl).subjects.push_back(s);
  }
  if (trt.subjects.empty()) throw ValidationError("treatment arm empty");
  if (ctl.subjects.empty()) throw ValidationError("second arm empty");
  return {trt, ctl};
}

}  // namespace sensiat
