#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madroid/orchestrator.hpp"
#include "madroid/scenario.hpp"

namespace madroid {

// One action in the form used for sequence comparison: the user that took
// it, the primitive kind, and the environment-resolved identity of what it
// touched. Switch messages and screen details are deliberately excluded.
struct NormalizedAction {
  ActionKind kind = ActionKind::back;
  std::string user;
  std::string target;  // resolved resource id or text; switch destination
  std::string value;   // input only

  bool operator==(const NormalizedAction&) const = default;
};

std::vector<NormalizedAction> normalize_record(const ExecutionRecord& record);

// Replays the scenario's reference action sequence on a fresh farm at the
// given seed, capturing resolved targets and generated values, so runs can
// be compared against it position by position.
std::vector<NormalizedAction> normalized_ground_truth(const Scenario& scenario,
                                                      std::uint64_t seed);

std::size_t lcs_length(const std::vector<NormalizedAction>& a,
                       const std::vector<NormalizedAction>& b);

// 2 * LCS / (|a| + |b|); two empty sequences count as identical (1.0).
double action_similarity(const std::vector<NormalizedAction>& a,
                         const std::vector<NormalizedAction>& b);

// One task directory of a dataset: task.json next to the scenario it points
// at.
struct TaskSpec {
  std::string task_id;
  std::string description;
  std::string scenario_path;  // absolute, resolved against the spec file
  int expected_users = 0;
};

TaskSpec load_task_spec(const std::string& path);

struct RunScore {
  int run_index = 0;
  bool success = false;
  double similarity = 0.0;
  int restarts = 0;
  FailureReason failure = FailureReason::none;
  // user label -> "matched/reference" action counts for that user
  std::map<std::string, std::string> per_user;
};

struct TaskReport {
  std::string task_id;
  std::string description;
  std::vector<RunScore> runs;
  double success_rate = 0.0;
  double mean_similarity = 0.0;
};

struct EvalReport {
  std::vector<TaskReport> tasks;
  int runs_total = 0;
  int runs_failed_infra = 0;
  double success_rate = 0.0;
  double mean_similarity = 0.0;
};

struct EvalConfig {
  RunConfig base;       // seed is advanced by the run index
  int runs_per_task = 3;
  std::string out_dir;  // empty -> no per-run artifacts and no report files
};

// Runs every task directory under `dataset_dir` (any directory containing a
// task.json) `runs_per_task` times and scores each run by task success and
// by action-sequence similarity to the reference sequence. A run that fails
// (including infrastructure failures) is scored and recorded, never fatal.
// When out_dir is set, per-run artifacts land in out_dir/<task>/run_<n>/ and
// the report is written as report.json and report.csv.
EvalReport evaluate(const std::string& dataset_dir, const BackendFactory& backend_factory,
                    const EvalConfig& config);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

}  // namespace madroid
