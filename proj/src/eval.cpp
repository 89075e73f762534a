#include "madroid/eval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "madroid/device_farm.hpp"
#include "madroid/errors.hpp"
#include "madroid/view_hierarchy.hpp"

namespace madroid {
namespace {

namespace fs = std::filesystem;

NormalizedAction normalized(ActionKind kind, const std::string& user, const std::string& target,
                            const std::string& value) {
  NormalizedAction n;
  n.kind = kind;
  n.user = to_lower(user);
  n.target = to_lower(target);
  n.value = to_lower(value);
  return n;
}

std::vector<NormalizedAction> filter_user(const std::vector<NormalizedAction>& all,
                                          const std::string& user) {
  std::vector<NormalizedAction> out;
  const std::string low = to_lower(user);
  for (const NormalizedAction& n : all) {
    if (n.user == low) out.push_back(n);
  }
  return out;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

}  // namespace

std::vector<NormalizedAction> normalize_record(const ExecutionRecord& record) {
  std::vector<NormalizedAction> out;
  out.reserve(record.steps.size());
  for (const RecordedStep& step : record.steps) {
    switch (step.action.kind) {
      case ActionKind::tap:
        out.push_back(normalized(ActionKind::tap, step.user, step.resolved_target, ""));
        break;
      case ActionKind::input:
        out.push_back(
            normalized(ActionKind::input, step.user, step.resolved_target, step.action.value));
        break;
      case ActionKind::back:
        out.push_back(normalized(ActionKind::back, step.user, "", ""));
        break;
      case ActionKind::switch_user:
        out.push_back(normalized(ActionKind::switch_user, step.user, step.action.user, ""));
        break;
      case ActionKind::end_task:
        out.push_back(normalized(ActionKind::end_task, step.user, "", ""));
        break;
    }
  }
  return out;
}

std::vector<NormalizedAction> normalized_ground_truth(const Scenario& scenario,
                                                      std::uint64_t seed) {
  DeviceFarm farm(scenario, seed);
  std::vector<NormalizedAction> out;
  out.reserve(scenario.ground_truth.size());
  for (const GroundTruthEntry& entry : scenario.ground_truth) {
    Action action = entry.action;
    action.target = farm.resolve_vars(action.target);
    action.value = farm.resolve_vars(action.value);
    switch (action.kind) {
      case ActionKind::tap:
      case ActionKind::input:
      case ActionKind::back: {
        StepOutcome outcome = farm.execute(entry.user, action);
        const std::string target =
            action.kind == ActionKind::back ? std::string() : outcome.resolved_target;
        out.push_back(normalized(action.kind, entry.user, target,
                                 action.kind == ActionKind::input ? action.value : ""));
        break;
      }
      case ActionKind::switch_user:
        out.push_back(normalized(ActionKind::switch_user, entry.user, action.user, ""));
        break;
      case ActionKind::end_task:
        out.push_back(normalized(ActionKind::end_task, entry.user, "", ""));
        break;
    }
  }
  return out;
}

std::size_t lcs_length(const std::vector<NormalizedAction>& a,
                       const std::vector<NormalizedAction>& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::size_t> prev(m + 1, 0);
  std::vector<std::size_t> cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double action_similarity(const std::vector<NormalizedAction>& a,
                         const std::vector<NormalizedAction>& b) {
  if (a.empty() && b.empty()) return 1.0;
  return 2.0 * static_cast<double>(lcs_length(a, b)) / static_cast<double>(a.size() + b.size());
}

TaskSpec load_task_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read task file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("task file is not valid JSON: " + path + ": " + e.what());
  }
  TaskSpec spec;
  try {
    spec.task_id = j.at("task_id").get<std::string>();
    spec.description = j.at("description").get<std::string>();
    spec.scenario_path = j.at("scenario").get<std::string>();
    spec.expected_users = j.value("expected_users", 0);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("task file has an unexpected shape: " + path + ": " + e.what());
  }
  if (spec.task_id.empty() || spec.description.empty() || spec.scenario_path.empty()) {
    throw IoError("task file is missing task_id, description, or scenario: " + path);
  }
  fs::path scenario(spec.scenario_path);
  if (scenario.is_relative()) {
    scenario = fs::path(path).parent_path() / scenario;
  }
  spec.scenario_path = scenario.string();
  return spec;
}

EvalReport evaluate(const std::string& dataset_dir, const BackendFactory& backend_factory,
                    const EvalConfig& config) {
  if (!fs::is_directory(dataset_dir)) {
    throw IoError("dataset directory does not exist: " + dataset_dir);
  }
  std::vector<std::string> task_files;
  for (const fs::directory_entry& entry : fs::directory_iterator(dataset_dir)) {
    if (!entry.is_directory()) continue;
    fs::path candidate = entry.path() / "task.json";
    if (fs::is_regular_file(candidate)) task_files.push_back(candidate.string());
  }
  std::sort(task_files.begin(), task_files.end());

  EvalReport report;
  double success_sum = 0.0;
  double similarity_sum = 0.0;
  for (const std::string& task_file : task_files) {
    const TaskSpec spec = load_task_spec(task_file);
    const Scenario scenario = load_scenario(spec.scenario_path);
    TaskReport task_report;
    task_report.task_id = spec.task_id;
    task_report.description = spec.description;

    for (int run = 0; run < config.runs_per_task; ++run) {
      RunConfig run_config = config.base;
      run_config.seed = config.base.seed + static_cast<std::uint64_t>(run);
      if (!config.out_dir.empty()) {
        run_config.out_dir =
            (fs::path(config.out_dir) / spec.task_id / ("run_" + std::to_string(run))).string();
      } else {
        run_config.out_dir.clear();
      }
      const RunResult result = run_task(spec.description, scenario, backend_factory, run_config);

      const std::vector<NormalizedAction> truth =
          normalized_ground_truth(scenario, run_config.seed);
      const std::vector<NormalizedAction> mine = normalize_record(result.record);

      RunScore score;
      score.run_index = run;
      score.success = result.success;
      score.similarity = action_similarity(mine, truth);
      score.restarts = result.restarts_used;
      score.failure = result.failure;
      for (const std::string& label : scenario.user_labels()) {
        const std::vector<NormalizedAction> truth_user = filter_user(truth, label);
        const std::vector<NormalizedAction> mine_user = filter_user(mine, label);
        score.per_user[label] = std::to_string(lcs_length(mine_user, truth_user)) + "/" +
                                std::to_string(truth_user.size());
      }
      success_sum += score.success ? 1.0 : 0.0;
      similarity_sum += score.similarity;
      ++report.runs_total;
      if (score.failure == FailureReason::infra_error) ++report.runs_failed_infra;
      task_report.runs.push_back(std::move(score));
    }

    double task_success = 0.0;
    double task_similarity = 0.0;
    for (const RunScore& s : task_report.runs) {
      task_success += s.success ? 1.0 : 0.0;
      task_similarity += s.similarity;
    }
    const double n = static_cast<double>(task_report.runs.size());
    task_report.success_rate = n > 0 ? task_success / n : 0.0;
    task_report.mean_similarity = n > 0 ? task_similarity / n : 0.0;
    report.tasks.push_back(std::move(task_report));
  }

  report.success_rate =
      report.runs_total > 0 ? success_sum / static_cast<double>(report.runs_total) : 0.0;
  report.mean_similarity =
      report.runs_total > 0 ? similarity_sum / static_cast<double>(report.runs_total) : 0.0;

  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    {
      std::ofstream out(fs::path(config.out_dir) / "report.json");
      if (!out) throw IoError("cannot write report.json under " + config.out_dir);
      out << report_to_json(report).dump(2) << "\n";
    }
    {
      std::ofstream out(fs::path(config.out_dir) / "report.csv");
      if (!out) throw IoError("cannot write report.csv under " + config.out_dir);
      out << report_to_csv(report);
    }
  }
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const TaskReport& task : report.tasks) {
    nlohmann::json runs = nlohmann::json::array();
    for (const RunScore& score : task.runs) {
      runs.push_back({
          {"run", score.run_index},
          {"success", score.success},
          {"similarity", score.similarity},
          {"restarts", score.restarts},
          {"failure", to_string(score.failure)},
          {"actions_per_user", score.per_user},
      });
    }
    tasks.push_back({
        {"task_id", task.task_id},
        {"description", task.description},
        {"runs", std::move(runs)},
        {"success_rate", task.success_rate},
        {"mean_similarity", task.mean_similarity},
    });
  }
  return {
      {"report_version", 1},
      {"tasks", std::move(tasks)},
      {"runs_total", report.runs_total},
      {"runs_failed_infra", report.runs_failed_infra},
      {"success_rate", report.success_rate},
      {"mean_similarity", report.mean_similarity},
  };
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "task_id,run,success,similarity,restarts,failure,actions_per_user\n";
  for (const TaskReport& task : report.tasks) {
    for (const RunScore& score : task.runs) {
      std::string per_user;
      for (const auto& [label, counts] : score.per_user) {
        if (!per_user.empty()) per_user += ";";
        per_user += label + "=" + counts;
      }
      std::ostringstream similarity;
      similarity << score.similarity;
      out << csv_field(task.task_id) << "," << score.run_index << ","
          << (score.success ? "true" : "false") << "," << similarity.str() << ","
          << score.restarts << "," << to_string(score.failure) << "," << csv_field(per_user)
          << "\n";
    }
  }
  return out.str();
}

}  // namespace madroid
