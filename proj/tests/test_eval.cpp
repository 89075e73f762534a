#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madroid/device_farm.hpp"
#include "madroid/errors.hpp"
#include "madroid/eval.hpp"
#include "madroid/orchestrator.hpp"

using namespace madroid;

namespace {

const char* const kDatasetDir = MADROID_DATASET_DIR;

BackendFactory oracle_factory() {
  return [](const Scenario& scenario, const DeviceFarm& farm) {
    return make_oracle_backend(scenario, farm);
  };
}

// Reference implementation by definition: plain exponential recursion.
std::size_t lcs_brute(const std::vector<NormalizedAction>& a,
                      const std::vector<NormalizedAction>& b, std::size_t i, std::size_t j) {
  if (i == a.size() || j == b.size()) return 0;
  if (a[i] == b[j]) return 1 + lcs_brute(a, b, i + 1, j + 1);
  return std::max(lcs_brute(a, b, i + 1, j), lcs_brute(a, b, i, j + 1));
}

NormalizedAction symbol(int id) {
  NormalizedAction n;
  n.kind = ActionKind::tap;
  n.user = "user_a";
  n.target = "t" + std::to_string(id);
  return n;
}

std::string fresh_dir(const std::string& name) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(path);
  return path.string();
}

}  // namespace

TEST_CASE("lcs_length matches exponential brute force on random pairs") {
  std::mt19937 rng(20260823);
  std::uniform_int_distribution<int> len_dist(0, 8);
  std::uniform_int_distribution<int> sym_dist(0, 4);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<NormalizedAction> a;
    std::vector<NormalizedAction> b;
    const int na = len_dist(rng);
    const int nb = len_dist(rng);
    for (int i = 0; i < na; ++i) a.push_back(symbol(sym_dist(rng)));
    for (int i = 0; i < nb; ++i) b.push_back(symbol(sym_dist(rng)));

    const std::size_t expected = lcs_brute(a, b, 0, 0);
    REQUIRE(lcs_length(a, b) == expected);
    if (na + nb > 0) {
      REQUIRE(action_similarity(a, b) ==
              2.0 * static_cast<double>(expected) / static_cast<double>(na + nb));
    }
  }
}

TEST_CASE("similarity handles the edge sequences") {
  std::vector<NormalizedAction> empty;
  std::vector<NormalizedAction> abc = {symbol(0), symbol(1), symbol(2)};
  std::vector<NormalizedAction> ac = {symbol(0), symbol(2)};

  CHECK(action_similarity(empty, empty) == 1.0);
  CHECK(action_similarity(abc, empty) == 0.0);
  CHECK(action_similarity(empty, abc) == 0.0);
  CHECK(action_similarity(abc, abc) == 1.0);
  CHECK(action_similarity(abc, ac) == doctest::Approx(0.8));
  CHECK(lcs_length(abc, ac) == 2);
}

TEST_CASE("record normalization keeps kind, user, resolved target and value") {
  ExecutionRecord record;
  auto add = [&](const std::string& user, Action action, const std::string& resolved) {
    RecordedStep step;
    step.step_index = static_cast<int>(record.steps.size());
    step.user = user;
    step.action = std::move(action);
    step.resolved_target = resolved;
    record.steps.push_back(std::move(step));
  };
  add("User_A", Action::tap("Video call"), "com.meetly:id/video_call_button");
  add("User_A", Action::switch_user("user_B", "ring ring"), "");
  add("user_B", Action::input("Code Field", "4821"), "com.app:id/code_field");
  add("user_B", Action::back(), "");
  add("user_B", Action::end_task(), "");

  std::vector<NormalizedAction> n = normalize_record(record);
  REQUIRE(n.size() == 5);
  CHECK(n[0] == NormalizedAction{ActionKind::tap, "user_a", "com.meetly:id/video_call_button", ""});
  // Switch normalization keeps the destination, drops the message.
  CHECK(n[1] == NormalizedAction{ActionKind::switch_user, "user_a", "user_b", ""});
  CHECK(n[2] == NormalizedAction{ActionKind::input, "user_b", "com.app:id/code_field", "4821"});
  CHECK(n[3] == NormalizedAction{ActionKind::back, "user_b", "", ""});
  CHECK(n[4] == NormalizedAction{ActionKind::end_task, "user_b", "", ""});
}

TEST_CASE("clean reference runs normalize identically to the reference sequence") {
  for (const char* name : {"invite_accept", "join_by_code", "group_call_decline",
                           "host_join_code", "expiring_call"}) {
    CAPTURE(name);
    Scenario scenario = load_scenario(std::string(kDatasetDir) + "/" + name + "/scenario.json");
    RunConfig config;
    config.seed = 77;
    RunResult result = run_task("reference run", scenario, oracle_factory(), config);
    REQUIRE(result.success);

    std::vector<NormalizedAction> truth = normalized_ground_truth(scenario, config.seed);
    std::vector<NormalizedAction> mine = normalize_record(result.record);
    CHECK(truth == mine);
    CHECK(action_similarity(mine, truth) == 1.0);
  }
}

TEST_CASE("task specs resolve their scenario path against the spec file") {
  const std::string path = std::string(kDatasetDir) + "/invite_accept/task.json";
  TaskSpec spec = load_task_spec(path);
  CHECK(spec.task_id == "invite_accept");
  CHECK(!spec.description.empty());
  CHECK(spec.expected_users == 2);
  CHECK(std::filesystem::path(spec.scenario_path).is_absolute());
  CHECK(spec.scenario_path ==
        (std::filesystem::path(kDatasetDir) / "invite_accept" / "scenario.json").string());
  CHECK_NOTHROW(load_scenario(spec.scenario_path));
}

TEST_CASE("task spec loading rejects missing or malformed files") {
  CHECK_THROWS_AS(load_task_spec("/no/such/task.json"), IoError);

  const std::string dir = fresh_dir("madroid_eval_badspec");
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/task.json");
    out << "not json at all";
  }
  CHECK_THROWS_AS(load_task_spec(dir + "/task.json"), IoError);
  {
    std::ofstream out(dir + "/task.json");
    out << R"({"task_id": "x", "description": "y"})";  // scenario missing
  }
  CHECK_THROWS_AS(load_task_spec(dir + "/task.json"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluating the bundled dataset scores every run perfect") {
  const std::string out_dir = fresh_dir("madroid_eval_out");
  EvalConfig config;
  config.base.seed = 100;
  config.runs_per_task = 2;
  config.out_dir = out_dir;

  EvalReport report = evaluate(kDatasetDir, oracle_factory(), config);

  REQUIRE(report.tasks.size() == 5);
  CHECK(report.runs_total == 10);
  CHECK(report.runs_failed_infra == 0);
  CHECK(report.success_rate == 1.0);
  CHECK(report.mean_similarity == 1.0);

  // Task directories are visited in sorted order.
  CHECK(report.tasks[0].task_id == "expiring_call");
  CHECK(report.tasks[1].task_id == "group_call_decline");
  CHECK(report.tasks[2].task_id == "host_join_code");
  CHECK(report.tasks[3].task_id == "invite_accept");
  CHECK(report.tasks[4].task_id == "join_by_code");

  for (const TaskReport& task : report.tasks) {
    CHECK(task.success_rate == 1.0);
    CHECK(task.mean_similarity == 1.0);
    REQUIRE(task.runs.size() == 2);
    for (const RunScore& run : task.runs) {
      CHECK(run.success);
      CHECK(run.similarity == 1.0);
      CHECK(run.restarts == 0);
      CHECK(run.failure == FailureReason::none);
    }
  }

  // Per-user counts report matched/reference actions for each user.
  const TaskReport& invite = report.tasks[3];
  CHECK(invite.runs[0].per_user.at("user_A") == "2/2");
  CHECK(invite.runs[0].per_user.at("user_B") == "2/2");
  const TaskReport& join = report.tasks[4];
  CHECK(join.runs[0].per_user.at("user_A") == "2/2");
  CHECK(join.runs[0].per_user.at("user_B") == "4/4");

  // Report files and per-run artifacts exist and parse.
  nlohmann::json report_json;
  {
    std::ifstream in(out_dir + "/report.json");
    REQUIRE(in.good());
    in >> report_json;
  }
  CHECK(report_json.at("report_version") == 1);
  CHECK(report_json.at("runs_total") == 10);
  CHECK(report_json.at("tasks").size() == 5);

  std::ifstream csv(out_dir + "/report.csv");
  REQUIRE(csv.good());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "task_id,run,success,similarity,restarts,failure,actions_per_user");
  int rows = 0;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 10);

  RunResult stored = load_result(out_dir + "/invite_accept/run_0/result.json");
  CHECK(stored.success);
  CHECK(std::filesystem::is_regular_file(out_dir + "/invite_accept/run_0/transcript.jsonl"));
  std::filesystem::remove_all(out_dir);
}

TEST_CASE("an empty dataset produces an empty report") {
  const std::string dir = fresh_dir("madroid_eval_empty");
  std::filesystem::create_directories(dir);
  EvalConfig config;
  EvalReport report = evaluate(dir, oracle_factory(), config);
  CHECK(report.tasks.empty());
  CHECK(report.runs_total == 0);
  CHECK(report.success_rate == 0.0);
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(evaluate("/no/such/dataset", oracle_factory(), config), IoError);
}

TEST_CASE("failing runs are scored instead of aborting the evaluation") {
  // A one-task dataset pointing at a bundled scenario, driven by a backend
  // that cannot answer anything.
  const std::string dir = fresh_dir("madroid_eval_failing");
  std::filesystem::create_directories(dir + "/broken_task");
  {
    std::ofstream out(dir + "/broken_task/task.json");
    out << nlohmann::json{
               {"task_id", "broken_task"},
               {"description", "a run that cannot work"},
               {"scenario", std::string(kDatasetDir) + "/invite_accept/scenario.json"},
               {"expected_users", 2},
           }.dump();
  }

  BackendFactory mute = [](const Scenario&, const DeviceFarm&) {
    return make_scripted_backend({});
  };
  EvalConfig config;
  config.runs_per_task = 1;
  EvalReport report = evaluate(dir, mute, config);

  REQUIRE(report.tasks.size() == 1);
  REQUIRE(report.tasks[0].runs.size() == 1);
  const RunScore& score = report.tasks[0].runs[0];
  CHECK_FALSE(score.success);
  CHECK(score.failure == FailureReason::infra_error);
  CHECK(score.similarity == 0.0);  // empty record vs non-empty reference
  CHECK(report.runs_failed_infra == 1);
  CHECK(report.success_rate == 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("csv rendering quotes awkward fields and joins per-user counts") {
  EvalReport report;
  TaskReport task;
  task.task_id = "task, with comma";
  task.description = "d";
  RunScore score;
  score.run_index = 0;
  score.success = true;
  score.similarity = 0.5;
  score.restarts = 1;
  score.failure = FailureReason::none;
  score.per_user = {{"user_A", "1/2"}, {"user_B", "3/3"}};
  task.runs.push_back(score);
  report.tasks.push_back(task);

  const std::string csv = report_to_csv(report);
  CHECK(csv.find("\"task, with comma\",0,true,0.5,1,none,user_A=1/2;user_B=3/3\n") !=
        std::string::npos);
}
