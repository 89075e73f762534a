// Command-line front end: run one task, plan only, score a dataset, verify a
// recorded run, or drive a scenario by hand.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "madroid/agents.hpp"
#include "madroid/device_farm.hpp"
#include "madroid/errors.hpp"
#include "madroid/eval.hpp"
#include "madroid/gateway.hpp"
#include "madroid/orchestrator.hpp"
#include "madroid/scenario.hpp"
#include "madroid/view_hierarchy.hpp"

namespace {

namespace fs = std::filesystem;
using namespace madroid;

constexpr const char* kVersion = "0.1.0";

constexpr int kExitSuccess = 0;
constexpr int kExitTaskFailed = 1;
constexpr int kExitError = 2;

// Settings shared by the subcommands, resolved with precedence
// flag > environment variable > config file > built-in default.
struct CommonOpts {
  std::string backend_kind = "oracle";  // oracle | remote
  std::string endpoint;
  std::string model;
  std::string api_key_env = "MADROID_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 3;
  std::string config_file;
  std::string prompts_dir;

  CLI::Option* backend_opt = nullptr;
  CLI::Option* endpoint_opt = nullptr;
  CLI::Option* model_opt = nullptr;
  CLI::Option* api_key_env_opt = nullptr;
  CLI::Option* timeout_opt = nullptr;
  CLI::Option* retries_opt = nullptr;
};

void add_common_options(CLI::App* cmd, CommonOpts& opts) {
  opts.backend_opt = cmd->add_option("--backend", opts.backend_kind,
                                     "Answer backend: oracle (scripted ground truth) or remote")
                         ->check(CLI::IsMember({"oracle", "remote"}));
  opts.endpoint_opt =
      cmd->add_option("--endpoint", opts.endpoint, "Chat-completion endpoint URL (remote)");
  opts.model_opt = cmd->add_option("--model", opts.model, "Model name (remote)");
  opts.api_key_env_opt = cmd->add_option("--api-key-env", opts.api_key_env,
                                         "Environment variable holding the API key (remote)");
  opts.timeout_opt =
      cmd->add_option("--timeout", opts.timeout_s, "Remote request timeout in seconds");
  opts.retries_opt = cmd->add_option("--retries", opts.max_retries, "Remote retry attempts");
  cmd->add_option("--config", opts.config_file, "key=value settings file (lowest precedence)");
  cmd->add_option("--prompts-dir", opts.prompts_dir,
                  "Directory of prompt template overrides (<name>.txt)");
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw BadConfig("cannot read config file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t begin = line.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    std::size_t end = line.find_last_not_of(" \t\r");
    std::string trimmed = line.substr(begin, end - begin + 1);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw BadConfig("config file " + path + " line " + std::to_string(line_no) +
                      ": expected key=value");
    }
    std::string key = trimmed.substr(0, eq);
    std::string value = trimmed.substr(eq + 1);
    auto strip = [](std::string& s) {
      std::size_t b = s.find_first_not_of(" \t");
      if (b == std::string::npos) {
        s.clear();
        return;
      }
      std::size_t e = s.find_last_not_of(" \t");
      s = s.substr(b, e - b + 1);
      if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                            (s.front() == '\'' && s.back() == '\''))) {
        s = s.substr(1, s.size() - 2);
      }
    };
    strip(key);
    strip(value);
    if (key.empty()) {
      throw BadConfig("config file " + path + " line " + std::to_string(line_no) + ": empty key");
    }
    out[key] = value;
  }
  return out;
}

std::optional<std::string> env_value(const char* name) {
  const char* value = std::getenv(name);
  if (value == nullptr || *value == '\0') return std::nullopt;
  return std::string(value);
}

// Applies environment variables and the config file to every option the user
// did not set on the command line.
void finalize_common(CommonOpts& opts) {
  std::map<std::string, std::string> file;
  if (!opts.config_file.empty()) file = parse_config_file(opts.config_file);

  auto fill = [&](CLI::Option* flag, std::string& slot, const char* env_name,
                  const char* file_key) {
    if (flag != nullptr && flag->count() > 0) return;
    if (env_name != nullptr) {
      if (auto v = env_value(env_name)) {
        slot = *v;
        return;
      }
    }
    auto it = file.find(file_key);
    if (it != file.end()) slot = it->second;
  };

  fill(opts.backend_opt, opts.backend_kind, nullptr, "backend");
  fill(opts.endpoint_opt, opts.endpoint, "MADROID_ENDPOINT", "endpoint");
  fill(opts.model_opt, opts.model, "MADROID_MODEL", "model");
  fill(opts.api_key_env_opt, opts.api_key_env, nullptr, "api_key_env");
  if (opts.timeout_opt == nullptr || opts.timeout_opt->count() == 0) {
    if (auto it = file.find("timeout_s"); it != file.end()) opts.timeout_s = std::stod(it->second);
  }
  if (opts.retries_opt == nullptr || opts.retries_opt->count() == 0) {
    if (auto it = file.find("max_retries"); it != file.end()) {
      opts.max_retries = std::stoi(it->second);
    }
  }
  if (opts.prompts_dir.empty()) {
    if (auto it = file.find("prompts_dir"); it != file.end()) opts.prompts_dir = it->second;
  }
  if (opts.backend_kind != "oracle" && opts.backend_kind != "remote") {
    throw BadConfig("unknown backend kind: " + opts.backend_kind);
  }
}

BackendConfig remote_config(const CommonOpts& opts) {
  BackendConfig config;
  config.kind = BackendConfig::Kind::remote;
  config.endpoint_url = opts.endpoint;
  config.model_name = opts.model;
  config.api_key_env = opts.api_key_env;
  config.timeout_s = opts.timeout_s;
  config.max_retries = opts.max_retries;
  return config;
}

BackendFactory make_factory(const CommonOpts& opts) {
  BackendConfig config;
  if (opts.backend_kind == "remote") {
    config = remote_config(opts);
  } else {
    config.kind = BackendConfig::Kind::oracle;
  }
  return backend_factory_from_config(std::move(config));
}

void print_plan(const TaskPlan& plan) {
  std::cout << "plan: " << plan.user_count << " users, first " << plan.first_user << "\n";
  for (const auto& [label, text] : plan.sub_tasks) {
    std::cout << "  " << label << ": " << text << "\n";
  }
}

void print_result(const RunResult& result) {
  for (const RecordedStep& step : result.record.steps) {
    std::cout << "step " << step.step_index << " | " << step.user << " | "
              << render_action(step.action);
    if (is_device_action(step.action.kind)) {
      std::cout << (step.changed ? " -> changed" : step.ineffective ? " -> no effect" : "");
    }
    std::cout << "\n";
  }
  for (const ReviewEvent& event : result.reviews) {
    std::cout << "review after " << event.device_count << " device actions ("
              << (event.phase == ReviewPhase::periodic ? "periodic" : "final") << "): ";
    switch (event.verdict) {
      case VerdictStatus::ok:
        std::cout << "ok";
        break;
      case VerdictStatus::error_at:
        std::cout << "error at step " << event.step_index;
        break;
      case VerdictStatus::complete:
        std::cout << "complete";
        break;
      case VerdictStatus::incomplete:
        std::cout << "incomplete";
        break;
    }
    std::cout << "\n";
  }
  if (result.success) {
    std::cout << "result: success (" << result.restarts_used << " restarts)\n";
  } else {
    std::cout << "result: failure [" << to_string(result.failure) << "] "
              << result.failure_detail << " (" << result.restarts_used << " restarts)\n";
  }
  if (!result.transcript_path.empty()) {
    std::cout << "artifacts: " << fs::path(result.transcript_path).parent_path().string() << "\n";
  }
}

struct RunArgs {
  std::string scenario_path;
  std::string task_dir;
  std::string task_text;
  std::string out_dir;
  std::uint64_t seed = 0;
  RunConfig config;

  // Optional single-shot fault injection, for demonstrating recovery.
  std::string fault_user;
  int fault_step = 0;
  std::string fault_action;
};

int cmd_run(const CommonOpts& common, const RunArgs& args) {
  std::string scenario_path = args.scenario_path;
  std::string task_text = args.task_text;
  if (!args.task_dir.empty()) {
    const TaskSpec spec = load_task_spec((fs::path(args.task_dir) / "task.json").string());
    if (scenario_path.empty()) scenario_path = spec.scenario_path;
    if (task_text.empty()) task_text = spec.description;
  }
  if (scenario_path.empty()) {
    throw BadConfig("run needs --scenario or --task-dir");
  }
  const Scenario scenario = load_scenario(scenario_path);
  if (task_text.empty()) {
    throw BadConfig("run needs a task description (--task or --task-dir)");
  }
  RunConfig config = args.config;
  config.seed = args.seed;
  config.out_dir = args.out_dir;
  config.prompts_dir = common.prompts_dir;

  BackendFactory factory = make_factory(common);
  if (!args.fault_user.empty() || !args.fault_action.empty()) {
    if (args.fault_user.empty() || args.fault_action.empty()) {
      throw BadConfig("fault injection needs both --fault-user and --fault-action");
    }
    BackendConfig wrapper;
    wrapper.kind = BackendConfig::Kind::fault;
    wrapper.fault = FaultSpec{args.fault_user, args.fault_step, args.fault_action};
    if (common.backend_kind == "remote") {
      wrapper.inner = std::make_shared<BackendConfig>(remote_config(common));
    }
    factory = backend_factory_from_config(std::move(wrapper));
  }

  const RunResult result = run_task(task_text, scenario, factory, config);
  print_plan(result.plan);
  print_result(result);
  const double similarity = action_similarity(normalize_record(result.record),
                                              normalized_ground_truth(scenario, config.seed));
  std::cout << "similarity vs reference: " << similarity << "\n";
  if (result.failure == FailureReason::infra_error) return kExitError;
  return result.success ? kExitSuccess : kExitTaskFailed;
}

int cmd_plan(const CommonOpts& common, const std::string& task_text,
             const std::string& scenario_path) {
  if (task_text.empty()) {
    throw BadConfig("plan needs a non-empty --task");
  }
  std::shared_ptr<Backend> backend;
  Scenario scenario;
  std::optional<DeviceFarm> farm;
  if (common.backend_kind == "oracle") {
    if (scenario_path.empty()) {
      throw BadConfig("plan with the oracle backend needs --scenario");
    }
    scenario = load_scenario(scenario_path);
    farm.emplace(scenario, 0);
    backend = make_oracle_backend(scenario, *farm);
  } else {
    backend = make_remote_backend(remote_config(common));
  }
  const PromptTemplates templates = common.prompts_dir.empty()
                                        ? PromptTemplates::defaults()
                                        : PromptTemplates::from_dir(common.prompts_dir);
  ChatGateway gateway(backend);
  ChatSession& session = gateway.open_session(
      AgentRole::coordinator, render_template(templates.coordinator_system, {{"task", task_text}}));
  try {
    print_plan(plan_task(task_text, gateway, session, templates));
  } catch (const PlanParseError& e) {
    std::cerr << "planning failed: " << e.what() << "\n";
    return kExitTaskFailed;
  }
  return kExitSuccess;
}

struct EvalArgs {
  std::string dataset_dir;
  std::string out_dir;
  int runs = 3;
  std::uint64_t seed = 0;
  RunConfig base;
};

int cmd_eval(const CommonOpts& common, const EvalArgs& args) {
  EvalConfig config;
  config.base = args.base;
  config.base.seed = args.seed;
  config.base.prompts_dir = common.prompts_dir;
  config.runs_per_task = args.runs;
  config.out_dir = args.out_dir;
  const EvalReport report = evaluate(args.dataset_dir, make_factory(common), config);
  for (const TaskReport& task : report.tasks) {
    std::cout << task.task_id << ": success " << task.success_rate * 100.0 << "%, similarity "
              << task.mean_similarity << "\n";
    for (const RunScore& score : task.runs) {
      std::cout << "  run " << score.run_index << ": "
                << (score.success ? "success" : std::string("failure [") +
                                                    to_string(score.failure) + "]")
                << ", similarity " << score.similarity << ", restarts " << score.restarts << "\n";
    }
  }
  std::cout << "total: " << report.runs_total << " runs, success rate "
            << report.success_rate * 100.0 << "%, mean similarity " << report.mean_similarity
            << "\n";
  if (!args.out_dir.empty()) {
    std::cout << "report: " << (fs::path(args.out_dir) / "report.json").string() << "\n";
  }
  if (report.runs_total == 0) {
    std::cerr << "no task directories found under " << args.dataset_dir << "\n";
    return kExitError;
  }
  bool all_success = true;
  for (const TaskReport& task : report.tasks) {
    for (const RunScore& score : task.runs) all_success = all_success && score.success;
  }
  return all_success ? kExitSuccess : kExitTaskFailed;
}

// Confirms that a stored run is internally consistent: replaying its actions
// on a fresh farm reproduces every screen digest, and every recorded action
// matches, in order, a reply some operator actually gave in the transcript.
int cmd_replay(const std::string& run_dir, const std::string& scenario_path) {
  const RunResult result = load_result((fs::path(run_dir) / "result.json").string());
  const Scenario scenario = load_scenario(scenario_path);
  DeviceFarm farm(scenario, result.seed);

  int device_steps = 0;
  std::string current = result.plan.first_user;
  for (const RecordedStep& step : result.record.steps) {
    if (step.user != current) {
      std::cerr << "replay mismatch: step " << step.step_index << " belongs to " << step.user
                << " but " << current << " is active\n";
      return kExitTaskFailed;
    }
    if (step.action.kind == ActionKind::switch_user) {
      current = step.action.user;
      continue;
    }
    if (step.action.kind == ActionKind::end_task) continue;
    const std::string raw = farm.device_screen(current);
    if (digest_hex(raw) != step.screen_digest) {
      std::cerr << "replay mismatch: screen digest differs at step " << step.step_index << "\n";
      return kExitTaskFailed;
    }
    try {
      farm.execute(current, step.action);
    } catch (const Error& e) {
      std::cerr << "replay mismatch: step " << step.step_index << " failed: " << e.what() << "\n";
      return kExitTaskFailed;
    }
    ++device_steps;
  }

  // Transcript cross-check: per user, the recorded actions must appear in
  // order among that operator's replies.
  const std::string transcript_path = (fs::path(run_dir) / "transcript.jsonl").string();
  if (fs::is_regular_file(transcript_path)) {
    std::map<std::string, std::vector<Action>> replies;
    for (const TranscriptRecord& entry : load_transcript(transcript_path)) {
      if (entry.speaker != "model-reply" || entry.role.rfind("operator", 0) != 0) continue;
      std::size_t colon = entry.role.find(':');
      const std::string user = colon == std::string::npos ? "" : entry.role.substr(colon + 1);
      try {
        replies[user].push_back(parse_action(entry.text));
      } catch (const UnparsableReply&) {
        // Unusable replies never reach the record; skip them here too.
      }
    }
    std::map<std::string, std::size_t> cursor;
    for (const RecordedStep& step : result.record.steps) {
      std::vector<Action>& user_replies = replies[step.user];
      std::size_t& at = cursor[step.user];
      while (at < user_replies.size() && !(user_replies[at] == step.action)) ++at;
      if (at == user_replies.size()) {
        std::cerr << "replay mismatch: step " << step.step_index
                  << " does not match any transcript reply of " << step.user << "\n";
        return kExitTaskFailed;
      }
      ++at;
    }
    std::cout << "transcript cross-check: " << result.record.steps.size()
              << " recorded actions matched operator replies\n";
  } else {
    std::cout << "transcript cross-check: skipped (no transcript.jsonl)\n";
  }

  const bool success_now = farm.check_success();
  std::cout << "replayed " << device_steps << " device actions, all screen digests match\n";
  std::cout << "environment success after replay: " << (success_now ? "yes" : "no") << "\n";
  if (result.success && !success_now) {
    std::cerr << "replay mismatch: stored result claims success but the environment check "
                 "fails\n";
    return kExitTaskFailed;
  }
  std::cout << "replay OK\n";
  return kExitSuccess;
}

// Line protocol for scenario authoring:
//   <user_label> <bracket action>   execute one action
//   screen <user_label>             print the simplified screen
//   success?                        print the success-condition state
//   quit                            leave
int cmd_simulate(const std::string& scenario_path, std::uint64_t seed) {
  const Scenario scenario = load_scenario(scenario_path);
  DeviceFarm farm(scenario, seed);
  std::cout << "scenario " << scenario.name << " with " << scenario.user_slots
            << " users; commands: '<user> <action>', 'screen <user>', 'success?', 'quit'\n";
  std::string line;
  while (std::getline(std::cin, line)) {
    std::size_t begin = line.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    line = line.substr(begin);
    if (line == "quit" || line == "exit") break;
    if (line == "success?") {
      std::cout << (farm.check_success() ? "true" : "false") << "\n";
      continue;
    }
    std::size_t space = line.find(' ');
    const std::string head = line.substr(0, space);
    const std::string rest = space == std::string::npos ? "" : line.substr(space + 1);
    try {
      if (head == "screen") {
        std::cout << serialize_prompt(simplify(parse_screen(farm.device_screen(rest), rest)));
        continue;
      }
      const Action action = parse_action(rest);
      if (!is_device_action(action.kind)) {
        std::cout << "only device actions run here; switch by addressing another user\n";
        continue;
      }
      const StepOutcome outcome = farm.execute(head, action);
      std::cout << (outcome.changed ? "changed" : outcome.ineffective ? "no effect" : "handled");
      if (!outcome.resolved_target.empty()) std::cout << " target=" << outcome.resolved_target;
      for (const std::string& note : outcome.notes) std::cout << " [" << note << "]";
      std::cout << "\n";
    } catch (const Error& e) {
      std::cout << "error: " << e.what() << "\n";
    }
  }
  return kExitSuccess;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-user GUI task orchestrator"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonOpts run_common;
  RunArgs run_args;
  CLI::App* run_cmd = app.add_subcommand("run", "Run one task end to end");
  add_common_options(run_cmd, run_common);
  run_cmd->add_option("--scenario", run_args.scenario_path, "Scenario JSON file");
  run_cmd->add_option("--task-dir", run_args.task_dir,
                      "Task directory containing task.json (alternative to --scenario/--task)");
  run_cmd->add_option("--task", run_args.task_text, "Task description given to the planner");
  run_cmd->add_option("--out", run_args.out_dir, "Directory for transcript.jsonl and result.json");
  run_cmd->add_option("--seed", run_args.seed, "Run seed");
  run_cmd->add_option("--cadence", run_args.config.observer_cadence,
                      "Device actions between reviews");
  run_cmd->add_option("--max-actions", run_args.config.max_total_actions,
                      "Total device-action budget");
  run_cmd->add_option("--max-user-actions", run_args.config.max_actions_per_user,
                      "Per-user device-action budget");
  run_cmd->add_option("--max-restarts", run_args.config.max_restarts, "Restart limit");
  run_cmd->add_option("--record-budget", run_args.config.record_token_budget,
                      "Token budget for review prompts");
  run_cmd->add_option("--fault-user", run_args.fault_user,
                      "Inject one wrong operator reply for this user (recovery demo)");
  run_cmd->add_option("--fault-step", run_args.fault_step,
                      "Operator-reply ordinal at which the injection fires");
  run_cmd->add_option("--fault-action", run_args.fault_action, "Wrong reply text to inject");

  CommonOpts plan_common;
  std::string plan_task_text;
  std::string plan_scenario;
  CLI::App* plan_cmd = app.add_subcommand("plan", "Run only the planning dialogue");
  add_common_options(plan_cmd, plan_common);
  plan_cmd->add_option("--task", plan_task_text, "Task description")->required();
  plan_cmd->add_option("--scenario", plan_scenario, "Scenario JSON file (oracle backend)");

  CommonOpts eval_common;
  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score every task in a dataset directory");
  add_common_options(eval_cmd, eval_common);
  eval_cmd->add_option("--dataset", eval_args.dataset_dir, "Dataset directory")->required();
  eval_cmd->add_option("--out", eval_args.out_dir, "Directory for report.json/report.csv");
  eval_cmd->add_option("--runs", eval_args.runs, "Runs per task");
  eval_cmd->add_option("--seed", eval_args.seed, "Base seed (advanced by the run index)");
  eval_cmd->add_option("--cadence", eval_args.base.observer_cadence,
                       "Device actions between reviews");
  eval_cmd->add_option("--max-actions", eval_args.base.max_total_actions,
                       "Total device-action budget");
  eval_cmd->add_option("--max-user-actions", eval_args.base.max_actions_per_user,
                       "Per-user device-action budget");
  eval_cmd->add_option("--max-restarts", eval_args.base.max_restarts, "Restart limit");
  eval_cmd->add_option("--record-budget", eval_args.base.record_token_budget,
                       "Token budget for review prompts");

  std::string replay_dir;
  std::string replay_scenario;
  CLI::App* replay_cmd =
      app.add_subcommand("replay", "Verify a stored run against a fresh simulation");
  replay_cmd->add_option("--run", replay_dir, "Run directory holding result.json")->required();
  replay_cmd->add_option("--scenario", replay_scenario, "Scenario JSON file")->required();

  std::string sim_scenario;
  std::uint64_t sim_seed = 0;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "Drive a scenario interactively");
  sim_cmd->add_option("--scenario", sim_scenario, "Scenario JSON file")->required();
  sim_cmd->add_option("--seed", sim_seed, "Farm seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      finalize_common(run_common);
      return cmd_run(run_common, run_args);
    }
    if (plan_cmd->parsed()) {
      finalize_common(plan_common);
      return cmd_plan(plan_common, plan_task_text, plan_scenario);
    }
    if (eval_cmd->parsed()) {
      finalize_common(eval_common);
      return cmd_eval(eval_common, eval_args);
    }
    if (replay_cmd->parsed()) {
      return cmd_replay(replay_dir, replay_scenario);
    }
    if (sim_cmd->parsed()) {
      return cmd_simulate(sim_scenario, sim_seed);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
