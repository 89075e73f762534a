#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

// These tests exercise the installed command-line binary as a black box: every
// check spawns the real executable and inspects its exit code and streams.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kCliPath = MADROID_CLI_PATH;
const char* const kDatasetDir = MADROID_DATASET_DIR;

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

fs::path scratch_root() {
  const fs::path root = fs::temp_directory_path() / "madroid_cli_tests";
  fs::create_directories(root);
  return root;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = scratch_root() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string quoted(const fs::path& path) { return "\"" + path.string() + "\""; }

CliResult run_cli(const std::string& args, const std::string& stdin_text = "") {
  static int invocation = 0;
  const fs::path base = scratch_root();
  const std::string tag = std::to_string(invocation++);
  const fs::path out_file = base / ("stdout-" + tag + ".txt");
  const fs::path err_file = base / ("stderr-" + tag + ".txt");
  const fs::path in_file = base / ("stdin-" + tag + ".txt");

  std::string command = std::string("\"") + kCliPath + "\" " + args;
  if (stdin_text.empty()) {
    command += " < /dev/null";
  } else {
    std::ofstream(in_file, std::ios::binary) << stdin_text;
    command += " < " + quoted(in_file);
  }
  command += " > " + quoted(out_file) + " 2> " + quoted(err_file);

  const int status = std::system(command.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = slurp(out_file);
  result.err = slurp(err_file);
  return result;
}

bool contains(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

fs::path task_dir(const std::string& name) { return fs::path(kDatasetDir) / name; }

fs::path scenario_file(const std::string& name) { return task_dir(name) / "scenario.json"; }

}  // namespace

TEST_CASE("--version prints the release number and succeeds") {
  const CliResult r = run_cli("--version");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.out, "0.1.0"));
}

TEST_CASE("invoking without a subcommand is a usage error") {
  const CliResult r = run_cli("");
  CHECK(r.exit_code != 0);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("run completes a bundled task with the built-in reference backend") {
  const fs::path out_dir = fresh_dir("run_invite");
  const CliResult r = run_cli("run --task-dir " + quoted(task_dir("invite_accept")) + " --out " +
                              quoted(out_dir) + " --seed 11");
  CAPTURE(r.out);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(contains(r.out, "plan: 2 users, first user_A"));
  CHECK(contains(r.out, "step 0 | user_A | [tap] [Video call] -> changed"));
  CHECK(contains(r.out, "step 1 | user_A | [switch] [user_B]"));
  CHECK(contains(r.out, "step 3 | user_B | [end_task]"));
  CHECK(contains(r.out, "review after 2 device actions (periodic): ok"));
  CHECK(contains(r.out, "review after 2 device actions (final): complete"));
  CHECK(contains(r.out, "result: success (0 restarts)"));
  CHECK(contains(r.out, "artifacts: "));
  CHECK(contains(r.out, "similarity vs reference: 1"));
  CHECK(fs::exists(out_dir / "result.json"));
  CHECK(fs::exists(out_dir / "transcript.jsonl"));
}

TEST_CASE("replay verifies a stored run against a fresh simulation") {
  const fs::path out_dir = fresh_dir("run_for_replay");
  const CliResult run = run_cli("run --task-dir " + quoted(task_dir("invite_accept")) +
                                " --out " + quoted(out_dir) + " --seed 7");
  REQUIRE(run.exit_code == 0);

  const CliResult ok = run_cli("replay --run " + quoted(out_dir) + " --scenario " +
                               quoted(scenario_file("invite_accept")));
  CAPTURE(ok.out);
  CAPTURE(ok.err);
  CHECK(ok.exit_code == 0);
  CHECK(contains(ok.out, "transcript cross-check: 4 recorded actions matched operator replies"));
  CHECK(contains(ok.out, "replayed 2 device actions, all screen digests match"));
  CHECK(contains(ok.out, "environment success after replay: yes"));
  CHECK(contains(ok.out, "replay OK"));

  // A tampered screen digest must be caught.
  const fs::path tampered = fresh_dir("run_tampered");
  fs::copy(out_dir, tampered, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  json stored = json::parse(slurp(tampered / "result.json"));
  REQUIRE(stored.at("record").size() >= 1);
  stored["record"][0]["screen_digest"] = "deadbeef";
  std::ofstream(tampered / "result.json", std::ios::binary) << stored.dump(2) << "\n";

  const CliResult bad = run_cli("replay --run " + quoted(tampered) + " --scenario " +
                                quoted(scenario_file("invite_accept")));
  CHECK(bad.exit_code == 1);
  CHECK(contains(bad.err, "replay mismatch: screen digest differs at step 0"));
}

TEST_CASE("run accepts a direct scenario path plus task text") {
  const fs::path out_dir = fresh_dir("run_direct");
  const CliResult r =
      run_cli("run --scenario " + quoted(scenario_file("invite_accept")) +
              " --task \"Start a video call and have the other user accept it.\" --out " +
              quoted(out_dir));
  CAPTURE(r.out);
  CAPTURE(r.err);
  CHECK(r.exit_code == 0);
  CHECK(contains(r.out, "plan: 2 users, first user_A"));
  CHECK(contains(r.out, "result: success (0 restarts)"));
}

TEST_CASE("run without a scenario source fails with a clear message") {
  const CliResult r = run_cli("run --task hello");
  CHECK(r.exit_code == 2);
  CHECK(contains(r.err, "run needs --scenario or --task-dir"));
}

TEST_CASE("run with a missing scenario path reports an error") {
  const CliResult r = run_cli("run --scenario /nonexistent/nope.json --task hello");
  CHECK(r.exit_code == 2);
  CHECK(contains(r.err, "error: "));
}

TEST_CASE("a malformed config file is rejected before any work happens") {
  const fs::path cfg = scratch_root() / "broken.cfg";
  std::ofstream(cfg, std::ios::binary) << "this is not a setting\n";
  const CliResult r =
      run_cli("run --task-dir " + quoted(task_dir("invite_accept")) + " --config " + quoted(cfg));
  CHECK(r.exit_code == 2);
  CHECK(contains(r.err, "error: "));
}

TEST_CASE("eval scores the bundled dataset and writes reports") {
  const fs::path out_dir = fresh_dir("eval_out");
  const CliResult r = run_cli("eval --dataset " + quoted(fs::path(kDatasetDir)) +
                              " --runs 1 --seed 5 --out " + quoted(out_dir));
  CAPTURE(r.out);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(contains(r.out, "invite_accept: success 100%"));
  CHECK(contains(r.out, "total: 5 runs, success rate 100%, mean similarity 1"));
  CHECK(contains(r.out, "report: "));
  CHECK(fs::exists(out_dir / "report.json"));
  CHECK(fs::exists(out_dir / "report.csv"));
}

TEST_CASE("eval on a directory without tasks fails") {
  const fs::path empty = fresh_dir("eval_empty");
  const CliResult r = run_cli("eval --dataset " + quoted(empty));
  CHECK(r.exit_code == 2);
  CHECK(contains(r.err, "no task directories found under"));
}

TEST_CASE("plan prints the planner outcome on its own") {
  const CliResult r = run_cli("plan --task \"Set up the call\" --scenario " +
                              quoted(scenario_file("invite_accept")));
  CAPTURE(r.out);
  CHECK(r.exit_code == 0);
  CHECK(contains(r.out, "plan: 2 users, first user_A"));
}

TEST_CASE("plan treats an empty task description as a configuration error") {
  const CliResult r =
      run_cli("plan --task \"\" --scenario " + quoted(scenario_file("invite_accept")));
  CHECK(r.exit_code == 2);
  CHECK(contains(r.err, "error: "));
}

TEST_CASE("run with fault-injection flags recovers and reports one restart") {
  const fs::path out_dir = fresh_dir("run_fault");
  const CliResult r = run_cli("run --task-dir " + quoted(task_dir("invite_accept")) +
                              " --fault-user user_A --fault-step 0 --fault-action \"[back]\"" +
                              " --out " + quoted(out_dir));
  CAPTURE(r.out);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(contains(r.out, "error at step 0"));
  CHECK(contains(r.out, "result: success (1 restarts)"));

  // Incomplete fault flags never start a run.
  const CliResult half =
      run_cli("run --task-dir " + quoted(task_dir("invite_accept")) + " --fault-user user_A");
  CHECK(half.exit_code == 2);
  CHECK(contains(half.err, "--fault-action"));
}

TEST_CASE("simulate drives the environment over stdin") {
  const std::string script =
      "user_A [tap] [Video call]\n"
      "screen user_B\n"
      "success?\n"
      "user_B [tap] [Accept]\n"
      "success?\n"
      "user_C [tap] [Accept]\n"
      "quit\n";
  const CliResult r =
      run_cli("simulate --scenario " + quoted(scenario_file("invite_accept")), script);
  CAPTURE(r.out);
  REQUIRE(r.exit_code == 0);
  CHECK(contains(r.out, " with 2 users; commands:"));
  CHECK(contains(r.out, "changed target=com.meetly:id/"));
  CHECK(contains(r.out, "Incoming video call"));
  CHECK(contains(r.out, "changed target=com.meetly:id/accept_button"));
  CHECK(contains(r.out, "error: "));
  const std::size_t not_done = r.out.find("\nfalse\n");
  const std::size_t done = r.out.find("\ntrue\n");
  REQUIRE(not_done != std::string::npos);
  REQUIRE(done != std::string::npos);
  CHECK(not_done < done);
}

TEST_CASE("a custom observer cadence shows up in the review schedule") {
  const fs::path out_dir = fresh_dir("run_cadence");
  const CliResult r = run_cli("run --task-dir " + quoted(task_dir("host_join_code")) +
                              " --cadence 3 --out " + quoted(out_dir) + " --seed 3");
  CAPTURE(r.out);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(contains(r.out, "review after 3 device actions (periodic): ok"));
  CHECK(contains(r.out, "review after 6 device actions (periodic): ok"));
  CHECK(contains(r.out, "review after 7 device actions (final): complete"));
  CHECK(contains(r.out, "result: success (0 restarts)"));
}
