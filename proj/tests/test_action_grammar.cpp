#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "madroid/action.hpp"
#include "madroid/errors.hpp"

using namespace madroid;

namespace {

// Generates operand strings that stress the escaping rules: brackets,
// backslashes, quotes, unicode bytes, whitespace.
std::string random_operand(std::mt19937& rng, bool allow_empty) {
  static const std::vector<std::string> kPieces = {
      "a", "B", "7", " ", "_", "-", "[", "]", "\\", "\"", "'", ":", "/", ".", ",",
      "é", "日", "🙂", "ß", "\t", "back", "tap", "[tap]", "\\]", "]]", "[["};
  std::uniform_int_distribution<int> len_dist(allow_empty ? 0 : 1, 12);
  int len = len_dist(rng);
  std::string out;
  std::uniform_int_distribution<std::size_t> pick(0, kPieces.size() - 1);
  for (int i = 0; i < len; ++i) out += kPieces[pick(rng)];
  if (!allow_empty && out.empty()) out = "x";
  return out;
}

Action random_action(std::mt19937& rng) {
  std::uniform_int_distribution<int> kind_dist(0, 4);
  switch (kind_dist(rng)) {
    case 0: return Action::tap(random_operand(rng, false));
    case 1: return Action::input(random_operand(rng, false), random_operand(rng, true));
    case 2: return Action::back();
    case 3: return Action::switch_user(random_operand(rng, false), random_operand(rng, true));
    default: return Action::end_task();
  }
}

}  // namespace

TEST_CASE("parse_action extracts canonical forms") {
  Action tap = parse_action("[tap] [watch together]");
  CHECK(tap.kind == ActionKind::tap);
  CHECK(tap.target == "watch together");

  Action input = parse_action("Sure, I will enter it. [input] [code field] [4821]");
  CHECK(input.kind == ActionKind::input);
  CHECK(input.target == "code field");
  CHECK(input.value == "4821");

  Action sw = parse_action("[switch] [user_B] [please accept the invite]");
  CHECK(sw.kind == ActionKind::switch_user);
  CHECK(sw.user == "user_B");
  CHECK(sw.message == "please accept the invite");

  CHECK(parse_action("[back]").kind == ActionKind::back);
  CHECK(parse_action("[end_task]").kind == ActionKind::end_task);
}

TEST_CASE("parse_action ignores prose and matches keywords case-insensitively") {
  Action a = parse_action("Thinking about it... the best move is [TAP] [Send] for now.");
  CHECK(a.kind == ActionKind::tap);
  CHECK(a.target == "Send");

  Action b = parse_action("[Switch] [User_B] []");
  CHECK(b.kind == ActionKind::switch_user);
  CHECK(b.user == "User_B");
  CHECK(b.message.empty());

  // switch message may be omitted entirely
  Action c = parse_action("[switch] [user_B] and wait for them");
  CHECK(c.kind == ActionKind::switch_user);
  CHECK(c.message.empty());
}

TEST_CASE("parse_action returns the first well-formed action") {
  Action a = parse_action("[tap] [OK] then [back]");
  CHECK(a.kind == ActionKind::tap);
  CHECK(a.target == "OK");

  // A keyword with a missing required operand is not well-formed; scanning
  // continues to the next candidate.
  Action b = parse_action("[tap] is my choice... no wait: [input] [name] [Ann]");
  CHECK(b.kind == ActionKind::input);
  CHECK(b.target == "name");
  CHECK(b.value == "Ann");

  // Non-keyword brackets are skipped.
  Action c = parse_action("[thoughts] I should go [back] now");
  CHECK(c.kind == ActionKind::back);
}

TEST_CASE("parse_action handles escaped brackets in operands") {
  Action a = parse_action("[tap] [weird \\] name]");
  CHECK(a.target == "weird ] name");

  Action b = parse_action("[input] [field] [a\\]b\\\\c]");
  CHECK(b.value == "a]b\\c");
}

TEST_CASE("parse_action rejects replies without an action") {
  CHECK_THROWS_AS(parse_action("I am not sure what to do."), UnparsableReply);
  CHECK_THROWS_AS(parse_action(""), UnparsableReply);
  CHECK_THROWS_AS(parse_action("[unclosed"), UnparsableReply);
  CHECK_THROWS_AS(parse_action("[tap] with no bracketed target"), UnparsableReply);
  CHECK_THROWS_AS(parse_action("[input] [only target]"), UnparsableReply);
  CHECK_THROWS_AS(parse_action("[tap] []"), UnparsableReply);
}

TEST_CASE("render_action produces canonical text") {
  CHECK(render_action(Action::tap("Send invitation")) == "[tap] [Send invitation]");
  CHECK(render_action(Action::input("code field", "4821")) == "[input] [code field] [4821]");
  CHECK(render_action(Action::back()) == "[back]");
  CHECK(render_action(Action::switch_user("user_B", "your turn")) ==
        "[switch] [user_B] [your turn]");
  CHECK(render_action(Action::end_task()) == "[end_task]");
  CHECK(render_action(Action::tap("a]b")) == "[tap] [a\\]b]");
}

TEST_CASE("action round-trip property: parse(render(a)) == a") {
  std::mt19937 rng(20240821);
  for (int i = 0; i < 1500; ++i) {
    Action a = random_action(rng);
    std::string text = render_action(a);
    Action back;
    REQUIRE_NOTHROW(back = parse_action(text));
    CAPTURE(text);
    CHECK(back == a);
  }
}

TEST_CASE("parse_action never crashes on random byte strings") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> len_dist(0, 64);
  std::uniform_int_distribution<int> byte_dist(0, 255);
  // Bias the alphabet toward structural characters so bracket handling is
  // genuinely exercised.
  const std::string structural = "[]\\ tapinputbackswitchend_";
  std::uniform_int_distribution<std::size_t> structural_dist(0, structural.size() - 1);
  std::bernoulli_distribution use_structural(0.6);
  std::bernoulli_distribution mutate_rendered(0.3);
  int parsed = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string s;
    if (mutate_rendered(rng)) {
      // Start from a valid rendering and damage a few random bytes, which
      // fuzzes right at the grammar boundary.
      s = render_action(random_action(rng));
      std::uniform_int_distribution<int> hits(0, 3);
      for (int h = hits(rng); h > 0 && !s.empty(); --h) {
        std::uniform_int_distribution<std::size_t> at(0, s.size() - 1);
        s[at(rng)] = static_cast<char>(byte_dist(rng));
      }
    } else {
      int len = len_dist(rng);
      for (int j = 0; j < len; ++j) {
        if (use_structural(rng)) {
          s.push_back(structural[structural_dist(rng)]);
        } else {
          s.push_back(static_cast<char>(byte_dist(rng)));
        }
      }
    }
    try {
      parse_action(s);
      ++parsed;
    } catch (const UnparsableReply&) {
      // expected for heavily damaged inputs
    }
  }
  // Sanity: the fuzz corpus should contain some parsable strings.
  CHECK(parsed > 0);
}

TEST_CASE("action_space_prompt lists all five primitives with descriptions") {
  const std::string& block = action_space_prompt();
  CHECK(block.find("[tap] [element]") != std::string::npos);
  CHECK(block.find("click on the element on the GUI screen.") != std::string::npos);
  CHECK(block.find("[input] [element] [value]") != std::string::npos);
  CHECK(block.find("enter the value into the GUI element field.") != std::string::npos);
  CHECK(block.find("[back]") != std::string::npos);
  CHECK(block.find("return to the preceding GUI screen.") != std::string::npos);
  CHECK(block.find("[switch] [user] [message]") != std::string::npos);
  CHECK(block.find("switch to a different user with a message.") != std::string::npos);
  CHECK(block.find("[end_task]") != std::string::npos);
  CHECK(block.find("finish the task.") != std::string::npos);
  // Deterministic output.
  CHECK(action_space_prompt() == block);
}
