#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "madroid/errors.hpp"
#include "madroid/view_hierarchy.hpp"

using namespace madroid;

namespace {

constexpr const char* kUiAutomatorDump = R"(<?xml version='1.0' encoding='UTF-8' standalone='yes' ?>
<hierarchy rotation="0">
  <node index="0" class="android.widget.FrameLayout" resource-id="" text="" content-desc=""
        clickable="false" enabled="true" bounds="[0,0][1080,1920]">
    <node index="0" class="android.widget.LinearLayout" resource-id="" text="" content-desc=""
          clickable="false" enabled="true" bounds="[0,0][1080,200]">
      <node index="0" class="android.widget.Button" resource-id="com.app:id/watch_together"
            text="Watch Together" content-desc="" clickable="true" enabled="true"
            bounds="[0,0][540,200]"/>
    </node>
    <node index="1" class="android.widget.TextView" resource-id="com.app:id/title"
          text="Home" content-desc="" clickable="false" enabled="true" bounds="[0,200][1080,400]"/>
  </node>
</hierarchy>
)";

// Reference simplification: a deliberately different algorithm from the
// production one. Repeatedly scans the whole tree and splices out any node
// that has exactly one child and no semantic signal, until a full pass makes
// no change. Used as the oracle for the collapse invariants.
struct RefNode {
  std::string cls, rid, text, desc;
  bool clickable = false;
  std::vector<RefNode> children;
};

RefNode to_ref(const ViewNode& n) {
  RefNode r{n.class_name, n.resource_id, n.text, n.content_desc, n.clickable, {}};
  for (const auto& c : n.children) r.children.push_back(to_ref(c));
  return r;
}

bool ref_semantic(const RefNode& n) {
  return n.clickable || !n.text.empty() || !n.desc.empty();
}

bool splice_once(RefNode& n) {
  if (!ref_semantic(n) && n.children.size() == 1) {
    RefNode child = std::move(n.children.front());
    n = std::move(child);
    return true;
  }
  for (auto& c : n.children) {
    if (splice_once(c)) return true;
  }
  return false;
}

RefNode ref_simplify(const ViewNode& root) {
  RefNode r = to_ref(root);
  while (splice_once(r)) {
  }
  return r;
}

void ref_preorder(const RefNode& n, std::vector<std::string>& out) {
  out.push_back(n.cls);
  for (const auto& c : n.children) ref_preorder(c, out);
}

void tree_preorder(const ViewNode& n, std::vector<std::string>& out) {
  out.push_back(n.class_name);
  for (const auto& c : n.children) tree_preorder(c, out);
}

// Random tree generator. Every node gets a unique class name so pre-order
// sequences can be compared, plus random attributes drawn from a pool of 20
// distinct non-whitelisted keys.
ViewNode random_tree(std::mt19937& rng, int& serial, int depth) {
  ViewNode n;
  n.class_name = "cls_" + std::to_string(serial++);
  std::bernoulli_distribution coin(0.35);
  if (coin(rng)) n.clickable = true;
  if (coin(rng)) n.text = "t" + std::to_string(serial);
  if (coin(rng)) n.content_desc = "d" + std::to_string(serial);
  if (coin(rng)) n.resource_id = "app:id/e" + std::to_string(serial);
  std::uniform_int_distribution<int> attr_count(0, 4);
  std::uniform_int_distribution<int> attr_key(0, 19);
  for (int i = attr_count(rng); i > 0; --i) {
    n.extra_attrs.emplace_back("extra_" + std::to_string(attr_key(rng)), "v" + std::to_string(i));
  }
  if (depth < 5) {
    // Bias toward chains of single children so the collapse rule fires often.
    std::uniform_int_distribution<int> kids(0, 3);
    int k = kids(rng);
    if (depth < 2 && k == 0) k = 1;
    for (int i = 0; i < k; ++i) n.children.push_back(random_tree(rng, serial, depth + 1));
  }
  return n;
}

ViewTree make_random_tree(std::mt19937& rng) {
  ViewTree t;
  int serial = 0;
  t.root = random_tree(rng, serial, 0);
  int next = 0;
  std::function<void(ViewNode&)> assign = [&](ViewNode& n) {
    n.node_id = next++;
    for (auto& c : n.children) assign(c);
  };
  assign(t.root);
  return t;
}

int count_nodes(const ViewNode& n) {
  int c = 1;
  for (const auto& k : n.children) c += count_nodes(k);
  return c;
}

bool trees_equal(const ViewNode& a, const ViewNode& b) {
  if (a.node_id != b.node_id || a.class_name != b.class_name || a.resource_id != b.resource_id ||
      a.text != b.text || a.content_desc != b.content_desc || a.clickable != b.clickable ||
      a.children.size() != b.children.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (!trees_equal(a.children[i], b.children[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("parse_screen reads a UIAutomator dump with pre-order ids") {
  ViewTree t = parse_screen(kUiAutomatorDump, "user_A");
  CHECK(t.source_user == "user_A");
  CHECK(t.root.node_id == 0);
  CHECK(t.root.class_name == "android.widget.FrameLayout");
  REQUIRE(t.root.children.size() == 2);
  const ViewNode& layout = t.root.children[0];
  CHECK(layout.node_id == 1);
  REQUIRE(layout.children.size() == 1);
  const ViewNode& button = layout.children[0];
  CHECK(button.node_id == 2);
  CHECK(button.class_name == "android.widget.Button");
  CHECK(button.resource_id == "com.app:id/watch_together");
  CHECK(button.text == "Watch Together");
  CHECK(button.clickable);
  const ViewNode& title = t.root.children[1];
  CHECK(title.node_id == 3);
  CHECK(title.text == "Home");
  // Non-whitelisted attributes are retained by the parser.
  auto has_attr = [](const ViewNode& n, const std::string& key) {
    return std::any_of(n.extra_attrs.begin(), n.extra_attrs.end(),
                       [&](const auto& kv) { return kv.first == key; });
  };
  CHECK(has_attr(button, "bounds"));
  CHECK(has_attr(button, "enabled"));
  CHECK(has_attr(button, "index"));
}

TEST_CASE("parse_screen accepts the simple dialect where the element name is the class") {
  ViewTree t = parse_screen("<Button text=\"Call\" clickable=\"true\"/>");
  CHECK(t.root.class_name == "Button");
  CHECK(t.root.text == "Call");
  CHECK(t.root.clickable);
  CHECK(t.root.children.empty());
}

TEST_CASE("parse_screen defaults missing attributes to empty or false") {
  ViewTree t = parse_screen("<node class=\"android.view.View\"/>");
  CHECK(t.root.resource_id.empty());
  CHECK(t.root.text.empty());
  CHECK(t.root.content_desc.empty());
  CHECK_FALSE(t.root.clickable);
}

TEST_CASE("parse_screen rejects broken documents") {
  CHECK_THROWS_AS(parse_screen("<hierarchy><node class=\"a\">"), MalformedDocument);
  CHECK_THROWS_AS(parse_screen("<node class=\"a\"></wrong>"), MalformedDocument);
  CHECK_THROWS_AS(parse_screen(""), MalformedDocument);
  CHECK_THROWS_AS(parse_screen("plain text, no markup"), MalformedDocument);
  CHECK_THROWS_AS(parse_screen("<node class=\"a\"/><node class=\"b\"/>"), MalformedDocument);
  CHECK_THROWS_AS(parse_screen("<node class=broken/>"), MalformedDocument);
}

TEST_CASE("parse_screen decodes entities") {
  ViewTree t = parse_screen("<node class=\"v\" text=\"a &amp;&lt;b&gt; &quot;c&quot; &#65;\"/>");
  CHECK(t.root.text == "a &<b> \"c\" A");
}

TEST_CASE("simplify collapses container chains into the payload node") {
  const char* doc =
      "<hierarchy>"
      "<node class=\"android.widget.FrameLayout\">"
      "<node class=\"android.widget.LinearLayout\">"
      "<node class=\"android.widget.Button\" text=\"Join\" clickable=\"true\" enabled=\"true\"/>"
      "</node>"
      "</node>"
      "</hierarchy>";
  ViewTree s = simplify(parse_screen(doc));
  CHECK(s.root.node_id == 0);
  CHECK(s.root.class_name == "android.widget.Button");
  CHECK(s.root.text == "Join");
  CHECK(s.root.clickable);
  CHECK(s.root.children.empty());
  CHECK(s.root.extra_attrs.empty());
}

TEST_CASE("simplify keeps semantic single-child nodes and multi-child containers") {
  const char* doc =
      "<node class=\"Frame\">"
      "<node class=\"Card\" text=\"Header\">"
      "<node class=\"Button\" text=\"Go\" clickable=\"true\"/>"
      "</node>"
      "<node class=\"Label\" text=\"Footer\"/>"
      "</node>";
  ViewTree s = simplify(parse_screen(doc));
  // Frame has two children -> retained even though non-semantic.
  CHECK(s.root.class_name == "Frame");
  REQUIRE(s.root.children.size() == 2);
  // Card is semantic (has text) -> retained despite single child.
  CHECK(s.root.children[0].class_name == "Card");
  REQUIRE(s.root.children[0].children.size() == 1);
  CHECK(s.root.children[0].children[0].class_name == "Button");
  CHECK(s.root.children[1].class_name == "Label");
  // resource_id alone does not make a node semantic.
  ViewTree s2 = simplify(parse_screen(
      "<node class=\"Wrap\" resource-id=\"app:id/wrap\"><node class=\"Btn\" clickable=\"true\"/></node>"));
  CHECK(s2.root.class_name == "Btn");
}

TEST_CASE("simplify matches a brute-force reference on random trees") {
  std::mt19937 rng(99);
  for (int i = 0; i < 120; ++i) {
    ViewTree t = make_random_tree(rng);
    ViewTree s = simplify(t);

    // Oracle: independent fixpoint splicing algorithm.
    RefNode expected = ref_simplify(t.root);
    std::vector<std::string> want, got;
    ref_preorder(expected, want);
    tree_preorder(s.root, got);
    REQUIRE(got == want);

    // Whitelist closure: no extra attributes survive anywhere.
    bool extras = false;
    bool violation = false;
    visit(s.root, [&](const ViewNode& n, int) {
      if (!n.extra_attrs.empty()) extras = true;
      bool semantic = n.clickable || !n.text.empty() || !n.content_desc.empty();
      if (!semantic && n.children.size() == 1) violation = true;
    });
    CHECK_FALSE(extras);
    CHECK_FALSE(violation);

    // Pre-order ids are 0..n-1 in order.
    std::vector<int> ids;
    visit(s.root, [&](const ViewNode& n, int) { ids.push_back(n.node_id); });
    for (std::size_t k = 0; k < ids.size(); ++k) CHECK(ids[k] == static_cast<int>(k));

    // Pre-order of surviving nodes is a subsequence of the original pre-order.
    std::vector<std::string> original;
    tree_preorder(t.root, original);
    std::size_t oi = 0;
    bool subsequence = true;
    for (const std::string& cls : got) {
      while (oi < original.size() && original[oi] != cls) ++oi;
      if (oi == original.size()) {
        subsequence = false;
        break;
      }
      ++oi;
    }
    CHECK(subsequence);

    // Idempotence: simplifying twice changes nothing.
    ViewTree s2 = simplify(s);
    CHECK(trees_equal(s.root, s2.root));
  }
}

TEST_CASE("serialize_prompt renders one line per node with depth indentation") {
  const char* doc =
      "<node class=\"Frame\" resource-id=\"app:id/root\">"
      "<node class=\"Button\" text=\"Call\" clickable=\"true\"/>"
      "<node class=\"Text\" content-desc=\"status\"/>"
      "</node>";
  ViewTree t = parse_screen(doc);
  std::string out = serialize_prompt(t);
  CHECK(out ==
        "#0 Frame id=app:id/root\n"
        "  #1 Button text=\"Call\" clickable=true\n"
        "  #2 Text desc=\"status\"\n");
  // Deterministic.
  CHECK(serialize_prompt(t) == out);
}

TEST_CASE("serialize_prompt then parse_prompt preserves ids and attributes") {
  std::mt19937 rng(4242);
  for (int i = 0; i < 60; ++i) {
    ViewTree t = simplify(make_random_tree(rng));
    std::string text = serialize_prompt(t);
    ViewTree back = parse_prompt(text);
    CHECK(trees_equal(t.root, back.root));
  }
}

TEST_CASE("resolve_element matches by text, reference, id suffix, and substring") {
  const char* doc =
      "<node class=\"Frame\">"
      "<node class=\"Button\" resource-id=\"com.app:id/invite_btn\" text=\"Watch Together\" clickable=\"true\"/>"
      "<node class=\"Button\" resource-id=\"com.app:id/cancel\" text=\"Cancel\" clickable=\"true\"/>"
      "<node class=\"EditText\" resource-id=\"com.app:id/code_field\" clickable=\"true\"/>"
      "<node class=\"Image\" content-desc=\"profile picture\" clickable=\"true\"/>"
      "</node>";
  ViewTree t = parse_screen(doc);
  CHECK(resolve_element(t, "watch together") == 1);
  CHECK(resolve_element(t, "#4") == 4);
  CHECK(resolve_element(t, "profile picture") == 4);
  CHECK(resolve_element(t, "code_field") == 3);
  CHECK(resolve_element(t, "com.app:id/cancel") == 2);
  // Substring tier.
  CHECK(resolve_element(t, "watch") == 1);
  CHECK(resolve_element(t, "profile") == 4);
  CHECK_THROWS_AS(resolve_element(t, "does-not-exist"), NoMatch);
}

TEST_CASE("resolve_element breaks ties by smallest node_id and applies eligibility") {
  const char* doc =
      "<node class=\"Frame\">"
      "<node class=\"Button\" text=\"+\" clickable=\"true\"/>"
      "<node class=\"Button\" text=\"+\" clickable=\"true\"/>"
      "<node class=\"Label\" text=\"Send\"/>"
      "<node class=\"Button\" text=\"Send\" clickable=\"true\"/>"
      "</node>";
  ViewTree t = parse_screen(doc);
  CHECK(resolve_element(t, "+") == 1);
  // Without a filter the non-clickable label (smaller id) wins; with the tap
  // filter the clickable button is chosen instead.
  CHECK(resolve_element(t, "Send") == 3);
  CHECK(resolve_element(t, "Send", tap_eligible) == 4);
  CHECK_THROWS_AS(resolve_element(t, "+", input_eligible), NoMatch);
}

TEST_CASE("resolution is deterministic") {
  std::mt19937 rng(321);
  for (int i = 0; i < 40; ++i) {
    ViewTree t = simplify(make_random_tree(rng));
    std::vector<const ViewNode*> nodes;
    visit(t.root, [&](const ViewNode& n, int) { nodes.push_back(&n); });
    for (const ViewNode* n : nodes) {
      if (n->text.empty()) continue;
      int first = resolve_element(t, n->text);
      for (int r = 0; r < 3; ++r) CHECK(resolve_element(t, n->text) == first);
    }
  }
}

TEST_CASE("digest is stable and content-sensitive") {
  CHECK(digest_hex("abc") == digest_hex("abc"));
  CHECK(digest_hex("abc") != digest_hex("abd"));
  CHECK(digest_hex("").size() == 16);
}
