#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace madroid {

// One node of a GUI view tree. The five semantic attributes are typed;
// anything else found in a dump is kept verbatim in extra_attrs until
// simplify() strips it.
struct ViewNode {
  int node_id = 0;
  std::string class_name;
  std::string resource_id;
  std::string text;
  std::string content_desc;
  bool clickable = false;
  std::vector<std::pair<std::string, std::string>> extra_attrs;
  std::vector<ViewNode> children;
};

struct ViewTree {
  ViewNode root;
  std::string source_user;
  std::string raw_digest;  // hex digest of the raw document this tree came from
};

std::uint64_t fnv1a64(std::string_view data);
std::string digest_hex(std::string_view data);

// Parses an element-tree dump (UIAutomator dialect: <hierarchy> wrapper with
// nested <node> elements carrying resource-id / class / clickable / text /
// content-desc attributes, or the simulator's flavor where the element name
// doubles as the class). All attributes present in the document are kept;
// missing ones default to empty/false. node_ids are assigned in pre-order
// starting at 0. Throws MalformedDocument on broken input.
ViewTree parse_screen(std::string_view raw, std::string source_user = "");

// Removes every container that has exactly one child and carries no semantic
// signal (clickable=false, empty text, empty content_desc), repeatedly, and
// drops all non-whitelisted attributes. Surviving nodes keep their relative
// pre-order; node_ids are reassigned in pre-order. Pure function.
ViewTree simplify(const ViewTree& tree);

// One line per node, indentation showing depth:
//   #<node_id> <class_name> id=<resource_id> text="<text>" desc="<desc>" clickable=true
// Empty fields (and clickable=false) are omitted. Quoted values escape
// backslash, quote, and newline characters. Deterministic.
std::string serialize_prompt(const ViewTree& tree);

// Inverse of serialize_prompt for trees whose class names and resource ids
// contain no whitespace (always true for device dumps). Used to check that
// the prompt form preserves every (node_id, attributes) pair.
ViewTree parse_prompt(std::string_view text);

using NodePredicate = std::function<bool(const ViewNode&)>;

// Maps an agent-written element descriptor to a node id. Match priority:
// "#<n>" numeric reference, exact text, exact content_desc, resource_id
// suffix (segment after the last separator) or full id, then substring of
// text/content_desc. All text comparison is case-insensitive; ties resolve
// to the smallest node_id; only nodes accepted by `eligible` are considered
// (pass an empty predicate to accept all). Throws NoMatch.
int resolve_element(const ViewTree& tree, std::string_view descriptor,
                    const NodePredicate& eligible = {});

const ViewNode* find_node(const ViewTree& tree, int node_id);

// Standard eligibility filters used by the orchestrator.
bool tap_eligible(const ViewNode& node);     // clickable nodes
bool input_eligible(const ViewNode& node);   // editable-class nodes

// Walks the tree in pre-order invoking fn(node, depth).
void visit(const ViewNode& node, const std::function<void(const ViewNode&, int)>& fn,
           int depth = 0);

std::string to_lower(std::string_view s);

}  // namespace madroid
