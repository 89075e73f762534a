#include "madroid/view_hierarchy.hpp"

#include <cctype>
#include <charconv>
#include <optional>
#include <sstream>

#include "madroid/errors.hpp"

namespace madroid {
namespace {

constexpr char kHierarchyWrapper[] = "hierarchy";

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i]))) {
      return false;
    }
  }
  return true;
}

bool icontains(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  if (needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (iequals(haystack.substr(i, needle.size()), needle)) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Minimal element-tree parser: elements, attributes, self-closing tags,
// character data, comments, processing instructions, the usual entities.
// ---------------------------------------------------------------------------

struct XmlElement {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attrs;
  std::vector<XmlElement> children;
  std::string char_data;
};

class XmlParser {
 public:
  explicit XmlParser(std::string_view src) : src_(src) {}

  XmlElement parse_document() {
    skip_misc();
    if (pos_ >= src_.size() || src_[pos_] != '<') {
      fail("expected root element");
    }
    XmlElement root = parse_element();
    skip_misc();
    if (pos_ < src_.size()) fail("trailing content after root element");
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) {
    throw MalformedDocument("malformed view dump at offset " + std::to_string(pos_) + ": " + what);
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  // Skips whitespace, <?...?> instructions, <!-- comments --> and <!DOCTYPE>.
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (src_.compare(pos_, 4, "<!--") == 0) {
        std::size_t end = src_.find("-->", pos_ + 4);
        if (end == std::string_view::npos) fail("unterminated comment");
        pos_ = end + 3;
        continue;
      }
      if (src_.compare(pos_, 2, "<?") == 0) {
        std::size_t end = src_.find("?>", pos_ + 2);
        if (end == std::string_view::npos) fail("unterminated processing instruction");
        pos_ = end + 2;
        continue;
      }
      if (src_.compare(pos_, 2, "<!") == 0) {
        std::size_t end = src_.find('>', pos_ + 2);
        if (end == std::string_view::npos) fail("unterminated declaration");
        pos_ = end + 1;
        continue;
      }
      return;
    }
  }

  std::string parse_name() {
    std::size_t start = pos_;
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == ':' ||
          c == '.') {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ == start) fail("expected a name");
    return std::string(src_.substr(start, pos_ - start));
  }

  std::string decode_entities(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    std::size_t i = 0;
    while (i < raw.size()) {
      if (raw[i] != '&') {
        out.push_back(raw[i++]);
        continue;
      }
      std::size_t semi = raw.find(';', i + 1);
      if (semi == std::string_view::npos) {
        out.push_back(raw[i++]);
        continue;
      }
      std::string_view entity = raw.substr(i + 1, semi - i - 1);
      if (entity == "amp") {
        out.push_back('&');
      } else if (entity == "lt") {
        out.push_back('<');
      } else if (entity == "gt") {
        out.push_back('>');
      } else if (entity == "quot") {
        out.push_back('"');
      } else if (entity == "apos") {
        out.push_back('\'');
      } else if (!entity.empty() && entity[0] == '#') {
        int code = 0;
        bool ok = false;
        if (entity.size() > 1 && (entity[1] == 'x' || entity[1] == 'X')) {
          auto r = std::from_chars(entity.data() + 2, entity.data() + entity.size(), code, 16);
          ok = r.ec == std::errc() && r.ptr == entity.data() + entity.size();
        } else {
          auto r = std::from_chars(entity.data() + 1, entity.data() + entity.size(), code, 10);
          ok = r.ec == std::errc() && r.ptr == entity.data() + entity.size();
        }
        if (ok && code > 0 && code < 128) {
          out.push_back(static_cast<char>(code));
        } else {
          out.append(raw.substr(i, semi - i + 1));
        }
      } else {
        out.append(raw.substr(i, semi - i + 1));
      }
      i = semi + 1;
    }
    return out;
  }

  void parse_attributes(XmlElement& el) {
    for (;;) {
      skip_ws();
      if (pos_ >= src_.size()) fail("unterminated start tag");
      char c = src_[pos_];
      if (c == '>' || c == '/') return;
      std::string name = parse_name();
      skip_ws();
      if (pos_ >= src_.size() || src_[pos_] != '=') fail("expected '=' after attribute name");
      ++pos_;
      skip_ws();
      if (pos_ >= src_.size() || (src_[pos_] != '"' && src_[pos_] != '\'')) {
        fail("expected quoted attribute value");
      }
      char quote = src_[pos_++];
      std::size_t start = pos_;
      while (pos_ < src_.size() && src_[pos_] != quote) ++pos_;
      if (pos_ >= src_.size()) fail("unterminated attribute value");
      el.attrs.emplace_back(std::move(name), decode_entities(src_.substr(start, pos_ - start)));
      ++pos_;
    }
  }

  XmlElement parse_element() {
    if (src_[pos_] != '<') fail("expected '<'");
    ++pos_;
    XmlElement el;
    el.name = parse_name();
    parse_attributes(el);
    if (src_.compare(pos_, 2, "/>") == 0) {
      pos_ += 2;
      return el;
    }
    if (src_[pos_] != '>') fail("expected '>'");
    ++pos_;
    // Content until the matching close tag.
    std::string text;
    for (;;) {
      if (pos_ >= src_.size()) fail("missing close tag for <" + el.name + ">");
      if (src_[pos_] == '<') {
        if (src_.compare(pos_, 2, "</") == 0) {
          pos_ += 2;
          std::string close = parse_name();
          if (close != el.name) {
            fail("close tag </" + close + "> does not match <" + el.name + ">");
          }
          skip_ws();
          if (pos_ >= src_.size() || src_[pos_] != '>') fail("malformed close tag");
          ++pos_;
          break;
        }
        if (src_.compare(pos_, 4, "<!--") == 0) {
          std::size_t end = src_.find("-->", pos_ + 4);
          if (end == std::string_view::npos) fail("unterminated comment");
          pos_ = end + 3;
          continue;
        }
        el.children.push_back(parse_element());
        continue;
      }
      text.push_back(src_[pos_++]);
    }
    // Keep non-whitespace character data only.
    std::string decoded = decode_entities(text);
    std::size_t b = 0, e = decoded.size();
    while (b < e && std::isspace(static_cast<unsigned char>(decoded[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(decoded[e - 1]))) --e;
    el.char_data = decoded.substr(b, e - b);
    return el;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

bool parse_bool(std::string_view v) {
  return iequals(v, "true") || v == "1";
}

ViewNode to_view_node(const XmlElement& el) {
  ViewNode node;
  bool saw_class = false;
  for (const auto& [name, value] : el.attrs) {
    if (name == "class") {
      node.class_name = value;
      saw_class = true;
    } else if (name == "resource-id" || name == "resource_id") {
      node.resource_id = value;
    } else if (name == "text") {
      node.text = value;
    } else if (name == "content-desc" || name == "content_desc") {
      node.content_desc = value;
    } else if (name == "clickable") {
      node.clickable = parse_bool(value);
    } else {
      node.extra_attrs.emplace_back(name, value);
    }
  }
  if (!saw_class) node.class_name = el.name;
  if (node.text.empty()) node.text = el.char_data;
  node.children.reserve(el.children.size());
  for (const auto& child : el.children) node.children.push_back(to_view_node(child));
  return node;
}

void assign_ids(ViewNode& node, int& next_id) {
  node.node_id = next_id++;
  for (auto& child : node.children) assign_ids(child, next_id);
}

bool is_semantic(const ViewNode& n) {
  return n.clickable || !n.text.empty() || !n.content_desc.empty();
}

ViewNode simplify_node(const ViewNode& node) {
  const ViewNode* cur = &node;
  while (!is_semantic(*cur) && cur->children.size() == 1) cur = &cur->children.front();
  ViewNode out;
  out.class_name = cur->class_name;
  out.resource_id = cur->resource_id;
  out.text = cur->text;
  out.content_desc = cur->content_desc;
  out.clickable = cur->clickable;
  out.children.reserve(cur->children.size());
  for (const auto& child : cur->children) out.children.push_back(simplify_node(child));
  return out;
}

void escape_quoted(const std::string& s, std::string& out) {
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
}

void serialize_node(const ViewNode& node, int depth, std::string& out) {
  out.append(static_cast<std::size_t>(depth) * 2, ' ');
  out.push_back('#');
  out += std::to_string(node.node_id);
  out.push_back(' ');
  out += node.class_name;
  if (!node.resource_id.empty()) {
    out += " id=";
    out += node.resource_id;
  }
  if (!node.text.empty()) {
    out += " text=\"";
    escape_quoted(node.text, out);
    out.push_back('"');
  }
  if (!node.content_desc.empty()) {
    out += " desc=\"";
    escape_quoted(node.content_desc, out);
    out.push_back('"');
  }
  if (node.clickable) out += " clickable=true";
  out.push_back('\n');
  for (const auto& child : node.children) serialize_node(child, depth + 1, out);
}

// --- prompt-form parsing ----------------------------------------------------

struct PromptLine {
  int depth = 0;
  ViewNode node;
};

std::string unescape_quoted(std::string_view s, std::size_t& i) {
  // s[i] is the opening quote.
  std::string out;
  ++i;
  while (i < s.size()) {
    char c = s[i];
    if (c == '\\' && i + 1 < s.size()) {
      char n = s[i + 1];
      switch (n) {
        case 'n': out.push_back('\n'); break;
        case 'r': out.push_back('\r'); break;
        case 't': out.push_back('\t'); break;
        default: out.push_back(n);
      }
      i += 2;
      continue;
    }
    if (c == '"') {
      ++i;
      return out;
    }
    out.push_back(c);
    ++i;
  }
  throw MalformedDocument("unterminated quoted value in prompt line");
}

PromptLine parse_prompt_line(std::string_view line) {
  PromptLine pl;
  std::size_t i = 0;
  while (i < line.size() && line[i] == ' ') ++i;
  pl.depth = static_cast<int>(i / 2);
  if (i >= line.size() || line[i] != '#') throw MalformedDocument("prompt line must start with '#'");
  ++i;
  std::size_t num_start = i;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i == num_start) throw MalformedDocument("missing node id in prompt line");
  pl.node.node_id = std::stoi(std::string(line.substr(num_start, i - num_start)));
  if (i < line.size() && line[i] == ' ') ++i;
  std::size_t cls_start = i;
  while (i < line.size() && line[i] != ' ') ++i;
  pl.node.class_name = std::string(line.substr(cls_start, i - cls_start));
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    if (i >= line.size()) break;
    if (line.compare(i, 3, "id=") == 0) {
      i += 3;
      std::size_t start = i;
      while (i < line.size() && line[i] != ' ') ++i;
      pl.node.resource_id = std::string(line.substr(start, i - start));
    } else if (line.compare(i, 6, "text=\"") == 0) {
      i += 5;
      pl.node.text = unescape_quoted(line, i);
    } else if (line.compare(i, 6, "desc=\"") == 0) {
      i += 5;
      pl.node.content_desc = unescape_quoted(line, i);
    } else if (line.compare(i, 14, "clickable=true") == 0) {
      i += 14;
      pl.node.clickable = true;
    } else {
      throw MalformedDocument("unrecognized field in prompt line: " + std::string(line.substr(i)));
    }
  }
  return pl;
}

std::string last_id_segment(std::string_view resource_id) {
  std::size_t cut = resource_id.find_last_of("/:");
  if (cut == std::string_view::npos) return std::string(resource_id);
  return std::string(resource_id.substr(cut + 1));
}

}  // namespace

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 1099511628211ull;
  }
  return hash;
}

std::string digest_hex(std::string_view data) {
  static const char* kHex = "0123456789abcdef";
  std::uint64_t h = fnv1a64(data);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

ViewTree parse_screen(std::string_view raw, std::string source_user) {
  XmlParser parser(raw);
  XmlElement root_el = parser.parse_document();
  const XmlElement* effective = &root_el;
  if (iequals(root_el.name, kHierarchyWrapper)) {
    if (root_el.children.size() != 1) {
      throw MalformedDocument("hierarchy wrapper must contain exactly one root node");
    }
    effective = &root_el.children.front();
  }
  ViewTree tree;
  tree.root = to_view_node(*effective);
  tree.source_user = std::move(source_user);
  tree.raw_digest = digest_hex(raw);
  int next_id = 0;
  assign_ids(tree.root, next_id);
  return tree;
}

ViewTree simplify(const ViewTree& tree) {
  ViewTree out;
  out.root = simplify_node(tree.root);
  out.source_user = tree.source_user;
  out.raw_digest = tree.raw_digest;
  int next_id = 0;
  assign_ids(out.root, next_id);
  return out;
}

std::string serialize_prompt(const ViewTree& tree) {
  std::string out;
  serialize_node(tree.root, 0, out);
  return out;
}

ViewTree parse_prompt(std::string_view text) {
  std::vector<PromptLine> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty()) lines.push_back(parse_prompt_line(line));
    pos = eol + 1;
  }
  if (lines.empty()) throw MalformedDocument("empty prompt form");
  if (lines.front().depth != 0) throw MalformedDocument("first prompt line must be at depth 0");
  ViewTree tree;
  tree.root = std::move(lines.front().node);
  std::vector<ViewNode*> stack = {&tree.root};
  for (std::size_t i = 1; i < lines.size(); ++i) {
    int depth = lines[i].depth;
    if (depth < 1 || depth > static_cast<int>(stack.size())) {
      throw MalformedDocument("inconsistent indentation in prompt form");
    }
    stack.resize(static_cast<std::size_t>(depth));
    ViewNode* parent = stack.back();
    parent->children.push_back(std::move(lines[i].node));
    stack.push_back(&parent->children.back());
  }
  return tree;
}

const ViewNode* find_node(const ViewTree& tree, int node_id) {
  const ViewNode* found = nullptr;
  visit(tree.root, [&](const ViewNode& n, int) {
    if (!found && n.node_id == node_id) found = &n;
  });
  return found;
}

void visit(const ViewNode& node, const std::function<void(const ViewNode&, int)>& fn, int depth) {
  fn(node, depth);
  for (const auto& child : node.children) visit(child, fn, depth + 1);
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

int resolve_element(const ViewTree& tree, std::string_view descriptor,
                    const NodePredicate& eligible) {
  std::string d(descriptor);
  const std::size_t b = d.find_first_not_of(" \t\r\n");
  const std::size_t e = d.find_last_not_of(" \t\r\n");
  d = b == std::string::npos ? std::string() : d.substr(b, e - b + 1);
  if (d.empty()) throw NoMatch("empty element descriptor");

  std::vector<const ViewNode*> nodes;
  visit(tree.root, [&](const ViewNode& n, int) {
    if (!eligible || eligible(n)) nodes.push_back(&n);
  });

  // Tier 1: explicit "#<n>" node reference.
  if (d.size() > 1 && d[0] == '#') {
    bool numeric = true;
    for (std::size_t i = 1; i < d.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(d[i]))) {
        numeric = false;
        break;
      }
    }
    if (numeric) {
      int want = std::stoi(d.substr(1));
      for (const ViewNode* n : nodes) {
        if (n->node_id == want) return want;
      }
    }
  }

  auto first_match = [&](const std::function<bool(const ViewNode&)>& pred) -> const ViewNode* {
    const ViewNode* best = nullptr;
    for (const ViewNode* n : nodes) {
      if (pred(*n) && (!best || n->node_id < best->node_id)) best = n;
    }
    return best;
  };

  // Tier 2: exact text match.
  if (const ViewNode* n = first_match([&](const ViewNode& v) { return iequals(v.text, d); })) {
    return n->node_id;
  }
  // Tier 3: exact content_desc match.
  if (const ViewNode* n =
          first_match([&](const ViewNode& v) { return iequals(v.content_desc, d); })) {
    return n->node_id;
  }
  // Tier 4: resource_id suffix (or whole id).
  if (const ViewNode* n = first_match([&](const ViewNode& v) {
        if (v.resource_id.empty()) return false;
        return iequals(v.resource_id, d) || iequals(last_id_segment(v.resource_id), d);
      })) {
    return n->node_id;
  }
  // Tier 5: substring of text or content_desc.
  if (const ViewNode* n = first_match([&](const ViewNode& v) {
        return (!v.text.empty() && icontains(v.text, d)) ||
               (!v.content_desc.empty() && icontains(v.content_desc, d));
      })) {
    return n->node_id;
  }
  throw NoMatch("no GUI element matches descriptor \"" + d + "\"");
}

bool tap_eligible(const ViewNode& node) {
  return node.clickable;
}

bool input_eligible(const ViewNode& node) {
  return icontains(node.class_name, "edit");
}

}  // namespace madroid
