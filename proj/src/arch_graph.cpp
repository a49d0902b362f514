#include "layerscope/arch_graph.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "layerscope/error.hpp"

namespace layerscope {
namespace {

// Validation failure attributable to one node; parse_arch maps it to a line.
class NodeError : public Error {
 public:
  NodeError(ErrorCode code, int node_id, const std::string& what)
      : Error(code, what), node_id_(node_id) {}
  int node_id() const { return node_id_; }

 private:
  int node_id_;
};

bool takes_many_inputs(LayerKind kind) {
  return kind == LayerKind::Add || kind == LayerKind::Concat;
}

}  // namespace

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::BatchNorm: return "bn";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Add: return "add";
    case LayerKind::Concat: return "concat";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

bool is_windowed(LayerKind kind) {
  return kind == LayerKind::Conv || kind == LayerKind::MaxPool || kind == LayerKind::AvgPool;
}

ArchGraph ArchGraph::build(std::string name, std::vector<LayerNode> nodes) {
  ArchGraph g;
  g.name_ = std::move(name);
  const int count = static_cast<int>(nodes.size());
  if (count == 0) throw Error(ErrorCode::Validation, "architecture has no nodes");

  std::unordered_map<std::string, int> by_name;
  int inputs = 0;
  for (int id = 0; id < count; ++id) {
    LayerNode& n = nodes[static_cast<std::size_t>(id)];
    n.id = id;
    if (n.name.empty()) throw NodeError(ErrorCode::Validation, id, "node without a name");
    if (!by_name.emplace(n.name, id).second) {
      throw NodeError(ErrorCode::Validation, id, "duplicate node name '" + n.name + "'");
    }
    if (n.kind == LayerKind::Input) {
      ++inputs;
      g.input_id_ = id;
      if (!n.inputs.empty()) {
        throw NodeError(ErrorCode::Validation, id, "input node cannot have predecessors");
      }
      if (n.out_channels < 1) {
        throw NodeError(ErrorCode::Validation, id, "input needs at least one channel");
      }
      n.in_channels = n.out_channels;
      continue;
    }
    if (n.inputs.empty()) {
      throw NodeError(ErrorCode::Validation, id, "node '" + n.name + "' has no predecessor");
    }
    if (takes_many_inputs(n.kind) ? n.inputs.size() < 2 : n.inputs.size() != 1) {
      throw NodeError(ErrorCode::Validation, id,
                      "node '" + n.name + "' has the wrong number of predecessors for " +
                          std::string(kind_name(n.kind)));
    }
    for (int p : n.inputs) {
      if (p < 0 || p >= count) {
        throw NodeError(ErrorCode::DanglingReference, id,
                        "node '" + n.name + "' references an unknown node");
      }
      if (p == id) throw NodeError(ErrorCode::Cycle, id, "node '" + n.name + "' feeds itself");
    }
    if (is_windowed(n.kind)) {
      if (n.kernel < 1 || n.stride < 1 || n.dilation < 1 || n.padding < 0) {
        throw NodeError(ErrorCode::Validation, id,
                        "node '" + n.name + "' needs kernel, stride, dilation >= 1 and padding >= 0");
      }
      if (n.kind != LayerKind::Conv && n.dilation != 1) {
        throw NodeError(ErrorCode::Validation, id, "pooling node '" + n.name + "' cannot dilate");
      }
    } else {
      n.kernel = 1;
      n.stride = 1;
      n.dilation = 1;
      n.padding = 0;
    }
    if ((n.kind == LayerKind::Conv || n.kind == LayerKind::Dense) && n.out_channels < 1) {
      throw NodeError(ErrorCode::Validation, id, "node '" + n.name + "' needs ch/out >= 1");
    }
  }
  if (inputs != 1) {
    throw Error(ErrorCode::Validation,
                "architecture needs exactly one input node, found " + std::to_string(inputs));
  }

  g.successors_.assign(nodes.size(), {});
  std::vector<int> indegree(nodes.size(), 0);
  for (const LayerNode& n : nodes) {
    for (int p : n.inputs) {
      g.successors_[static_cast<std::size_t>(p)].push_back(n.id);
      ++indegree[static_cast<std::size_t>(n.id)];
    }
  }

  // Kahn's algorithm with a min-heap for the id tie-break.
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int id = 0; id < count; ++id) {
    if (indegree[static_cast<std::size_t>(id)] == 0) ready.push(id);
  }
  while (!ready.empty()) {
    const int id = ready.top();
    ready.pop();
    g.topo_.push_back(id);
    for (int s : g.successors_[static_cast<std::size_t>(id)]) {
      if (--indegree[static_cast<std::size_t>(s)] == 0) ready.push(s);
    }
  }
  if (static_cast<int>(g.topo_.size()) != count) {
    for (int id = 0; id < count; ++id) {
      if (indegree[static_cast<std::size_t>(id)] > 0) {
        throw NodeError(ErrorCode::Cycle, id,
                        "cycle detected through node '" + nodes[static_cast<std::size_t>(id)].name +
                            "'");
      }
    }
  }
  if (g.topo_.front() != g.input_id_) {
    // Another zero-indegree node would be an orphan; validation above makes this unreachable.
    throw NodeError(ErrorCode::Validation, g.topo_.front(), "node not reachable from input");
  }

  for (int id : g.topo_) {
    LayerNode& n = nodes[static_cast<std::size_t>(id)];
    if (n.kind == LayerKind::Input) continue;
    const int first = nodes[static_cast<std::size_t>(n.inputs.front())].out_channels;
    n.in_channels = first;
    switch (n.kind) {
      case LayerKind::Conv:
      case LayerKind::Dense:
        break;
      case LayerKind::Add:
        for (int p : n.inputs) {
          if (nodes[static_cast<std::size_t>(p)].out_channels != first) {
            throw NodeError(ErrorCode::Validation, id,
                            "add node '" + n.name + "' joins inputs with different channel counts");
          }
        }
        n.out_channels = first;
        break;
      case LayerKind::Concat: {
        int total = 0;
        for (int p : n.inputs) total += nodes[static_cast<std::size_t>(p)].out_channels;
        n.in_channels = total;
        n.out_channels = total;
        break;
      }
      default:
        n.out_channels = first;
        break;
    }
  }

  g.nodes_ = std::move(nodes);
  return g;
}

std::optional<int> ArchGraph::find(std::string_view name) const {
  for (const LayerNode& n : nodes_) {
    if (n.name == name) return n.id;
  }
  return std::nullopt;
}

const LayerNode& ArchGraph::node(std::string_view name) const {
  const auto id = find(name);
  if (!id) throw Error(ErrorCode::InvalidArgument, "no node named '" + std::string(name) + "'");
  return node(*id);
}

std::vector<int> ArchGraph::conv_ids() const {
  std::vector<int> out;
  for (int id : topo_) {
    if (node(id).kind == LayerKind::Conv) out.push_back(id);
  }
  return out;
}

bool ArchGraph::is_sequential() const {
  return std::all_of(nodes_.begin(), nodes_.end(),
                     [](const LayerNode& n) { return n.inputs.size() <= 1; });
}

std::vector<int> topo_order(const ArchGraph& graph) { return graph.topo_order(); }

// ---------------------------------------------------------------------------
// Text format

namespace {

struct Token {
  std::string_view text;
  std::size_t column;  // 1-based
};

std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    out.push_back({line.substr(start, i - start), start + 1});
  }
  return out;
}

struct PendingRef {
  std::string name;
  std::size_t column;
};

struct PendingNode {
  LayerNode node;
  std::size_t line;
  std::size_t name_column;
  std::vector<PendingRef> refs;
};

int parse_int(const Token& tok, std::string_view value, std::size_t line, std::size_t column) {
  int out = 0;
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ParseError(ErrorCode::Syntax, line, column,
                     "expected an integer in '" + std::string(tok.text) + "'");
  }
  return out;
}

std::optional<LayerKind> kind_from_keyword(std::string_view word) {
  static const std::map<std::string_view, LayerKind> table = {
      {"input", LayerKind::Input},       {"conv", LayerKind::Conv},
      {"maxpool", LayerKind::MaxPool},   {"avgpool", LayerKind::AvgPool},
      {"gap", LayerKind::GlobalAvgPool}, {"bn", LayerKind::BatchNorm},
      {"relu", LayerKind::ReLU},         {"add", LayerKind::Add},
      {"concat", LayerKind::Concat},     {"dense", LayerKind::Dense},
      {"softmax", LayerKind::Softmax},
  };
  const auto it = table.find(word);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

// Keys accepted per kind; the bool marks required keys.
std::vector<std::pair<std::string_view, bool>> allowed_keys(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv:
      return {{"k", true}, {"s", false}, {"d", false}, {"p", false}, {"ch", true}, {"from", true}};
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      return {{"k", true}, {"s", false}, {"p", false}, {"from", true}};
    case LayerKind::Dense:
      return {{"out", true}, {"from", true}};
    default:
      return {{"from", true}};
  }
}

}  // namespace

ArchGraph parse_arch(std::string_view text, std::string name) {
  std::vector<PendingNode> pending;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    const auto tokens = tokenize(line);
    if (tokens.empty()) continue;

    const auto kind = kind_from_keyword(tokens[0].text);
    if (!kind) {
      throw ParseError(ErrorCode::UnknownKind, line_no, tokens[0].column,
                       "unknown layer kind '" + std::string(tokens[0].text) + "'");
    }
    PendingNode p;
    p.line = line_no;
    p.node.kind = *kind;

    if (*kind == LayerKind::Input) {
      if (tokens.size() != 2) {
        throw ParseError(ErrorCode::Syntax, line_no, tokens[0].column,
                         "expected 'input <channels>'");
      }
      p.node.name = "input";
      p.name_column = tokens[0].column;
      p.node.out_channels = parse_int(tokens[1], tokens[1].text, line_no, tokens[1].column);
      pending.push_back(std::move(p));
      continue;
    }

    if (tokens.size() < 2 || tokens[1].text.find('=') != std::string_view::npos) {
      throw ParseError(ErrorCode::Syntax, line_no,
                       tokens.size() < 2 ? tokens[0].column + tokens[0].text.size()
                                         : tokens[1].column,
                       "expected a node name after '" + std::string(tokens[0].text) + "'");
    }
    p.node.name = std::string(tokens[1].text);
    p.name_column = tokens[1].column;

    const auto keys = allowed_keys(*kind);
    std::map<std::string_view, bool> seen;
    for (std::size_t t = 2; t < tokens.size(); ++t) {
      const Token& tok = tokens[t];
      const auto eq = tok.text.find('=');
      if (eq == std::string_view::npos || eq == 0 || eq + 1 == tok.text.size()) {
        throw ParseError(ErrorCode::Syntax, line_no, tok.column,
                         "expected key=value, got '" + std::string(tok.text) + "'");
      }
      const std::string_view key = tok.text.substr(0, eq);
      const std::string_view value = tok.text.substr(eq + 1);
      const std::size_t value_col = tok.column + eq + 1;
      const bool known = std::any_of(keys.begin(), keys.end(),
                                     [&](const auto& kv) { return kv.first == key; });
      if (!known) {
        throw ParseError(ErrorCode::Syntax, line_no, tok.column,
                         "key '" + std::string(key) + "' is not valid for " +
                             std::string(kind_name(*kind)));
      }
      if (seen[key]) {
        throw ParseError(ErrorCode::Syntax, line_no, tok.column,
                         "duplicate key '" + std::string(key) + "'");
      }
      seen[key] = true;
      if (key == "from") {
        std::size_t start = 0;
        while (start <= value.size()) {
          const std::size_t comma = value.find(',', start);
          const std::string_view ref = value.substr(
              start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
          if (ref.empty()) {
            throw ParseError(ErrorCode::Syntax, line_no, value_col + start, "empty reference");
          }
          p.refs.push_back({std::string(ref), value_col + start});
          if (comma == std::string_view::npos) break;
          start = comma + 1;
        }
        continue;
      }
      const int v = parse_int(tok, value, line_no, value_col);
      if (key == "k") p.node.kernel = v;
      else if (key == "s") p.node.stride = v;
      else if (key == "d") p.node.dilation = v;
      else if (key == "p") p.node.padding = v;
      else if (key == "ch" || key == "out") p.node.out_channels = v;
    }
    for (const auto& [key, required] : keys) {
      if (required && !seen[key]) {
        throw ParseError(ErrorCode::Syntax, line_no, tokens[0].column,
                         "missing required key '" + std::string(key) + "'");
      }
    }
    pending.push_back(std::move(p));
  }

  if (pending.empty()) throw ParseError(ErrorCode::Syntax, 1, 1, "empty architecture document");

  std::unordered_map<std::string, int> ids;
  int input_count = 0;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const auto& p = pending[i];
    if (p.node.kind == LayerKind::Input && ++input_count > 1) {
      throw ParseError(ErrorCode::Validation, p.line, p.name_column, "multiple input nodes");
    }
    if (!ids.emplace(p.node.name, static_cast<int>(i)).second) {
      throw ParseError(ErrorCode::Validation, p.line, p.name_column,
                       "duplicate node name '" + p.node.name + "'");
    }
  }
  if (input_count == 0) throw ParseError(ErrorCode::Validation, 1, 1, "missing input node");

  std::vector<LayerNode> nodes;
  nodes.reserve(pending.size());
  for (auto& p : pending) {
    for (const auto& ref : p.refs) {
      const auto it = ids.find(ref.name);
      if (it == ids.end()) {
        throw ParseError(ErrorCode::DanglingReference, p.line, ref.column,
                         "reference to undefined node '" + ref.name + "'");
      }
      p.node.inputs.push_back(it->second);
    }
    nodes.push_back(p.node);
  }

  try {
    return ArchGraph::build(std::move(name), std::move(nodes));
  } catch (const NodeError& e) {
    const auto& p = pending.at(static_cast<std::size_t>(e.node_id()));
    throw ParseError(e.code(), p.line, p.name_column, e.what());
  }
}

std::string serialize_arch(const ArchGraph& graph) {
  std::ostringstream out;
  out << "# architecture: " << graph.name() << '\n';
  for (const LayerNode& n : graph.nodes()) {
    if (n.kind == LayerKind::Input) {
      out << "input " << n.out_channels << '\n';
      continue;
    }
    out << kind_name(n.kind) << ' ' << n.name;
    switch (n.kind) {
      case LayerKind::Conv:
        out << " k=" << n.kernel << " s=" << n.stride << " d=" << n.dilation << " p=" << n.padding
            << " ch=" << n.out_channels;
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        out << " k=" << n.kernel << " s=" << n.stride;
        if (n.padding != 0) out << " p=" << n.padding;
        break;
      case LayerKind::Dense:
        out << " out=" << n.out_channels;
        break;
      default:
        break;
    }
    out << " from=";
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (i) out << ',';
      out << graph.node(n.inputs[i]).name;
    }
    out << '\n';
  }
  return out.str();
}

std::string arch_hash(const ArchGraph& graph) {
  // Hash the body only, so renaming the architecture keeps the hash.
  std::string text = serialize_arch(graph);
  text = text.substr(text.find('\n') + 1);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace layerscope
