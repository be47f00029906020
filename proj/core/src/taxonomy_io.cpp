#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "dmoe/error.hpp"
#include "dmoe/ontology.hpp"

namespace dmoe {

namespace {

int parse_int(std::string_view field, std::size_t line, const char* what) {
  int v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

TaxonomyTree read_taxonomy(std::istream& in) {
  std::vector<TaxonomyNode> nodes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError(lineno, "expected node_id<TAB>parent<TAB>label");
    const std::string_view sv(line);
    TaxonomyNode node;
    node.id = parse_int(sv.substr(0, t1), lineno, "node id");
    const auto parent = sv.substr(t1 + 1, t2 - t1 - 1);
    if (parent != "-") node.parent = parse_int(parent, lineno, "parent id");
    node.label = line.substr(t2 + 1);
    nodes.push_back(std::move(node));
  }
  if (nodes.empty()) throw ParseError(0, "taxonomy input is empty");
  return TaxonomyTree::from_nodes(std::move(nodes));
}

TaxonomyTree load_taxonomy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open taxonomy file " + path);
  return read_taxonomy(in);
}

void write_taxonomy(std::ostream& out, const TaxonomyTree& tree) {
  for (const auto& node : tree.nodes()) {
    out << node.id << '\t';
    if (node.parent) {
      out << *node.parent;
    } else {
      out << '-';
    }
    out << '\t' << node.label << '\n';
  }
}

}  // namespace dmoe
