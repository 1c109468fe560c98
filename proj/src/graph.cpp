#include "hydronet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "csv.hpp"
#include "hydronet/error.hpp"
#include "hydronet/random.hpp"

namespace hydronet {
namespace {

void validate_edge(const PipeEdge& e, std::size_t index) {
  const auto where = "edge " + std::to_string(index) + " (" + e.from + "->" + e.to + ")";
  if (e.from == e.to) throw Error(ErrorCode::CycleDetected, where + " is a self-loop");
  const auto positive = [&](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw Error(ErrorCode::InvalidEdge, where + ": " + name + " must be > 0");
  };
  const auto non_negative = [&](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw Error(ErrorCode::InvalidEdge, where + ": " + name + " must be >= 0");
  };
  positive(e.length, "length");
  positive(e.roughness, "roughness");
  positive(e.diameter, "geom1");
  positive(e.slope, "slope");
  non_negative(e.gis_length, "gis_length");
  non_negative(e.max_flow, "max_flow");
  non_negative(e.max_velocity, "max_velocity");
  non_negative(e.max_over_full_flow, "max_full_flow");
  non_negative(e.max_over_full_depth, "max_full_depth");
}

std::uint64_t compute_fingerprint(const std::vector<NodeId>& nodes, const std::vector<PipeEdge>& edges,
                                  const NodeId& outlet) {
  std::string canonical;
  for (const auto& n : nodes) canonical += n + ';';
  canonical += "|outlet=" + outlet + '|';
  for (const auto& e : edges) {
    canonical += e.from + "->" + e.to;
    for (double a : e.attributes()) canonical += ',' + csv::format(a);
    canonical += ';';
  }
  return fnv1a(canonical);
}

// Kahn's algorithm over node indices, smallest ready index first.
std::vector<std::size_t> kahn(std::size_t n, const std::vector<std::size_t>& source,
                              const std::vector<std::size_t>& target) {
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t e = 0; e < source.size(); ++e) {
    ++indegree[target[e]];
    out[source[e]].push_back(target[e]);
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(i);
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    const auto v = ready.top();
    ready.pop();
    order.push_back(v);
    for (auto w : out[v])
      if (--indegree[w] == 0) ready.push(w);
  }
  if (order.size() != n) throw Error(ErrorCode::CycleDetected, "network contains a directed cycle");
  return order;
}

}  // namespace

std::optional<std::size_t> PipeGraph::find(const NodeId& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t PipeGraph::index_of(const NodeId& id) const {
  if (auto i = find(id)) return *i;
  throw Error(ErrorCode::UnknownNode, "node '" + id + "' is not in the graph");
}

PipeGraph build_graph(std::vector<NodeId> nodes, std::vector<PipeEdge> edges, const NodeId& outlet) {
  if (nodes.empty()) throw Error(ErrorCode::InvalidConfig, "graph needs at least one node");

  PipeGraph g;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].empty()) throw Error(ErrorCode::InvalidConfig, "empty node id at position " + std::to_string(i));
    if (!g.index_.emplace(nodes[i], i).second)
      throw Error(ErrorCode::DuplicateNode, "node '" + nodes[i] + "' listed twice");
  }

  const auto outlet_it = g.index_.find(outlet);
  if (outlet_it == g.index_.end())
    throw Error(ErrorCode::DanglingEdge, "outlet '" + outlet + "' is not a listed node");
  g.outlet_ = outlet_it->second;

  const std::size_t n = nodes.size();
  g.in_edges_.resize(n);
  g.out_edges_.resize(n);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& edge = edges[e];
    const auto from = g.index_.find(edge.from);
    const auto to = g.index_.find(edge.to);
    if (from == g.index_.end() || to == g.index_.end())
      throw Error(ErrorCode::DanglingEdge, "edge " + std::to_string(e) + " (" + edge.from + "->" + edge.to +
                                               ") references an unknown node");
    validate_edge(edge, e);
    g.source_.push_back(from->second);
    g.target_.push_back(to->second);
    g.out_edges_[from->second].push_back(e);
    g.in_edges_[to->second].push_back(e);
  }

  kahn(n, g.source_, g.target_);

  if (!g.out_edges_[g.outlet_].empty())
    throw Error(ErrorCode::OutletHasOutflow, "outlet '" + outlet + "' has outgoing pipes");

  // Weak connectivity: undirected BFS from node 0.
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    const auto visit = [&](std::size_t w) {
      if (!seen[w]) {
        seen[w] = true;
        stack.push_back(w);
      }
    };
    for (auto e : g.out_edges_[v]) visit(g.target_[e]);
    for (auto e : g.in_edges_[v]) visit(g.source_[e]);
  }
  if (const auto it = std::find(seen.begin(), seen.end(), false); it != seen.end())
    throw Error(ErrorCode::DisconnectedComponent,
                "node '" + nodes[static_cast<std::size_t>(it - seen.begin())] + "' is not connected to the network");

  g.fingerprint_ = compute_fingerprint(nodes, edges, outlet);
  g.nodes_ = std::move(nodes);
  g.edges_ = std::move(edges);
  return g;
}

std::vector<PipeGraph::Neighbor> in_neighbors(const PipeGraph& graph, const NodeId& node) {
  const auto j = graph.index_of(node);
  std::vector<PipeGraph::Neighbor> result;
  for (auto e : graph.in_edges(j)) result.push_back({graph.edges()[e].from, e});
  return result;
}

std::vector<std::size_t> topological_indices(const PipeGraph& graph) {
  std::vector<std::size_t> source(graph.edge_count()), target(graph.edge_count());
  for (std::size_t e = 0; e < graph.edge_count(); ++e) {
    source[e] = graph.edge_source(e);
    target[e] = graph.edge_target(e);
  }
  return kahn(graph.node_count(), source, target);
}

std::vector<NodeId> topological_order(const PipeGraph& graph) {
  std::vector<NodeId> order;
  for (auto i : topological_indices(graph)) order.push_back(graph.nodes()[i]);
  return order;
}

RowMatrix edge_attr_matrix(const PipeGraph& graph, const ColumnStats* stats) {
  RowMatrix a(graph.edge_count(), kEdgeAttrCount);
  for (std::size_t e = 0; e < graph.edge_count(); ++e) {
    const auto row = graph.edges()[e].attributes();
    for (std::size_t c = 0; c < kEdgeAttrCount; ++c) a(e, c) = row[c];
  }
  if (stats) {
    if (stats->mean.size() != static_cast<Eigen::Index>(kEdgeAttrCount) ||
        stats->std.size() != static_cast<Eigen::Index>(kEdgeAttrCount))
      throw Error(ErrorCode::ShapeMismatch, "edge stats must have 9 columns");
    a = ((a.rowwise() - stats->mean).array().rowwise() / stats->std.array()).matrix();
  }
  return a;
}

ColumnStats fit_edge_stats(const PipeGraph& graph) {
  const RowMatrix a = edge_attr_matrix(graph);
  ColumnStats s;
  s.mean = Eigen::RowVectorXd::Zero(kEdgeAttrCount);
  s.std = Eigen::RowVectorXd::Ones(kEdgeAttrCount);
  if (a.rows() == 0) return s;
  s.mean = a.colwise().mean();
  const Eigen::RowVectorXd var = (a.rowwise() - s.mean).array().square().colwise().mean();
  for (Eigen::Index c = 0; c < var.size(); ++c) {
    const double sd = std::sqrt(var(c));
    // Relative guard: a column that is constant up to rounding counts as constant.
    s.std(c) = sd > 1e-12 * std::max(1.0, std::abs(s.mean(c))) ? sd : 1.0;
  }
  return s;
}

PipeGraph load_graph(const std::string& nodes_csv, const std::string& edges_csv) {
  std::vector<NodeId> nodes;
  std::optional<NodeId> outlet;
  {
    auto in = csv::open_in(nodes_csv);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::EmptyFile, nodes_csv + " is empty");
    if (csv::split(line) != std::vector<std::string>{"node_id", "is_outlet"})
      throw Error(ErrorCode::MalformedFile, nodes_csv + ": expected header 'node_id,is_outlet'");
    std::size_t row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (line.empty() || line == "\r") continue;
      const auto f = csv::split(line);
      if (f.size() != 2) throw Error(ErrorCode::MalformedFile, nodes_csv + ": row " + std::to_string(row));
      nodes.push_back(f[0]);
      if (f[1] == "1" || f[1] == "true") {
        if (outlet) throw Error(ErrorCode::MalformedFile, nodes_csv + ": more than one outlet");
        outlet = f[0];
      }
    }
  }
  if (nodes.empty()) throw Error(ErrorCode::EmptyFile, nodes_csv + " lists no nodes");
  if (!outlet) throw Error(ErrorCode::MalformedFile, nodes_csv + ": no node marked as outlet");

  std::vector<PipeEdge> edges;
  {
    auto in = csv::open_in(edges_csv);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::EmptyFile, edges_csv + " is empty");
    std::vector<std::string> expected{"from", "to"};
    for (auto name : kEdgeAttrNames) expected.emplace_back(name);
    if (csv::split(line) != expected)
      throw Error(ErrorCode::MalformedFile, edges_csv + ": unexpected header");
    std::size_t row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (line.empty() || line == "\r") continue;
      const auto f = csv::split(line);
      if (f.size() != expected.size())
        throw Error(ErrorCode::MalformedFile, edges_csv + ": row " + std::to_string(row) + " has wrong arity");
      std::array<double, kEdgeAttrCount> v{};
      for (std::size_t c = 0; c < kEdgeAttrCount; ++c)
        if (!csv::parse(f[c + 2], v[c]))
          throw Error(ErrorCode::MalformedFile, edges_csv + ": row " + std::to_string(row) + " column " +
                                                    kEdgeAttrNames[c] + " is not a number");
      edges.push_back({f[0], f[1], v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]});
    }
  }
  return build_graph(std::move(nodes), std::move(edges), *outlet);
}

void save_graph(const PipeGraph& graph, const std::string& nodes_csv, const std::string& edges_csv) {
  {
    auto out = csv::open_out(nodes_csv);
    out << "node_id,is_outlet\n";
    for (std::size_t i = 0; i < graph.node_count(); ++i)
      out << graph.nodes()[i] << ',' << (i == graph.outlet_index() ? 1 : 0) << '\n';
  }
  auto out = csv::open_out(edges_csv);
  out << "from,to";
  for (auto name : kEdgeAttrNames) out << ',' << name;
  out << '\n';
  for (const auto& e : graph.edges()) {
    out << e.from << ',' << e.to;
    for (double a : e.attributes()) out << ',' << csv::format(a);
    out << '\n';
  }
}

PipeGraph demo_graph() {
  // Four laterals merging in three stages:
  //   MH1 -> MH3 <- MH2,  MH3 -> MH5 <- MH4,  MH5 -> MH7 <- MH6,  MH7 -> OUT
  const auto pipe = [](const char* from, const char* to, double length, double n, double d, double slope,
                       double max_flow, double max_velocity, double q_ratio, double y_ratio) {
    return PipeEdge{from, to, length, n, d, slope, length * 1.02, max_flow, max_velocity, q_ratio, y_ratio};
  };
  std::vector<NodeId> nodes{"MH1", "MH2", "MH3", "MH4", "MH5", "MH6", "MH7", "OUT"};
  std::vector<PipeEdge> edges{
      pipe("MH1", "MH3", 210.0, 0.013, 0.667, 0.020, 0.19, 2.1, 0.11, 0.22),
      pipe("MH2", "MH3", 145.0, 0.014, 0.667, 0.012, 0.15, 1.7, 0.12, 0.24),
      pipe("MH3", "MH5", 260.0, 0.013, 0.833, 0.010, 0.33, 2.3, 0.13, 0.25),
      pipe("MH4", "MH5", 120.0, 0.012, 0.667, 0.016, 0.17, 2.0, 0.10, 0.21),
      pipe("MH5", "MH7", 300.0, 0.013, 1.000, 0.006, 0.50, 2.4, 0.14, 0.26),
      pipe("MH6", "MH7", 95.0, 0.015, 0.667, 0.024, 0.16, 2.2, 0.09, 0.20),
      pipe("MH7", "OUT", 180.0, 0.013, 1.250, 0.004, 0.66, 2.5, 0.12, 0.24),
  };
  return build_graph(std::move(nodes), std::move(edges), "OUT");
}

}  // namespace hydronet
