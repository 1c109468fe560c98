#include <doctest.h>

#include <cmath>
#include <fstream>

#include <algorithm>
#include <map>
#include <numeric>

#include "fixtures.hpp"
#include "hydronet/graph.hpp"

using namespace hydronet;
using fixtures::code_of;
using fixtures::pipe;

namespace {

// 23 nodes, 22 pipes: a branching tree shaped like a small catchment.
PipeGraph catchment() { return fixtures::random_tree(23, 2024); }

bool precedes_all(const PipeGraph& g, const std::vector<NodeId>& order) {
  std::map<NodeId, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  return std::all_of(g.edges().begin(), g.edges().end(),
                     [&](const PipeEdge& e) { return pos.at(e.from) < pos.at(e.to); });
}

}  // namespace

TEST_CASE("build_graph accepts a 23-node, 22-pipe tree") {
  const auto g = catchment();
  CHECK(g.node_count() == 23);
  CHECK(g.edge_count() == 22);
  CHECK(g.outlet() == "N22");
}

TEST_CASE("minimal chain") {
  const auto g = build_graph({"A", "B"}, {pipe("A", "B")}, "B");
  CHECK(topological_order(g) == std::vector<NodeId>{"A", "B"});
  CHECK(g.index_of("B") == 1);
}

TEST_CASE("build_graph rejects malformed networks") {
  CHECK(code_of([] { build_graph({"A", "B"}, {pipe("A", "B"), pipe("B", "A")}, "B"); }) == ErrorCode::CycleDetected);
  CHECK(code_of([] { build_graph({"A", "A"}, {}, "A"); }) == ErrorCode::DuplicateNode);
  CHECK(code_of([] { build_graph({"A", "B"}, {pipe("A", "C")}, "B"); }) == ErrorCode::DanglingEdge);
  CHECK(code_of([] { build_graph({"A", "B"}, {pipe("A", "B")}, "Z"); }) == ErrorCode::DanglingEdge);
  CHECK(code_of([] { build_graph({"A", "B", "C"}, {pipe("A", "B")}, "B"); }) == ErrorCode::DisconnectedComponent);
  CHECK(code_of([] { build_graph({"A", "B"}, {pipe("A", "B")}, "A"); }) == ErrorCode::OutletHasOutflow);
  CHECK(code_of([] { build_graph({"A"}, {pipe("A", "A")}, "A"); }) == ErrorCode::CycleDetected);
  auto bad = pipe("A", "B");
  bad.slope = 0.0;
  CHECK(code_of([&] { build_graph({"A", "B"}, {bad}, "B"); }) == ErrorCode::InvalidEdge);
  bad = pipe("A", "B");
  bad.max_over_full_depth = -0.1;
  CHECK(code_of([&] { build_graph({"A", "B"}, {bad}, "B"); }) == ErrorCode::InvalidEdge);
}

TEST_CASE("in_neighbors") {
  const auto ch = fixtures::chain({"A", "B", "C"});
  CHECK(in_neighbors(ch, "C") == std::vector<PipeGraph::Neighbor>{{"B", 1}});
  CHECK(in_neighbors(ch, "A").empty());
  CHECK(code_of([&] { in_neighbors(ch, "Q"); }) == ErrorCode::UnknownNode);

  const auto tree = build_graph({"A", "B", "C"}, {pipe("A", "C"), pipe("B", "C")}, "C");
  CHECK(in_neighbors(tree, "C") == std::vector<PipeGraph::Neighbor>{{"A", 0}, {"B", 1}});
}

TEST_CASE("topological_order") {
  CHECK(topological_order(fixtures::chain({"A", "B", "C"})) == std::vector<NodeId>{"A", "B", "C"});
  const auto tree = build_graph({"A", "B", "C"}, {pipe("A", "C"), pipe("B", "C")}, "C");
  CHECK(topological_order(tree) == std::vector<NodeId>{"A", "B", "C"});

  // Listed out of flow order: index tie-break still yields a valid order.
  const auto shuffled = build_graph({"C", "B", "A"}, {pipe("A", "B"), pipe("B", "C")}, "C");
  CHECK(topological_order(shuffled) == std::vector<NodeId>{"A", "B", "C"});

  const auto g = catchment();
  const auto order = topological_order(g);
  CHECK(order.size() == 23);
  CHECK(order.back() == g.outlet());
  CHECK(precedes_all(g, order));
  auto sorted = order;
  std::sort(sorted.begin(), sorted.end());
  auto ids = g.nodes();
  std::sort(ids.begin(), ids.end());
  CHECK(sorted == ids);
}

TEST_CASE("relabeling by topological order keeps the edge multiset") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = fixtures::random_tree(12, seed);
    const auto relabeled = build_graph(topological_order(g), g.edges(), g.outlet());
    auto key = [](const PipeGraph& x) {
      std::vector<std::pair<NodeId, NodeId>> v;
      for (const auto& e : x.edges()) v.emplace_back(e.from, e.to);
      std::sort(v.begin(), v.end());
      return v;
    };
    CHECK(key(relabeled) == key(g));
  }
}

TEST_CASE("in-degree sums to the edge count") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = fixtures::random_tree(15, seed);
    std::size_t total = 0;
    for (const auto& id : g.nodes()) total += in_neighbors(g, id).size();
    CHECK(total == g.edge_count());
  }
}

TEST_CASE("edge_attr_matrix") {
  const auto g = catchment();
  const auto raw = edge_attr_matrix(g);
  CHECK(raw.rows() == 22);
  CHECK(raw.cols() == 9);

  const auto one = build_graph({"A", "B"}, {pipe("A", "B")}, "B");
  const auto row = edge_attr_matrix(one);
  const auto expect = pipe("A", "B").attributes();
  CHECK(row.rows() == 1);
  for (int j = 0; j < 9; ++j) CHECK(row(0, j) == expect[static_cast<std::size_t>(j)]);

  const auto stats = fit_edge_stats(g);
  const auto z = edge_attr_matrix(g, &stats);
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double mean = z.col(j).mean();
    const double sd = std::sqrt((z.col(j).array() - mean).square().mean());
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(sd - 1.0) < 1e-12);
  }
}

TEST_CASE("constant attribute columns are centered, not scaled") {
  const auto g = fixtures::chain({"A", "B", "C"});  // identical pipes
  const auto stats = fit_edge_stats(g);
  CHECK(stats.std.isOnes());
  CHECK(edge_attr_matrix(g, &stats).isZero());
}

TEST_CASE("graph CSV round trip and fingerprint") {
  const auto g = catchment();
  const auto dir = fixtures::scratch_dir("graph");
  save_graph(g, (dir / "nodes.csv").string(), (dir / "edges.csv").string());
  const auto back = load_graph((dir / "nodes.csv").string(), (dir / "edges.csv").string());
  CHECK(back.nodes() == g.nodes());
  CHECK(back.outlet() == g.outlet());
  CHECK(edge_attr_matrix(back) == edge_attr_matrix(g));
  CHECK(back.fingerprint() == g.fingerprint());

  auto edges = g.edges();
  edges[3].length += 1.0;
  CHECK(build_graph(g.nodes(), edges, g.outlet()).fingerprint() != g.fingerprint());
}

TEST_CASE("load_graph reports malformed files") {
  const auto dir = fixtures::scratch_dir("graph-bad");
  const auto nodes = (dir / "nodes.csv").string();
  const auto edges = (dir / "edges.csv").string();
  { std::ofstream(nodes) << "node_id,is_outlet\nA,0\nB,1\n"; }
  { std::ofstream(edges) << "from,to,length\nA,B,1\n"; }
  CHECK(code_of([&] { load_graph(nodes, edges); }) == ErrorCode::MalformedFile);
  { std::ofstream(edges) << ""; }
  CHECK(code_of([&] { load_graph(nodes, edges); }) == ErrorCode::EmptyFile);
}

TEST_CASE("demo network") {
  const auto g = demo_graph();
  CHECK(g.node_count() == 8);
  CHECK(g.edge_count() == 7);
  CHECK(topological_order(g).back() == g.outlet());
}
