#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace hydronet {

using NodeId = std::string;

inline constexpr std::size_t kEdgeAttrCount = 9;

/// Attribute column names, in storage order.
inline constexpr std::array<const char*, kEdgeAttrCount> kEdgeAttrNames = {
    "length",   "roughness",    "geom1",         "slope",        "gis_length",
    "max_flow", "max_velocity", "max_full_flow", "max_full_depth"};

/// A pipe, directed upstream -> downstream. Units: ft, cfs, ft/s.
struct PipeEdge {
  NodeId from;
  NodeId to;
  double length = 0.0;
  double roughness = 0.0;  // Manning n
  double diameter = 0.0;   // Geom1
  double slope = 0.0;
  double gis_length = 0.0;
  double max_flow = 0.0;
  double max_velocity = 0.0;
  double max_over_full_flow = 0.0;
  double max_over_full_depth = 0.0;

  std::array<double, kEdgeAttrCount> attributes() const {
    return {length,   roughness,    diameter,           slope,
            gis_length, max_flow, max_velocity, max_over_full_flow, max_over_full_depth};
  }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-column location/scale used to z-score the edge attribute matrix.
struct ColumnStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;
};

/// Validated, immutable sewer network. Node and edge order are frozen at
/// construction and every matrix in the library indexes by these positions.
class PipeGraph {
 public:
  struct Neighbor {
    NodeId node;
    std::size_t edge;
    bool operator==(const Neighbor&) const = default;
  };

  const std::vector<NodeId>& nodes() const { return nodes_; }
  const std::vector<PipeEdge>& edges() const { return edges_; }
  const NodeId& outlet() const { return nodes_[outlet_]; }
  std::size_t outlet_index() const { return outlet_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  std::optional<std::size_t> find(const NodeId& id) const;
  /// Throws UnknownNode.
  std::size_t index_of(const NodeId& id) const;

  std::size_t edge_source(std::size_t e) const { return source_[e]; }
  std::size_t edge_target(std::size_t e) const { return target_[e]; }

  /// Edge indices entering / leaving a node (by node index), in edge-list order.
  const std::vector<std::size_t>& in_edges(std::size_t node) const { return in_edges_[node]; }
  const std::vector<std::size_t>& out_edges(std::size_t node) const { return out_edges_[node]; }

  /// Stable hash of the node and edge lists (ids, order and attributes).
  std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  friend PipeGraph build_graph(std::vector<NodeId>, std::vector<PipeEdge>, const NodeId&);

  std::vector<NodeId> nodes_;
  std::vector<PipeEdge> edges_;
  std::size_t outlet_ = 0;
  std::unordered_map<NodeId, std::size_t> index_;
  std::vector<std::size_t> source_;
  std::vector<std::size_t> target_;
  std::vector<std::vector<std::size_t>> in_edges_;
  std::vector<std::vector<std::size_t>> out_edges_;
  std::uint64_t fingerprint_ = 0;
};

/// Validates and freezes a network. Throws DuplicateNode, DanglingEdge,
/// CycleDetected, DisconnectedComponent, OutletHasOutflow, InvalidEdge.
PipeGraph build_graph(std::vector<NodeId> nodes, std::vector<PipeEdge> edges, const NodeId& outlet);

/// Upstream neighbours of `node`: every edge whose `to` is `node`, in edge order.
std::vector<PipeGraph::Neighbor> in_neighbors(const PipeGraph& graph, const NodeId& node);

/// Kahn's algorithm with ties broken by node index.
std::vector<NodeId> topological_order(const PipeGraph& graph);
std::vector<std::size_t> topological_indices(const PipeGraph& graph);

/// E x 9 attribute matrix; z-scored column-wise when `stats` is given.
RowMatrix edge_attr_matrix(const PipeGraph& graph, const ColumnStats* stats = nullptr);

/// Column moments of the attribute matrix (population std). Constant
/// columns get std 1 so z-scoring only centers them.
ColumnStats fit_edge_stats(const PipeGraph& graph);

/// nodes.csv (`node_id,is_outlet`) + edges.csv.
PipeGraph load_graph(const std::string& nodes_csv, const std::string& edges_csv);
void save_graph(const PipeGraph& graph, const std::string& nodes_csv, const std::string& edges_csv);

/// Eight-node, seven-pipe branching network used for demos and tests.
PipeGraph demo_graph();

}  // namespace hydronet
