#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hydronet/graph.hpp"
#include "hydronet/panel.hpp"

namespace hydronet {

/// US-units Manning constant.
inline constexpr double kManningUS = 1.49;

/// Full-pipe capacity of a circular conduit: (1.49/n) A R^(2/3) sqrt(S),
/// A = pi D^2 / 4, R = D / 4. Throws NonPositiveInput.
double manning_full_flow(double diameter, double slope, double roughness);
double manning_full_flow(const PipeEdge& pipe);

/// Manning flow at depth y in a partially filled circular pipe.
double partial_flow(double depth, double diameter, double slope, double roughness);

/// Depth in [0, D] carrying `flow`, by bisection on the partial-flow curve.
/// Throws FlowExceedsCapacity, NonConvergence.
double normal_depth(double flow, const PipeEdge& pipe);

enum class AnomalyKind { Leak, Infiltration, Blockage };

std::string to_string(AnomalyKind kind);
AnomalyKind parse_anomaly_kind(const std::string& text);

/// An injected fault over steps [start, end). `target` is a node id or an
/// edge written "from->to".
struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::Leak;
  std::string target;
  std::size_t start = 0;
  std::size_t end = 0;
  double magnitude = 0.5;
};

struct SimConfig {
  std::size_t duration = 2880;
  std::int64_t stride = kDefaultStride;
  std::int64_t start_time = 1696118400;  // 2023-10-01T00:00:00Z
  double base_inflow = 0.1;              // cfs at each source node
  std::map<NodeId, double> source_inflow;  // per-source overrides
  double diurnal_amplitude = 0.5;
  double weekly_amplitude = 0.15;
  double noise_std = 0.002;
  std::uint64_t seed = 0;

  void validate() const;  // throws InvalidConfig
};

/// Steady routing over the graph in topological order, one step at a time.
/// Deterministic in (graph, config, anomalies).
TimeSeriesPanel generate_dataset(const PipeGraph& graph, const SimConfig& config,
                                 const std::vector<AnomalySpec>& anomalies = {});

/// Node whose observed flow an anomaly perturbs: the node itself, or the
/// downstream end of an edge target.
std::size_t anomaly_site(const PipeGraph& graph, const AnomalySpec& anomaly);

/// `kind,target,start,end,magnitude`.
void save_anomalies(const std::vector<AnomalySpec>& anomalies, const std::string& path);
std::vector<AnomalySpec> load_anomalies(const std::string& path);

}  // namespace hydronet
