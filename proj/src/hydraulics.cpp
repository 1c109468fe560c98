#include "hydronet/hydraulics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "csv.hpp"
#include "hydronet/error.hpp"
#include "hydronet/random.hpp"

namespace hydronet {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw Error(ErrorCode::NonPositiveInput, std::string(name) + " must be > 0, got " + csv::format(v));
}

std::size_t edge_index(const PipeGraph& graph, const std::string& target) {
  const auto arrow = target.find("->");
  if (arrow == std::string::npos) return graph.edge_count();
  const auto from = target.substr(0, arrow);
  const auto to = target.substr(arrow + 2);
  for (std::size_t e = 0; e < graph.edge_count(); ++e)
    if (graph.edges()[e].from == from && graph.edges()[e].to == to) return e;
  throw Error(ErrorCode::UnknownNode, "no pipe '" + target + "'");
}

// Pipe whose capacity bounds a node-level blockage.
std::size_t controlling_edge(const PipeGraph& graph, std::size_t node) {
  if (!graph.out_edges(node).empty()) return graph.out_edges(node).front();
  return graph.in_edges(node).front();
}

// capacity_pipe is only read for blockages.
double apply_anomaly(double flow, const AnomalySpec& a, const PipeEdge* capacity_pipe) {
  switch (a.kind) {
    case AnomalyKind::Leak: return flow * (1.0 - a.magnitude);
    case AnomalyKind::Infiltration: return flow * (1.0 + a.magnitude);
    case AnomalyKind::Blockage: return std::min(flow, (1.0 - a.magnitude) * manning_full_flow(*capacity_pipe));
  }
  return flow;
}

}  // namespace

double manning_full_flow(double diameter, double slope, double roughness) {
  require_positive(diameter, "diameter");
  require_positive(slope, "slope");
  require_positive(roughness, "roughness");
  const double area = std::numbers::pi * diameter * diameter / 4.0;
  const double radius = diameter / 4.0;
  return kManningUS / roughness * area * std::pow(radius, 2.0 / 3.0) * std::sqrt(slope);
}

double manning_full_flow(const PipeEdge& pipe) { return manning_full_flow(pipe.diameter, pipe.slope, pipe.roughness); }

double partial_flow(double depth, double diameter, double slope, double roughness) {
  if (depth <= 0.0) return 0.0;
  if (depth >= diameter) return manning_full_flow(diameter, slope, roughness);
  // Central angle subtended by the free surface.
  const double theta = 2.0 * std::acos(1.0 - 2.0 * depth / diameter);
  const double area = diameter * diameter / 8.0 * (theta - std::sin(theta));
  const double perimeter = diameter * theta / 2.0;
  return kManningUS / roughness * area * std::pow(area / perimeter, 2.0 / 3.0) * std::sqrt(slope);
}

double normal_depth(double flow, const PipeEdge& pipe) {
  const double full = manning_full_flow(pipe);
  if (!(flow >= 0.0)) throw Error(ErrorCode::NonPositiveInput, "flow must be >= 0, got " + csv::format(flow));
  if (flow == 0.0) return 0.0;
  if (flow > full * (1.0 + 1e-12))
    throw Error(ErrorCode::FlowExceedsCapacity, "flow " + csv::format(flow) + " cfs exceeds capacity " +
                                                    csv::format(full) + " cfs of pipe " + pipe.from + "->" + pipe.to);
  // The partial-flow curve peaks above Q_full near 0.94 D; at capacity the
  // pipe is taken to run full.
  if (flow >= full * (1.0 - 1e-12)) return pipe.diameter;

  // Q(y) < flow exactly on [0, root) for flow < Q_full.
  const double tol = 1e-9 * std::max(full, 1.0);
  double lo = 0.0, hi = pipe.diameter;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double q = partial_flow(mid, pipe.diameter, pipe.slope, pipe.roughness);
    if (std::abs(q - flow) < tol) return mid;
    (q < flow ? lo : hi) = mid;
  }
  throw Error(ErrorCode::NonConvergence, "normal depth did not converge for flow " + csv::format(flow));
}

std::string to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::Leak: return "leak";
    case AnomalyKind::Infiltration: return "infiltration";
    case AnomalyKind::Blockage: return "blockage";
  }
  return "leak";
}

AnomalyKind parse_anomaly_kind(const std::string& text) {
  if (text == "leak") return AnomalyKind::Leak;
  if (text == "infiltration") return AnomalyKind::Infiltration;
  if (text == "blockage") return AnomalyKind::Blockage;
  throw Error(ErrorCode::InvalidConfig, "unknown anomaly kind '" + text + "'");
}

void SimConfig::validate() const {
  if (duration < 1) throw Error(ErrorCode::InvalidConfig, "sim duration must be >= 1 step");
  if (stride <= 0) throw Error(ErrorCode::InvalidConfig, "sim stride must be > 0 seconds");
  if (!(base_inflow > 0.0)) throw Error(ErrorCode::InvalidConfig, "base_inflow must be > 0");
  for (const auto& [node, q] : source_inflow)
    if (!(q > 0.0)) throw Error(ErrorCode::InvalidConfig, "inflow for '" + node + "' must be > 0");
  if (!(diurnal_amplitude >= 0.0 && diurnal_amplitude < 1.0))
    throw Error(ErrorCode::InvalidConfig, "diurnal_amplitude must be in [0, 1)");
  if (!(weekly_amplitude >= 0.0 && weekly_amplitude < 1.0))
    throw Error(ErrorCode::InvalidConfig, "weekly_amplitude must be in [0, 1)");
  if (!(noise_std >= 0.0)) throw Error(ErrorCode::InvalidConfig, "noise_std must be >= 0");
}

std::size_t anomaly_site(const PipeGraph& graph, const AnomalySpec& anomaly) {
  const auto e = edge_index(graph, anomaly.target);
  if (e < graph.edge_count()) return graph.edge_target(e);
  return graph.index_of(anomaly.target);
}

TimeSeriesPanel generate_dataset(const PipeGraph& graph, const SimConfig& config,
                                 const std::vector<AnomalySpec>& anomalies) {
  config.validate();
  const std::size_t n = graph.node_count();
  const std::size_t m = graph.edge_count();

  struct Bound {
    const AnomalySpec* spec;
    std::size_t edge;  // m when the target is a node
    std::size_t node;
  };
  std::vector<Bound> bound;
  for (const auto& a : anomalies) {
    if (!(a.start < a.end && a.end <= config.duration))
      throw Error(ErrorCode::InvalidConfig, "anomaly window [" + std::to_string(a.start) + ", " +
                                                std::to_string(a.end) + ") must satisfy start < end <= duration");
    if (!(a.magnitude > 0.0 && a.magnitude <= 1.0))
      throw Error(ErrorCode::InvalidConfig, "anomaly magnitude must be in (0, 1]");
    const auto e = edge_index(graph, a.target);
    if (e < m)
      bound.push_back({&a, e, graph.edge_source(e)});
    else
      bound.push_back({&a, m, graph.index_of(a.target)});
    if (a.kind == AnomalyKind::Blockage && m == 0) throw Error(ErrorCode::InvalidConfig, "blockage needs a pipe");
  }

  std::vector<double> base(n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    if (!graph.in_edges(v).empty()) continue;
    const auto it = config.source_inflow.find(graph.nodes()[v]);
    base[v] = it != config.source_inflow.end() ? it->second : config.base_inflow;
  }
  for (const auto& [node, q] : config.source_inflow)
    if (!graph.in_edges(graph.index_of(node)).empty())
      throw Error(ErrorCode::InvalidConfig, "inflow override for '" + node + "', which is not a source node");

  const auto order = topological_indices(graph);
  const double day = 86400.0 / static_cast<double>(config.stride);
  const double week = 7.0 * day;
  Xoshiro256 rng(derive_seed(config.seed, "sim-noise"));

  TimeSeriesPanel panel;
  panel.node_order = graph.nodes();
  panel.stride = config.stride;
  panel.values.resize(static_cast<Eigen::Index>(config.duration), static_cast<Eigen::Index>(2 * n));
  panel.timestamps.resize(config.duration);

  std::vector<double> node_flow(n), edge_flow(m);
  for (std::size_t t = 0; t < config.duration; ++t) {
    panel.timestamps[t] = config.start_time + static_cast<std::int64_t>(t) * config.stride;
    const double td = static_cast<double>(t);
    const double pattern = 1.0 + config.diurnal_amplitude * std::sin(2.0 * std::numbers::pi * td / day) +
                           config.weekly_amplitude * std::sin(2.0 * std::numbers::pi * td / week);

    for (std::size_t v = 0; v < n; ++v) {
      if (base[v] == 0.0) continue;
      const double noise = config.noise_std > 0.0 ? config.noise_std * standard_normal(rng) : 0.0;
      node_flow[v] = std::max(0.0, base[v] * pattern + noise);
    }

    for (auto v : order) {
      double q = base[v] > 0.0 ? node_flow[v] : 0.0;
      for (auto e : graph.in_edges(v)) q += edge_flow[e];
      for (const auto& b : bound)
        if (b.edge == m && b.node == v && t >= b.spec->start && t < b.spec->end)
          q = apply_anomaly(q, *b.spec, m > 0 ? &graph.edges()[controlling_edge(graph, v)] : nullptr);
      node_flow[v] = q;
      const auto& outs = graph.out_edges(v);
      for (auto e : outs) {
        double qe = q / static_cast<double>(outs.size());
        for (const auto& b : bound)
          if (b.edge == e && t >= b.spec->start && t < b.spec->end) qe = apply_anomaly(qe, *b.spec, &graph.edges()[e]);
        edge_flow[e] = qe;
      }
    }

    for (std::size_t v = 0; v < n; ++v) {
      const auto& ins = graph.in_edges(v);
      const auto& outs = graph.out_edges(v);
      double depth = 0.0;
      if (ins.empty()) {
        if (!outs.empty()) depth = normal_depth(edge_flow[outs.front()], graph.edges()[outs.front()]);
      } else if (ins.size() == 1) {
        depth = normal_depth(edge_flow[ins.front()], graph.edges()[ins.front()]);
      } else if (!outs.empty()) {
        depth = normal_depth(edge_flow[outs.front()], graph.edges()[outs.front()]);
      } else {
        const auto largest = *std::max_element(ins.begin(), ins.end(),
                                               [&](auto a, auto b) { return edge_flow[a] < edge_flow[b]; });
        depth = normal_depth(edge_flow[largest], graph.edges()[largest]);
      }
      panel.at(t, v, kDepth) = depth;
      panel.at(t, v, kFlow) = node_flow[v];
    }
  }
  return panel;
}

void save_anomalies(const std::vector<AnomalySpec>& anomalies, const std::string& path) {
  auto out = csv::open_out(path);
  out << "kind,target,start,end,magnitude\n";
  for (const auto& a : anomalies)
    out << to_string(a.kind) << ',' << a.target << ',' << a.start << ',' << a.end << ',' << csv::format(a.magnitude)
        << '\n';
}

std::vector<AnomalySpec> load_anomalies(const std::string& path) {
  auto in = csv::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyFile, path + " is empty");
  if (csv::split(line) != std::vector<std::string>{"kind", "target", "start", "end", "magnitude"})
    throw Error(ErrorCode::MalformedFile, path + ": expected header 'kind,target,start,end,magnitude'");
  std::vector<AnomalySpec> result;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    long long start = 0, end = 0;
    double magnitude = 0.0;
    if (f.size() != 5 || !csv::parse(f[2], start) || !csv::parse(f[3], end) || !csv::parse(f[4], magnitude) ||
        start < 0 || end < 0)
      throw Error(ErrorCode::MalformedFile, path + ": row " + std::to_string(row));
    result.push_back({parse_anomaly_kind(f[0]), f[1], static_cast<std::size_t>(start), static_cast<std::size_t>(end),
                      magnitude});
  }
  return result;
}

}  // namespace hydronet
