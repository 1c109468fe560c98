#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "hydronet/hydraulics.hpp"
#include "hydronet/model.hpp"
#include "hydronet/panel.hpp"
#include "hydronet/training.hpp"

namespace hydronet {

inline constexpr int kConfigVersion = 1;

struct PathConfig {
  std::string nodes;       // nodes.csv; empty selects the built-in demo network
  std::string edges;       // edges.csv
  std::string panel;       // panel CSV
  std::string checkpoint;  // checkpoint archive
  std::string history;     // per-epoch loss CSV; defaults to <checkpoint>.history.csv
  std::string anomalies;   // anomaly label CSV (read by detect for scoring, written by simulate)
};

struct EvalConfig {
  double mape_epsilon = 1e-3;
  std::size_t seasonal_period = 144;  // one day at 10-minute stride
};

struct DetectConfig {
  double threshold = 3.0;       // k, in residual standard deviations
  std::size_t min_duration = 3; // m, consecutive steps
  std::size_t horizon_step = 1; // 1-based forecast step scored; 0 selects the last (H)
};

struct AnalyzeConfig {
  std::size_t max_lag = 432;  // three days at 10-minute stride
};

/// Everything a command-line run needs. One global seed feeds every
/// component; each derives its own stream as seed ^ fnv1a(purpose).
struct RunConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  PathConfig paths;
  SimConfig sim;
  std::vector<AnomalySpec> anomalies;
  HydroNetConfig model;
  TrainConfig train;
  SplitSpec split;
  WindowSpec window;
  NormMode norm = NormMode::Global;
  EvalConfig eval;
  DetectConfig detect;
  AnalyzeConfig analyze;

  /// Pushes the global seed and window spec into the component configs.
  void propagate();
  void validate() const;  // throws InvalidConfig
};

/// INI text: `key = value` under `[section]` headers. Unknown keys are
/// rejected; missing keys keep their defaults.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);
/// Every field, defaults included. parse_config(dump_config(c)) == c.
std::string dump_config(const RunConfig& config);

boost::property_tree::ptree to_ptree(const HydroNetConfig& config);
boost::property_tree::ptree to_ptree(const TrainConfig& config);
HydroNetConfig model_from_ptree(const boost::property_tree::ptree& tree, HydroNetConfig base = {});
TrainConfig train_from_ptree(const boost::property_tree::ptree& tree, TrainConfig base = {});

std::string to_string(NormMode mode);
NormMode parse_norm_mode(const std::string& text);

/// `kind:target:start:end:magnitude`.
AnomalySpec parse_anomaly(const std::string& text);

}  // namespace hydronet
