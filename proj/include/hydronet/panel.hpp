#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "hydronet/graph.hpp"

namespace hydronet {

enum Channel : std::size_t { kDepth = 0, kFlow = 1 };
inline constexpr std::size_t kChannels = 2;
inline constexpr std::int64_t kDefaultStride = 600;  // 10 minutes

/// T x N x 2 observations. `values` is T x (2N) with column 2n + channel;
/// depth in ft, flow in cfs.
struct TimeSeriesPanel {
  std::vector<std::int64_t> timestamps;
  RowMatrix values;
  std::vector<NodeId> node_order;
  std::int64_t stride = kDefaultStride;

  std::size_t steps() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t nodes() const { return node_order.size(); }
  double at(std::size_t t, std::size_t node, std::size_t channel) const {
    return values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(2 * node + channel));
  }
  double& at(std::size_t t, std::size_t node, std::size_t channel) {
    return values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(2 * node + channel));
  }
  /// Rows [begin, begin + count) as a new panel.
  TimeSeriesPanel slice(std::size_t begin, std::size_t count) const;
};

/// Wide CSV: `timestamp,<id>_depth,<id>_flow,...`, one row per step. Columns
/// are bound to graph nodes by name; extra columns are ignored.
TimeSeriesPanel load_panel(const std::string& path, const PipeGraph& graph);
void save_panel(const TimeSeriesPanel& panel, const std::string& path);
std::string panel_header(const std::vector<NodeId>& nodes);

struct WindowSpec {
  std::size_t lookback = 12;
  std::size_t horizon = 12;
};

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct PanelSplit {
  TimeSeriesPanel train, val, test;
  std::size_t val_offset = 0;   // absolute index of val row 0
  std::size_t test_offset = 0;  // absolute index of test row 0
};

/// Segment sizes floor(ratio * T) for train and val; the remainder is test.
std::tuple<std::size_t, std::size_t, std::size_t> split_sizes(std::size_t steps, const SplitSpec& spec);

/// Contiguous chronological split. Throws TooShort when T < 3 (L + H) or any
/// segment is too short for one window.
PanelSplit chronological_split(const TimeSeriesPanel& panel, const SplitSpec& spec, const WindowSpec& window);

enum class NormMode { Global, PerNode };

/// Z-score parameters. `mean`/`std` have 2 entries (Global) or 2N (PerNode,
/// column 2n + channel).
struct NormStats {
  NormMode mode = NormMode::Global;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;

  /// Broadcast to 2N panel columns.
  Eigen::RowVectorXd column_mean(std::size_t nodes) const;
  Eigen::RowVectorXd column_std(std::size_t nodes) const;
};

/// Population moments. Throws ZeroVariance on a constant channel.
NormStats fit_normalizer(const TimeSeriesPanel& train, NormMode mode = NormMode::Global);
TimeSeriesPanel apply_normalizer(const TimeSeriesPanel& panel, const NormStats& stats);
TimeSeriesPanel invert_normalizer(const TimeSeriesPanel& panel, const NormStats& stats);
/// Same maps on a bare T x 2N block.
RowMatrix normalize(const RowMatrix& values, const NormStats& stats);
RowMatrix denormalize(const RowMatrix& values, const NormStats& stats);

/// Stride-1 sliding windows over one split segment. Window i reads input
/// rows [i, i + L) and target rows [i + L, i + L + H). A set can also hold
/// explicit (input, target) pairs.
class WindowSet {
 public:
  using Block = Eigen::Ref<const RowMatrix>;

  WindowSet() = default;
  WindowSet(RowMatrix values, WindowSpec spec, std::size_t offset);
  /// Inputs L x 2N, targets H x 2N, all of equal shape.
  static WindowSet from_pairs(std::vector<RowMatrix> inputs, std::vector<RowMatrix> targets);

  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  const WindowSpec& spec() const { return spec_; }
  std::size_t nodes() const { return nodes_; }
  /// Absolute panel index of the first target step of window i.
  std::size_t target_start(std::size_t i) const { return offset_ + i + spec_.lookback; }

  Block input(std::size_t i) const;
  Block target(std::size_t i) const;

 private:
  RowMatrix values_;
  std::vector<RowMatrix> inputs_, targets_;
  WindowSpec spec_;
  std::size_t offset_ = 0;
  std::size_t count_ = 0;
  std::size_t nodes_ = 0;
};

/// Throws TooShort when T < L + H. `offset` is the absolute index of the
/// segment start, carried for reporting.
WindowSet make_windows(const TimeSeriesPanel& panel, const WindowSpec& spec, std::size_t offset = 0);

/// Sample autocorrelation r_0..r_max_lag. Throws ZeroVariance, LagTooLarge.
std::vector<double> acf(std::span<const double> series, std::size_t max_lag);

enum class ConstantColumn { Throw, NaN };

/// 9 x 9 Pearson correlation of the edge attribute columns.
RowMatrix edge_corr_matrix(const PipeGraph& graph, ConstantColumn policy = ConstantColumn::Throw);

}  // namespace hydronet
