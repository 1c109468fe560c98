#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hydronet/model.hpp"
#include "hydronet/panel.hpp"
#include "hydronet/training.hpp"

namespace hydronet {

// Point metrics over equal-shape blocks in physical units.
double mae(const RowMatrix& pred, const RowMatrix& target);
double rmse(const RowMatrix& pred, const RowMatrix& target);

struct MapeResult {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // points with |target| <= epsilon
};

/// Throws EmptyInput, AllExcluded.
MapeResult mape(const RowMatrix& pred, const RowMatrix& target, double epsilon = 1e-3);

struct ChannelMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // NaN when every point was excluded
  std::size_t count = 0;
  std::size_t mape_excluded = 0;
};

struct MetricReport {
  std::array<ChannelMetrics, kChannels> channel;
  /// One entry per horizon step when requested.
  std::vector<std::array<ChannelMetrics, kChannels>> per_horizon;
  std::size_t windows = 0;
};

/// Scores H x 2N forecasts against H x 2N truths.
MetricReport score(std::span<const RowMatrix> preds, std::span<const RowMatrix> targets, double mape_epsilon = 1e-3,
                   bool per_horizon = false);

/// Forecasts for every window of `raw_windows` (physical units), using the
/// checkpoint's stored normalizer.
std::vector<RowMatrix> forecast_windows(const Checkpoint& checkpoint, const PipeGraph& graph,
                                        const WindowSet& raw_windows);

/// Throws FingerprintMismatch.
MetricReport evaluate(const Checkpoint& checkpoint, const WindowSet& raw_windows, const PipeGraph& graph,
                      double mape_epsilon = 1e-3, bool per_horizon = false);

/// Last input row repeated `horizon` times.
RowMatrix persistence_forecast(const WindowSet::Block& window, std::size_t horizon);

/// Forecast for rows [t, t + horizon) of `history`: row t + j copies row
/// t - period + (j mod period). Only rows before t are read. Throws
/// InsufficientHistory when t < period.
RowMatrix seasonal_naive_forecast(const RowMatrix& history, std::size_t t, std::size_t period, std::size_t horizon);

MetricReport persistence_report(const WindowSet& raw_windows, double mape_epsilon = 1e-3, bool per_horizon = false);
/// `panel` is the full raw panel the windows were cut from.
MetricReport seasonal_naive_report(const TimeSeriesPanel& panel, const WindowSet& raw_windows, std::size_t period,
                                   double mape_epsilon = 1e-3, bool per_horizon = false);

/// Walk-forward forecasts over a raw panel. Element h (0-based) is T x 2N;
/// row t holds the step-(h + 1) forecast for time t made from rows
/// [t - h - L, t - h). Rows without enough history are NaN.
std::vector<RowMatrix> rolling_forecasts(const Checkpoint& checkpoint, const PipeGraph& graph,
                                         const TimeSeriesPanel& raw_panel);

/// Mean/std of observed - forecast per horizon step and column, ignoring NaN
/// rows. Throws ZeroResidualVariance, EmptyInput.
ResidualStats fit_residual_stats(const RowMatrix& observed, std::span<const RowMatrix> forecasts);

struct AnomalyEvent {
  NodeId node;
  std::size_t channel = 0;
  std::size_t start = 0;  // first flagged row
  std::size_t end = 0;    // last flagged row, inclusive
  double peak_z = 0.0;    // max |z| over the run
};

/// z = (observed - forecast - mean) / std per column. An event is a maximal
/// run of at least `min_duration` rows with |z| > threshold; NaN forecast
/// rows break runs. Row indices are shifted by `offset`. Events come out
/// sorted by (node order, channel, start). Throws ZeroResidualVariance.
std::vector<AnomalyEvent> detect_anomalies(const RowMatrix& observed, const RowMatrix& forecast,
                                           const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& std,
                                           const std::vector<NodeId>& nodes, double threshold,
                                           std::size_t min_duration, std::size_t offset = 0);

std::string channel_name(std::size_t channel);

void write_report_csv(std::ostream& out, const MetricReport& report, const std::string& label = "model");
void write_report_table(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& rows);
/// `node,channel,start,end,peak_z`.
void write_events_csv(std::ostream& out, const std::vector<AnomalyEvent>& events);

}  // namespace hydronet
