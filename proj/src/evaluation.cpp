#include "hydronet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "csv.hpp"
#include "hydronet/error.hpp"

namespace hydronet {

namespace {

using Index = Eigen::Index;
constexpr std::size_t kPredictChunk = 256;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_pair(const RowMatrix& pred, const RowMatrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw Error(ErrorCode::ShapeMismatch, "prediction and target shapes differ");
  if (pred.size() == 0) throw Error(ErrorCode::EmptyInput, "no points to score");
}

struct Accumulator {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double pct_sum = 0.0;
  std::size_t count = 0;
  std::size_t used = 0;

  void add(double pred, double target, double epsilon) {
    const double e = pred - target;
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ++count;
    if (std::abs(target) > epsilon) {
      pct_sum += std::abs(e) / std::abs(target);
      ++used;
    }
  }

  ChannelMetrics finish() const {
    ChannelMetrics m;
    m.count = count;
    m.mape_excluded = count - used;
    if (count == 0) return m;
    const double n = static_cast<double>(count);
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    m.mape = used == 0 ? kNaN : pct_sum / static_cast<double>(used);
    return m;
  }
};

std::vector<RowMatrix> predict_chunked(const HydroNet& model, const ModelParams& params,
                                       const std::vector<RowMatrix>& inputs) {
  std::vector<RowMatrix> out;
  out.reserve(inputs.size());
  for (std::size_t start = 0; start < inputs.size(); start += kPredictChunk) {
    const auto count = std::min(kPredictChunk, inputs.size() - start);
    auto part = model.predict(params, std::span<const RowMatrix>(inputs).subspan(start, count));
    for (auto& p : part) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

double mae(const RowMatrix& pred, const RowMatrix& target) {
  check_pair(pred, target);
  return (pred - target).cwiseAbs().mean();
}

double rmse(const RowMatrix& pred, const RowMatrix& target) {
  check_pair(pred, target);
  return std::sqrt((pred - target).squaredNorm() / static_cast<double>(pred.size()));
}

MapeResult mape(const RowMatrix& pred, const RowMatrix& target, double epsilon) {
  check_pair(pred, target);
  MapeResult r;
  double sum = 0.0;
  for (Index i = 0; i < pred.size(); ++i) {
    const double t = target.data()[i];
    if (std::abs(t) > epsilon) {
      sum += std::abs(pred.data()[i] - t) / std::abs(t);
      ++r.used;
    } else {
      ++r.excluded;
    }
  }
  if (r.used == 0) throw Error(ErrorCode::AllExcluded, "every target is within epsilon of zero");
  r.value = sum / static_cast<double>(r.used);
  return r;
}

MetricReport score(std::span<const RowMatrix> preds, std::span<const RowMatrix> targets, double mape_epsilon,
                   bool per_horizon) {
  if (preds.size() != targets.size()) throw Error(ErrorCode::ShapeMismatch, "forecast and truth counts differ");
  if (preds.empty()) throw Error(ErrorCode::EmptyInput, "no forecasts to score");
  const auto rows = preds[0].rows();
  const auto cols = preds[0].cols();
  if (cols % static_cast<Index>(kChannels) != 0 || rows == 0 || cols == 0)
    throw Error(ErrorCode::ShapeMismatch, "forecasts must be H x 2N");

  std::array<Accumulator, kChannels> total{};
  std::vector<std::array<Accumulator, kChannels>> by_step(per_horizon ? static_cast<std::size_t>(rows) : 0);
  for (std::size_t w = 0; w < preds.size(); ++w) {
    const auto& p = preds[w];
    const auto& t = targets[w];
    if (p.rows() != rows || p.cols() != cols || t.rows() != rows || t.cols() != cols)
      throw Error(ErrorCode::ShapeMismatch, "forecast " + std::to_string(w) + " has a different shape");
    for (Index h = 0; h < rows; ++h)
      for (Index j = 0; j < cols; ++j) {
        const auto c = static_cast<std::size_t>(j) % kChannels;
        total[c].add(p(h, j), t(h, j), mape_epsilon);
        if (per_horizon) by_step[static_cast<std::size_t>(h)][c].add(p(h, j), t(h, j), mape_epsilon);
      }
  }

  MetricReport report;
  report.windows = preds.size();
  for (std::size_t c = 0; c < kChannels; ++c) report.channel[c] = total[c].finish();
  for (const auto& step : by_step) report.per_horizon.push_back({step[0].finish(), step[1].finish()});
  return report;
}

std::vector<RowMatrix> forecast_windows(const Checkpoint& checkpoint, const PipeGraph& graph,
                                        const WindowSet& raw_windows) {
  verify_fingerprint(checkpoint, graph);
  if (raw_windows.empty()) throw Error(ErrorCode::EmptyInput, "no windows to forecast");
  if (raw_windows.nodes() != graph.node_count() || raw_windows.spec().lookback != checkpoint.model.lookback)
    throw Error(ErrorCode::ShapeMismatch, "windows do not match the checkpoint's model");
  const HydroNet model(checkpoint.model, graph);
  std::vector<RowMatrix> inputs;
  inputs.reserve(raw_windows.size());
  for (std::size_t i = 0; i < raw_windows.size(); ++i)
    inputs.push_back(normalize(RowMatrix(raw_windows.input(i)), checkpoint.norm));
  auto preds = predict_chunked(model, checkpoint.params, inputs);
  for (auto& p : preds) p = denormalize(p, checkpoint.norm);
  return preds;
}

MetricReport evaluate(const Checkpoint& checkpoint, const WindowSet& raw_windows, const PipeGraph& graph,
                      double mape_epsilon, bool per_horizon) {
  const auto preds = forecast_windows(checkpoint, graph, raw_windows);
  std::vector<RowMatrix> targets;
  targets.reserve(raw_windows.size());
  for (std::size_t i = 0; i < raw_windows.size(); ++i) targets.emplace_back(raw_windows.target(i));
  return score(preds, targets, mape_epsilon, per_horizon);
}

RowMatrix persistence_forecast(const WindowSet::Block& window, std::size_t horizon) {
  if (window.rows() == 0) throw Error(ErrorCode::EmptyInput, "persistence needs at least one observed step");
  return window.row(window.rows() - 1).replicate(static_cast<Index>(horizon), 1);
}

RowMatrix seasonal_naive_forecast(const RowMatrix& history, std::size_t t, std::size_t period, std::size_t horizon) {
  if (period == 0) throw Error(ErrorCode::InvalidConfig, "seasonal period must be >= 1");
  if (t < period || t > static_cast<std::size_t>(history.rows()))
    throw Error(ErrorCode::InsufficientHistory, "seasonal naive at step " + std::to_string(t) + " needs " +
                                                    std::to_string(period) + " steps of history");
  RowMatrix out(static_cast<Index>(horizon), history.cols());
  for (std::size_t j = 0; j < horizon; ++j)
    out.row(static_cast<Index>(j)) = history.row(static_cast<Index>(t - period + j % period));
  return out;
}

MetricReport persistence_report(const WindowSet& raw_windows, double mape_epsilon, bool per_horizon) {
  std::vector<RowMatrix> preds, targets;
  for (std::size_t i = 0; i < raw_windows.size(); ++i) {
    preds.push_back(persistence_forecast(raw_windows.input(i), raw_windows.spec().horizon));
    targets.emplace_back(raw_windows.target(i));
  }
  return score(preds, targets, mape_epsilon, per_horizon);
}

MetricReport seasonal_naive_report(const TimeSeriesPanel& panel, const WindowSet& raw_windows, std::size_t period,
                                   double mape_epsilon, bool per_horizon) {
  std::vector<RowMatrix> preds, targets;
  for (std::size_t i = 0; i < raw_windows.size(); ++i) {
    preds.push_back(
        seasonal_naive_forecast(panel.values, raw_windows.target_start(i), period, raw_windows.spec().horizon));
    targets.emplace_back(raw_windows.target(i));
  }
  return score(preds, targets, mape_epsilon, per_horizon);
}

std::vector<RowMatrix> rolling_forecasts(const Checkpoint& checkpoint, const PipeGraph& graph,
                                         const TimeSeriesPanel& raw_panel) {
  verify_fingerprint(checkpoint, graph);
  const auto lookback = checkpoint.model.lookback;
  const auto horizon = checkpoint.model.horizon;
  const auto steps = raw_panel.steps();
  if (raw_panel.nodes() != graph.node_count())
    throw Error(ErrorCode::ShapeMismatch, "panel does not match the graph");
  if (steps <= lookback)
    throw Error(ErrorCode::TooShort, "panel has " + std::to_string(steps) + " steps; rolling forecasts need more than " +
                                         std::to_string(lookback));

  const RowMatrix normalized = normalize(raw_panel.values, checkpoint.norm);
  std::vector<RowMatrix> inputs;
  for (std::size_t s = 0; s + lookback < steps; ++s)
    inputs.emplace_back(normalized.middleRows(static_cast<Index>(s), static_cast<Index>(lookback)));
  const HydroNet model(checkpoint.model, graph);
  const auto preds = predict_chunked(model, checkpoint.params, inputs);

  std::vector<RowMatrix> out(horizon, RowMatrix::Constant(static_cast<Index>(steps), raw_panel.values.cols(), kNaN));
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const RowMatrix physical = denormalize(preds[s], checkpoint.norm);
    for (std::size_t h = 0; h < horizon && s + lookback + h < steps; ++h)
      out[h].row(static_cast<Index>(s + lookback + h)) = physical.row(static_cast<Index>(h));
  }
  return out;
}

ResidualStats fit_residual_stats(const RowMatrix& observed, std::span<const RowMatrix> forecasts) {
  if (forecasts.empty()) throw Error(ErrorCode::EmptyInput, "no forecasts for residual statistics");
  const auto cols = observed.cols();
  ResidualStats stats{RowMatrix(static_cast<Index>(forecasts.size()), cols),
                      RowMatrix(static_cast<Index>(forecasts.size()), cols)};
  for (std::size_t h = 0; h < forecasts.size(); ++h) {
    const auto& f = forecasts[h];
    if (f.rows() != observed.rows() || f.cols() != cols)
      throw Error(ErrorCode::ShapeMismatch, "forecast and observation panels are not aligned");
    for (Index j = 0; j < cols; ++j) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (Index t = 0; t < observed.rows(); ++t) {
        if (!std::isfinite(f(t, j))) continue;
        const double r = observed(t, j) - f(t, j);
        sum += r;
        ++n;
      }
      if (n == 0) throw Error(ErrorCode::EmptyInput, "no aligned rows for residual statistics");
      const double mean = sum / static_cast<double>(n);
      for (Index t = 0; t < observed.rows(); ++t) {
        if (!std::isfinite(f(t, j))) continue;
        const double d = observed(t, j) - f(t, j) - mean;
        sq += d * d;
      }
      const double sd = std::sqrt(sq / static_cast<double>(n));
      if (!(sd > 1e-12))
        throw Error(ErrorCode::ZeroResidualVariance,
                    "residuals of column " + std::to_string(j) + " at step " + std::to_string(h + 1) + " are constant");
      const auto row = static_cast<Index>(h);
      stats.mean(row, j) = mean;
      stats.std(row, j) = sd;
    }
  }
  return stats;
}

std::vector<AnomalyEvent> detect_anomalies(const RowMatrix& observed, const RowMatrix& forecast,
                                           const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& std,
                                           const std::vector<NodeId>& nodes, double threshold,
                                           std::size_t min_duration, std::size_t offset) {
  const auto cols = static_cast<Index>(2 * nodes.size());
  if (observed.rows() != forecast.rows() || observed.cols() != cols || forecast.cols() != cols ||
      mean.size() != cols || std.size() != cols)
    throw Error(ErrorCode::ShapeMismatch, "observed, forecast and residual statistics are not aligned");
  if (!(threshold > 0) || min_duration < 1)
    throw Error(ErrorCode::InvalidConfig, "threshold must be > 0 and min_duration >= 1");
  for (Index j = 0; j < cols; ++j)
    if (!(std(j) > 0) || !std::isfinite(std(j)))
      throw Error(ErrorCode::ZeroResidualVariance, "residual std of column " + std::to_string(j) + " is not positive");

  std::vector<AnomalyEvent> events;
  const auto rows = static_cast<std::size_t>(observed.rows());
  for (std::size_t n = 0; n < nodes.size(); ++n)
    for (std::size_t c = 0; c < kChannels; ++c) {
      const auto j = static_cast<Index>(2 * n + c);
      std::size_t run = 0;
      double peak = 0.0;
      const auto close = [&](std::size_t end_exclusive) {
        if (run >= min_duration)
          events.push_back({nodes[n], c, offset + end_exclusive - run, offset + end_exclusive - 1, peak});
        run = 0;
        peak = 0.0;
      };
      for (std::size_t t = 0; t < rows; ++t) {
        const auto r = static_cast<Index>(t);
        const double z = (observed(r, j) - forecast(r, j) - mean(j)) / std(j);
        if (std::isfinite(z) && std::abs(z) > threshold) {
          ++run;
          peak = std::max(peak, std::abs(z));
        } else {
          close(t);
        }
      }
      close(rows);
    }
  return events;
}

std::string channel_name(std::size_t channel) { return channel == kDepth ? "depth" : "flow"; }

void write_report_csv(std::ostream& out, const MetricReport& report, const std::string& label) {
  out << "model,channel,step,mae,rmse,mape,count,mape_excluded\n";
  const auto line = [&](const std::string& step, std::size_t c, const ChannelMetrics& m) {
    out << label << ',' << channel_name(c) << ',' << step << ',' << csv::format(m.mae) << ',' << csv::format(m.rmse)
        << ',' << csv::format(m.mape) << ',' << m.count << ',' << m.mape_excluded << '\n';
  };
  for (std::size_t c = 0; c < kChannels; ++c) line("all", c, report.channel[c]);
  for (std::size_t h = 0; h < report.per_horizon.size(); ++h)
    for (std::size_t c = 0; c < kChannels; ++c) line(std::to_string(h + 1), c, report.per_horizon[h][c]);
}

void write_report_table(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::size_t width = 5;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  const auto flags = out.flags();
  out << std::left << std::setw(static_cast<int>(width)) << "model" << std::right;
  for (const char* head : {"depth MAE", "depth RMSE", "depth MAPE", "flow MAE", "flow RMSE", "flow MAPE"})
    out << "  " << std::setw(11) << head;
  out << '\n';
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << name << std::right << std::fixed << std::setprecision(6);
    for (const auto& m : r.channel)
      out << "  " << std::setw(11) << m.mae << "  " << std::setw(11) << m.rmse << "  " << std::setw(11) << m.mape;
    out << '\n';
    out.flags(flags);
  }
  out.flags(flags);
}

void write_events_csv(std::ostream& out, const std::vector<AnomalyEvent>& events) {
  out << "node,channel,start,end,peak_z\n";
  for (const auto& e : events)
    out << e.node << ',' << channel_name(e.channel) << ',' << e.start << ',' << e.end << ',' << csv::format(e.peak_z)
        << '\n';
}

}  // namespace hydronet
