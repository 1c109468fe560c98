#include "hydronet/panel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "csv.hpp"
#include "hydronet/error.hpp"

namespace hydronet {

namespace {
constexpr const char* kChannelSuffix[kChannels] = {"_depth", "_flow"};

bool near_constant(double sum_sq, std::size_t n, double mean) {
  return !(sum_sq > 1e-24 * static_cast<double>(n) * std::max(1.0, mean * mean));
}
}  // namespace

TimeSeriesPanel TimeSeriesPanel::slice(std::size_t begin, std::size_t count) const {
  TimeSeriesPanel out;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(begin + count));
  out.values = values.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  out.node_order = node_order;
  out.stride = stride;
  return out;
}

std::string panel_header(const std::vector<NodeId>& nodes) {
  std::string header = "timestamp";
  for (const auto& n : nodes)
    for (auto suffix : kChannelSuffix) header += ',' + n + suffix;
  return header;
}

TimeSeriesPanel load_panel(const std::string& path, const PipeGraph& graph) {
  auto in = csv::open_in(path);
  std::string line;
  if (!std::getline(in, line) || line.empty() || line == "\r") throw Error(ErrorCode::EmptyFile, path + " is empty");

  const auto header = csv::split(line);
  if (header.empty() || header[0] != "timestamp")
    throw Error(ErrorCode::MalformedFile, path + ": first column must be 'timestamp'");
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) column.emplace(header[c], c);

  const std::size_t n = graph.node_count();
  std::vector<std::size_t> source(2 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < kChannels; ++ch) {
      const auto name = graph.nodes()[i] + kChannelSuffix[ch];
      const auto it = column.find(name);
      if (it == column.end()) throw Error(ErrorCode::MissingNodeColumn, path + ": no column '" + name + "'");
      source[2 * i + ch] = it->second;
    }

  std::vector<std::int64_t> stamps;
  std::vector<double> flat;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    if (f.size() != header.size())
      throw Error(ErrorCode::MalformedFile, path + ": row " + std::to_string(row) + " has " +
                                                std::to_string(f.size()) + " fields, expected " +
                                                std::to_string(header.size()));
    long long ts = 0;
    if (!csv::parse(f[0], ts))
      throw Error(ErrorCode::MalformedFile, path + ": row " + std::to_string(row) + " has a bad timestamp");
    stamps.push_back(ts);
    for (std::size_t k = 0; k < 2 * n; ++k) {
      double v = 0.0;
      const auto& text = f[source[k]];
      if (!csv::parse(text, v) || !std::isfinite(v))
        throw Error(ErrorCode::NaNValue,
                    path + ": row " + std::to_string(row) + " column '" + header[source[k]] + "' is not a finite number");
      flat.push_back(v);
    }
  }
  if (stamps.empty()) throw Error(ErrorCode::EmptyFile, path + " has a header but no rows");

  std::vector<std::size_t> order(stamps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return stamps[a] < stamps[b]; });

  TimeSeriesPanel panel;
  panel.node_order = graph.nodes();
  panel.values.resize(static_cast<Eigen::Index>(stamps.size()), static_cast<Eigen::Index>(2 * n));
  for (std::size_t r = 0; r < order.size(); ++r) {
    panel.timestamps.push_back(stamps[order[r]]);
    for (std::size_t k = 0; k < 2 * n; ++k)
      panel.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = flat[order[r] * 2 * n + k];
  }
  if (panel.timestamps.size() > 1) {
    panel.stride = panel.timestamps[1] - panel.timestamps[0];
    for (std::size_t r = 1; r < panel.timestamps.size(); ++r)
      if (panel.timestamps[r] - panel.timestamps[r - 1] != panel.stride || panel.stride <= 0)
        throw Error(ErrorCode::NonUniformStride, path + ": step " + std::to_string(r) + " (timestamp " +
                                                     std::to_string(panel.timestamps[r]) + ") breaks stride " +
                                                     std::to_string(panel.stride));
  }
  return panel;
}

void save_panel(const TimeSeriesPanel& panel, const std::string& path) {
  auto out = csv::open_out(path);
  out << panel_header(panel.node_order) << '\n';
  for (std::size_t t = 0; t < panel.steps(); ++t) {
    out << panel.timestamps[t];
    for (Eigen::Index c = 0; c < panel.values.cols(); ++c)
      out << ',' << csv::format(panel.values(static_cast<Eigen::Index>(t), c));
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

std::tuple<std::size_t, std::size_t, std::size_t> split_sizes(std::size_t steps, const SplitSpec& spec) {
  if (!(spec.train > 0 && spec.val > 0 && spec.test > 0) ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidConfig, "split ratios must be positive and sum to 1");
  const auto t = static_cast<double>(steps);
  const auto train = static_cast<std::size_t>(std::floor(spec.train * t + 1e-9));
  const auto val = static_cast<std::size_t>(std::floor(spec.val * t + 1e-9));
  return {train, val, steps - train - val};
}

PanelSplit chronological_split(const TimeSeriesPanel& panel, const SplitSpec& spec, const WindowSpec& window) {
  const auto need = window.lookback + window.horizon;
  if (panel.steps() < 3 * need)
    throw Error(ErrorCode::TooShort, std::to_string(panel.steps()) + " steps cannot hold three segments of " +
                                         std::to_string(need));
  const auto [train, val, test] = split_sizes(panel.steps(), spec);
  if (train < need || val < need || test < need)
    throw Error(ErrorCode::TooShort, "split (" + std::to_string(train) + ", " + std::to_string(val) + ", " +
                                         std::to_string(test) + ") leaves a segment shorter than " +
                                         std::to_string(need) + " steps");
  PanelSplit out;
  out.train = panel.slice(0, train);
  out.val = panel.slice(train, val);
  out.test = panel.slice(train + val, test);
  out.val_offset = train;
  out.test_offset = train + val;
  return out;
}

Eigen::RowVectorXd NormStats::column_mean(std::size_t nodes) const {
  if (mode == NormMode::PerNode) return mean;
  return mean.replicate(1, static_cast<Eigen::Index>(nodes));
}

Eigen::RowVectorXd NormStats::column_std(std::size_t nodes) const {
  if (mode == NormMode::PerNode) return std;
  return std.replicate(1, static_cast<Eigen::Index>(nodes));
}

NormStats fit_normalizer(const TimeSeriesPanel& train, NormMode mode) {
  if (train.steps() == 0 || train.nodes() == 0) throw Error(ErrorCode::EmptyDataset, "normalizer needs data");
  const auto& v = train.values;
  NormStats s;
  s.mode = mode;
  const auto n = static_cast<Eigen::Index>(train.nodes());
  if (mode == NormMode::PerNode) {
    s.mean = v.colwise().mean();
    s.std.resize(v.cols());
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      const double ss = (v.col(c).array() - s.mean(c)).square().sum();
      if (near_constant(ss, static_cast<std::size_t>(v.rows()), s.mean(c)))
        throw Error(ErrorCode::ZeroVariance, "column " + std::to_string(c) + " of the training panel is constant");
      s.std(c) = std::sqrt(ss / static_cast<double>(v.rows()));
    }
    return s;
  }
  s.mean.resize(kChannels);
  s.std.resize(kChannels);
  for (Eigen::Index ch = 0; ch < static_cast<Eigen::Index>(kChannels); ++ch) {
    // Channel ch lives in columns ch, ch + 2, ...
    const auto cols = Eigen::Map<const Eigen::MatrixXd, 0, Eigen::Stride<Eigen::Dynamic, 2>>(
        v.data() + ch, n, v.rows(), Eigen::Stride<Eigen::Dynamic, 2>(v.cols(), 2));
    const double count = static_cast<double>(cols.size());
    const double m = cols.sum() / count;
    const double ss = (cols.array() - m).square().sum();
    if (near_constant(ss, static_cast<std::size_t>(cols.size()), m))
      throw Error(ErrorCode::ZeroVariance, std::string("channel ") + (ch == kDepth ? "depth" : "flow") +
                                               " of the training panel is constant");
    s.mean(ch) = m;
    s.std(ch) = std::sqrt(ss / count);
  }
  return s;
}

RowMatrix normalize(const RowMatrix& values, const NormStats& stats) {
  const auto nodes = static_cast<std::size_t>(values.cols()) / kChannels;
  return ((values.rowwise() - stats.column_mean(nodes)).array().rowwise() / stats.column_std(nodes).array()).matrix();
}

RowMatrix denormalize(const RowMatrix& values, const NormStats& stats) {
  const auto nodes = static_cast<std::size_t>(values.cols()) / kChannels;
  return ((values.array().rowwise() * stats.column_std(nodes).array()).matrix().rowwise() + stats.column_mean(nodes));
}

TimeSeriesPanel apply_normalizer(const TimeSeriesPanel& panel, const NormStats& stats) {
  auto out = panel;
  out.values = normalize(panel.values, stats);
  return out;
}

TimeSeriesPanel invert_normalizer(const TimeSeriesPanel& panel, const NormStats& stats) {
  auto out = panel;
  out.values = denormalize(panel.values, stats);
  return out;
}

WindowSet::WindowSet(RowMatrix values, WindowSpec spec, std::size_t offset)
    : values_(std::move(values)), spec_(spec), offset_(offset) {
  const auto t = static_cast<std::size_t>(values_.rows());
  count_ = t >= spec.lookback + spec.horizon ? t - spec.lookback - spec.horizon + 1 : 0;
  nodes_ = static_cast<std::size_t>(values_.cols()) / kChannels;
}

WindowSet WindowSet::from_pairs(std::vector<RowMatrix> inputs, std::vector<RowMatrix> targets) {
  if (inputs.size() != targets.size() || inputs.empty())
    throw Error(ErrorCode::ShapeMismatch, "window pairs need equal, non-zero counts");
  WindowSet set;
  set.spec_ = {static_cast<std::size_t>(inputs[0].rows()), static_cast<std::size_t>(targets[0].rows())};
  set.nodes_ = static_cast<std::size_t>(inputs[0].cols()) / kChannels;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (inputs[i].rows() != inputs[0].rows() || inputs[i].cols() != inputs[0].cols() ||
        targets[i].rows() != targets[0].rows() || targets[i].cols() != inputs[0].cols())
      throw Error(ErrorCode::ShapeMismatch, "window pair " + std::to_string(i) + " has a different shape");
  set.count_ = inputs.size();
  set.inputs_ = std::move(inputs);
  set.targets_ = std::move(targets);
  return set;
}

WindowSet::Block WindowSet::input(std::size_t i) const {
  if (!inputs_.empty()) return inputs_[i];
  return values_.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(spec_.lookback));
}

WindowSet::Block WindowSet::target(std::size_t i) const {
  if (!targets_.empty()) return targets_[i];
  return values_.middleRows(static_cast<Eigen::Index>(i + spec_.lookback), static_cast<Eigen::Index>(spec_.horizon));
}

WindowSet make_windows(const TimeSeriesPanel& panel, const WindowSpec& spec, std::size_t offset) {
  if (spec.lookback < 1 || spec.horizon < 1) throw Error(ErrorCode::InvalidConfig, "lookback and horizon must be >= 1");
  if (panel.steps() < spec.lookback + spec.horizon)
    throw Error(ErrorCode::TooShort, std::to_string(panel.steps()) + " steps < lookback + horizon = " +
                                         std::to_string(spec.lookback + spec.horizon));
  return WindowSet(panel.values, spec, offset);
}

std::vector<double> acf(std::span<const double> series, std::size_t max_lag) {
  const std::size_t n = series.size();
  if (max_lag >= n)
    throw Error(ErrorCode::LagTooLarge, "lag " + std::to_string(max_lag) + " needs more than " + std::to_string(n) +
                                            " samples");
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
  Eigen::VectorXd centered(static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < n; ++t) centered(static_cast<Eigen::Index>(t)) = series[t] - mean;
  const double denom = centered.squaredNorm();
  if (near_constant(denom, n, mean)) throw Error(ErrorCode::ZeroVariance, "series is constant");
  std::vector<double> r(max_lag + 1);
  r[0] = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    const auto len = static_cast<Eigen::Index>(n - k);
    r[k] = centered.head(len).dot(centered.segment(static_cast<Eigen::Index>(k), len)) / denom;
  }
  return r;
}

RowMatrix edge_corr_matrix(const PipeGraph& graph, ConstantColumn policy) {
  if (graph.edge_count() < 2) throw Error(ErrorCode::EmptyInput, "correlation needs at least two edges");
  const RowMatrix a = edge_attr_matrix(graph);
  const RowMatrix centered = a.rowwise() - a.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered;
  Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
  const auto k = static_cast<Eigen::Index>(kEdgeAttrCount);
  RowMatrix corr(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double mean_i = a.col(i).mean();
    if (near_constant(cov(i, i), graph.edge_count(), mean_i)) {
      if (policy == ConstantColumn::Throw)
        throw Error(ErrorCode::ZeroVariance, std::string("edge attribute '") + kEdgeAttrNames[i] + "' is constant");
      sd(i) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      corr(i, j) = i == j ? (std::isnan(sd(i)) ? sd(i)
                                               : 1.0)
                          : std::clamp(cov(std::min(i, j), std::max(i, j)) / (sd(i) * sd(j)), -1.0, 1.0);
  return corr;
}

}  // namespace hydronet
