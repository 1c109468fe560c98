#include "hydronet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>

#include "csv.hpp"
#include "hydronet/error.hpp"

namespace hydronet {

namespace pt = boost::property_tree;

namespace {

// Reads typed values out of one section and remembers which keys were used.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::string str(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    if (!tree_) return fallback;
    const auto v = tree_->get_optional<std::string>(pt::ptree::path_type(key, '/'));
    return v ? *v : fallback;
  }

  double real(const std::string& key, double fallback) {
    const auto text = str(key, "");
    if (text.empty()) return fallback;
    double v = 0;
    if (!csv::parse(text, v)) fail(key, text);
    return v;
  }

  std::uint64_t uint(const std::string& key, std::uint64_t fallback) {
    const auto text = str(key, "");
    if (text.empty()) return fallback;
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail(key, text);
    return v;
  }

  std::size_t size(const std::string& key, std::size_t fallback) {
    return static_cast<std::size_t>(uint(key, fallback));
  }

  std::int64_t int64(const std::string& key, std::int64_t fallback) {
    const auto text = str(key, "");
    if (text.empty()) return fallback;
    long long v = 0;
    if (!csv::parse(text, v)) fail(key, text);
    return v;
  }

  bool flag(const std::string& key, bool fallback) {
    const auto text = str(key, "");
    if (text.empty()) return fallback;
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    fail(key, text);
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, value] : *tree_)
      if (!used_.count(key)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in [" + name_ + "]");
  }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& text) const {
    throw Error(ErrorCode::InvalidConfig, "[" + name_ + "] " + key + " = '" + text + "' is not valid");
  }

  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

const pt::ptree* child(const pt::ptree& root, const std::string& name) {
  const auto it = root.find(name);
  return it == root.not_found() ? nullptr : &it->second;
}

void put(pt::ptree& t, const std::string& key, const std::string& value) {
  t.put(pt::ptree::path_type(key, '/'), value);
}
void put(pt::ptree& t, const std::string& key, double value) { put(t, key, csv::format(value)); }
void put(pt::ptree& t, const std::string& key, std::size_t value) { put(t, key, std::to_string(value)); }
void put(pt::ptree& t, const std::string& key, std::int64_t value) { put(t, key, std::to_string(value)); }
void put(pt::ptree& t, const std::string& key, bool value) { put(t, key, std::string(value ? "true" : "false")); }

HydroNetConfig read_model(Section s, HydroNetConfig c) {
  c.lookback = s.size("lookback", c.lookback);
  c.horizon = s.size("horizon", c.horizon);
  c.hidden_channels = s.size("hidden_channels", c.hidden_channels);
  c.edge_embed_dim = s.size("edge_embed_dim", c.edge_embed_dim);
  c.temporal_kernel = s.size("temporal_kernel", c.temporal_kernel);
  c.blocks = s.size("blocks", c.blocks);
  c.bidirectional = s.flag("bidirectional", c.bidirectional);
  c.seed = s.uint("seed", c.seed);
  s.reject_unknown();
  return c;
}

TrainConfig read_train(Section s, TrainConfig c) {
  c.learning_rate = s.real("learning_rate", c.learning_rate);
  c.beta1 = s.real("beta1", c.beta1);
  c.beta2 = s.real("beta2", c.beta2);
  c.eps = s.real("eps", c.eps);
  c.batch_size = s.size("batch_size", c.batch_size);
  c.max_epochs = s.size("max_epochs", c.max_epochs);
  c.patience = s.size("patience", c.patience);
  c.min_delta = s.real("min_delta", c.min_delta);
  c.seed = s.uint("seed", c.seed);
  const auto loss = s.str("loss", "");
  if (!loss.empty()) c.loss = parse_loss_kind(loss);
  s.reject_unknown();
  return c;
}

}  // namespace

std::string to_string(NormMode mode) { return mode == NormMode::Global ? "global" : "per_node"; }

NormMode parse_norm_mode(const std::string& text) {
  if (text == "global") return NormMode::Global;
  if (text == "per_node") return NormMode::PerNode;
  throw Error(ErrorCode::InvalidConfig, "norm must be 'global' or 'per_node', got '" + text + "'");
}

AnomalySpec parse_anomaly(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon == std::string::npos ? std::string::npos : colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  long long s = 0, e = 0;
  double magnitude = 0;
  if (parts.size() != 5 || !csv::parse(parts[2], s) || !csv::parse(parts[3], e) || !csv::parse(parts[4], magnitude) ||
      s < 0 || e < 0)
    throw Error(ErrorCode::InvalidConfig, "anomaly '" + text + "' is not kind:target:start:end:magnitude");
  return {parse_anomaly_kind(parts[0]), parts[1], static_cast<std::size_t>(s), static_cast<std::size_t>(e), magnitude};
}

pt::ptree to_ptree(const HydroNetConfig& c) {
  pt::ptree t;
  put(t, "lookback", c.lookback);
  put(t, "horizon", c.horizon);
  put(t, "hidden_channels", c.hidden_channels);
  put(t, "edge_embed_dim", c.edge_embed_dim);
  put(t, "temporal_kernel", c.temporal_kernel);
  put(t, "blocks", c.blocks);
  put(t, "bidirectional", c.bidirectional);
  put(t, "seed", static_cast<std::uint64_t>(c.seed));
  return t;
}

pt::ptree to_ptree(const TrainConfig& c) {
  pt::ptree t;
  put(t, "learning_rate", c.learning_rate);
  put(t, "beta1", c.beta1);
  put(t, "beta2", c.beta2);
  put(t, "eps", c.eps);
  put(t, "batch_size", c.batch_size);
  put(t, "max_epochs", c.max_epochs);
  put(t, "patience", c.patience);
  put(t, "min_delta", c.min_delta);
  put(t, "seed", static_cast<std::uint64_t>(c.seed));
  put(t, "loss", to_string(c.loss));
  return t;
}

HydroNetConfig model_from_ptree(const pt::ptree& tree, HydroNetConfig base) {
  return read_model(Section(&tree, "model"), base);
}

TrainConfig train_from_ptree(const pt::ptree& tree, TrainConfig base) {
  return read_train(Section(&tree, "train"), base);
}

void RunConfig::propagate() {
  sim.seed = seed;
  model.seed = seed;
  train.seed = seed;
  model.lookback = window.lookback;
  model.horizon = window.horizon;
}

void RunConfig::validate() const {
  if (version != kConfigVersion)
    throw Error(ErrorCode::InvalidConfig, "config version " + std::to_string(version) + " is not supported");
  sim.validate();
  model.validate();
  train.validate();
  split_sizes(100, split);
  if (window.lookback != model.lookback || window.horizon != model.horizon)
    throw Error(ErrorCode::InvalidConfig, "window and model lookback/horizon disagree");
  if (!(eval.mape_epsilon >= 0)) throw Error(ErrorCode::InvalidConfig, "mape_epsilon must be >= 0");
  if (eval.seasonal_period < 1) throw Error(ErrorCode::InvalidConfig, "seasonal_period must be >= 1");
  if (!(detect.threshold > 0) || detect.min_duration < 1)
    throw Error(ErrorCode::InvalidConfig, "detect threshold must be > 0 and min_duration >= 1");
  if (detect.horizon_step > window.horizon)
    throw Error(ErrorCode::InvalidConfig, "detect horizon_step exceeds the horizon");
  if ((paths.nodes.empty()) != (paths.edges.empty()))
    throw Error(ErrorCode::InvalidConfig, "paths.nodes and paths.edges must be given together");
}

RunConfig parse_config(std::istream& in) {
  pt::ptree root;
  try {
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }

  RunConfig c;
  static const std::set<std::string> known{"run",  "paths", "sim",  "model",  "train",  "split",
                                           "window", "eval", "detect", "analyze"};
  for (const auto& [name, section] : root) {
    if (name.rfind("anomaly_", 0) == 0) continue;
    if (section.empty() && !section.data().empty())
      throw Error(ErrorCode::InvalidConfig, "key '" + name + "' must sit inside a [section]");
    if (!known.count(name)) throw Error(ErrorCode::InvalidConfig, "unknown section [" + name + "]");
  }

  {
    Section s(child(root, "run"), "run");
    c.version = static_cast<int>(s.int64("version", c.version));
    if (c.version != kConfigVersion)
      throw Error(ErrorCode::InvalidConfig, "config version " + std::to_string(c.version) + " is not supported");
    c.seed = s.uint("seed", c.seed);
    c.norm = parse_norm_mode(s.str("norm", to_string(c.norm)));
    s.reject_unknown();
  }
  {
    Section s(child(root, "paths"), "paths");
    c.paths.nodes = s.str("nodes", c.paths.nodes);
    c.paths.edges = s.str("edges", c.paths.edges);
    c.paths.panel = s.str("panel", c.paths.panel);
    c.paths.checkpoint = s.str("checkpoint", c.paths.checkpoint);
    c.paths.history = s.str("history", c.paths.history);
    c.paths.anomalies = s.str("anomalies", c.paths.anomalies);
    s.reject_unknown();
  }
  {
    Section s(child(root, "sim"), "sim");
    c.sim.duration = s.size("duration", c.sim.duration);
    c.sim.stride = s.int64("stride", c.sim.stride);
    c.sim.start_time = s.int64("start_time", c.sim.start_time);
    c.sim.base_inflow = s.real("base_inflow", c.sim.base_inflow);
    c.sim.diurnal_amplitude = s.real("diurnal_amplitude", c.sim.diurnal_amplitude);
    c.sim.weekly_amplitude = s.real("weekly_amplitude", c.sim.weekly_amplitude);
    c.sim.noise_std = s.real("noise_std", c.sim.noise_std);
    // `source_inflow = MH1:1.0;MH2:2.0`
    const auto overrides = s.str("source_inflow", "");
    std::stringstream list(overrides);
    std::string item;
    while (std::getline(list, item, ';')) {
      if (item.empty()) continue;
      const auto colon = item.rfind(':');
      double q = 0;
      if (colon == std::string::npos || !csv::parse(item.substr(colon + 1), q))
        throw Error(ErrorCode::InvalidConfig, "[sim] source_inflow entry '" + item + "' is not node:cfs");
      c.sim.source_inflow[item.substr(0, colon)] = q;
    }
    s.reject_unknown();
  }
  c.model = read_model(Section(child(root, "model"), "model"), c.model);
  c.train = read_train(Section(child(root, "train"), "train"), c.train);
  {
    Section s(child(root, "split"), "split");
    c.split.train = s.real("train", c.split.train);
    c.split.val = s.real("val", c.split.val);
    c.split.test = s.real("test", c.split.test);
    s.reject_unknown();
  }
  {
    Section s(child(root, "window"), "window");
    c.window.lookback = s.size("lookback", c.window.lookback);
    c.window.horizon = s.size("horizon", c.window.horizon);
    s.reject_unknown();
  }
  {
    Section s(child(root, "eval"), "eval");
    c.eval.mape_epsilon = s.real("mape_epsilon", c.eval.mape_epsilon);
    c.eval.seasonal_period = s.size("seasonal_period", c.eval.seasonal_period);
    s.reject_unknown();
  }
  {
    Section s(child(root, "detect"), "detect");
    c.detect.threshold = s.real("threshold", c.detect.threshold);
    c.detect.min_duration = s.size("min_duration", c.detect.min_duration);
    c.detect.horizon_step = s.size("horizon_step", c.detect.horizon_step);
    s.reject_unknown();
  }
  {
    Section s(child(root, "analyze"), "analyze");
    c.analyze.max_lag = s.size("max_lag", c.analyze.max_lag);
    s.reject_unknown();
  }
  for (const auto& [name, section] : root) {
    if (name.rfind("anomaly_", 0) != 0) continue;
    Section s(&section, name);
    AnomalySpec a;
    a.kind = parse_anomaly_kind(s.str("kind", "leak"));
    a.target = s.str("target", "");
    a.start = s.size("start", 0);
    a.end = s.size("end", 0);
    a.magnitude = s.real("magnitude", a.magnitude);
    s.reject_unknown();
    c.anomalies.push_back(a);
  }
  // The model section may not contradict [window]; lookback/horizon live there.
  c.model.lookback = c.window.lookback;
  c.model.horizon = c.window.horizon;
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read config '" + path + "'");
  return parse_config(in);
}

std::string dump_config(const RunConfig& c) {
  pt::ptree root;
  pt::ptree run;
  put(run, "version", static_cast<std::int64_t>(c.version));
  put(run, "seed", static_cast<std::uint64_t>(c.seed));
  put(run, "norm", to_string(c.norm));
  root.add_child("run", run);

  pt::ptree paths;
  put(paths, "nodes", c.paths.nodes);
  put(paths, "edges", c.paths.edges);
  put(paths, "panel", c.paths.panel);
  put(paths, "checkpoint", c.paths.checkpoint);
  put(paths, "history", c.paths.history);
  put(paths, "anomalies", c.paths.anomalies);
  root.add_child("paths", paths);

  pt::ptree sim;
  put(sim, "duration", c.sim.duration);
  put(sim, "stride", static_cast<std::int64_t>(c.sim.stride));
  put(sim, "start_time", static_cast<std::int64_t>(c.sim.start_time));
  put(sim, "base_inflow", c.sim.base_inflow);
  std::string overrides;
  for (const auto& [node, q] : c.sim.source_inflow)
    overrides += (overrides.empty() ? "" : ";") + node + ":" + csv::format(q);
  put(sim, "source_inflow", overrides);
  put(sim, "diurnal_amplitude", c.sim.diurnal_amplitude);
  put(sim, "weekly_amplitude", c.sim.weekly_amplitude);
  put(sim, "noise_std", c.sim.noise_std);
  root.add_child("sim", sim);

  // lookback/horizon are owned by [window]; seeds by [run].
  auto model = to_ptree(c.model);
  model.erase("lookback");
  model.erase("horizon");
  model.erase("seed");
  root.add_child("model", model);
  auto train = to_ptree(c.train);
  train.erase("seed");
  root.add_child("train", train);

  pt::ptree split;
  put(split, "train", c.split.train);
  put(split, "val", c.split.val);
  put(split, "test", c.split.test);
  root.add_child("split", split);

  pt::ptree window;
  put(window, "lookback", c.window.lookback);
  put(window, "horizon", c.window.horizon);
  root.add_child("window", window);

  pt::ptree eval;
  put(eval, "mape_epsilon", c.eval.mape_epsilon);
  put(eval, "seasonal_period", c.eval.seasonal_period);
  root.add_child("eval", eval);

  pt::ptree detect;
  put(detect, "threshold", c.detect.threshold);
  put(detect, "min_duration", c.detect.min_duration);
  put(detect, "horizon_step", c.detect.horizon_step);
  root.add_child("detect", detect);

  pt::ptree analyze;
  put(analyze, "max_lag", c.analyze.max_lag);
  root.add_child("analyze", analyze);

  for (std::size_t i = 0; i < c.anomalies.size(); ++i) {
    const auto& a = c.anomalies[i];
    pt::ptree s;
    put(s, "kind", to_string(a.kind));
    put(s, "target", a.target);
    put(s, "start", a.start);
    put(s, "end", a.end);
    put(s, "magnitude", a.magnitude);
    root.add_child("anomaly_" + std::to_string(i), s);
  }

  std::ostringstream out;
  pt::write_ini(out, root);
  return out.str();
}

}  // namespace hydronet
