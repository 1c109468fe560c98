// hydronet: simulate, analyze, train, evaluate, forecast, detect, gradcheck.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
// Failures print one line to stderr:
//   error: category=<config|data|numerical> code=<Code> message=<text>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hydronet/config.hpp"
#include "hydronet/error.hpp"
#include "hydronet/evaluation.hpp"
#include "hydronet/gradcheck_suite.hpp"
#include "hydronet/hydraulics.hpp"
#include "hydronet/training.hpp"

namespace fs = std::filesystem;
using namespace hydronet;

namespace {

using Override = std::function<void(RunConfig&)>;

struct Globals {
  std::string config;
  std::string out;
  bool print_config = false;
};

/// Registers `--name` on `app`; when given, `apply` copies it into the config.
template <typename T, typename Apply>
void option(CLI::App* app, std::vector<Override>& overrides, const std::string& name, const std::string& help,
            Apply apply) {
  auto value = std::make_shared<T>();
  auto* opt = app->add_option(name, *value, help);
  overrides.push_back([value, opt, apply](RunConfig& c) {
    if (opt->count() > 0) apply(c, *value);
  });
}

void flag(CLI::App* app, std::vector<Override>& overrides, const std::string& name, const std::string& help,
          std::function<void(RunConfig&)> apply) {
  auto* opt = app->add_flag(name, help);
  overrides.push_back([opt, apply](RunConfig& c) {
    if (opt->count() > 0) apply(c);
  });
}

void graph_options(CLI::App* app, std::vector<Override>& o) {
  option<std::string>(app, o, "--nodes", "nodes CSV (default: built-in demo network)",
                      [](RunConfig& c, const std::string& v) { c.paths.nodes = v; });
  option<std::string>(app, o, "--edges", "edges CSV", [](RunConfig& c, const std::string& v) { c.paths.edges = v; });
}

void panel_option(CLI::App* app, std::vector<Override>& o) {
  option<std::string>(app, o, "--panel", "panel CSV", [](RunConfig& c, const std::string& v) { c.paths.panel = v; });
}

void checkpoint_option(CLI::App* app, std::vector<Override>& o) {
  option<std::string>(app, o, "--checkpoint", "checkpoint file",
                      [](RunConfig& c, const std::string& v) { c.paths.checkpoint = v; });
}

PipeGraph graph_from(const RunConfig& c) {
  return c.paths.nodes.empty() ? demo_graph() : load_graph(c.paths.nodes, c.paths.edges);
}

const std::string& required(const std::string& path, const char* what) {
  if (path.empty()) throw Error(ErrorCode::InvalidConfig, std::string("no ") + what + " path given");
  return path;
}

fs::path out_dir(const Globals& g) {
  fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
  fs::create_directories(dir);
  return dir;
}

std::string checkpoint_path(const RunConfig& c, const Globals& g) {
  if (!c.paths.checkpoint.empty()) return c.paths.checkpoint;
  return (out_dir(g) / "hydronet.ckpt").string();
}

/// Writes to --out when set, else stdout.
void emit(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
    return;
  }
  if (fs::path(g.out).has_parent_path()) fs::create_directories(fs::path(g.out).parent_path());
  std::ofstream file(g.out, std::ios::binary);
  if (!file) throw Error(ErrorCode::IoError, "cannot open '" + g.out + "' for writing");
  file << text;
}

std::size_t horizon_step(const RunConfig& c, const Checkpoint& ckpt) {
  const auto h = c.detect.horizon_step == 0 ? ckpt.model.horizon : c.detect.horizon_step;
  if (h > ckpt.model.horizon)
    throw Error(ErrorCode::InvalidConfig, "horizon_step exceeds the checkpoint's horizon");
  return h;
}

int cmd_simulate(const RunConfig& c, const Globals& g) {
  const auto graph = graph_from(c);
  const auto panel = generate_dataset(graph, c.sim, c.anomalies);
  const auto dir = out_dir(g);
  save_panel(panel, (dir / "panel.csv").string());
  save_anomalies(c.anomalies, (dir / "anomalies.csv").string());
  save_graph(graph, (dir / "nodes.csv").string(), (dir / "edges.csv").string());
  std::cout << "simulated " << panel.steps() << " steps x " << panel.nodes() << " nodes -> " << dir.string() << '\n';
  return 0;
}

int cmd_analyze(const RunConfig& c, const Globals& g) {
  const auto graph = graph_from(c);
  const auto panel = load_panel(required(c.paths.panel, "panel"), graph);
  const auto lags = c.analyze.max_lag;

  std::ostringstream acf_csv;
  acf_csv << "lag";
  for (const auto& node : panel.node_order) acf_csv << ',' << node << "_depth," << node << "_flow";
  acf_csv << '\n';
  std::vector<std::vector<double>> columns;
  for (Eigen::Index j = 0; j < panel.values.cols(); ++j) {
    std::vector<double> series(panel.values.col(j).begin(), panel.values.col(j).end());
    try {
      columns.push_back(acf(series, lags));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroVariance) throw;
      std::cerr << "warning: column " << j << " is constant; its ACF is undefined\n";
      columns.emplace_back(lags + 1, std::nan(""));
    }
  }
  for (std::size_t k = 0; k <= lags; ++k) {
    acf_csv << k;
    for (const auto& col : columns) acf_csv << ',' << col[k];
    acf_csv << '\n';
  }

  const auto corr = edge_corr_matrix(graph, ConstantColumn::NaN);
  std::ostringstream corr_csv;
  corr_csv << "attribute";
  for (const auto* name : kEdgeAttrNames) corr_csv << ',' << name;
  corr_csv << '\n';
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    corr_csv << kEdgeAttrNames[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < corr.cols(); ++j) corr_csv << ',' << corr(i, j);
    corr_csv << '\n';
  }

  if (g.out.empty()) {
    std::cout << "# acf\n" << acf_csv.str() << "# edge_corr\n" << corr_csv.str();
  } else {
    const auto dir = out_dir(g);
    std::ofstream(dir / "acf.csv") << acf_csv.str();
    std::ofstream(dir / "edge_corr.csv") << corr_csv.str();
    std::cout << "wrote " << (dir / "acf.csv").string() << " and " << (dir / "edge_corr.csv").string() << '\n';
  }
  return 0;
}

int cmd_train(const RunConfig& c, const Globals& g, bool quiet) {
  const auto graph = graph_from(c);
  const auto panel = load_panel(required(c.paths.panel, "panel"), graph);
  const auto split = chronological_split(panel, c.split, c.window);
  const auto norm = fit_normalizer(split.train, c.norm);
  const auto train_w = make_windows(apply_normalizer(split.train, norm), c.window, 0);
  const auto val_w = make_windows(apply_normalizer(split.val, norm), c.window, split.val_offset);

  auto result = train(graph, train_w, val_w, c.model, c.train, norm, [&](const EpochRecord& r) {
    if (!quiet)
      std::cerr << "epoch " << r.epoch << " train_loss=" << r.train_loss << " val_loss=" << r.val_loss << '\n';
    return true;
  });
  auto& ckpt = result.checkpoint;

  // Residual statistics for detection, from the validation segment only.
  try {
    const auto forecasts = rolling_forecasts(ckpt, graph, split.val);
    ckpt.residuals = fit_residual_stats(split.val.values, forecasts);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroResidualVariance) throw;
    std::cerr << "warning: " << e.what() << "; checkpoint saved without residual statistics\n";
  }

  const auto path = checkpoint_path(c, g);
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  save_checkpoint(ckpt, path);
  const auto history = c.paths.history.empty() ? path + ".history.csv" : c.paths.history;
  {
    std::ofstream out(history);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + history + "' for writing");
    out << "epoch,train_loss,val_loss\n";
    for (const auto& r : result.history)
      out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << '\n';
  }
  std::cout << "trained " << result.history.size() << " epochs; best epoch " << ckpt.epoch
            << " val_loss=" << ckpt.best_val_loss << " -> " << path << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& c, const Globals& g, const std::string& format, bool per_horizon) {
  const auto graph = graph_from(c);
  const auto ckpt = load_checkpoint(required(c.paths.checkpoint, "checkpoint"));
  verify_fingerprint(ckpt, graph);
  const auto panel = load_panel(required(c.paths.panel, "panel"), graph);
  const WindowSpec window{ckpt.model.lookback, ckpt.model.horizon};
  const auto split = chronological_split(panel, c.split, window);
  const auto test = make_windows(split.test, window, split.test_offset);

  std::vector<std::pair<std::string, MetricReport>> rows;
  rows.emplace_back("hydronet", evaluate(ckpt, test, graph, c.eval.mape_epsilon, per_horizon));
  rows.emplace_back("persistence", persistence_report(test, c.eval.mape_epsilon, per_horizon));
  try {
    rows.emplace_back("seasonal_naive",
                      seasonal_naive_report(panel, test, c.eval.seasonal_period, c.eval.mape_epsilon, per_horizon));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientHistory) throw;
    std::cerr << "warning: seasonal naive skipped: " << e.what() << '\n';
  }

  std::ostringstream text;
  if (format == "csv") {
    text << "model,channel,step,mae,rmse,mape,count,mape_excluded\n";
    for (const auto& [name, report] : rows) {
      std::ostringstream one;
      write_report_csv(one, report, name);
      const auto body = one.str();
      text << body.substr(body.find('\n') + 1);
    }
  } else {
    write_report_table(text, rows);
  }
  emit(g, text.str());
  return 0;
}

int cmd_forecast(const RunConfig& c, const Globals& g, long long t_arg) {
  const auto graph = graph_from(c);
  const auto ckpt = load_checkpoint(required(c.paths.checkpoint, "checkpoint"));
  verify_fingerprint(ckpt, graph);
  const auto panel = load_panel(required(c.paths.panel, "panel"), graph);
  const auto lookback = ckpt.model.lookback;
  const auto t = t_arg < 0 ? panel.steps() : static_cast<std::size_t>(t_arg);
  if (t < lookback || t > panel.steps())
    throw Error(ErrorCode::InsufficientHistory, "forecast origin " + std::to_string(t) + " needs rows [t-" +
                                                    std::to_string(lookback) + ", t) inside the panel of " +
                                                    std::to_string(panel.steps()) + " steps");
  const RowMatrix input = panel.values.middleRows(static_cast<Eigen::Index>(t - lookback),
                                                  static_cast<Eigen::Index>(lookback));
  const HydroNet model(ckpt.model, graph);
  const RowMatrix pred = denormalize(model.predict(ckpt.params, normalize(input, ckpt.norm)), ckpt.norm);

  std::ostringstream text;
  const auto header = panel_header(panel.node_order);
  text << "step," << header << '\n';
  const auto t0 = panel.timestamps.empty() ? 0 : panel.timestamps.front();
  for (Eigen::Index h = 0; h < pred.rows(); ++h) {
    text << (t + static_cast<std::size_t>(h)) << ','
         << t0 + static_cast<std::int64_t>(t + static_cast<std::size_t>(h)) * panel.stride;
    for (Eigen::Index j = 0; j < pred.cols(); ++j) text << ',' << pred(h, j);
    text << '\n';
  }
  emit(g, text.str());
  return 0;
}

int cmd_detect(const RunConfig& c, const Globals& g) {
  const auto graph = graph_from(c);
  const auto ckpt = load_checkpoint(required(c.paths.checkpoint, "checkpoint"));
  verify_fingerprint(ckpt, graph);
  if (!ckpt.residuals)
    throw Error(ErrorCode::ZeroResidualVariance, "checkpoint carries no residual statistics; retrain it");
  const auto panel = load_panel(required(c.paths.panel, "panel"), graph);
  const auto step = horizon_step(c, ckpt);
  const auto forecasts = rolling_forecasts(ckpt, graph, panel);
  const auto row = static_cast<Eigen::Index>(step - 1);
  const auto events = detect_anomalies(panel.values, forecasts[step - 1], ckpt.residuals->mean.row(row),
                                       ckpt.residuals->std.row(row), panel.node_order, c.detect.threshold,
                                       c.detect.min_duration);
  std::ostringstream text;
  write_events_csv(text, events);
  emit(g, text.str());
  std::cerr << events.size() << " event(s)\n";
  return 0;
}

int cmd_gradcheck(const RunConfig& c) {
  const auto rows = run_gradcheck_suite(c.seed);
  write_gradcheck_table(std::cout, rows);
  for (const auto& r : rows)
    if (!r.passed)
      throw Error(ErrorCode::NonConvergence, "gradient check failed for '" + r.name + "'");
  return 0;
}

int report(const Error& e) {
  const auto cat = category(e.code());
  const char* name = cat == ErrorCategory::Config ? "config" : cat == ErrorCategory::Data ? "data" : "numerical";
  std::string message = e.what();
  const auto prefix = std::string(to_string(e.code())) + ": ";
  if (message.rfind(prefix, 0) == 0) message.erase(0, prefix.size());
  for (auto& ch : message)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::cerr << "error: category=" << name << " code=" << to_string(e.code()) << " message=" << message << '\n';
  return cat == ErrorCategory::Config ? 2 : cat == ErrorCategory::Data ? 3 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wastewater network forecasting and anomaly detection"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "config file (INI)");
  auto* seed_opt = app.add_option("--seed", seed, "global seed");
  app.add_option("--out", g.out, "output directory (simulate, analyze, train) or file (reports)");
  app.add_flag("--print-config", g.print_config, "print the effective config and exit");

  std::vector<Override> o;

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic panel with the hydraulic simulator");
  graph_options(simulate, o);
  option<std::size_t>(simulate, o, "--duration", "steps", [](RunConfig& c, std::size_t v) { c.sim.duration = v; });
  option<double>(simulate, o, "--base-inflow", "source inflow (cfs)",
                 [](RunConfig& c, double v) { c.sim.base_inflow = v; });
  option<double>(simulate, o, "--noise-std", "observation noise (cfs)",
                 [](RunConfig& c, double v) { c.sim.noise_std = v; });
  option<std::vector<std::string>>(simulate, o, "--anomaly", "kind:target:start:end:magnitude (repeatable)",
                                   [](RunConfig& c, const std::vector<std::string>& v) {
                                     for (const auto& a : v) c.anomalies.push_back(parse_anomaly(a));
                                   });

  auto* analyze = app.add_subcommand("analyze", "autocorrelation and edge-attribute correlation reports");
  graph_options(analyze, o);
  panel_option(analyze, o);
  option<std::size_t>(analyze, o, "--max-lag", "largest ACF lag",
                      [](RunConfig& c, std::size_t v) { c.analyze.max_lag = v; });

  auto* train_cmd = app.add_subcommand("train", "fit the model; writes a checkpoint and a loss history");
  graph_options(train_cmd, o);
  panel_option(train_cmd, o);
  checkpoint_option(train_cmd, o);
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "no per-epoch progress");
  option<std::string>(train_cmd, o, "--history", "loss history CSV",
                      [](RunConfig& c, const std::string& v) { c.paths.history = v; });
  option<std::size_t>(train_cmd, o, "--epochs", "max epochs", [](RunConfig& c, std::size_t v) { c.train.max_epochs = v; });
  option<std::size_t>(train_cmd, o, "--patience", "early-stopping patience",
                      [](RunConfig& c, std::size_t v) { c.train.patience = v; });
  option<std::size_t>(train_cmd, o, "--batch-size", "mini-batch size",
                      [](RunConfig& c, std::size_t v) { c.train.batch_size = v; });
  option<double>(train_cmd, o, "--lr", "learning rate", [](RunConfig& c, double v) { c.train.learning_rate = v; });
  option<std::string>(train_cmd, o, "--loss", "mae or mse",
                      [](RunConfig& c, const std::string& v) { c.train.loss = parse_loss_kind(v); });
  option<std::size_t>(train_cmd, o, "--hidden", "hidden channels",
                      [](RunConfig& c, std::size_t v) { c.model.hidden_channels = v; });
  option<std::string>(train_cmd, o, "--norm", "global or per_node",
                      [](RunConfig& c, const std::string& v) { c.norm = parse_norm_mode(v); });
  flag(train_cmd, o, "--bidirectional", "also pass messages upstream",
       [](RunConfig& c) { c.model.bidirectional = true; });

  auto* evaluate_cmd = app.add_subcommand("evaluate", "score the test split against baselines");
  graph_options(evaluate_cmd, o);
  panel_option(evaluate_cmd, o);
  checkpoint_option(evaluate_cmd, o);
  std::string format = "table";
  evaluate_cmd->add_option("--format", format, "table or csv")->check(CLI::IsMember({"table", "csv"}));
  bool per_horizon = false;
  evaluate_cmd->add_flag("--per-horizon", per_horizon, "also report every horizon step");
  option<double>(evaluate_cmd, o, "--mape-epsilon", "targets at or below this are left out of MAPE",
                 [](RunConfig& c, double v) { c.eval.mape_epsilon = v; });
  option<std::size_t>(evaluate_cmd, o, "--seasonal-period", "seasonal naive period (steps)",
                      [](RunConfig& c, std::size_t v) { c.eval.seasonal_period = v; });

  auto* forecast = app.add_subcommand("forecast", "forecast the H steps after row t");
  graph_options(forecast, o);
  panel_option(forecast, o);
  checkpoint_option(forecast, o);
  long long t = -1;
  forecast->add_option("-t,--t", t, "first forecast row (default: end of panel)");

  auto* detect = app.add_subcommand("detect", "flag anomalies from forecast residuals");
  graph_options(detect, o);
  panel_option(detect, o);
  checkpoint_option(detect, o);
  option<double>(detect, o, "-k,--threshold", "|z| threshold", [](RunConfig& c, double v) { c.detect.threshold = v; });
  option<std::size_t>(detect, o, "-m,--min-duration", "consecutive steps",
                      [](RunConfig& c, std::size_t v) { c.detect.min_duration = v; });
  option<std::size_t>(detect, o, "--horizon-step", "forecast step scored (1..H, 0 = H)",
                      [](RunConfig& c, std::size_t v) { c.detect.horizon_step = v; });

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string message = e.what();
    for (auto& ch : message)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: category=config code=InvalidArguments message=" << message << '\n';
    return 2;
  }

  try {
    RunConfig config = g.config.empty() ? RunConfig{} : load_config(g.config);
    if (seed_opt->count() > 0) config.seed = seed;
    for (const auto& apply : o) apply(config);
    config.propagate();
    config.validate();

    if (g.print_config) {
      std::cout << dump_config(config);
      return 0;
    }
    if (*simulate) return cmd_simulate(config, g);
    if (*analyze) return cmd_analyze(config, g);
    if (*train_cmd) return cmd_train(config, g, quiet);
    if (*evaluate_cmd) return cmd_evaluate(config, g, format, per_horizon);
    if (*forecast) return cmd_forecast(config, g, t);
    if (*detect) return cmd_detect(config, g);
    if (*gradcheck) return cmd_gradcheck(config);
    std::cerr << app.help();
    return 2;
  } catch (const Error& e) {
    return report(e);
  } catch (const fs::filesystem_error& e) {
    return report(Error(ErrorCode::IoError, e.what()));
  }
}
