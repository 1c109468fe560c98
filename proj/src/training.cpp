#include "hydronet/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hydronet/error.hpp"
#include "hydronet/random.hpp"

namespace hydronet {

std::string to_string(LossKind kind) { return kind == LossKind::Mae ? "mae" : "mse"; }

LossKind parse_loss_kind(const std::string& text) {
  if (text == "mae") return LossKind::Mae;
  if (text == "mse") return LossKind::Mse;
  throw Error(ErrorCode::InvalidConfig, "loss must be 'mae' or 'mse', got '" + text + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0 && beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1 && eps > 0))
    throw Error(ErrorCode::InvalidConfig, "optimizer settings must be positive (betas below 1)");
  if (batch_size < 1 || max_epochs < 1) throw Error(ErrorCode::InvalidConfig, "batch_size and max_epochs must be >= 1");
  if (patience < 1 || patience > max_epochs)
    throw Error(ErrorCode::InvalidConfig, "patience must be in [1, max_epochs]");
  if (!(min_delta >= 0)) throw Error(ErrorCode::InvalidConfig, "min_delta must be >= 0");
}

Var loss(const Var& pred, const Var& target, LossKind kind) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw Error(ErrorCode::ShapeMismatch, "loss: prediction and target shapes differ");
  const auto diff = ad::sub(pred, target);
  return ad::mean(kind == LossKind::Mae ? ad::abs(diff) : ad::square(diff));
}

AdamState init_adam(const ModelParams& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(RowMatrix::Zero(p.value.rows(), p.value.cols()));
    s.v.push_back(RowMatrix::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

void adam_step(ModelParams& params, const std::vector<RowMatrix>& grads, AdamState& state, const TrainConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].value.rows() || grads[i].cols() != params[i].value.cols())
      throw Error(ErrorCode::ShapeMismatch, "gradient shape differs for '" + params[i].name + "'");
    if (!grads[i].allFinite())
      throw Error(ErrorCode::NonFiniteGradient, "gradient of '" + params[i].name + "' is not finite");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = config.beta1 * m + (1.0 - config.beta1) * grads[i];
    v = config.beta2 * v + (1.0 - config.beta2) * grads[i].cwiseAbs2();
    params[i].value.array() -=
        config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.eps);
  }
}

double evaluate_loss(const HydroNet& model, const ModelParams& params, const WindowSet& windows, LossKind kind,
                     std::size_t batch_size) {
  if (windows.empty()) throw Error(ErrorCode::EmptyDataset, "no windows to evaluate");
  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    idx.resize(std::min(batch_size, windows.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tape tape;
    const BoundParams bound(tape, params, false);
    const auto pred = model.forward(tape, bound, tape.constant(stack_inputs(windows, idx)), idx.size());
    const RowMatrix diff = pred.value() - stack_targets(windows, idx);
    total += kind == LossKind::Mae ? diff.cwiseAbs().sum() : diff.squaredNorm();
    count += static_cast<std::size_t>(diff.size());
  }
  return total / static_cast<double>(count);
}

TrainResult train(const PipeGraph& graph, const WindowSet& train_windows, const WindowSet& val_windows,
                  const HydroNetConfig& model_config, const TrainConfig& train_config, const NormStats& norm,
                  const EpochCallback& on_epoch) {
  model_config.validate();
  train_config.validate();
  if (train_windows.empty() || val_windows.empty())
    throw Error(ErrorCode::EmptyDataset, "training needs non-empty train and validation windows");
  const auto matches = [&](const WindowSet& w) {
    return w.nodes() == graph.node_count() && w.spec().lookback == model_config.lookback &&
           w.spec().horizon == model_config.horizon;
  };
  if (!matches(train_windows) || !matches(val_windows))
    throw Error(ErrorCode::ShapeMismatch, "window shape does not match the model config and graph");

  const HydroNet model(model_config, graph);
  auto params = init_params(model_config);
  auto adam = init_adam(params);

  TrainResult result;
  auto& best = result.checkpoint;
  best.model = model_config;
  best.train = train_config;
  best.norm = norm;
  best.graph_fingerprint = graph.fingerprint();
  best.params = params;
  best.best_val_loss = std::numeric_limits<double>::infinity();

  double reference = std::numeric_limits<double>::infinity();  // last loss that reset patience
  std::size_t stale = 0;
  std::vector<std::size_t> order(train_windows.size());
  std::vector<std::size_t> batch;

  for (std::size_t epoch = 0; epoch < train_config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Xoshiro256 rng(derive_seed(train_config.seed + epoch, "shuffle"));
    shuffle(order, rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
      const auto end = std::min(order.size(), start + train_config.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      Tape tape;
      const BoundParams bound(tape, params);
      const auto pred = model.forward(tape, bound, tape.constant(stack_inputs(train_windows, batch)), batch.size());
      const auto l = loss(pred, tape.constant(stack_targets(train_windows, batch)), train_config.loss);
      tape.backward(l);
      adam_step(params, bound.grads(), adam, train_config);
      epoch_loss += l.value()(0, 0) * static_cast<double>(batch.size());
    }

    EpochRecord record{epoch, epoch_loss / static_cast<double>(order.size()),
                       evaluate_loss(model, params, val_windows, train_config.loss, train_config.batch_size)};
    result.history.push_back(record);

    if (record.val_loss < best.best_val_loss) {
      best.best_val_loss = record.val_loss;
      best.params = params;
      best.epoch = epoch;
    }
    if (record.val_loss < reference - train_config.min_delta) {
      reference = record.val_loss;
      stale = 0;
    } else if (++stale >= train_config.patience) {
      break;
    }
    if (on_epoch && !on_epoch(record)) break;
  }
  return result;
}

void verify_fingerprint(const Checkpoint& checkpoint, const PipeGraph& graph) {
  if (checkpoint.graph_fingerprint != graph.fingerprint())
    throw Error(ErrorCode::FingerprintMismatch, "checkpoint was trained on a different network");
}

}  // namespace hydronet
