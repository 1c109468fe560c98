#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hydronet/model.hpp"
#include "hydronet/panel.hpp"

namespace hydronet {

enum class LossKind { Mae, Mse };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 15;
  double min_delta = 1e-6;  // validation improvement that resets patience
  std::uint64_t seed = 0;
  LossKind loss = LossKind::Mae;

  void validate() const;  // throws InvalidConfig
};

/// Mean |pred - target| (or squared error). Subgradient 0 at ties.
Var loss(const Var& pred, const Var& target, LossKind kind);

struct AdamState {
  std::vector<RowMatrix> m;
  std::vector<RowMatrix> v;
  std::size_t step = 0;
};

AdamState init_adam(const ModelParams& params);

/// Bias-corrected adaptive-moment update. Throws NonFiniteGradient naming
/// the offending parameter before touching anything.
void adam_step(ModelParams& params, const std::vector<RowMatrix>& grads, AdamState& state, const TrainConfig& config);

/// Per node and channel, mean/std of (observed - forecast) in physical
/// units, for every horizon step: H x 2N each.
struct ResidualStats {
  RowMatrix mean;
  RowMatrix std;
};

struct Checkpoint {
  HydroNetConfig model;
  TrainConfig train;
  ModelParams params;
  NormStats norm;
  std::uint64_t graph_fingerprint = 0;
  double best_val_loss = 0.0;
  std::size_t epoch = 0;  // epoch (0-based) whose parameters are stored
  std::optional<ResidualStats> residuals;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> history;
};

/// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Full-set loss, evaluated in batches of `batch_size`.
double evaluate_loss(const HydroNet& model, const ModelParams& params, const WindowSet& windows, LossKind kind,
                     std::size_t batch_size);

/// Mini-batch training with early stopping on validation loss. The returned
/// checkpoint holds the parameters of the lowest-validation epoch. Windows
/// must already be normalized with `norm`.
TrainResult train(const PipeGraph& graph, const WindowSet& train_windows, const WindowSet& val_windows,
                  const HydroNetConfig& model_config, const TrainConfig& train_config, const NormStats& norm,
                  const EpochCallback& on_epoch = {});

/// Versioned single-file archive; see README for the layout.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
/// Throws FingerprintMismatch.
void verify_fingerprint(const Checkpoint& checkpoint, const PipeGraph& graph);

}  // namespace hydronet
