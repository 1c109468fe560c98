#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hydronet/autodiff.hpp"
#include "hydronet/graph.hpp"
#include "hydronet/panel.hpp"

namespace hydronet {

using Real = double;
using Tape = ad::Tape<Real>;
using Var = ad::Var<Real>;

struct HydroNetConfig {
  std::size_t lookback = 12;
  std::size_t horizon = 12;
  std::size_t hidden_channels = 32;
  std::size_t edge_embed_dim = 16;
  std::size_t temporal_kernel = 3;
  std::size_t blocks = 2;
  bool bidirectional = false;  // also pass messages upstream (ablation)
  std::uint64_t seed = 0;

  /// Steps left for the output head after every block has consumed 2 (K - 1).
  std::size_t head_kernel() const { return lookback - 2 * blocks * (temporal_kernel - 1); }
  /// Throws InvalidConfig.
  void validate() const;
};

struct Parameter {
  std::string name;
  RowMatrix value;
};

/// Every learnable tensor, in a fixed order (checkpoint manifest order).
class ModelParams {
 public:
  void add(std::string name, RowMatrix value);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  RowMatrix& at(const std::string& name);
  const RowMatrix& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights with fan_in the row
/// count, zero biases, drawn from the seeded generator. Throws InvalidConfig.
ModelParams init_params(const HydroNetConfig& config);

/// Parameters placed on a tape for one forward pass.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params, bool requires_grad = true);
  /// Wraps tensors already on a tape, one per parameter in order.
  BoundParams(const ModelParams& params, std::vector<Var> vars);
  const Var& operator[](const std::string& name) const;
  const std::vector<Var>& vars() const { return vars_; }
  /// Gradients after backward, aligned with the ModelParams order (zeros
  /// where the loss did not reach a parameter).
  std::vector<RowMatrix> grads() const;

 private:
  const ModelParams* params_;
  std::vector<Var> vars_;
};

/// Per-graph index tables for message passing.
struct MessageGraph {
  std::size_t nodes = 0;
  RowMatrix edge_attrs;                // E x 9, z-scored with the graph's own column stats
  std::vector<ad::Index> source;       // per message edge
  std::vector<ad::Index> target;       // per message edge
  std::vector<ad::Index> embed_row;    // attribute row used by each message edge
};

MessageGraph make_message_graph(const PipeGraph& graph, bool bidirectional);

// Layers. Activations are stacked (steps * batch * nodes) x channels, row
// (t * batch + b) * nodes + n; `series` is batch * nodes.

/// GLU gate: conv(x; value) * sigmoid(conv(x; gate)), per series.
Var temp_conv_gated(const Var& x, const BoundParams& p, const std::string& prefix, std::size_t kernel,
                    std::size_t series);

/// attrs . W_a, no bias.
Var embed_edges(const Var& attrs, const Var& w_a);

/// Linear -> relu -> Linear.
Var mlp(const Var& x, const BoundParams& p, const std::string& prefix);

/// One edge-aware message-passing round over every (step, batch) slice of h.
Var mpnn_layer(const Var& h, const Var& edge_embeds, const MessageGraph& graph, const BoundParams& p,
               const std::string& prefix);

class HydroNet {
 public:
  HydroNet(HydroNetConfig config, const PipeGraph& graph);

  const HydroNetConfig& config() const { return config_; }
  const MessageGraph& message_graph() const { return graph_; }
  std::size_t nodes() const { return graph_.nodes; }

  /// `input` is (L * batch * nodes) x 2; returns (batch * nodes) x (2H) with
  /// column 2h + channel, in normalized units.
  Var forward(Tape& tape, const BoundParams& params, const Var& input, std::size_t batch) const;

  /// L x 2N windows -> H x 2N forecasts, no tape retained.
  std::vector<RowMatrix> predict(const ModelParams& params, std::span<const RowMatrix> windows) const;
  RowMatrix predict(const ModelParams& params, const RowMatrix& window) const;

 private:
  HydroNetConfig config_;
  MessageGraph graph_;
};

/// Stacks windows into the model's input layout.
RowMatrix stack_inputs(const WindowSet& windows, std::span<const std::size_t> indices);
RowMatrix stack_inputs(std::span<const RowMatrix> windows);
/// Stacks targets into the model's output layout.
RowMatrix stack_targets(const WindowSet& windows, std::span<const std::size_t> indices);
/// Inverse of the output layout for item b: H x 2N.
RowMatrix unstack_output(const RowMatrix& output, std::size_t batch_index, std::size_t nodes, std::size_t horizon);

}  // namespace hydronet
