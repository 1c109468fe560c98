#include "hydronet/model.hpp"

#include <cmath>

#include "hydronet/error.hpp"
#include "hydronet/random.hpp"

namespace hydronet {

using ad::Index;

void HydroNetConfig::validate() const {
  if (lookback < 1 || horizon < 1 || hidden_channels < 1 || edge_embed_dim < 1 || temporal_kernel < 1 || blocks < 1)
    throw Error(ErrorCode::InvalidConfig, "model dimensions must all be >= 1");
  const auto consumed = 2 * blocks * (temporal_kernel - 1);
  if (lookback < consumed + 1)
    throw Error(ErrorCode::InvalidConfig, "lookback " + std::to_string(lookback) + " is too short: " +
                                              std::to_string(blocks) + " blocks with kernel " +
                                              std::to_string(temporal_kernel) + " consume " +
                                              std::to_string(consumed) + " steps and the head needs at least one");
}

void ModelParams::add(std::string name, RowMatrix value) {
  if (!index_.emplace(name, params_.size()).second)
    throw Error(ErrorCode::InvalidConfig, "duplicate parameter '" + name + "'");
  params_.push_back({std::move(name), std::move(value)});
}

std::size_t ModelParams::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::CorruptCheckpoint, "no parameter named '" + name + "'");
  return it->second;
}

RowMatrix& ModelParams::at(const std::string& name) { return params_[index_of(name)].value; }
const RowMatrix& ModelParams::at(const std::string& name) const { return params_[index_of(name)].value; }

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

ModelParams init_params(const HydroNetConfig& config) {
  config.validate();
  Xoshiro256 rng(derive_seed(config.seed, "init"));
  ModelParams params;
  const auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    const double bound = std::sqrt(1.0 / static_cast<double>(rows));
    RowMatrix w(rows, cols);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    params.add(name, std::move(w));
  };
  const auto bias = [&](const std::string& name, std::size_t cols) { params.add(name, RowMatrix::Zero(1, cols)); };
  const auto gated = [&](const std::string& prefix, std::size_t cin, std::size_t cout) {
    weight(prefix + ".value_w", config.temporal_kernel * cin, cout);
    bias(prefix + ".value_b", cout);
    weight(prefix + ".gate_w", config.temporal_kernel * cin, cout);
    bias(prefix + ".gate_b", cout);
  };
  const auto two_layer = [&](const std::string& prefix, std::size_t in, std::size_t width) {
    weight(prefix + ".w1", in, width);
    bias(prefix + ".b1", width);
    weight(prefix + ".w2", width, width);
    bias(prefix + ".b2", width);
  };

  const auto hidden = config.hidden_channels;
  weight("edge_embed", kEdgeAttrCount, config.edge_embed_dim);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    const auto prefix = "block" + std::to_string(b);
    gated(prefix + ".tconv1", b == 0 ? kChannels : hidden, hidden);
    two_layer(prefix + ".message", hidden + config.edge_embed_dim, hidden);
    two_layer(prefix + ".update", 2 * hidden, hidden);
    gated(prefix + ".tconv2", hidden, hidden);
  }
  weight("head.conv_w", config.head_kernel() * hidden, hidden);
  bias("head.conv_b", hidden);
  weight("head.out_w", hidden, config.horizon * kChannels);
  bias("head.out_b", config.horizon * kChannels);
  return params;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params, bool requires_grad) : params_(&params) {
  vars_.reserve(params.size());
  for (const auto& p : params) vars_.push_back(tape.variable(p.value, requires_grad));
}

BoundParams::BoundParams(const ModelParams& params, std::vector<Var> vars) : params_(&params), vars_(std::move(vars)) {
  if (vars_.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "one tensor per parameter expected");
  for (std::size_t i = 0; i < vars_.size(); ++i)
    if (vars_[i].rows() != params[i].value.rows() || vars_[i].cols() != params[i].value.cols())
      throw Error(ErrorCode::ShapeMismatch, "tensor for '" + params[i].name + "' has the wrong shape");
}

const Var& BoundParams::operator[](const std::string& name) const { return vars_[params_->index_of(name)]; }

std::vector<RowMatrix> BoundParams::grads() const {
  std::vector<RowMatrix> out;
  out.reserve(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    const auto& g = vars_[i].grad();
    out.push_back(g.size() == 0 ? RowMatrix::Zero(vars_[i].rows(), vars_[i].cols()) : g);
  }
  return out;
}

MessageGraph make_message_graph(const PipeGraph& graph, bool bidirectional) {
  MessageGraph mg;
  mg.nodes = graph.node_count();
  const auto stats = fit_edge_stats(graph);
  mg.edge_attrs = edge_attr_matrix(graph, &stats);
  for (std::size_t e = 0; e < graph.edge_count(); ++e) {
    mg.source.push_back(static_cast<Index>(graph.edge_source(e)));
    mg.target.push_back(static_cast<Index>(graph.edge_target(e)));
    mg.embed_row.push_back(static_cast<Index>(e));
  }
  if (bidirectional)
    for (std::size_t e = 0; e < graph.edge_count(); ++e) {
      mg.source.push_back(static_cast<Index>(graph.edge_target(e)));
      mg.target.push_back(static_cast<Index>(graph.edge_source(e)));
      mg.embed_row.push_back(static_cast<Index>(e));
    }
  return mg;
}

Var temp_conv_gated(const Var& x, const BoundParams& p, const std::string& prefix, std::size_t kernel,
                    std::size_t series) {
  const auto k = static_cast<Index>(kernel);
  const auto s = static_cast<Index>(series);
  const auto value = ad::conv1d_causal(x, p[prefix + ".value_w"], p[prefix + ".value_b"], k, s);
  const auto gate = ad::conv1d_causal(x, p[prefix + ".gate_w"], p[prefix + ".gate_b"], k, s);
  return ad::mul(value, ad::sigmoid(gate));
}

Var embed_edges(const Var& attrs, const Var& w_a) {
  if (attrs.cols() != static_cast<Index>(kEdgeAttrCount))
    throw Error(ErrorCode::ShapeMismatch, "edge attributes must have 9 columns");
  return ad::matmul(attrs, w_a);
}

Var mlp(const Var& x, const BoundParams& p, const std::string& prefix) {
  const auto hidden = ad::relu(ad::add(ad::matmul(x, p[prefix + ".w1"]), p[prefix + ".b1"]));
  return ad::add(ad::matmul(hidden, p[prefix + ".w2"]), p[prefix + ".b2"]);
}

Var mpnn_layer(const Var& h, const Var& edge_embeds, const MessageGraph& graph, const BoundParams& p,
               const std::string& prefix) {
  const auto n = static_cast<Index>(graph.nodes);
  if (n == 0 || h.rows() % n != 0)
    throw Error(ErrorCode::ShapeMismatch, "mpnn: " + std::to_string(h.rows()) + " rows for " + std::to_string(n) +
                                              " nodes");
  if (edge_embeds.rows() != graph.edge_attrs.rows())
    throw Error(ErrorCode::ShapeMismatch, "mpnn: edge embedding rows do not match the graph");
  const Index slices = h.rows() / n;
  const auto m = static_cast<Index>(graph.source.size());

  std::vector<Index> src, dst, emb;
  src.reserve(static_cast<std::size_t>(slices * m));
  dst.reserve(src.capacity());
  emb.reserve(src.capacity());
  for (Index s = 0; s < slices; ++s)
    for (Index e = 0; e < m; ++e) {
      src.push_back(s * n + graph.source[e]);
      dst.push_back(s * n + graph.target[e]);
      emb.push_back(graph.embed_row[e]);
    }

  const auto h_src = ad::gather_rows(h, std::move(src));
  const auto e_ij = ad::gather_rows(edge_embeds, std::move(emb));
  const auto messages = mlp(ad::concat({h_src, e_ij}, 1), p, prefix + ".message");
  const auto aggregate = ad::scatter_sum(messages, std::move(dst), h.rows());
  return mlp(ad::concat({h, aggregate}, 1), p, prefix + ".update");
}

HydroNet::HydroNet(HydroNetConfig config, const PipeGraph& graph)
    : config_(config), graph_(make_message_graph(graph, config.bidirectional)) {
  config_.validate();
}

Var HydroNet::forward(Tape& tape, const BoundParams& params, const Var& input, std::size_t batch) const {
  const auto series = batch * graph_.nodes;
  const auto expected = static_cast<Index>(config_.lookback * series);
  if (input.rows() != expected || input.cols() != static_cast<Index>(kChannels))
    throw Error(ErrorCode::ShapeMismatch, "forward: input is " + std::to_string(input.rows()) + "x" +
                                              std::to_string(input.cols()) + ", expected " +
                                              std::to_string(expected) + "x2");

  const auto attrs = tape.constant(graph_.edge_attrs);
  const auto embeds = embed_edges(attrs, params["edge_embed"]);

  auto h = input;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const auto prefix = "block" + std::to_string(b);
    h = temp_conv_gated(h, params, prefix + ".tconv1", config_.temporal_kernel, series);
    h = mpnn_layer(h, embeds, graph_, params, prefix);
    h = temp_conv_gated(h, params, prefix + ".tconv2", config_.temporal_kernel, series);
  }
  h = ad::relu(ad::conv1d_causal(h, params["head.conv_w"], params["head.conv_b"],
                                 static_cast<Index>(config_.head_kernel()), static_cast<Index>(series)));
  return ad::add(ad::matmul(h, params["head.out_w"]), params["head.out_b"]);
}

std::vector<RowMatrix> HydroNet::predict(const ModelParams& params, std::span<const RowMatrix> windows) const {
  std::vector<RowMatrix> out;
  if (windows.empty()) return out;
  Tape tape;
  const BoundParams bound(tape, params, false);
  const auto input = tape.constant(stack_inputs(windows));
  const auto y = forward(tape, bound, input, windows.size());
  for (std::size_t b = 0; b < windows.size(); ++b)
    out.push_back(unstack_output(y.value(), b, graph_.nodes, config_.horizon));
  return out;
}

RowMatrix HydroNet::predict(const ModelParams& params, const RowMatrix& window) const {
  return predict(params, std::span<const RowMatrix>(&window, 1)).front();
}

namespace {

template <typename GetWindow>
RowMatrix stack_inputs_impl(std::size_t batch, GetWindow get) {
  const auto first = get(0);
  const auto steps = first.rows();
  const auto nodes = first.cols() / static_cast<Index>(kChannels);
  const auto b_count = static_cast<Index>(batch);
  RowMatrix x(steps * b_count * nodes, static_cast<Index>(kChannels));
  for (Index b = 0; b < b_count; ++b) {
    const auto w = get(static_cast<std::size_t>(b));
    if (w.rows() != steps || w.cols() != first.cols())
      throw Error(ErrorCode::ShapeMismatch, "windows in a batch must share a shape");
    for (Index t = 0; t < steps; ++t)
      for (Index n = 0; n < nodes; ++n)
        x.row((t * b_count + b) * nodes + n) = w.block(t, 2 * n, 1, static_cast<Index>(kChannels));
  }
  return x;
}

}  // namespace

RowMatrix stack_inputs(const WindowSet& windows, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  return stack_inputs_impl(indices.size(), [&](std::size_t b) { return windows.input(indices[b]); });
}

RowMatrix stack_inputs(std::span<const RowMatrix> windows) {
  if (windows.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  return stack_inputs_impl(windows.size(), [&](std::size_t b) -> WindowSet::Block { return windows[b]; });
}

RowMatrix stack_targets(const WindowSet& windows, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  const auto nodes = static_cast<Index>(windows.nodes());
  const auto horizon = static_cast<Index>(windows.spec().horizon);
  RowMatrix y(static_cast<Index>(indices.size()) * nodes, horizon * static_cast<Index>(kChannels));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto target = windows.target(indices[b]);
    for (Index n = 0; n < nodes; ++n)
      for (Index h = 0; h < horizon; ++h)
        for (Index c = 0; c < static_cast<Index>(kChannels); ++c)
          y(static_cast<Index>(b) * nodes + n, h * static_cast<Index>(kChannels) + c) = target(h, 2 * n + c);
  }
  return y;
}

RowMatrix unstack_output(const RowMatrix& output, std::size_t batch_index, std::size_t nodes, std::size_t horizon) {
  const auto n_count = static_cast<Index>(nodes);
  const auto h_count = static_cast<Index>(horizon);
  RowMatrix out(h_count, 2 * n_count);
  for (Index n = 0; n < n_count; ++n)
    for (Index h = 0; h < h_count; ++h)
      for (Index c = 0; c < static_cast<Index>(kChannels); ++c)
        out(h, 2 * n + c) = output(static_cast<Index>(batch_index) * n_count + n, h * static_cast<Index>(kChannels) + c);
  return out;
}

}  // namespace hydronet
