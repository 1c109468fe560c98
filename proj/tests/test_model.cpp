#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "fixtures.hpp"
#include "hydronet/gradcheck.hpp"
#include "hydronet/gradcheck_suite.hpp"
#include "hydronet/model.hpp"
#include "hydronet/random.hpp"

using namespace hydronet;
using fixtures::code_of;

namespace {

RowMatrix random(Xoshiro256& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.uniform(-1.0, 1.0);
  return m;
}

// Weights at unit-variance scale so signals survive both blocks.
ModelParams lively(const HydroNetConfig& cfg, std::uint64_t seed) {
  auto p = init_params(cfg);
  Xoshiro256 rng(seed);
  for (auto& x : p) {
    const double gain = x.value.rows() == 1 ? 0.3 : std::sqrt(3.0 / static_cast<double>(x.value.rows()));
    x.value = random(rng, x.value.rows(), x.value.cols(), gain);
  }
  return p;
}

HydroNetConfig small() {
  HydroNetConfig c;
  c.hidden_channels = 6;
  c.edge_embed_dim = 4;
  return c;
}

// Row of (step t, node n) for a single-item batch.
Eigen::Index row(std::size_t t, std::size_t n, std::size_t nodes) { return static_cast<Eigen::Index>(t * nodes + n); }

}  // namespace

TEST_CASE("init_params") {
  HydroNetConfig cfg;
  const auto p = init_params(cfg);
  CHECK(p.at("edge_embed").rows() == 9);
  CHECK(p.at("edge_embed").cols() == 16);
  CHECK(p.at("block0.tconv1.value_w").rows() == 3 * 2);
  CHECK(p.at("block0.message.w1").rows() == 32 + 16);
  CHECK(p.at("block0.update.w1").rows() == 64);
  CHECK(p.at("head.conv_w").rows() == 4 * 32);
  CHECK(p.at("head.out_w").cols() == 24);

  const auto q = init_params(cfg);
  REQUIRE(p.size() == q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i].name == q[i].name);
    CHECK(std::memcmp(p[i].value.data(), q[i].value.data(), sizeof(double) * static_cast<std::size_t>(p[i].value.size())) == 0);
  }

  for (const auto& x : p) {
    if (x.value.rows() == 1 && x.name.back() == 'b') {
      CHECK(x.value.isZero());
    } else {
      const double bound = std::sqrt(1.0 / static_cast<double>(x.value.rows()));
      CHECK(x.value.cwiseAbs().maxCoeff() <= bound);
    }
  }

  cfg.seed = 1;
  CHECK(init_params(cfg).at("edge_embed") != p.at("edge_embed"));

  HydroNetConfig bad;
  bad.lookback = 4;
  CHECK(code_of([&] { init_params(bad); }) == ErrorCode::InvalidConfig);
  bad.lookback = 8;  // leaves nothing for the head
  CHECK(code_of([&] { init_params(bad); }) == ErrorCode::InvalidConfig);
  bad = {};
  bad.hidden_channels = 0;
  CHECK(code_of([&] { init_params(bad); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("temp_conv_gated") {
  const auto cfg = small();
  Xoshiro256 rng(1);
  auto params = lively(cfg, 2);
  const std::size_t nodes = 3;
  const RowMatrix x = random(rng, 12 * nodes, 2);

  Tape t;
  const BoundParams p(t, params, false);
  const auto out = temp_conv_gated(t.constant(x), p, "block0.tconv1", 3, nodes);
  CHECK(out.rows() == 10 * 3);
  CHECK(out.cols() == 6);
  CHECK(code_of([&] { temp_conv_gated(t.constant(random(rng, 2 * nodes, 2)), p, "block0.tconv1", 3, nodes); }) ==
        ErrorCode::WindowTooShort);

  // Zeroing node 1 changes only node 1.
  RowMatrix x2 = x;
  for (std::size_t s = 0; s < 12; ++s) x2.row(row(s, 1, nodes)).setZero();
  const auto out2 = temp_conv_gated(t.constant(x2), p, "block0.tconv1", 3, nodes).value();
  for (std::size_t s = 0; s < 10; ++s) {
    CHECK(out2.row(row(s, 0, nodes)) == out.value().row(row(s, 0, nodes)));
    CHECK(out2.row(row(s, 2, nodes)) == out.value().row(row(s, 2, nodes)));
    CHECK(out2.row(row(s, 1, nodes)) != out.value().row(row(s, 1, nodes)));
  }

  params.at("block0.tconv1.gate_b").setConstant(-40.0);
  params.at("block0.tconv1.gate_w").setZero();
  Tape t2;
  const BoundParams closed(t2, params, false);
  CHECK(temp_conv_gated(t2.constant(x), closed, "block0.tconv1", 3, nodes).value().cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("embed_edges") {
  Tape t;
  Xoshiro256 rng(3);
  const RowMatrix attrs = random(rng, 5, 9);
  CHECK(embed_edges(t.constant(attrs), t.constant(RowMatrix::Zero(9, 4))).value().isZero());
  const auto one = embed_edges(t.constant(attrs.topRows(1)), t.constant(RowMatrix::Ones(9, 1))).value();
  CHECK(one(0, 0) == doctest::Approx(attrs.row(0).sum()).epsilon(1e-14));
  CHECK(code_of([&] { embed_edges(t.constant(RowMatrix::Ones(2, 8)), t.constant(RowMatrix::Ones(8, 1))); }) ==
        ErrorCode::ShapeMismatch);

  const double err = ad::finite_diff_check<double>(
      [w = random(rng, 5, 3)](Tape& tape, const std::vector<Var>& v) {
        return ad::sum(ad::mul(embed_edges(v[0], v[1]), tape.constant(w)));
      },
      {attrs, random(rng, 9, 3)}, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("mpnn_layer without edges is a pure self-update") {
  const auto cfg = small();
  const auto params = lively(cfg, 4);
  Xoshiro256 rng(5);
  MessageGraph mg;
  mg.nodes = 3;
  mg.edge_attrs = RowMatrix(0, 9);
  const RowMatrix h = random(rng, 3, 6);

  Tape t;
  const BoundParams p(t, params, false);
  const auto out = mpnn_layer(t.constant(h), t.constant(RowMatrix(0, 4)), mg, p, "block0").value();
  RowMatrix cat(3, 12);
  cat << h, RowMatrix::Zero(3, 6);
  const auto self = mlp(t.constant(cat), p, "block0.update").value();
  CHECK((out - self).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("messages only travel downstream") {
  const auto cfg = small();
  const auto params = lively(cfg, 6);
  const auto g = fixtures::chain({"A", "B"});
  const auto mg = make_message_graph(g, false);
  Xoshiro256 rng(7);
  const RowMatrix h0 = random(rng, 2, 6);

  const auto grad_wrt_h = [&](std::size_t out_node) {
    Tape t;
    const BoundParams p(t, params, false);
    const auto h = t.variable(h0);
    const auto embeds = embed_edges(t.constant(mg.edge_attrs), p["edge_embed"]);
    const auto out = mpnn_layer(h, embeds, mg, p, "block0");
    RowMatrix pick = RowMatrix::Zero(2, 6);
    pick.row(static_cast<Eigen::Index>(out_node)).setOnes();
    t.backward(ad::sum(ad::mul(out, t.constant(pick))));
    return RowMatrix(h.grad());
  };
  CHECK(grad_wrt_h(0).row(1).isZero(0.0));                  // A ignores B
  CHECK(grad_wrt_h(1).row(0).cwiseAbs().maxCoeff() > 0.0);  // B hears A

  CHECK(make_message_graph(g, true).source.size() == 2);
}

TEST_CASE("edge attributes reach the receiving node") {
  const auto cfg = small();
  const auto params = lively(cfg, 8);
  const auto g = fixtures::random_tree(5, 9);
  const auto mg = make_message_graph(g, false);
  Xoshiro256 rng(10);
  const RowMatrix h0 = random(rng, 5, 6);

  const auto output = [&](const RowMatrix& attrs) {
    Tape t;
    const BoundParams p(t, params, false);
    const auto embeds = embed_edges(t.constant(attrs), p["edge_embed"]);
    return RowMatrix(mpnn_layer(t.constant(h0), embeds, mg, p, "block0").value());
  };
  const auto base = output(mg.edge_attrs);
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    RowMatrix bumped = mg.edge_attrs;
    bumped(static_cast<Eigen::Index>(e), 3) += 1e-4;
    const auto moved = output(bumped);
    const auto j = static_cast<Eigen::Index>(g.edge_target(e));
    CHECK((moved.row(j) - base.row(j)).cwiseAbs().maxCoeff() > 0.0);
    for (Eigen::Index n = 0; n < 5; ++n)
      if (n != j) CHECK(moved.row(n) == base.row(n));
  }
}

TEST_CASE("forward shapes") {
  HydroNetConfig cfg;
  const auto g = fixtures::random_tree(23, 1);
  const HydroNet model(cfg, g);
  const auto params = init_params(cfg);
  Xoshiro256 rng(11);
  const RowMatrix window = random(rng, 12, 46);
  const auto y = model.predict(params, window);
  CHECK(y.rows() == 12);
  CHECK(y.cols() == 46);

  Tape t;
  const BoundParams p(t, params, false);
  CHECK(code_of([&] { model.forward(t, p, t.constant(random(rng, 11 * 23, 2)), 1); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { model.predict(params, RowMatrix(random(rng, 10, 46))); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("zero parameters give a constant output") {
  const auto cfg = small();
  auto params = init_params(cfg);
  for (auto& x : params) x.value.setZero();
  Xoshiro256 rng(12);
  RowMatrix bias = random(rng, 1, static_cast<Eigen::Index>(2 * cfg.horizon));
  params.at("head.out_b") = bias;
  const auto g = fixtures::random_tree(6, 2);
  const HydroNet model(cfg, g);
  const auto y = model.predict(params, RowMatrix(random(rng, 12, 12)));
  for (std::size_t h = 0; h < cfg.horizon; ++h)
    for (std::size_t n = 0; n < 6; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(y(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(2 * n + c)) ==
              bias(0, static_cast<Eigen::Index>(2 * h + c)));
}

TEST_CASE("batched forward matches one window at a time") {
  const auto cfg = small();
  const auto params = lively(cfg, 13);
  const auto g = fixtures::random_tree(5, 3);
  const HydroNet model(cfg, g);
  Xoshiro256 rng(14);
  std::vector<RowMatrix> windows;
  for (int i = 0; i < 4; ++i) windows.push_back(random(rng, 12, 10));
  const auto batched = model.predict(params, windows);
  for (std::size_t i = 0; i < windows.size(); ++i)
    CHECK((batched[i] - model.predict(params, windows[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("relabeling nodes permutes the forecast") {
  const auto cfg = small();
  const auto params = lively(cfg, 15);
  const auto g = fixtures::random_tree(6, 4);
  const HydroNet model(cfg, g);
  Xoshiro256 rng(16);
  const RowMatrix window = random(rng, 12, 12);
  const auto y = model.predict(params, window);

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);  // new position k holds old node perm[k]
    std::vector<NodeId> ids;
    for (auto old : perm) ids.push_back(g.nodes()[old]);
    auto edges = g.edges();
    shuffle(edges, rng);
    const HydroNet relabeled(cfg, build_graph(ids, edges, g.outlet()));

    RowMatrix pw(12, 12);
    for (std::size_t k = 0; k < 6; ++k) pw.middleCols(static_cast<Eigen::Index>(2 * k), 2) = window.middleCols(static_cast<Eigen::Index>(2 * perm[k]), 2);
    const auto py = relabeled.predict(params, pw);
    double worst = 0.0;
    for (std::size_t k = 0; k < 6; ++k)
      worst = std::max(worst, (py.middleCols(static_cast<Eigen::Index>(2 * k), 2) -
                               y.middleCols(static_cast<Eigen::Index>(2 * perm[k]), 2)).cwiseAbs().maxCoeff());
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("receptive field and directionality through the whole model") {
  const auto cfg = small();
  const auto params = lively(cfg, 17);
  const auto g = fixtures::chain({"A", "B", "C"});
  const HydroNet model(cfg, g);
  Xoshiro256 rng(18);
  const RowMatrix window = random(rng, 12, 6);

  Tape t;
  const BoundParams p(t, params, false);
  const auto x = t.variable(stack_inputs(std::span<const RowMatrix>(&window, 1)));
  const auto y = model.forward(t, p, x, 1);
  RowMatrix pick = RowMatrix::Zero(y.rows(), y.cols());
  pick.row(0).setOnes();  // node A, every horizon and channel
  t.backward(ad::sum(ad::mul(y, t.constant(pick))));
  const auto& gx = x.grad();
  for (std::size_t s = 0; s < 12; ++s) {
    CHECK(gx.row(row(s, 2, 3)).isZero(0.0));
    CHECK(gx.row(row(s, 1, 3)).isZero(0.0));
  }
  CHECK(gx.row(row(0, 0, 3)).cwiseAbs().maxCoeff() > 0.0);

  // The outlet sees the earliest step of its upstream neighbours.
  Tape t2;
  const BoundParams p2(t2, params, false);
  const auto x2 = t2.variable(stack_inputs(std::span<const RowMatrix>(&window, 1)));
  const auto y2 = model.forward(t2, p2, x2, 1);
  RowMatrix pick2 = RowMatrix::Zero(y2.rows(), y2.cols());
  pick2.row(2).setOnes();
  t2.backward(ad::sum(ad::mul(y2, t2.constant(pick2))));
  CHECK(x2.grad().row(row(0, 0, 3)).cwiseAbs().maxCoeff() > 0.0);
  CHECK(x2.grad().row(row(0, 2, 3)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("full model gradient check") {
  for (const auto& r : run_gradcheck_suite(0)) {
    INFO(r.name);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("stack and unstack round trip") {
  Xoshiro256 rng(19);
  std::vector<RowMatrix> windows{random(rng, 3, 4), random(rng, 3, 4)};
  const auto stacked = stack_inputs(windows);
  CHECK(stacked.rows() == 3 * 2 * 2);
  CHECK(stacked(row(1, 1 * 2 + 0, 4), 1) == windows[1](1, 1));  // step 1, batch 1, node 0, flow

  RowMatrix out(2 * 2, 2 * 3);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<double>(i);
  const auto u = unstack_output(out, 1, 2, 3);
  CHECK(u.rows() == 3);
  CHECK(u(2, 2 * 1 + 1) == out(1 * 2 + 1, 2 * 2 + 1));
}
