#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "hydronet/panel.hpp"
#include "hydronet/random.hpp"

using namespace hydronet;
using fixtures::code_of;

namespace {

TimeSeriesPanel random_panel(std::size_t steps, std::size_t nodes, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  TimeSeriesPanel p;
  for (std::size_t n = 0; n < nodes; ++n) p.node_order.push_back("N" + std::to_string(n));
  p.values.resize(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(2 * nodes));
  for (std::size_t t = 0; t < steps; ++t) {
    p.timestamps.push_back(1'600'000'000 + static_cast<std::int64_t>(t) * 600);
    for (std::size_t n = 0; n < nodes; ++n) {
      p.at(t, n, kDepth) = rng.uniform(0.0, 3.0);
      p.at(t, n, kFlow) = rng.uniform(0.0, 20.0);
    }
  }
  return p;
}

PipeGraph single() { return build_graph({"M1"}, {}, "M1"); }

std::string write(const std::filesystem::path& dir, const std::string& body) {
  const auto path = (dir / "panel.csv").string();
  std::ofstream(path) << body;
  return path;
}

}  // namespace

TEST_CASE("load_panel reads a small file") {
  const auto dir = fixtures::scratch_dir("panel");
  const auto path = write(dir, "timestamp,M1_depth,M1_flow\n0,0.1,0.2\n600,0.1,0.2\n1200,0.1,0.2\n");
  const auto p = load_panel(path, single());
  CHECK(p.steps() == 3);
  CHECK(p.nodes() == 1);
  CHECK(p.values.cols() == 2);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(p.at(t, 0, kDepth) == 0.1);
    CHECK(p.at(t, 0, kFlow) == 0.2);
  }
  CHECK(p.stride == 600);
}

TEST_CASE("load_panel binds columns by name and sorts rows") {
  const auto dir = fixtures::scratch_dir("panel-order");
  const auto graph = fixtures::chain({"A", "B"});
  const auto path = write(dir, "timestamp,B_flow,extra,A_depth,B_depth,A_flow\n"
                               "1200,6,0,1,3,2\n0,16,0,11,13,12\n600,26,0,21,23,22\n");
  const auto p = load_panel(path, graph);
  CHECK(p.timestamps == std::vector<std::int64_t>{0, 600, 1200});
  CHECK(p.node_order == std::vector<NodeId>{"A", "B"});
  CHECK(p.values.row(0) == Eigen::RowVector4d(11, 12, 13, 16));
  CHECK(p.values.row(2) == Eigen::RowVector4d(1, 2, 3, 6));
}

TEST_CASE("load_panel errors") {
  const auto dir = fixtures::scratch_dir("panel-err");
  const auto g = single();
  CHECK(code_of([&] { load_panel(write(dir, "timestamp,M1_depth,M1_flow\n0,1,1\n600,1,1\n1800,1,1\n"), g); }) ==
        ErrorCode::NonUniformStride);
  CHECK(code_of([&] { load_panel(write(dir, "timestamp,M1_depth\n0,1\n"), g); }) == ErrorCode::MissingNodeColumn);
  CHECK(code_of([&] { load_panel(write(dir, "timestamp,M1_depth,M1_flow\n0,1,nan\n"), g); }) == ErrorCode::NaNValue);
  CHECK(code_of([&] { load_panel(write(dir, "timestamp,M1_depth,M1_flow\n0,1,\n"), g); }) == ErrorCode::NaNValue);
  CHECK(code_of([&] { load_panel(write(dir, ""), g); }) == ErrorCode::EmptyFile);
  CHECK(code_of([&] { load_panel(write(dir, "timestamp,M1_depth,M1_flow\n"), g); }) == ErrorCode::EmptyFile);
  CHECK(code_of([&] { load_panel((dir / "missing.csv").string(), g); }) == ErrorCode::IoError);
}

TEST_CASE("panel CSV round trip") {
  const auto dir = fixtures::scratch_dir("panel-rt");
  const auto p = random_panel(30, 3, 1);
  save_panel(p, (dir / "p.csv").string());
  const auto g = fixtures::chain({"N0", "N1", "N2"});
  const auto back = load_panel((dir / "p.csv").string(), g);
  CHECK(back.timestamps == p.timestamps);
  CHECK(back.values == p.values);
}

TEST_CASE("split sizes") {
  const SplitSpec ratios{0.7, 0.1, 0.2};
  CHECK(split_sizes(17706, ratios) == std::tuple<std::size_t, std::size_t, std::size_t>{12394, 1770, 3542});
  CHECK(split_sizes(10, ratios) == std::tuple<std::size_t, std::size_t, std::size_t>{7, 1, 2});
  CHECK(code_of([] { split_sizes(10, {0.5, 0.5, 0.5}); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { split_sizes(10, {0.8, 0.3, -0.1}); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("chronological_split") {
  const WindowSpec w{12, 12};
  CHECK(code_of([&] { chronological_split(random_panel(20, 1, 0), {}, w); }) == ErrorCode::TooShort);
  // Enough rows overall but the validation segment cannot hold a window.
  CHECK(code_of([&] { chronological_split(random_panel(100, 1, 0), {}, w); }) == ErrorCode::TooShort);

  const auto p = random_panel(400, 2, 3);
  const auto s = chronological_split(p, {}, w);
  CHECK(s.train.steps() == 280);
  CHECK(s.val.steps() == 40);
  CHECK(s.test.steps() == 80);
  CHECK(s.val_offset == 280);
  CHECK(s.test_offset == 320);

  RowMatrix joined(400, 4);
  joined << s.train.values, s.val.values, s.test.values;
  CHECK(joined == p.values);
  std::vector<std::int64_t> stamps = s.train.timestamps;
  stamps.insert(stamps.end(), s.val.timestamps.begin(), s.val.timestamps.end());
  stamps.insert(stamps.end(), s.test.timestamps.begin(), s.test.timestamps.end());
  CHECK(stamps == p.timestamps);
  CHECK(s.train.timestamps.back() < s.val.timestamps.front());
  CHECK(s.val.timestamps.back() < s.test.timestamps.front());
}

TEST_CASE("normalizer") {
  TimeSeriesPanel p;
  p.node_order = {"A"};
  p.timestamps = {0, 600};
  p.values.resize(2, 2);
  p.values << 1, 10, 3, 30;
  const auto stats = fit_normalizer(p);
  CHECK(stats.mean(kDepth) == 2.0);
  CHECK(stats.std(kDepth) == 1.0);
  const auto z = apply_normalizer(p, stats);
  CHECK(z.at(0, 0, kDepth) == -1.0);
  CHECK(z.at(1, 0, kDepth) == 1.0);

  p.values.col(1).setConstant(5.0);
  CHECK(code_of([&] { fit_normalizer(p); }) == ErrorCode::ZeroVariance);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = random_panel(50, 4, seed);
    for (const auto mode : {NormMode::Global, NormMode::PerNode}) {
      const auto st = fit_normalizer(r, mode);
      const auto back = invert_normalizer(apply_normalizer(r, st), st);
      CHECK((back.values - r.values).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("global normalization pools nodes per channel") {
  const auto p = random_panel(60, 3, 9);
  const auto st = fit_normalizer(p, NormMode::Global);
  CHECK(st.mean.size() == 2);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < 60; ++t)
      for (std::size_t n = 0; n < 3; ++n) sum += p.at(t, n, ch);
    const double mean = sum / 180.0;
    for (std::size_t t = 0; t < 60; ++t)
      for (std::size_t n = 0; n < 3; ++n) sq += (p.at(t, n, ch) - mean) * (p.at(t, n, ch) - mean);
    CHECK(st.mean(static_cast<Eigen::Index>(ch)) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(st.std(static_cast<Eigen::Index>(ch)) == doctest::Approx(std::sqrt(sq / 180.0)).epsilon(1e-12));
  }
  const auto per = fit_normalizer(p, NormMode::PerNode);
  CHECK(per.mean.size() == 6);
}

TEST_CASE("make_windows") {
  const WindowSpec w{12, 12};
  CHECK(make_windows(random_panel(100, 1, 0), w).size() == 77);
  CHECK(make_windows(random_panel(24, 1, 0), w).size() == 1);
  CHECK(code_of([&] { make_windows(random_panel(23, 1, 0), w); }) == ErrorCode::TooShort);

  for (std::size_t t = 24; t <= 74; ++t) CHECK(make_windows(random_panel(t, 1, t), w).size() == t - 23);

  const auto p = random_panel(40, 2, 5);
  const auto ws = make_windows(p, {4, 3}, 100);
  CHECK(ws.size() == 34);
  CHECK(ws.input(5) == p.values.middleRows(5, 4));
  CHECK(ws.target(5) == p.values.middleRows(9, 3));
  CHECK(ws.target_start(5) == 109);
}

TEST_CASE("acf") {
  std::vector<double> alt(100);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 == 0 ? 1.0 : -1.0;
  const auto r = acf(alt, 3);
  CHECK(r.size() == 4);
  CHECK(r[0] == 1.0);
  CHECK(r[1] == doctest::Approx(-0.99).epsilon(1e-12));

  Xoshiro256 rng(11);
  std::vector<double> walk(500);
  double x = 0.0;
  for (auto& v : walk) v = x += rng.uniform(-1.0, 1.0);
  for (double v : acf(walk, 499)) {
    CHECK(v <= 1.0 + 1e-9);
    CHECK(v >= -1.0 - 1e-9);
  }

  const std::vector<double> flat(10, 2.5);
  CHECK(code_of([&] { acf(flat, 2); }) == ErrorCode::ZeroVariance);
  CHECK(code_of([&] { acf(alt, 100); }) == ErrorCode::LagTooLarge);
}

TEST_CASE("edge_corr_matrix") {
  const auto g = fixtures::random_tree(10, 4);
  const auto c = edge_corr_matrix(g);
  CHECK(c.rows() == 9);
  for (Eigen::Index i = 0; i < 9; ++i) {
    CHECK(c(i, i) == 1.0);
    for (Eigen::Index j = 0; j < 9; ++j) {
      CHECK(c(i, j) == c(j, i));
      CHECK(std::abs(c(i, j)) <= 1.0 + 1e-12);
    }
  }

  // gis_length = 2 * length exactly.
  std::vector<PipeEdge> edges;
  for (int i = 0; i < 3; ++i) {
    auto e = fixtures::pipe("N" + std::to_string(i), "N" + std::to_string(i + 1), 0.5 + i, 0.01 + 0.003 * i);
    e.length = 100.0 + 37.0 * i * i;
    e.gis_length = 2.0 * e.length;
    e.roughness = 0.011 + 0.001 * i;
    e.max_flow = 1.0 + i * i;
    e.max_velocity = 3.0 - i;
    e.max_over_full_flow = 0.2 + 0.1 * i * i;
    e.max_over_full_depth = 0.9 - 0.2 * i;
    edges.push_back(e);
  }
  const auto prop = build_graph({"N0", "N1", "N2", "N3"}, edges, "N3");
  CHECK(edge_corr_matrix(prop)(0, 4) == doctest::Approx(1.0).epsilon(1e-12));

  const auto ch = fixtures::chain({"A", "B", "C"});
  CHECK(code_of([&] { edge_corr_matrix(ch); }) == ErrorCode::ZeroVariance);
  CHECK(std::isnan(edge_corr_matrix(ch, ConstantColumn::NaN)(0, 1)));
  CHECK(code_of([] { edge_corr_matrix(fixtures::chain({"A", "B"})); }) == ErrorCode::EmptyInput);
}
