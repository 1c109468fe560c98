#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "hydronet/autodiff.hpp"
#include "hydronet/gradcheck.hpp"
#include "hydronet/gradcheck_suite.hpp"
#include "hydronet/random.hpp"

using namespace hydronet;
using fixtures::code_of;
using M = ad::Matrix<double>;
using V = ad::Var<double>;
using T = ad::Tape<double>;
using Vs = std::vector<V>;

namespace {

M mat(std::initializer_list<std::initializer_list<double>> rows) {
  M m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double x : r) m(i, j++) = x;
    ++i;
  }
  return m;
}

M random(Xoshiro256& rng, Eigen::Index r, Eigen::Index c) {
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

// Random weighted sum, so each output element sees a different upstream gradient.
ad::TensorFunction<double> weighted(std::function<V(const Vs&)> f, M weights) {
  return [f, weights](T& tape, const Vs& v) { return ad::sum(ad::mul(f(v), tape.constant(weights))); };
}

}  // namespace

TEST_CASE("matmul") {
  T t;
  const auto id = t.constant(M::Identity(2, 2));
  const auto a = t.constant(mat({{1, 2}, {3, 4}}));
  CHECK(ad::matmul(id, a).value() == a.value());
  CHECK(ad::matmul(t.constant(mat({{1, 2}})), t.constant(mat({{3}, {4}}))).value()(0, 0) == 11.0);
  CHECK(code_of([&] { ad::matmul(a, t.constant(M::Ones(3, 1))); }) == ErrorCode::ShapeMismatch);

  Xoshiro256 rng(1);
  const M w = random(rng, 3, 2);
  const double err = ad::finite_diff_check<double>(weighted([](const Vs& v) { return ad::matmul(v[0], v[1]); }, w),
                                                   {random(rng, 3, 4), random(rng, 4, 2)}, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("conv1d_causal") {
  T t;
  Xoshiro256 rng(2);
  const M x = random(rng, 12, 2);
  const auto xv = t.constant(x);
  const auto same = ad::conv1d_causal(xv, t.constant(M::Identity(2, 2)), t.constant(M::Zero(1, 2)), 1);
  CHECK(same.value() == x);

  const auto out = ad::conv1d_causal(xv, t.constant(random(rng, 6, 4)), t.constant(M::Zero(1, 4)), 3);
  CHECK(out.rows() == 10);
  CHECK(out.cols() == 4);

  // Output step t reads input steps t..t+K-1.
  const M w = random(rng, 6, 4);
  const M b = random(rng, 1, 4);
  const auto y = ad::conv1d_causal(xv, t.constant(w), t.constant(b), 3).value();
  for (Eigen::Index s = 0; s < 10; ++s) {
    Eigen::RowVectorXd expect = b.row(0);
    for (Eigen::Index k = 0; k < 3; ++k) expect += x.row(s + k) * w.middleRows(2 * k, 2);
    CHECK((y.row(s) - expect).cwiseAbs().maxCoeff() < 1e-14);
  }

  CHECK(code_of([&] { ad::conv1d_causal(t.constant(random(rng, 2, 2)), t.constant(w), t.constant(b), 3); }) ==
        ErrorCode::WindowTooShort);

  const double err = ad::finite_diff_check<double>(
      weighted([](const Vs& v) { return ad::conv1d_causal(v[0], v[1], v[2], 3); }, random(rng, 4, 3)),
      {random(rng, 6, 2), random(rng, 6, 3), random(rng, 1, 3)}, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("strided conv keeps series independent") {
  // Two interleaved series (stride 2): perturbing one never moves the other's output.
  T t;
  Xoshiro256 rng(3);
  M x = random(rng, 10, 1);
  const M w = random(rng, 3, 2);
  const auto y0 = ad::conv1d_causal(t.constant(x), t.constant(w), t.constant(M::Zero(1, 2)), 3, 2).value();
  x(4, 0) += 1.0;
  const auto y1 = ad::conv1d_causal(t.constant(x), t.constant(w), t.constant(M::Zero(1, 2)), 3, 2).value();
  CHECK(y0.rows() == 6);
  for (Eigen::Index r = 1; r < 6; r += 2) CHECK(y0.row(r) == y1.row(r));
  CHECK(y0.row(0) != y1.row(0));
}

TEST_CASE("elementwise") {
  T t;
  const auto z = t.constant(M::Zero(1, 1));
  CHECK(ad::sigmoid(z).value()(0, 0) == 0.5);
  CHECK(ad::tanh(z).value()(0, 0) == 0.0);
  CHECK(ad::relu(t.constant(mat({{-1, 2}}))).value() == mat({{0, 2}}));
  CHECK(ad::add(t.constant(mat({{1, 2}, {3, 4}})), t.constant(mat({{10, 20}}))).value() == mat({{11, 22}, {13, 24}}));
  CHECK(code_of([&] { ad::add(t.constant(M::Ones(2, 2)), t.constant(M::Ones(2, 3))); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] { ad::mul(t.constant(M::Ones(2, 2)), t.constant(M::Ones(2, 1))); }) == ErrorCode::ShapeMismatch);

  // Saturated sigmoid stays finite in both directions.
  const auto s = ad::sigmoid(t.constant(mat({{-800, 800}}))).value();
  CHECK(s(0, 0) == 0.0);
  CHECK(s(0, 1) == 1.0);

  Xoshiro256 rng(4);
  const double err = ad::finite_diff_check<double>(
      weighted([](const Vs& v) { return ad::sigmoid(v[0]); }, random(rng, 4, 3)), {random(rng, 4, 3)}, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("concat") {
  T t;
  const auto a = t.constant(mat({{1, 2, 3}}));
  const auto b = t.constant(mat({{4, 5, 6}}));
  CHECK(ad::concat({a, b}, 1).value() == mat({{1, 2, 3, 4, 5, 6}}));
  CHECK(ad::concat({a, b}, 0).value() == mat({{1, 2, 3}, {4, 5, 6}}));
  CHECK(ad::concat({a}, 1).value() == a.value());
  CHECK(code_of([&] { ad::concat({a, t.constant(M::Ones(2, 3))}, 1); }) == ErrorCode::ShapeMismatch);

  Xoshiro256 rng(5);
  const double err = ad::finite_diff_check<double>(
      weighted([](const Vs& v) { return ad::concat({v[0], v[1]}, 1); }, random(rng, 3, 5)),
      {random(rng, 3, 2), random(rng, 3, 3)}, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("scatter_sum") {
  T t;
  const auto out = ad::scatter_sum(t.constant(mat({{1, 1}, {2, 2}})), {0, 0}, 2).value();
  CHECK(out == mat({{3, 3}, {0, 0}}));
  CHECK(ad::scatter_sum(t.constant(M::Zero(3, 2)), {0, 1, 1}, 2).value().isZero());
  CHECK(code_of([&] { ad::scatter_sum(t.constant(M::Ones(2, 2)), {0, 2}, 2); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([&] { ad::scatter_sum(t.constant(M::Ones(2, 2)), {0}, 2); }) == ErrorCode::ShapeMismatch);

  // The gradient of a message row is exactly the gradient of its target row.
  T g;
  const auto m = g.variable(M::Ones(4, 2));
  const std::vector<Eigen::Index> targets{2, 0, 2, 1};
  const M up = mat({{1, 2}, {3, 4}, {5, 6}});
  g.backward(ad::sum(ad::mul(ad::scatter_sum(m, targets, 3), g.constant(up))));
  for (Eigen::Index e = 0; e < 4; ++e) CHECK(m.grad().row(e) == up.row(targets[static_cast<std::size_t>(e)]));
}

TEST_CASE("scatter then gather matches an index-loop oracle") {
  Xoshiro256 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(6));
    const Eigen::Index e = static_cast<Eigen::Index>(rng.below(12));
    std::vector<Eigen::Index> targets;
    for (Eigen::Index i = 0; i < e; ++i) targets.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    const M msgs = random(rng, e, 3);
    M oracle = M::Zero(n, 3);
    for (Eigen::Index i = 0; i < e; ++i) oracle.row(targets[static_cast<std::size_t>(i)]) += msgs.row(i);

    T t;
    const auto summed = ad::scatter_sum(t.constant(msgs), targets, n);
    const auto back = ad::gather_rows(summed, targets).value();
    for (Eigen::Index i = 0; i < e; ++i) CHECK(back.row(i) == oracle.row(targets[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("backward") {
  {
    T t;
    const auto x = t.variable(mat({{1, -2}, {3, 0.5}}));
    t.backward(ad::sum(x));
    CHECK(x.grad() == M::Ones(2, 2));
  }
  {
    T t;
    const auto x = t.variable(mat({{1, 2}}));
    t.backward(ad::sum(ad::mul(x, x)));
    CHECK(x.grad() == mat({{2, 4}}));
    // Leaf gradients accumulate until reset.
    t.backward(ad::sum(ad::mul(x, x)));
    CHECK(x.grad() == mat({{4, 8}}));
    t.zero_grad();
    CHECK(x.grad().size() == 0);
  }
  {
    T t;
    CHECK(code_of([&] { t.backward(V(&t, 0)); }) == ErrorCode::EmptyTape);
    const auto x = t.variable(M::Ones(2, 2));
    CHECK(code_of([&] { t.backward(x); }) == ErrorCode::NotScalar);
  }
}

TEST_CASE("gradient accumulation is linear") {
  Xoshiro256 rng(7);
  const M x0 = random(rng, 3, 4);
  const M w = random(rng, 4, 2);

  const auto loss_a = [&](const V& x, const V& wv) { return ad::sum(ad::tanh(ad::matmul(x, wv))); };
  const auto loss_b = [&](const V& x, const V& wv) { return ad::mean(ad::square(ad::matmul(ad::sigmoid(x), wv))); };

  T joint;
  const auto xj = joint.variable(x0);
  const auto wj = joint.variable(w);
  joint.backward(ad::add(loss_a(xj, wj), loss_b(xj, wj)));

  T sep;
  const auto xs = sep.variable(x0);
  const auto ws = sep.variable(w);
  sep.backward(loss_a(xs, ws));
  sep.backward(loss_b(xs, ws));

  CHECK((xj.grad() - xs.grad()).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((wj.grad() - ws.grad()).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("finite_diff_check self-tests") {
  Xoshiro256 rng(8);
  const ad::TensorFunction<double> total = [](T&, const Vs& v) { return ad::sum(v[0]); };
  // A multi-element sum rounds at ulp(sum) / 2 eps, so larger inputs only reach ~1e-9.
  for (double x : {-3.7, 0.0, 1.0, 123.456}) CHECK(ad::finite_diff_check<double>(total, {M::Constant(1, 1, x)}, 1e-6) < 1e-10);
  CHECK(ad::finite_diff_check<double>(total, {random(rng, 3, 3) * 1e-3}, 1e-6) < 1e-10);
  CHECK(ad::finite_diff_check<double>(total, {random(rng, 3, 3)}, 1e-6) < 1e-8);
  const double sig = ad::finite_diff_check<double>([](T&, const Vs& v) { return ad::sum(ad::sigmoid(v[0])); },
                                                   {random(rng, 3, 3)}, 1e-6);
  CHECK(sig < 1e-6);
  // A wrong backward rule is caught.
  const auto broken = [](T& t, const Vs& v) {
    M y = v[0].value().array().square();
    const auto out = t.record(std::move(y), {v[0]}, [x = v[0]](T& tape, const M& g) { tape.accumulate(x, g); });
    return ad::sum(out);
  };
  CHECK(ad::finite_diff_check<double>(broken, {random(rng, 2, 2)}, 1e-6) > 0.1);
}

TEST_CASE("every primitive and layer passes gradcheck over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& row : run_gradcheck_suite(seed)) {
      if (row.name.rfind("hydronet_loss", 0) == 0) continue;  // covered in the model tests
      INFO("seed " << seed << " op " << row.name);
      CHECK(row.max_rel_error < 1e-4);
    }
  }
}
