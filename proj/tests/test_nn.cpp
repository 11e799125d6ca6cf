#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "langsg/errors.hpp"
#include "langsg/grad_check.hpp"
#include "langsg/nn.hpp"

using namespace langsg;

namespace {

template <typename T>
Mat<T> random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Mat<T> m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<T>(rng.normal() * scale);
  return m;
}

// Gradient check of sum(out .* weights) for an MLP in training mode.
GradCheckResult check_mlp(Mlp<double>& mlp, const Mat<double>& x, const Mat<double>& w) {
  auto loss = [&] {
    MlpCache<double> c;
    return (mlp.forward_train(x, c).array() * w.array()).sum();
  };
  mlp.for_each_param([](Param<double>& p) { p.zero_grad(); });
  MlpCache<double> c;
  mlp.forward_train(x, c);
  mlp.backward(w, c);
  std::vector<GradCheckEntry> entries;
  mlp.for_each_param([&](Param<double>& p) {
    entries.push_back({p.name, std::span<double>(p.value.data(), p.value.size()),
                       std::span<const double>(p.grad.data(), p.grad.size())});
  });
  return grad_check(loss, entries, 1e-4);
}

}  // namespace

TEST_CASE("mlp: identity layer passes input through") {
  Rng rng(1);
  Mlp<double> m(MlpSpec::hidden_relu({3, 3}), "m", rng);
  m.weight(0).value = Mat<double>::Identity(3, 3);
  m.bias(0).value.setZero();
  Mat<double> x(1, 3);
  x << 1.5, -2.0, 0.25;
  CHECK(m.forward(x) == x);
}

TEST_CASE("mlp: zero parameters give zero output") {
  Rng rng(2);
  Mlp<float> m(MlpSpec::hidden_relu({4, 8, 5}), "m", rng);
  m.for_each_param([](Param<float>& p) { p.value.setZero(); });
  const auto y = m.forward(random_mat<float>(3, 4, rng));
  CHECK(y.rows() == 3);
  CHECK(y.cols() == 5);
  CHECK(y.isZero());
}

TEST_CASE("mlp: relu of negative preactivation is zero") {
  Rng rng(3);
  Mlp<double> m(MlpSpec::all_relu({2, 2}), "m", rng);
  m.weight(0).value = Mat<double>::Identity(2, 2);
  m.bias(0).value.setConstant(-10);
  Mat<double> x(1, 2);
  x << 1, 2;
  CHECK(m.forward(x).isZero());
}

TEST_CASE("mlp: width mismatch and bad specs") {
  Rng rng(4);
  Mlp<float> m(MlpSpec::hidden_relu({4, 2}), "m", rng);
  CHECK_THROWS_AS(m.forward(Mat<float>::Zero(1, 3)), ShapeError);
  CHECK_THROWS_AS(Mlp<float>(MlpSpec::hidden_relu({4}), "m", rng), ShapeError);
  CHECK_THROWS_AS(Mlp<float>(MlpSpec::hidden_relu({4, 0}), "m", rng), ShapeError);
}

TEST_CASE("mlp: initialisation bounds and names") {
  Rng rng(5);
  Mlp<double> m(MlpSpec::hidden_bn_relu({16, 8, 3}), "head", rng);
  const double bound = std::sqrt(6.0 / 16);
  CHECK(m.weight(0).value.cwiseAbs().maxCoeff() <= bound);
  CHECK(m.bias(0).value.isZero());
  std::vector<std::string> names;
  m.for_each_param([&](Param<double>& p) { names.push_back(p.name); });
  CHECK(names == std::vector<std::string>{"head.l0.weight", "head.l0.bias", "head.l0.bn.gamma", "head.l0.bn.beta",
                                          "head.l1.weight", "head.l1.bias"});
}

TEST_CASE("mlp: gradients match finite differences") {
  Rng rng(6);
  Mlp<double> plain(MlpSpec::hidden_relu({5, 7, 3}), "a", rng);
  auto r = check_mlp(plain, random_mat<double>(4, 5, rng), random_mat<double>(4, 3, rng));
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.checked > 0);

  Mlp<double> bn(MlpSpec::hidden_bn_relu({5, 7, 3}), "b", rng);
  r = check_mlp(bn, random_mat<double>(6, 5, rng), random_mat<double>(6, 3, rng));
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("mlp: input gradient matches finite differences") {
  Rng rng(7);
  Mlp<double> m(MlpSpec::hidden_bn_relu({3, 6, 2}), "m", rng);
  Mat<double> x = random_mat<double>(5, 3, rng);
  const Mat<double> w = random_mat<double>(5, 2, rng);
  MlpCache<double> c;
  m.forward_train(x, c);
  const Mat<double> dx = m.backward(w, c);
  auto loss = [&] {
    MlpCache<double> cc;
    return (m.forward_train(x, cc).array() * w.array()).sum();
  };
  std::vector<GradCheckEntry> e{{"x", std::span<double>(x.data(), x.size()), std::span<const double>(dx.data(), dx.size())}};
  CHECK(grad_check(loss, e, 1e-4).max_rel_error < 1e-6);
}

TEST_CASE("batch norm: train uses batch statistics, eval uses running averages") {
  Rng rng(8);
  Mlp<double> m(MlpSpec::hidden_bn_relu({2, 2, 1}), "m", rng);
  m.weight(0).value = Mat<double>::Identity(2, 2);
  Mat<double> x(4, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  MlpCache<double> c;
  m.forward_train(x, c);
  // column mean 4 / 5, biased variance 5; running stats after one step
  Mat<double> rm, rv;
  m.for_each_buffer([&](const std::string& name, Mat<double>& v) {
    if (name.ends_with("running_mean")) rm = v;
    if (name.ends_with("running_var")) rv = v;
  });
  CHECK(rm(0, 0) == doctest::Approx(0.4));
  CHECK(rm(0, 1) == doctest::Approx(0.5));
  CHECK(rv(0, 0) == doctest::Approx(0.9 + 0.1 * 5.0 * 4.0 / 3.0));
  // normalised pre-activations have zero mean in training mode
  CHECK(c.pre[0].colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
  // eval mode differs from train mode and is deterministic
  const auto e1 = m.forward(x), e2 = m.forward(x);
  CHECK(e1 == e2);
}

TEST_CASE("point encoder: permutation and duplicate invariance") {
  Rng rng(9);
  PointEncoder<float> enc({6, 16, 32}, "pe", rng);
  const Mat<float> pts = random_mat<float>(20, 6, rng);
  const Mat<float> y = enc.forward(pts);
  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  Mat<float> shuffled(20, 6);
  for (int k = 0; k < 20; ++k) shuffled.row(k) = pts.row(perm[k]);
  CHECK(enc.forward(shuffled) == y);

  Mat<float> dup(23, 6);
  dup.topRows(20) = pts;
  dup.row(20) = pts.row(3);
  dup.row(21) = pts.row(3);
  dup.row(22) = pts.row(17);
  CHECK(enc.forward(dup) == y);

  const Mat<float> one = pts.topRows(1);
  Mat<float> many(5, 6);
  for (int k = 0; k < 5; ++k) many.row(k) = one.row(0);
  CHECK(enc.forward(many) == enc.forward(one));
}

TEST_CASE("point encoder: single point matches a scalar recomputation") {
  Rng rng(10);
  PointEncoder<double> enc({7, 5, 4}, "pe", rng);
  const Mat<double> p = random_mat<double>(1, 7, rng);
  const auto& w0 = enc.mlp().weight(0).value;
  const auto& w1 = enc.mlp().weight(1).value;
  const auto& b1 = enc.mlp().bias(1).value;
  std::vector<double> h(5);
  for (int j = 0; j < 5; ++j) {
    double s = enc.mlp().bias(0).value(0, j);
    for (int i = 0; i < 7; ++i) s += p(0, i) * w0(i, j);
    h[j] = s > 0 ? s : 0;
  }
  const Mat<double> y = enc.forward(p);
  for (int j = 0; j < 4; ++j) {
    double s = b1(0, j);
    for (int i = 0; i < 5; ++i) s += h[i] * w1(i, j);
    CHECK(y(0, j) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("point encoder: empty sets are rejected") {
  Rng rng(11);
  PointEncoder<float> enc({6, 8}, "pe", rng);
  CHECK_THROWS_AS(enc.forward(Mat<float>(0, 6)), ShapeError);
  CHECK_THROWS_AS(enc.forward_segments(Mat<float>::Zero(4, 6), {0, 2, 2, 4}), ShapeError);
}

TEST_CASE("point encoder: segments equal separate passes and gradients check") {
  Rng rng(12);
  PointEncoder<double> enc({4, 6, 5}, "pe", rng);
  Mat<double> pts = random_mat<double>(9, 4, rng);
  const std::vector<Eigen::Index> off{0, 3, 4, 9};
  const Mat<double> y = enc.forward_segments(pts, off);
  for (int s = 0; s < 3; ++s) {
    CHECK(y.row(s) == enc.forward(pts.middleRows(off[s], off[s + 1] - off[s])));
  }
  const Mat<double> w = random_mat<double>(3, 5, rng);
  auto loss = [&] { return (enc.forward_segments(pts, off).array() * w.array()).sum(); };
  enc.for_each_param([](Param<double>& p) { p.zero_grad(); });
  PointEncoderCache<double> cache;
  enc.forward_train(pts, off, cache);
  enc.backward(w, cache);
  std::vector<GradCheckEntry> entries;
  enc.for_each_param([&](Param<double>& p) {
    entries.push_back({p.name, std::span<double>(p.value.data(), p.value.size()),
                       std::span<const double>(p.grad.data(), p.grad.size())});
  });
  CHECK(grad_check(loss, entries, 1e-4).max_rel_error < 1e-6);
}

TEST_CASE("adam: one step on a scalar") {
  Param<double> p("w", 1, 1);
  p.value(0, 0) = 0.5;
  p.grad(0, 0) = 1.0;
  Adam<double> opt;
  opt.step({&p}, 0.1);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
  const double expected = 0.5 - 0.1 / (1.0 + 1e-8);
  CHECK(p.value(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.value(0, 0) - 0.5 == doctest::Approx(-0.0999999990).epsilon(1e-9));
  CHECK(opt.steps() == 1);
}

TEST_CASE("adam: matches an independent two-step recurrence") {
  Param<double> p("w", 1, 2);
  p.value << 1.0, -2.0;
  Adam<double> opt;
  const double g1[2] = {0.3, -1.2}, g2[2] = {-0.7, 0.4};
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  for (int t = 1; t <= 2; ++t) {
    const double* g = t == 1 ? g1 : g2;
    p.grad << g[0], g[1];
    opt.step({&p}, 0.01);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK(p.value(0, 0) == doctest::Approx(x[0]).epsilon(1e-12));
  CHECK(p.value(0, 1) == doctest::Approx(x[1]).epsilon(1e-12));
}

TEST_CASE("adam: zero gradient or zero lr leaves parameters unchanged") {
  Param<float> p("w", 2, 2);
  p.value << 1, 2, 3, 4;
  const Mat<float> before = p.value;
  Adam<float> opt;
  opt.step({&p}, 1e-3);
  CHECK(p.value == before);
  p.grad.setConstant(0.5f);
  opt.step({&p}, 0.0);
  CHECK(p.value == before);
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  Param<float> p("backbone.gcn0.g1.l0.weight", 1, 1);
  p.grad(0, 0) = std::numeric_limits<float>::quiet_NaN();
  Adam<float> opt;
  try {
    opt.step({&p}, 1e-3);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("backbone.gcn0.g1.l0.weight") != std::string::npos);
  }
}

TEST_CASE("adam: moment shape mismatch") {
  Param<float> p("w", 1, 2);
  Adam<float> opt;
  opt.step({&p}, 1e-3);
  Param<float> q("w", 2, 2);
  CHECK_THROWS_AS(opt.step({&q}, 1e-3), ShapeError);
}

TEST_CASE("linear_lr: schedule values") {
  CHECK(linear_lr(0, 50, 1e-3) == doctest::Approx(1e-3));
  CHECK(linear_lr(25, 50, 1e-3) == doctest::Approx(5e-4));
  CHECK(linear_lr(50, 50, 1e-3) == 0.0);
  CHECK_THROWS_AS(linear_lr(0, 0, 1e-3), std::invalid_argument);
  CHECK_THROWS_AS(linear_lr(51, 50, 1e-3), std::invalid_argument);
}

TEST_CASE("grad_check: quadratic") {
  std::vector<double> w{3.0};
  const std::vector<double> g{6.0};
  std::vector<GradCheckEntry> e{{"w", w, g}};
  const auto r = grad_check([&] { return w[0] * w[0]; }, e, 1e-8);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("grad_check: detects a wrong gradient") {
  std::vector<double> w{1.0, 2.0};
  const std::vector<double> g{2.0, 5.0};
  std::vector<GradCheckEntry> e{{"w", w, g}};
  const auto r = grad_check([&] { return w[0] * w[0] + w[1] * w[1]; }, e, 1e-4);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_tensor == "w");
}

TEST_CASE("grad_check: relu kink is skipped") {
  std::vector<double> w{0.0, 1.0};
  const std::vector<double> g{0.0, 1.0};
  std::vector<GradCheckEntry> e{{"w", w, g}};
  const auto r = grad_check([&] { return std::max(0.0, w[0]) + std::max(0.0, w[1]); }, e, 1e-6);
  CHECK(r.kinks == 1);
  CHECK(r.checked == 1);
  CHECK(r.passed);
}

TEST_CASE("grad_check: non-finite loss") {
  std::vector<double> w{1.0};
  const std::vector<double> g{0.0};
  std::vector<GradCheckEntry> e{{"w", w, g}};
  CHECK_THROWS_AS(grad_check([] { return std::numeric_limits<double>::infinity(); }, e, 1e-4), TrainingError);
}
