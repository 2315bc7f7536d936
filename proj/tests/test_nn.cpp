#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "support.hpp"
#include "tmcl/errors.hpp"
#include "tmcl/nn.hpp"
#include "tmcl/rng.hpp"

using namespace tmcl;
using namespace tmcl::nn;

namespace {

DenseNet random_net(const std::vector<Eigen::Index>& widths, Rng& rng) {
  DenseNet net = DenseNet::make(widths, Activation::Swish, Activation::Identity, rng);
  std::vector<double> p(net.parameter_count());
  for (auto& v : p) v = rng.uniform(-1.0, 1.0);
  net.read_parameters(p);
  return net;
}

// Loss used for the finite-difference checks: Gaussian NLL of a head on top of a net.
double composite_loss(const DenseNet& net, const GaussianHead& head, const Eigen::MatrixXd& x,
                      const Eigen::MatrixXd& target) {
  const auto out = head.forward_batch(net.forward_batch(x));
  double total = 0.0;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    total += gaussian_nll_log_variance(out.mean.col(c), out.log_variance.col(c), target.col(c));
  }
  return total;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST_CASE("swish values") {
  CHECK(swish(0.0) == 0.0);
  CHECK(swish(1.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
  CHECK(swish(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  CHECK(std::abs(swish(20.0) - 20.0) < 1e-7);
  CHECK(std::isfinite(swish(-1000.0)));
  CHECK(std::isfinite(swish(1000.0)));
}

TEST_CASE("swish derivative matches finite differences") {
  for (double x : {-6.0, -1.3, 0.0, 0.4, 2.5, 9.0}) {
    const double h = 1e-6;
    const double fd = (swish(x + h) - swish(x - h)) / (2 * h);
    CHECK(swish_derivative(x) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("dense forward examples") {
  DenseLayer identity = testing::identity_layer(2);
  DenseNet id_net({identity});
  const Eigen::VectorXd y = id_net.forward(Eigen::Vector2d(1, 2));
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);

  DenseLayer l = DenseLayer::zeros(2, 2, Activation::Identity);
  l.weight << 2, 0, 0, 3;
  l.bias << 1, 1;
  const Eigen::VectorXd z = DenseNet({l}).forward(Eigen::Vector2d(1, 1));
  CHECK(z[0] == 3.0);
  CHECK(z[1] == 4.0);

  DenseNet zero({DenseLayer::zeros(3, 4, Activation::Swish), DenseLayer::zeros(4, 2, Activation::Swish)});
  const Eigen::VectorXd w = zero.forward(Eigen::Vector3d(5, -7, 0.25));
  CHECK(w.isZero(0.0));
}

TEST_CASE("shape mismatches are configuration errors") {
  CHECK_THROWS_AS(DenseNet({DenseLayer::zeros(3, 4, Activation::Swish), DenseLayer::zeros(5, 2, Activation::Swish)}),
                  ConfigurationError);
  DenseNet net({DenseLayer::zeros(3, 4, Activation::Swish)});
  CHECK_THROWS_AS(net.forward(Eigen::Vector2d(1, 2)), ConfigurationError);
  std::vector<double> wrong(net.parameter_count() + 1);
  CHECK_THROWS_AS(net.read_parameters(wrong), ConfigurationError);
}

TEST_CASE("gaussian nll examples") {
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  CHECK(gaussian_nll(zero, one, zero) == doctest::Approx(0.9189385332046727).epsilon(1e-14));
  CHECK(gaussian_nll(zero, one, one) == doctest::Approx(1.4189385332046727).epsilon(1e-14));
  CHECK(gaussian_nll(zero, 2.0 * one, zero) == doctest::Approx(0.5 * std::log(4 * M_PI)).epsilon(1e-14));
  CHECK(gaussian_nll(zero, 2.0 * one, zero) == doctest::Approx(1.2655121234846454).epsilon(1e-14));
  CHECK(gaussian_nll_log_variance(zero, zero, one) == doctest::Approx(1.4189385332046727).epsilon(1e-14));

  CHECK_THROWS_AS(gaussian_nll(zero, zero, zero), DomainError);
  CHECK_THROWS_AS(gaussian_nll(zero, -one, zero), DomainError);
}

TEST_CASE("gaussian nll is minimized at the target") {
  Rng rng(3);
  Eigen::VectorXd target(3), var(3);
  for (int i = 0; i < 3; ++i) {
    target[i] = rng.normal();
    var[i] = rng.uniform(0.1, 2.0);
  }
  const double best = gaussian_nll(target, var, target);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd m = target;
    m[trial % 3] += rng.uniform(-1.0, 1.0) * 1e-3 + (trial % 2 ? 1e-6 : -1e-6);
    CHECK(gaussian_nll(m, var, target) > best);
  }
}

TEST_CASE("backward with zero adjoint yields zero gradients") {
  Rng rng(5);
  DenseNet net = random_net({3, 6, 4}, rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 5);
  ForwardCache cache;
  const Eigen::MatrixXd y = net.forward_batch(x, cache);
  std::vector<double> grad(net.parameter_count(), 0.0);
  const Eigen::MatrixXd dx = net.backward(cache, Eigen::MatrixXd::Zero(y.rows(), y.cols()), grad);
  CHECK(testing::max_abs(grad) == 0.0);
  CHECK(dx.isZero(0.0));
}

TEST_CASE("linear layer squared error gradient has the closed form") {
  DenseLayer l = DenseLayer::zeros(3, 2, Activation::Identity);
  l.weight << 0.5, -1.0, 2.0, 0.25, 0.75, -0.5;
  l.bias << 0.1, -0.2;
  DenseNet net({l});
  const Eigen::Vector3d x(1.0, 2.0, -1.5);
  const Eigen::Vector2d target(0.3, -0.7);
  ForwardCache cache;
  const Eigen::MatrixXd pred = net.forward_batch(Eigen::MatrixXd(x), cache);
  const Eigen::VectorXd adj = 2.0 * (pred.col(0) - target);
  std::vector<double> grad(net.parameter_count(), 0.0);
  net.backward(cache, adj, grad);
  // Column-major weight, then bias.
  const Eigen::MatrixXd expected_w = adj * x.transpose();
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < 2; ++r) CHECK(grad[static_cast<std::size_t>(c * 2 + r)] == doctest::Approx(expected_w(r, c)).epsilon(1e-14));
  }
  CHECK(grad[6] == doctest::Approx(adj[0]).epsilon(1e-14));
  CHECK(grad[7] == doctest::Approx(adj[1]).epsilon(1e-14));
}

TEST_CASE("net and gaussian head gradients match central differences") {
  Rng rng(11);
  for (int instance = 0; instance < 10; ++instance) {
    const auto in = static_cast<Eigen::Index>(1 + rng.index(4));
    std::vector<Eigen::Index> widths{in};
    const int layers = 1 + static_cast<int>(rng.index(3));
    for (int l = 0; l < layers; ++l) widths.push_back(static_cast<Eigen::Index>(1 + rng.index(8)));
    DenseNet net = random_net(widths, rng);
    const auto d = static_cast<Eigen::Index>(1 + rng.index(3));
    GaussianHead head = GaussianHead::make(widths.back(), d, rng);
    {
      std::vector<double> hp(head.parameter_count());
      for (auto& v : hp) v = rng.uniform(-1.0, 1.0);
      head.read_parameters(hp);
    }
    const Eigen::Index n = 4;
    Eigen::MatrixXd x(in, n), target(d, n);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();

    ForwardCache cache;
    const Eigen::MatrixXd feat = net.forward_batch(x, cache);
    const auto out = head.forward_batch(feat);
    const Eigen::ArrayXXd inv_var = (-out.log_variance.array()).exp();
    const Eigen::ArrayXXd err = out.mean.array() - target.array();
    const Eigen::MatrixXd mean_adj = err * inv_var;
    const Eigen::MatrixXd lv_adj = 0.5 - 0.5 * err.square() * inv_var;
    std::vector<double> head_grad(head.parameter_count(), 0.0), net_grad(net.parameter_count(), 0.0);
    Eigen::MatrixXd feat_adj = Eigen::MatrixXd::Zero(feat.rows(), feat.cols());
    head.backward(feat, out, mean_adj, lv_adj, head_grad, feat_adj);
    net.backward(cache, feat_adj, net_grad);

    const double h = 1e-5;
    std::vector<double> np(net.parameter_count());
    net.write_parameters(np);
    for (std::size_t i = 0; i < np.size(); ++i) {
      DenseNet plus = net, minus = net;
      auto p = np, m = np;
      p[i] += h;
      m[i] -= h;
      plus.read_parameters(p);
      minus.read_parameters(m);
      const double fd = (composite_loss(plus, head, x, target) - composite_loss(minus, head, x, target)) / (2 * h);
      CHECK(relative_error(net_grad[i], fd) < 1e-4);
    }
    std::vector<double> hp(head.parameter_count());
    head.write_parameters(hp);
    for (std::size_t i = 0; i < hp.size(); ++i) {
      GaussianHead plus = head, minus = head;
      auto p = hp, m = hp;
      p[i] += h;
      m[i] -= h;
      plus.read_parameters(p);
      minus.read_parameters(m);
      const double fd = (composite_loss(net, plus, x, target) - composite_loss(net, minus, x, target)) / (2 * h);
      CHECK(relative_error(head_grad[i], fd) < 1e-4);
    }
  }
}

TEST_CASE("log-variance bounds") {
  const VarianceBounds b;
  CHECK(b.log_min() == doctest::Approx(std::log(1e-8)));
  CHECK(b.log_max() == doctest::Approx(std::log(1e4)));
  for (double raw : {-1e6, -1e3, -30.0, -1.0, 0.0, 1.0, 30.0, 1e3, 1e6}) {
    const double lv = bound_log_variance(raw, b);
    CHECK(std::isfinite(lv));
    CHECK(lv >= b.log_min());
    CHECK(lv <= b.log_max());
    CHECK(std::exp(lv) > 0.0);
  }
  for (double lv : {-15.0, -3.0, 0.0, 2.0, 7.0}) {
    CHECK(bound_log_variance(unbound_log_variance(lv, b), b) == doctest::Approx(lv).epsilon(1e-9));
  }
  for (double raw : {-10.0, -0.5, 0.0, 3.0, 8.0}) {
    const double h = 1e-6;
    const double fd = (bound_log_variance(raw + h, b) - bound_log_variance(raw - h, b)) / (2 * h);
    CHECK(bound_log_variance_derivative(raw, b) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("head variances stay inside the bounds for extreme inputs") {
  Rng rng(2);
  GaussianHead head = GaussianHead::make(3, 2, rng);
  Eigen::MatrixXd x(3, 3);
  x << 1e3, -1e3, 0, -1e3, 1e3, 0, 1e3, 1e3, 0;
  const auto out = head.forward_batch(x);
  const VarianceBounds b;
  for (Eigen::Index i = 0; i < out.log_variance.size(); ++i) {
    const double v = std::exp(out.log_variance.data()[i]);
    CHECK(v >= b.min_variance * (1 - 1e-12));
    CHECK(v <= b.max_variance * (1 + 1e-12));
  }
}

TEST_CASE("adam step examples") {
  AdamState state(1);
  std::vector<double> p{0.0};
  std::vector<double> g{0.0};
  adam_step(p, g, state);
  CHECK(p[0] == 0.0);

  AdamState fresh(1);
  std::vector<double> q{0.0};
  std::vector<double> one{1.0};
  adam_step(q, one, fresh);
  CHECK(q[0] == doctest::Approx(-0.001).epsilon(1e-8));
  CHECK(fresh.step_count() == 1);
  CHECK(fresh.first_moment().size() == 1);
  CHECK(fresh.second_moment().size() == 1);
}

TEST_CASE("adam moves monotonically against a constant gradient") {
  for (double sign : {1.0, -1.0}) {
    AdamState state(2);
    std::vector<double> p{0.5, -0.5};
    std::vector<double> g{2.0 * sign, 0.3 * sign};
    std::vector<double> prev = p;
    for (int step = 0; step < 200; ++step) {
      adam_step(p, g, state);
      for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(sign * (p[i] - prev[i]) < 0.0);
      }
      prev = p;
    }
  }
}

TEST_CASE("adam rejects non-finite results and mismatched sizes") {
  AdamState state(1);
  std::vector<double> p{0.0};
  std::vector<double> g{std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS(adam_step(p, g, state));
  std::vector<double> two{1.0, 2.0};
  AdamState small(1);
  CHECK_THROWS_AS(adam_step(two, two, small), ConfigurationError);
}

TEST_CASE("same seed gives bitwise identical networks and updates") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    DenseNet net = DenseNet::make({3, 5, 2}, Activation::Swish, Activation::Identity, rng);
    Eigen::MatrixXd x(3, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    ForwardCache cache;
    const Eigen::MatrixXd y = net.forward_batch(x, cache);
    std::vector<double> grad(net.parameter_count(), 0.0);
    net.backward(cache, y, grad);
    std::vector<double> p(net.parameter_count());
    net.write_parameters(p);
    AdamState state(p.size());
    adam_step(p, grad, state);
    return p;
  };
  CHECK(run(17) == run(17));
  CHECK(run(17) != run(18));
}

TEST_CASE("softplus is stable and invertible") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
  for (double y : {1e-3, 0.5, 2.0, 40.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
}
