#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "homoflow/loss.hpp"
#include "homoflow/oracle.hpp"

using namespace homoflow;

TEST_SUITE("loss") {
  TEST_CASE("square and logistic values") {
    const Loss sq{LossKind::Square}, lg{LossKind::Logistic};
    CHECK(sq.value(3.0, 1.0) == 4.0);
    CHECK(sq.first(3.0, 1.0) == 4.0);
    CHECK(sq.second(3.0, 1.0) == 2.0);
    CHECK(lg.value(0.0, 1.0) == doctest::Approx(std::log(2.0)));
    CHECK(lg.first(0.0, -1.0) == doctest::Approx(0.5));
    CHECK(lg.second(0.0, 1.0) == doctest::Approx(0.25));
    CHECK(sq.smoothness() == 2.0);
    CHECK(lg.smoothness() == 0.25);
    CHECK(sq.name() == "square");
    CHECK(lg.name() == "logistic");
  }

  TEST_CASE("derivatives agree with central differences") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-6.0, 6.0);
    for (auto kind : {LossKind::Square, LossKind::Logistic}) {
      const Loss l{kind};
      for (int i = 0; i < 200; ++i) {
        const double p = u(rng);
        const double q = kind == LossKind::Logistic ? (i % 2 ? 1.0 : -1.0) : u(rng);
        const double h = 1e-5;
        CHECK(l.first(p, q) == doctest::Approx((l.value(p + h, q) - l.value(p - h, q)) / (2 * h)).epsilon(1e-7));
        CHECK(l.second(p, q) == doctest::Approx((l.first(p + h, q) - l.first(p - h, q)) / (2 * h)).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("convexity and smoothness over a grid") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-20.0, 20.0);
    for (auto kind : {LossKind::Square, LossKind::Logistic}) {
      const Loss l{kind};
      for (int i = 0; i < 1000; ++i) {
        const double a = u(rng), b = u(rng);
        const double q = kind == LossKind::Logistic ? 1.0 : 0.3;
        // l(b) >= l(a) + l'(a)(b - a)
        CHECK(l.value(b, q) >= l.value(a, q) + l.first(a, q) * (b - a) - 1e-12 * (1.0 + std::abs(l.value(b, q))));
        CHECK(l.second(a, q) >= 0.0);
        CHECK(l.second(a, q) <= l.smoothness() + 1e-15);
      }
    }
  }

  TEST_CASE("target correlation") {
    const Vector y = Eigen::Vector3d(4, -1, 0.5);
    CHECK(target_correlation(Loss{LossKind::Square}, y).isApprox(2.0 * y));
    const Vector s = Eigen::Vector2d(1, -1);
    CHECK(target_correlation(Loss{LossKind::Logistic}, s).isApprox(0.5 * s));
  }

  TEST_CASE("training loss and gradient on the two-coordinate example") {
    const Problem prob = example1_problem();
    CHECK(training_loss(prob, Eigen::Vector2d(0, 0)) == 17.0);
    CHECK(training_loss(prob, Eigen::Vector2d(2, 1)) == 0.0);
    CHECK(training_grad(prob, Eigen::Vector2d(2, 1)).isZero(0.0));
    CHECK(training_grad(prob, Eigen::Vector2d(0, 0)).isZero(0.0));
    // grad = 2 (w_i^2 - y_i) * 2 w_i
    const Vector g = training_grad(prob, Eigen::Vector2d(1, 2));
    CHECK(g(0) == doctest::Approx(2 * (1 - 4) * 2 * 1));
    CHECK(g(1) == doctest::Approx(2 * (4 - 1) * 2 * 2));
  }

  TEST_CASE("training gradient matches differences for a small network") {
    std::mt19937_64 rng(8);
    for (auto kind : {LossKind::Square, LossKind::Logistic}) {
      Model m(FeedForwardNet{{3, 4, 1}, {2, -1.0, std::nullopt}});
      Vector y = testing::gaussian(6, rng);
      if (kind == LossKind::Logistic) y = y.unaryExpr([](double v) { return v >= 0 ? 1.0 : -1.0; });
      const Problem prob(m, Loss{kind}, Dataset(testing::gaussian(3, 6, rng), y));
      for (int i = 0; i < 20; ++i) {
        const Vector w = testing::gaussian(m.num_weights(), rng, 0.6);
        const auto lg = training_loss_and_grad(prob, w);
        CHECK(lg.loss == doctest::Approx(training_loss(prob, w)));
        const Vector fd = testing::fd_gradient([&](const Vector& v) { return training_loss(prob, v); }, w);
        CHECK(testing::rel_err(lg.grad, fd) <= 1e-6);
      }
    }
  }

  TEST_CASE("dead neuron has zero gradient") {
    Model neuron(SingleNeuron{2, {2, 0.0, std::nullopt}});
    const Problem prob(neuron, Loss{LossKind::Square}, Dataset(Matrix::Identity(2, 2), Eigen::Vector2d(1, 1)));
    CHECK(training_grad(prob, Eigen::Vector2d(-1, -2)).isZero(0.0));
    CHECK(training_loss(prob, Eigen::Vector2d(-1, -2)) == 2.0);
  }

  TEST_CASE("parse_loss and label validation") {
    CHECK(parse_loss("square").kind == LossKind::Square);
    CHECK(parse_loss("logistic").kind == LossKind::Logistic);
    try {
      parse_loss("hinge");
      FAIL("expected UnknownLossKind");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnknownLossKind);
    }
    Model m(MonomialNet{2, 2, false});
    CHECK_THROWS_AS(Problem(m, Loss{LossKind::Logistic}, Dataset(Matrix::Identity(2, 2), Eigen::Vector2d(1, 0.5))),
                    Error);
    CHECK_THROWS_AS(Problem(m, Loss{LossKind::Square}, Dataset(Matrix::Identity(3, 3), Vector::Zero(3))), Error);
  }
}
