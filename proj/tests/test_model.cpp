#include <doctest.h>

#include <cmath>
#include <cstring>

#include "helpers.hpp"
#include "homoflow/loss.hpp"

using namespace homoflow;
using testing::gaussian;

namespace {

Dataset make_data(Index d, Index n, std::mt19937_64& rng) { return Dataset(gaussian(d, n, rng), gaussian(n, rng)); }

struct Family {
  const char* name;
  Model model;
  int degree;
};

std::vector<Family> families() {
  return {
      {"ff_relu2", Model(FeedForwardNet{{3, 4, 1}, {2, 0.0, std::nullopt}}), 3},
      {"ff_square", Model(FeedForwardNet{{3, 5, 1}, {2, -1.0, std::nullopt}}), 3},
      {"ff_leaky", Model(FeedForwardNet{{3, 4, 2, 1}, {1, 0.2, std::nullopt}}), 3},
      {"ff_deep_square", Model(FeedForwardNet{{2, 3, 3, 1}, {2, -1.0, std::nullopt}}), 7},
      {"monomial_2", Model(MonomialNet{2, 3, false}), 2},
      {"monomial_3_rect", Model(MonomialNet{3, 3, true}), 3},
      {"single_neuron", Model(SingleNeuron{3, {2, 0.0, std::nullopt}}), 2},
  };
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("evaluate_batch examples") {
    Model mono(MonomialNet{2, 2, false});
    const Dataset I2(Matrix::Identity(2, 2), Vector::Zero(2));
    CHECK(evaluate_batch(mono, Eigen::Vector2d(1, 0), I2).isApprox(Eigen::Vector2d(1, 0)));
    CHECK(evaluate_batch(mono, Eigen::Vector2d(2, 1), I2).isApprox(Eigen::Vector2d(4, 1)));

    Model relu2(FeedForwardNet{{2, 1, 1}, {2, 0.0, std::nullopt}});
    const Dataset one(Eigen::Vector2d(-1, 0), Vector::Constant(1, 0.0));
    CHECK(evaluate_batch(relu2, Eigen::Vector3d(1, 0, 1), one)(0) == 0.0);
  }

  TEST_CASE("jacobian examples") {
    Model mono(MonomialNet{2, 2, false});
    const Dataset I2(Matrix::Identity(2, 2), Vector::Zero(2));
    Matrix expect(2, 2);
    expect << 2, 0, 0, 4;
    CHECK(jacobian(mono, Eigen::Vector2d(1, 2), I2).isApprox(expect));

    // Squared-ReLU neuron with every pre-activation negative has zero Jacobian.
    Model neuron(SingleNeuron{2, {2, 0.0, std::nullopt}});
    Matrix X(2, 3);
    X << 1, 2, 0.5, 0.1, -0.3, 1;
    const Dataset d(X, Vector::Zero(3));
    CHECK(jacobian(neuron, Eigen::Vector2d(-1, -0.1), d).isZero(0.0));
  }

  TEST_CASE("jacobian matches central differences at 100 random points per family") {
    std::mt19937_64 rng(11);
    for (auto& fam : families()) {
      const Dataset data = make_data(fam.model.input_dim(), 6, rng);
      double worst = 0.0;
      for (int trial = 0; trial < 100; ++trial) {
        const Vector w = gaussian(fam.model.num_weights(), rng, 0.7);
        const Matrix J = fam.model.jacobian(w, data.X);
        const Matrix Jfd = testing::fd_jacobian([&](const Vector& v) { return fam.model.evaluate(v, data.X); }, w);
        worst = std::max(worst, testing::rel_err(J, Jfd));
        // The pullback agrees with J^T r.
        const Vector r = gaussian(data.size(), rng);
        CHECK((fam.model.vjp(w, data.X, r) - J.transpose() * r).norm() <= 1e-10 * (1.0 + J.norm() * r.norm()));
      }
      INFO(fam.name);
      CHECK(worst <= 1e-5);
    }
  }

  TEST_CASE("analytic weighted Hessians match differences of the pullback") {
    std::mt19937_64 rng(5);
    for (auto& fam : families()) {
      const Dataset data = make_data(fam.model.input_dim(), 5, rng);
      const Vector w = gaussian(fam.model.num_weights(), rng);
      const Vector r = gaussian(data.size(), rng);
      auto H = fam.model.weighted_hessian(w, data.X, r);
      if (!H) continue;
      const Matrix Hfd = testing::fd_jacobian([&](const Vector& v) { return fam.model.vjp(v, data.X, r); }, w);
      INFO(fam.name);
      CHECK(testing::rel_err(*H, Hfd) <= 1e-6);
    }
  }

  TEST_CASE("positive homogeneity, Euler identity, gradient scaling") {
    std::mt19937_64 rng(3);
    for (auto& fam : families()) {
      INFO(fam.name);
      const Dataset data = make_data(fam.model.input_dim(), 8, rng);
      for (int trial = 0; trial < 100; ++trial) {
        const Vector w = gaussian(fam.model.num_weights(), rng, 0.8);
        const Vector h = fam.model.evaluate(w, data.X);
        for (double c : {0.5, 2.0, 3.0}) {
          const Vector hc = fam.model.evaluate(c * w, data.X);
          CHECK((hc - std::pow(c, fam.degree) * h).norm() <= 1e-9 * (1.0 + h.norm()) * std::pow(c, fam.degree));
          const Matrix J = fam.model.jacobian(w, data.X);
          const Matrix Jc = fam.model.jacobian(c * w, data.X);
          CHECK((Jc - std::pow(c, fam.degree - 1) * J).norm() <=
                1e-9 * std::pow(c, fam.degree - 1) * (1.0 + J.norm()));
        }
        const Vector euler = fam.model.jacobian(w, data.X) * w;
        for (Index i = 0; i < h.size(); ++i) CHECK(std::abs(euler(i) - fam.degree * h(i)) <= 1e-8 * (1.0 + std::abs(h(i))));
      }
    }
  }

  TEST_CASE("homogeneity_check detects the degree") {
    const Dataset I2(Matrix::Identity(2, 2), Eigen::Vector2d(4, 1));
    Model ex1(MonomialNet{2, 2, false});
    const auto r = homogeneity_check(ex1, Vector(Eigen::Vector2d(0.3, -1.2)), I2, {1, 2, 3, 4});
    CHECK(r.degree == 2);
    CHECK(r.residual <= 1e-10);

    std::mt19937_64 rng(9);
    Model deep(FeedForwardNet{{3, 4, 4, 1}, {2, -1.0, std::nullopt}});
    const Dataset data = make_data(3, 5, rng);
    const Vector w = gaussian(deep.num_weights(), rng);
    CHECK(homogeneity_check(deep, w, data, {1, 2, 3, 4, 5, 6, 7, 8, 9}).degree == 7);
    CHECK(deep.nominal_degree() == 7);
    const Vector h1 = deep.evaluate(w, data.X), h2 = deep.evaluate(2.0 * w, data.X);
    for (Index i = 0; i < h1.size(); ++i) CHECK(h2(i) / h1(i) == doctest::Approx(128.0).epsilon(1e-9));

    CHECK(deep.evaluate(Vector::Zero(deep.num_weights()), data.X).isZero(0.0));
  }

  TEST_CASE("homogeneity_check reports ties as AmbiguousDegree") {
    Model neuron(SingleNeuron{2, {2, 0.0, std::nullopt}});
    const Dataset d(Matrix::Identity(2, 2), Vector::Ones(2));
    try {
      homogeneity_check(neuron, Eigen::Vector2d(-1, -1), d, {1, 2, 3});
      FAIL("expected AmbiguousDegree");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::AmbiguousDegree);
    }
  }

  TEST_CASE("flatten and unflatten round trip bitwise") {
    std::mt19937_64 rng(1);
    Model m(FeedForwardNet{{4, 3, 2, 1}, {2, 0.0, std::nullopt}});
    const Vector flat = gaussian(m.num_weights(), rng);
    const WeightVector w{flat, m.layout()};
    const auto blocks = unflatten(w);
    REQUIRE(blocks.size() == 3);
    CHECK(blocks[0].rows() == 3);
    CHECK(blocks[0].cols() == 4);
    CHECK(blocks[0](1, 2) == flat(m.layout().blocks[0].index(1, 2)));
    const WeightVector back = flatten(m.layout(), blocks);
    CHECK(back.flat.size() == flat.size());
    CHECK(std::memcmp(back.flat.data(), flat.data(), sizeof(double) * flat.size()) == 0);
    CHECK(back.layout == m.layout());
    CHECK(m.num_weights() == 3 * 4 + 2 * 3 + 1 * 2);
  }

  TEST_CASE("random_direction and scale_init") {
    const Vector a = random_direction(7, 42), b = random_direction(7, 42), c = random_direction(7, 43);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a.norm() == doctest::Approx(1.0).epsilon(1e-15));
    const Vector w0 = Eigen::Vector2d(1, 1) / std::sqrt(2.0);
    const Vector s = scale_init(w0, 0.1);
    CHECK(s(0) == doctest::Approx(0.0707106781).epsilon(1e-9));
    CHECK(s.norm() == doctest::Approx(0.1));
    CHECK(scale_init(w0, 0.0).isZero(0.0));
  }

  TEST_CASE("activation conventions") {
    const Activation leaky{1, 0.1, std::nullopt};
    CHECK(leaky.derivative(0.0) == 0.1);
    CHECK(leaky.value(-2.0) == doctest::Approx(-0.2));
    const Activation custom{1, 0.1, 1.0};
    CHECK(custom.derivative(0.0) == 1.0);
    const Activation square{2, -1.0, std::nullopt};
    CHECK(square.value(-3.0) == 9.0);
    CHECK(square.derivative(-3.0) == -6.0);
    CHECK(square.second_derivative(-3.0) == 2.0);
  }

  TEST_CASE("shape errors") {
    Model m(MonomialNet{2, 2, false});
    CHECK_THROWS_AS(m.evaluate(Vector::Zero(3), Matrix::Identity(2, 2)), Error);
    try {
      m.evaluate(Vector::Zero(2), Matrix::Identity(3, 3));
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DimensionMismatch);
    }
    CHECK_THROWS_AS(Dataset(Matrix::Identity(2, 2), Vector::Zero(3)), Error);
    Matrix bad = Matrix::Identity(2, 2);
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(Dataset(bad, Vector::Zero(2)), Error);
  }
}
