#include <doctest.h>

#include <random>

#include "cladec/linear_theory.hpp"

using namespace cladec::linear;

namespace {

Matrix random_encoder(int k, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix e(k, d);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < d; ++j) e(i, j) = n(rng);
  }
  return e;
}

}  // namespace

TEST_CASE("covariance and mean of a small fixture") {
  Matrix x(3, 2);
  x << 1, 2, 3, 4, 5, 0;
  const Vector m = column_mean(x);
  CHECK(m(0) == doctest::Approx(3.0));
  CHECK(m(1) == doctest::Approx(2.0));
  const Matrix c = covariance(x);
  CHECK(c(0, 0) == doctest::Approx(8.0 / 3.0));
  CHECK(c(0, 1) == doctest::Approx(-4.0 / 3.0));
  CHECK(c(1, 1) == doctest::Approx(8.0 / 3.0));
}

TEST_CASE("eigenpairs are sorted with a sign convention") {
  Matrix s(2, 2);
  s << 2, 1, 1, 2;
  const auto e = sorted_eigen(s);
  CHECK(e.values(0) == doctest::Approx(3.0));
  CHECK(e.values(1) == doctest::Approx(1.0));
  CHECK(e.vectors(0, 0) == doctest::Approx(std::sqrt(0.5)));
  CHECK(e.vectors(1, 0) == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("diag(4,1): the one-component loss is the trailing eigenvalue") {
  Vector var(2);
  var << 4.0, 1.0;
  const Matrix x = gaussian_data(100000, var, 11);
  const auto coder = pca_encoder(x, 1);
  CHECK(recon_loss_linear(coder, x) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(std::abs(coder.encoder(0, 0)) > 0.99);
  CHECK_FALSE(coder.degenerate);
}

TEST_CASE("closed-form decoder agrees with gradient descent") {
  Vector var(5);
  var << 5, 3, 2, 1, 0.5;
  for (std::uint64_t t = 0; t < 5; ++t) {
    const Matrix x = gaussian_data(300, var, 100 + t);
    const Matrix e = random_encoder(2, 5, 200 + t);
    const Matrix closed = fit_decoder(e, x);
    const Matrix iter = fit_decoder_iterative(e, x);
    CHECK((closed - iter).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("Eckart-Young: no encoder beats PCA") {
  Vector var(6);
  var << 6, 4, 3, 2, 1, 0.5;
  for (std::uint64_t t = 0; t < 100; ++t) {
    const Matrix x = gaussian_data(400, var, 1000 + t);
    const double pca = recon_loss_linear(pca_encoder(x, 2), x);
    const double other = recon_loss_linear(fitted_coder(random_encoder(2, 6, 5000 + t), x), x);
    CHECK(pca <= other + 1e-10);
  }
}

TEST_CASE("decoder fit is invariant to an invertible reparameterization of the code") {
  Vector var(4);
  var << 3, 2, 1, 0.5;
  const Matrix x = gaussian_data(500, var, 3);
  const Matrix e = random_encoder(2, 4, 4);
  Matrix a(2, 2);
  a << 2, 1, -1, 3;
  const Matrix w1 = fitted_coder(e, x).product();
  const Matrix w2 = fitted_coder(a * e, x).product();
  CHECK((w1 - w2).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("singular code covariance is rejected") {
  Vector var(3);
  var << 1, 1, 1;
  const Matrix x = gaussian_data(50, var, 1);
  Matrix e(2, 3);
  e << 1, 0, 0, 2, 0, 0;
  CHECK_THROWS_AS(fit_decoder(e, x), std::domain_error);
  CHECK_THROWS(pca_encoder(x, 0));
  CHECK_THROWS(pca_encoder(x, 4));
}

TEST_CASE("regression encoders") {
  Vector var(3);
  var << 4, 2, 1;
  Matrix x = gaussian_data(400, var, 8);
  const Vector target = 2.0 * x.col(0) - x.col(2);
  const auto fit = regression_encoder(x, target);
  CHECK(fit.encoder(0) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(fit.encoder(2) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK_FALSE(fit.rank_deficient);

  Matrix dup(400, 4);
  dup << x, x.col(0);
  const auto d = regression_encoder(dup, target);
  CHECK(d.rank_deficient);
  CHECK(d.encoder(0) == doctest::Approx(d.encoder(3)).epsilon(1e-9));
}

TEST_CASE("theory report passes") {
  for (std::uint64_t seed : {0u, 1u}) {
    for (const auto& c : theory_report(seed)) {
      INFO(c.name << ": " << c.detail);
      CHECK(c.passed);
    }
  }
}
