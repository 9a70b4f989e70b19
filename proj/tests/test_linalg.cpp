#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "splitplot/linalg.hpp"
#include "splitplot/rng.hpp"

using namespace splitplot;

namespace {

Matrix random_psd(int dim, RngStream& rng) {
  Matrix b(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) b(i, j) = rng.standard_normal();
  return b * b.transpose();
}

}  // namespace

TEST_CASE("psd square root") {
  SECTION("identity and diagonal cases") {
    REQUIRE((psd_sqrt(Matrix::Identity(3, 3)) - Matrix::Identity(3, 3))
                .cwiseAbs()
                .maxCoeff() < 1e-14);
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 4.0;
    d(1, 1) = 9.0;
    const Matrix s = psd_sqrt(d);
    REQUIRE(s(0, 0) == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(s(1, 1) == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(std::fabs(s(0, 1)) < 1e-14);
  }

  SECTION("reconstruction on random psd matrices up to dim 12") {
    RngStream rng(1234, 0);
    for (int dim : {2, 3, 5, 8, 12}) {
      const Matrix a = random_psd(dim, rng);
      const Matrix s = psd_sqrt(a);
      const double rel =
          (s * s - a).norm() / std::max(a.norm(), 1e-30);
      REQUIRE(rel < 1e-9);
      REQUIRE((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  SECTION("rejects indefinite input") {
    Matrix m = Matrix::Identity(2, 2);
    m(1, 1) = -1.0;
    REQUIRE_THROWS_AS(psd_sqrt(m), NotPsd);
  }

  SECTION("clamps tiny negative eigenvalues") {
    Matrix m = Matrix::Identity(2, 2);
    m(1, 1) = -1e-12;  // within -1e-9 * trace
    const Matrix s = psd_sqrt(m);
    REQUIRE(s(1, 1) == Catch::Approx(0.0).margin(1e-6));
  }
}

TEST_CASE("guarded spd inverse") {
  RngStream rng(77, 0);
  const Matrix a = random_psd(4, rng) + Matrix::Identity(4, 4);
  const auto inv = try_inverse_spd(a);
  REQUIRE(inv.has_value());
  REQUIRE((a * inv->inverse - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <
          1e-10);

  Matrix singular = Matrix::Ones(3, 3);
  REQUIRE_FALSE(try_inverse_spd(singular).has_value());

  const auto isqrt = try_inverse_sqrt_spd(a);
  REQUIRE(isqrt.has_value());
  REQUIRE(((*isqrt) * a * (*isqrt) - Matrix::Identity(4, 4))
              .cwiseAbs()
              .maxCoeff() < 1e-9);
}

TEST_CASE("psd clamp keeps psd inputs untouched") {
  RngStream rng(5, 5);
  const Matrix a = random_psd(3, rng);
  REQUIRE((psd_clamp(a) - a).cwiseAbs().maxCoeff() == 0.0);
  Matrix bad = Matrix::Identity(2, 2);
  bad(0, 0) = -1.0;
  REQUIRE_THROWS_AS(psd_clamp(bad), NotPsd);
}

TEST_CASE("kron identity layout") {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  const Matrix k = kron_identity(a, 2);
  REQUIRE(k.rows() == 4);
  REQUIRE(k(0, 0) == 1.0);
  REQUIRE(k(0, 2) == 2.0);
  REQUIRE(k(1, 3) == 2.0);
  REQUIRE(k(2, 0) == 3.0);
  REQUIRE(k(0, 1) == 0.0);
}
