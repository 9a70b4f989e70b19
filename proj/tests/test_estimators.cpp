#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "oracle_helpers.hpp"
#include "splitplot/estimators.hpp"
#include "splitplot/linalg.hpp"
#include "splitplot/population.hpp"

using namespace splitplot;

TEST_CASE("contrast matrix basics") {
  const auto& g = contrast_matrix();
  REQUIRE((g * Eigen::Vector4d::Ones()).cwiseAbs().maxCoeff() == 0.0);
  // Rows mutually orthogonal.
  const Eigen::Matrix3d gram = g * g.transpose();
  REQUIRE(std::fabs(gram(0, 1)) < 1e-15);
  REQUIRE(std::fabs(gram(0, 2)) < 1e-15);
  REQUIRE(std::fabs(gram(1, 2)) < 1e-15);

  ArmMeans arm;
  arm.values = Eigen::Vector4d(0, 0, 1, 1);
  arm.normalizers.setOnes();
  const Eigen::Vector3d tau = effect_estimate(arm);
  REQUIRE(tau[0] == Catch::Approx(1.0));
  REQUIRE(tau[1] == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(tau[2] == Catch::Approx(0.0).margin(1e-15));

  arm.values = Eigen::Vector4d::Ones();
  REQUIRE(effect_estimate(arm).cwiseAbs().maxCoeff() == 0.0);
  arm.values = Eigen::Vector4d::Zero();
  REQUIRE(effect_estimate(arm).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("arm estimates on constants and shifts") {
  const ValidatedDesign d = oracle::toy_design();
  RngStream rng(21, 0);
  const Assignment asg = randomize(d, rng);

  SECTION("constant column recovers one exactly in both flavors") {
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(d.units(), 1);
    const ArmMeans ht = arm_estimate(ones, asg, d, Flavor::horvitz_thompson);
    const ArmMeans haj = arm_estimate(ones, asg, d, Flavor::hajek);
    for (int z = 0; z < 4; ++z) {
      // HT of the constant equals the normalizer; Hajek is exactly one.
      REQUIRE(ht.values(z, 0) == Catch::Approx(ht.normalizers[z]).margin(0));
      REQUIRE(haj.values(z, 0) == Catch::Approx(1.0).margin(1e-14));
    }
  }

  SECTION("Hajek is location equivariant, HT is not") {
    Eigen::MatrixXd y(d.units(), 1);
    RngStream gen(5, 5);
    for (int i = 0; i < d.units(); ++i) y(i, 0) = gen.standard_normal();
    const Eigen::MatrixXd y_shift = y.array() + 2.5;
    const ArmMeans haj = arm_estimate(y, asg, d, Flavor::hajek);
    const ArmMeans haj_shift = arm_estimate(y_shift, asg, d, Flavor::hajek);
    REQUIRE((haj_shift.values - haj.values).cwiseAbs().maxCoeff() ==
            Catch::Approx(2.5).margin(1e-12));
    const ArmMeans ht = arm_estimate(y, asg, d, Flavor::horvitz_thompson);
    const ArmMeans ht_shift =
        arm_estimate(y_shift, asg, d, Flavor::horvitz_thompson);
    bool all_shifted = true;
    for (int z = 0; z < 4; ++z)
      all_shifted = all_shifted &&
                    std::fabs(ht_shift.values(z, 0) - ht.values(z, 0) - 2.5) <
                        1e-12;
    REQUIRE_FALSE(all_shifted);
  }
}

TEST_CASE("enumeration unbiasedness of arm means") {
  DesignSpec spec;
  spec.w1 = 1;
  spec.plots = {{2, 1}, {2, 1}};
  const ValidatedDesign d = validate_design(spec);
  const PopulationData pop = oracle::toy_population(d, 1, 1);

  auto arm_means = [&](const Assignment& asg) -> Eigen::VectorXd {
    const Eigen::VectorXd y = observe_outcomes(d, asg, *pop.potential);
    return arm_estimate(y, asg, d, Flavor::horvitz_thompson).values.col(0);
  };
  const Eigen::VectorXd mean = oracle::enumeration_mean(d, arm_means);
  const Eigen::RowVector4d truth = pop.potential->colwise().mean();
  REQUIRE((mean.transpose() - truth).cwiseAbs().maxCoeff() < 1e-12);

  auto tau_x = [&](const Assignment& asg) -> Eigen::VectorXd {
    const Eigen::MatrixXd xc =
        pop.design_covariates.rowwise() -
        pop.design_covariates.colwise().mean().eval();
    return covariate_contrasts(
        arm_estimate(xc, asg, d, Flavor::horvitz_thompson));
  };
  REQUIRE(oracle::enumeration_mean(d, tau_x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariate contrasts and the linking matrix") {
  const ValidatedDesign d = oracle::toy_design();
  const PopulationData pop = oracle::toy_population(d, 1, 2);
  RngStream rng(31, 0);
  const Assignment asg = randomize(d, rng);

  SECTION("identical arm rows contrast to zero") {
    ArmMeans arm;
    arm.values = Eigen::MatrixXd::Ones(4, 2) * 1.75;
    arm.normalizers.setOnes();
    REQUIRE(covariate_contrasts(arm).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("projection through the linking matrix") {
    const Eigen::MatrixXd xc =
        pop.design_covariates.rowwise() -
        pop.design_covariates.colwise().mean().eval();
    const Eigen::MatrixXd vc =
        pop.analysis_covariates.rowwise() -
        pop.analysis_covariates.colwise().mean().eval();
    for (Flavor f : {Flavor::horvitz_thompson, Flavor::hajek}) {
      const Eigen::VectorXd tx =
          covariate_contrasts(arm_estimate(xc, asg, d, f));
      const Eigen::VectorXd tv =
          covariate_contrasts(arm_estimate(vc, asg, d, f));
      // (I_3 kron C) tau_v = tau_x
      Eigen::MatrixXd i3c = Eigen::MatrixXd::Zero(3, 3 * 2);
      for (int r = 0; r < 3; ++r) i3c.block(r, 2 * r, 1, 2) = pop.linking;
      REQUIRE(((i3c * tv) - tx).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}
