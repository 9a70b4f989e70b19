// Acceptance suite: one test case per criterion, each printing a single
// pass/fail line. Tolerances are pinned here, not configurable.

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oracle_helpers.hpp"
#include "splitplot/adjustment.hpp"
#include "splitplot/cli.hpp"
#include "splitplot/chi2.hpp"
#include "splitplot/inference.hpp"
#include "splitplot/moments.hpp"
#include "splitplot/rerandomize.hpp"
#include "splitplot/samplers.hpp"
#include "splitplot/simulate.hpp"

using namespace splitplot;

namespace {

struct Criterion {
  std::string label;
  std::vector<std::string> failures;

  void check(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void finish(double seconds) {
    std::printf("[%s] %s (%.1f s)%s\n", label.c_str(),
                failures.empty() ? "PASS" : "FAIL", seconds,
                failures.empty() ? "" : ":");
    for (const auto& f : failures) std::printf("    - %s\n", f.c_str());
    std::fflush(stdout);
    INFO(label);
    REQUIRE(failures.empty());
  }
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();
};

// Monte-Carlo standard error of the sample standard deviation under an
// approximately normal sampling distribution: sd / sqrt(2 (R - 1)).
double sd_mc_se(const MetricCell& cell) {
  return *cell.sd / std::sqrt(2.0 * (cell.reps - 1));
}

// Standard error of ese = mean(se) - sd, treating the two parts as
// independent (conservative under their positive correlation).
double ese_mc_se(const MetricCell& cell) {
  const double se_mean = cell.se_std / std::sqrt(cell.reps);
  const double se_sd = sd_mc_se(cell);
  return std::sqrt(se_mean * se_mean + se_sd * se_sd);
}

const StudyMetrics& sim1_wholeplot_metrics() {
  static const StudyMetrics metrics = [] {
    StudyConfig cfg = make_study_config(Scenario::sim1_wholeplot, 20260810);
    cfg.threads = 2;
    return run_study(cfg);
  }();
  return metrics;
}

const StudyMetrics& sim1_varying_metrics() {
  static const StudyMetrics metrics = [] {
    StudyConfig cfg = make_study_config(Scenario::sim1_varying, 20260811);
    cfg.threads = 2;
    return run_study(cfg);
  }();
  return metrics;
}

const StudyMetrics& supp_s1_metrics() {
  static const StudyMetrics metrics = [] {
    StudyConfig cfg = make_study_config(Scenario::supp_s1, 20260812);
    cfg.threads = 2;
    return run_study(cfg);
  }();
  return metrics;
}

std::string cell_id(const MetricRow& row) {
  return row.estimator + (row.scheme == "rnd" ? ".rnd" : "") + "/" +
         row.effect;
}

}  // namespace

TEST_CASE("criterion 1: enumeration exactness oracle") {
  Criterion crit{"criterion 1: exactness oracle"};
  Timer timer;
  const ValidatedDesign design = oracle::toy_design();
  const double w = design.whole_plots();
  const PopulationData pop = oracle::toy_population(design, 1, 2);
  const Eigen::MatrixXd xc =
      pop.design_covariates.rowwise() -
      pop.design_covariates.colwise().mean().eval();
  const Eigen::Vector3d tau =
      contrast_matrix() * pop.potential->colwise().mean().transpose();
  const SigmaBlocks sigma =
      sigma_population(design, pop, Flavor::horvitz_thompson);
  const PopulationMoments moments = population_moments(design, pop);

  auto tau_ht = [&](const Assignment& asg) -> Eigen::VectorXd {
    const Eigen::VectorXd y = observe_outcomes(design, asg, *pop.potential);
    return effect_estimate(
        arm_estimate(y, asg, design, Flavor::horvitz_thompson));
  };
  auto tau_x = [&](const Assignment& asg) -> Eigen::VectorXd {
    return covariate_contrasts(
        arm_estimate(xc, asg, design, Flavor::horvitz_thompson));
  };

  const Eigen::VectorXd mean_tau = oracle::enumeration_mean(design, tau_ht);
  crit.check((mean_tau - tau).cwiseAbs().maxCoeff() < 1e-12,
             "E[tau_ht] = tau to 1e-12");
  crit.check(
      oracle::enumeration_mean(design, tau_x).cwiseAbs().maxCoeff() < 1e-12,
      "E[tau_ht_x] = 0 to 1e-12");
  crit.check((w * oracle::enumeration_cov(design, tau_ht) - sigma.tau_tau)
                     .cwiseAbs()
                     .maxCoeff() < 1e-10,
             "W cov(tau_ht) equals G(H o S + Psi)G' to 1e-10");
  crit.check((w * oracle::enumeration_cov(design, tau_x) - sigma.xx)
                     .cwiseAbs()
                     .maxCoeff() < 1e-10,
             "W cov(tau_ht_x) equals the kron closed form to 1e-10");

  Eigen::MatrixXd mean_cross = Eigen::MatrixXd::Zero(3, sigma.xx.rows());
  Eigen::Matrix3d mean_tt = Eigen::Matrix3d::Zero();
  enumerate_assignments(design, [&](const Assignment& asg, double prob) {
    const Eigen::VectorXd y = observe_outcomes(design, asg, *pop.potential);
    mean_cross += prob * sigma_tau_cov_estimated(design, asg, y,
                                                 pop.design_covariates,
                                                 Flavor::horvitz_thompson);
    mean_tt += prob * sigma_tau_tau_estimated(design, asg, y,
                                              Flavor::horvitz_thompson);
  });
  crit.check((mean_cross - sigma.tau_x).cwiseAbs().maxCoeff() < 1e-10,
             "E[estimated cross block] is exact to 1e-10");
  const Eigen::Matrix3d gap = contrast_matrix() *
                              moments.outcome.between_ht *
                              contrast_matrix().transpose();
  crit.check(
      (mean_tt - sigma.tau_tau - gap).cwiseAbs().maxCoeff() < 1e-10,
      "E[estimated tau-tau] - Sigma equals G S_ht G' to 1e-10");
  crit.check(timer.seconds() < 1.0, "runs in under one second");
  crit.finish(timer.seconds());
}

TEST_CASE("criterion 2: per-realization identity suite") {
  Criterion crit{"criterion 2: identity suite"};
  Timer timer;
  crit.check((contrast_matrix() * Eigen::Vector4d::Ones())
                     .cwiseAbs()
                     .maxCoeff() == 0.0,
             "G 1 = 0 exactly");

  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    DesignSpec spec;
    spec.w1 = 15;
    RngStream gen(seed, 100);
    for (int w = 0; w < 50; ++w)
      spec.plots.push_back(
          PlotSize{4 + static_cast<int>(gen.bounded(5)),
                   2 + static_cast<int>(gen.bounded(2))});
    const ValidatedDesign design = validate_design(spec);
    const int n = design.units();
    Eigen::MatrixXd v(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      v(i, 0) = gen.normal(0.5, 1.0);
      v(i, 1) = gen.normal(-0.2, 2.0);
      y[i] = 1.0 + 0.4 * v(i, 0) - 0.8 * v(i, 1) + gen.uniform(-1.0, 1.0);
    }
    RngStream draw(seed, 101);
    const Assignment asg = randomize(design, draw);
    const Eigen::MatrixXd empty(n, 0);

    const Eigen::Vector4d y_ht =
        arm_estimate(y, asg, design, Flavor::horvitz_thompson).values.col(0);
    const Eigen::Vector4d y_haj =
        arm_estimate(y, asg, design, Flavor::hajek).values.col(0);
    crit.check((fit_ag_lin(design, asg, y, empty, false).beta - y_ht)
                       .cwiseAbs()
                       .maxCoeff() < 1e-10,
               "beta_ag recovers the HT arm means to 1e-10");
    crit.check((fit_wls_lin(design, asg, y, empty).beta - y_haj)
                       .cwiseAbs()
                       .maxCoeff() < 1e-10,
               "beta_wls recovers the Hajek arm means to 1e-10");

    const Eigen::MatrixXd vc = v.rowwise() - v.colwise().mean().eval();
    const RegressionFit ag = fit_ag_lin(design, asg, y, v, false);
    const RegressionFit wls = fit_wls_lin(design, asg, y, v);
    const ArmMeans v_ht =
        arm_estimate(vc, asg, design, Flavor::horvitz_thompson);
    const ArmMeans v_haj = arm_estimate(vc, asg, design, Flavor::hajek);
    double worst = 0.0;
    for (int z = 0; z < 4; ++z) {
      worst = std::max(
          worst, std::fabs(ag.beta[z] - (y_ht[z] -
                                         v_ht.values.row(z).dot(ag.gamma[z]))));
      worst = std::max(
          worst,
          std::fabs(wls.beta[z] -
                    (y_haj[z] - v_haj.values.row(z).dot(wls.gamma[z]))));
    }
    crit.check(worst < 1e-8,
               "intercepts decompose through adjusted arm means to 1e-8");

    const Eigen::VectorXd y_shift = y.array() + 3.75;
    const Eigen::Vector4d haj_shift =
        arm_estimate(y_shift, asg, design, Flavor::hajek).values.col(0);
    const Eigen::Vector4d expected =
        y_haj + Eigen::Vector4d::Constant(3.75);
    crit.check((haj_shift - expected).cwiseAbs().maxCoeff() < 1e-12,
               "Hajek arm means are location equivariant");
  }
  crit.finish(timer.seconds());
}

TEST_CASE("criterion 3: distributional suite") {
  Criterion crit{"criterion 3: distributional suite"};
  Timer timer;

  // Shared million-draw batch at the operating point 3L = 3, alpha = 0.01.
  const int k = 3;
  const double d = chi2_quantile(k, 0.01);
  const double r = r_factor(k, d);
  RngStream rng(909, 0);
  const int n_big = 1000000;
  const PhiBatch batch = draw_phi_batch(n_big, k, d, rng);

  {
    const Eigen::MatrixXd centered =
        batch.zeta.rowwise() - batch.zeta.colwise().mean().eval();
    const Eigen::MatrixXd cov = centered.transpose() * centered / n_big;
    double worst = 0.0;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        worst = std::max(worst,
                         std::fabs(cov(i, j) - (i == j ? r : 0.0)));
    crit.check(worst < 0.02 * r,
               "truncated-normal covariance within 2% of r I over 1e6 draws");
  }

  // Acceptance rates on the full-scale populations.
  {
    RngStream pop_stream(20260810, 0);
    const GeneratedStudy varying = generate_population(
        scenario_params(Scenario::sim1_varying), pop_stream);
    RngStream pop_stream2(20260810, 1);
    const GeneratedStudy wholeplot = generate_population(
        scenario_params(Scenario::sim1_wholeplot), pop_stream2);
    const int n_draws = 100000;
    auto rate = [&](const GeneratedStudy& study, Flavor flavor) {
      const BalanceCriterion criterion = build_criterion(
          study.design, study.population.design_covariates, flavor, 0.01);
      RngStream draw(42, 7);
      Assignment asg;
      int accepted = 0;
      for (int i = 0; i < n_draws; ++i) {
        randomize_into(study.design, draw, asg);
        if (mahalanobis(criterion, asg, study.design) <= criterion.threshold)
          ++accepted;
      }
      return accepted / static_cast<double>(n_draws);
    };
    const double rate_ht = rate(varying, Flavor::horvitz_thompson);
    const double rate_haj = rate(varying, Flavor::hajek);
    const double rate_degenerate =
        rate(wholeplot, Flavor::horvitz_thompson);
    crit.check(rate_ht >= 0.005 && rate_ht <= 0.02,
               "HT acceptance rate in [0.005, 0.02] at W = 600 (got " +
                   std::to_string(rate_ht) + ")");
    crit.check(rate_haj >= 0.005 && rate_haj <= 0.02,
               "Hajek acceptance rate in [0.005, 0.02] at W = 600 (got " +
                   std::to_string(rate_haj) + ")");
    crit.check(
        rate_degenerate >= 0.005 && rate_degenerate <= 0.02,
        "acceptance rate stays nominal under whole-plot covariates (got " +
            std::to_string(rate_degenerate) + ")");

    // Convolution covariance and the monte-carlo radius from estimated
    // blocks on one accepted assignment of the varying-covariate design.
    const BalanceCriterion criterion =
        build_criterion(varying.design,
                        varying.population.design_covariates,
                        Flavor::horvitz_thompson, 0.01);
    RngStream draw(43, 8);
    const RerandomizeResult accepted =
        rerandomize(varying.design, criterion, draw);
    const Eigen::VectorXd y = observe_outcomes(
        varying.design, accepted.assignment, *varying.population.potential);
    const Eigen::MatrixXd xx =
        sigma_xx(varying.design,
                 covariate_moments(varying.design,
                                   varying.population.design_covariates),
                 Flavor::horvitz_thompson);
    const SigmaBlocks blocks = sigma_estimated(
        varying.design, accepted.assignment, y,
        varying.population.design_covariates, xx, Flavor::horvitz_thompson);
    const LimitLawSampler sampler =
        make_limit_sampler(blocks, criterion.threshold, 100000);
    const Eigen::MatrixXd phi = phi_from_batch(sampler, batch);
    const Eigen::MatrixXd centered =
        phi.rowwise() - phi.colwise().mean().eval();
    const Eigen::Matrix3d cov = centered.transpose() * centered / n_big;
    const Eigen::Matrix3d target =
        blocks.perp + r_factor(criterion.rank, criterion.threshold) *
                          blocks.parallel;
    const double scale = target.cwiseAbs().maxCoeff();
    crit.check((cov - target).cwiseAbs().maxCoeff() < 0.03 * scale,
               "cov(phi) = perp + r parallel within 3% over 1e6 draws");

    // c_hat <= chi2 within three monte-carlo standard errors.
    const double xi = 0.05;
    const int n_c = 100000;
    const auto inv = try_inverse_spd(blocks.perp);
    crit.check(inv.has_value(), "estimated perp block is invertible");
    if (inv) {
      std::vector<double> quad(n_c);
      for (int i = 0; i < n_c; ++i) {
        const Eigen::Vector3d row = phi.row(i).transpose();
        quad[static_cast<size_t>(i)] = row.dot(inv->inverse * row);
      }
      std::vector<double> sorted = quad;
      std::sort(sorted.begin(), sorted.end());
      auto quantile_at = [&](double p) {
        return sorted[static_cast<size_t>(
            std::min<double>(std::ceil(p * n_c) - 1, n_c - 1))];
      };
      const double c_hat = quantile_at(1.0 - xi);
      const double density = 2.0 * 0.005 /
                             (quantile_at(1.0 - xi + 0.005) -
                              quantile_at(1.0 - xi - 0.005));
      const double mc_se =
          std::sqrt(xi * (1.0 - xi) / n_c) / std::max(density, 1e-9);
      const double limit = chi2_quantile(3, 1.0 - xi) + 3.0 * mc_se;
      crit.check(c_hat <= limit,
                 "c_hat(0.95) <= chi2_{3,0.95} + 3 mc-se (got " +
                     std::to_string(c_hat) + " vs " + std::to_string(limit) +
                     ")");
    }
  }
  crit.check(timer.seconds() < 120.0, "runs in under two minutes");
  crit.finish(timer.seconds());
}

TEST_CASE("criterion 4: first simulation reproduction") {
  Criterion crit{"criterion 4: primary simulation reproduction"};
  Timer timer;
  const StudyMetrics& m = sim1_wholeplot_metrics();
  crit.check(m.replication_failures.empty(), "no replication failures");

  const std::vector<std::string> effects = {"A", "B", "AB"};
  for (const auto& effect : effects) {
    for (const std::string flavor : {"ht", "haj"}) {
      const MetricCell* rnd = m.find(flavor, "rnd", effect);
      const MetricCell* rr = m.find(flavor, "rr", effect);
      crit.check(rnd != nullptr && rr != nullptr, "cells exist");
      if (rnd && rr)
        crit.check(*rr->sd < *rnd->sd,
                   "sd(" + flavor + " | M) < sd(" + flavor +
                       ".rnd) for effect " + effect);
    }
    const MetricCell* best = m.find("ht.L.a", "rr", effect);
    crit.check(best != nullptr, "ht.L.a cell exists");
    if (!best) continue;
    for (const auto& row : m.rows) {
      if (row.effect != effect) continue;
      if (row.estimator == "ht.L.a") continue;
      const double slack =
          2.0 * std::sqrt(sd_mc_se(*best) * sd_mc_se(*best) +
                          sd_mc_se(row.cell) * sd_mc_se(row.cell));
      crit.check(*best->sd <= *row.cell.sd + slack,
                 "sd(ht.L.a) minimal vs " + cell_id(row) + " (" +
                     std::to_string(*best->sd) + " vs " +
                     std::to_string(*row.cell.sd) + ")");
    }
  }
  for (const auto& row : m.rows) {
    crit.check(row.cell.coverage >= 0.93,
               "coverage >= 0.93 for " + cell_id(row) + " (got " +
                   std::to_string(row.cell.coverage) + ")");
    crit.check(*row.cell.ese >= -2.0 * ese_mc_se(row.cell),
               "mean ese >= -2 mc-se for " + cell_id(row) + " (got " +
                   std::to_string(*row.cell.ese) + ")");
  }
  crit.finish(timer.seconds());
}

TEST_CASE("criterion 5: second simulation and supplementary reproduction") {
  Criterion crit{"criterion 5: varying-covariate and supplementary reproduction"};
  Timer timer;

  const StudyMetrics& varying = sim1_varying_metrics();
  const StudyMetrics& supp = supp_s1_metrics();
  crit.check(varying.replication_failures.empty() &&
                 supp.replication_failures.empty(),
             "no replication failures");

  const std::vector<std::string> effects = {"A", "B", "AB"};
  // (a) projection never hurts, per effect within 2 mc standard errors.
  auto check_projection = [&](const StudyMetrics& m, const std::string& name,
                              const std::string& flavor) {
    for (const auto& effect : effects) {
      const MetricCell* base = m.find(flavor, "rr", effect);
      const MetricCell* proj = m.find(flavor + ".P", "rr", effect);
      if (base == nullptr || proj == nullptr) continue;
      const double slack =
          2.0 * std::sqrt(sd_mc_se(*base) * sd_mc_se(*base) +
                          sd_mc_se(*proj) * sd_mc_se(*proj));
      crit.check(*proj->sd <= *base->sd + slack,
                 name + ": sd(" + flavor + ".P) <= sd(" + flavor +
                     ") for effect " + effect + " (" +
                     std::to_string(*proj->sd) + " vs " +
                     std::to_string(*base->sd) + ")");
    }
  };
  check_projection(varying, "varying", "ht");
  check_projection(varying, "varying", "haj");
  check_projection(supp, "supplement", "ht");

  // (b) in the supplementary setting the interacted regression hurts on at
  // least one effect by two mc standard errors.
  bool regression_hurts = false;
  for (const auto& effect : effects) {
    const MetricCell* base = supp.find("ht", "rr", effect);
    const MetricCell* reg = supp.find("ht.L", "rr", effect);
    if (base == nullptr || reg == nullptr) continue;
    const double slack =
        2.0 * std::sqrt(sd_mc_se(*base) * sd_mc_se(*base) +
                        sd_mc_se(*reg) * sd_mc_se(*reg));
    if (*reg->sd > *base->sd + slack) regression_hurts = true;
  }
  crit.check(regression_hurts,
             "supplement: sd(ht.L) exceeds sd(ht) by >= 2 mc-se on some "
             "effect");

  // (c) coverage everywhere.
  for (const auto* m : {&varying, &supp})
    for (const auto& row : m->rows)
      crit.check(row.cell.coverage >= 0.93,
                 std::string(m == &supp ? "supplement " : "varying ") +
                     "coverage >= 0.93 for " + cell_id(row) + " (got " +
                     std::to_string(row.cell.coverage) + ")");
  crit.finish(timer.seconds());
}

TEST_CASE("criterion 6: byte-identical outputs") {
  Criterion crit{"criterion 6: determinism"};
  Timer timer;
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "splitplot_acceptance";
  fs::create_directories(dir);
  const std::string config_path = (dir / "cfg.json").string();
  {
    std::ofstream cfg(config_path);
    cfg << R"({"seed": 99, "scenario": "sim1-wholeplot", "replications": 50,
               "mc_size": 20000, "threads": 2})";
  }
  auto run_once = [&](const std::string& out_name) {
    std::ostringstream out, err;
    const int code = cli::run_main({"simulate", "--config", config_path,
                                    "--out", (dir / out_name).string()},
                                   out, err);
    REQUIRE(code == 0);
    std::ifstream in(dir / out_name, std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
  };
  const std::string first = run_once("a.csv");
  const std::string second = run_once("b.csv");
  crit.check(!first.empty(), "metrics file is nonempty");
  crit.check(first == second,
             "identical (config, seed) produce byte-identical files");
  crit.finish(timer.seconds());
}
