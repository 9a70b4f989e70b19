#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "splitplot/adjustment.hpp"
#include "splitplot/chi2.hpp"
#include "splitplot/design.hpp"
#include "splitplot/errors.hpp"
#include "splitplot/inference.hpp"
#include "splitplot/moments.hpp"
#include "splitplot/population.hpp"
#include "splitplot/rerandomize.hpp"

namespace splitplot {

enum class Scenario { sim1_wholeplot, sim1_varying, supp_s1, custom };

inline std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::sim1_wholeplot: return "sim1-wholeplot";
    case Scenario::sim1_varying: return "sim1-varying";
    case Scenario::supp_s1: return "supp-s1";
    case Scenario::custom: return "custom";
  }
  return "custom";
}

inline std::optional<Scenario> scenario_from_name(const std::string& name) {
  if (name == "sim1-wholeplot") return Scenario::sim1_wholeplot;
  if (name == "sim1-varying") return Scenario::sim1_varying;
  if (name == "supp-s1") return Scenario::supp_s1;
  if (name == "custom") return Scenario::custom;
  return std::nullopt;
}

// Synthetic population generator constants. Named scenarios pin these; the
// custom scenario exposes them all.
struct GeneratorParams {
  int whole_plots = 600;
  int whole_plots_a1 = 180;
  double lambda_b0 = 5.0;  // factor-B arm sizes: max(2, Poisson(lambda))
  double lambda_b1 = 3.0;
  double cov_mean = 0.6;   // whole-plot covariate level, both coordinates
  double cov_var = 0.8;
  double within_cov_var = 0.0;  // unit-level covariate noise; 0 keeps
                                // covariates constant within whole plots
  bool x_is_first_coordinate = true;  // design covariate x = v1; otherwise
                                      // x = v (both coordinates)
  bool outcomes_use_averages = false;  // quadratic terms from (vbar_w1,
                                       // vbar_2) instead of unit values
  double theta_var = 0.2;
};

inline GeneratorParams scenario_params(Scenario s) {
  GeneratorParams p;
  switch (s) {
    case Scenario::sim1_wholeplot:
      break;  // defaults
    case Scenario::sim1_varying:
      p.within_cov_var = 0.5;
      break;
    case Scenario::supp_s1:
      p.whole_plots = 1200;
      p.whole_plots_a1 = 1080;
      p.lambda_b0 = 3.0;
      p.lambda_b1 = 8.0;
      p.within_cov_var = 2.0;
      p.x_is_first_coordinate = false;
      p.outcomes_use_averages = true;
      break;
    case Scenario::custom:
      break;
  }
  return p;
}

struct GeneratedStudy {
  ValidatedDesign design;
  PopulationData population;
  Eigen::Vector3d tau;
};

// Draws one synthetic population: whole-plot sizes from truncated Poisson
// counts, bivariate covariates with optional unit-level noise, and the
// quadratic-outcome potential table. Generated once per study and kept
// fixed across replications.
inline GeneratedStudy generate_population(const GeneratorParams& params,
                                          RngStream& rng) {
  DesignSpec spec;
  spec.w1 = params.whole_plots_a1;
  for (int w = 0; w < params.whole_plots; ++w) {
    const int m0 = std::max<long>(2, rng.poisson(params.lambda_b0));
    const int m1 = std::max<long>(2, rng.poisson(params.lambda_b1));
    spec.plots.push_back(PlotSize{m0 + m1, m1});
  }
  GeneratedStudy out{validate_design(spec), {}, Eigen::Vector3d::Zero()};
  const ValidatedDesign& design = out.design;
  const int n = design.units();

  Eigen::MatrixXd v(n, 2);
  for (int w = 0; w < params.whole_plots; ++w) {
    const double v1 = rng.normal(params.cov_mean, params.cov_var);
    const double v2 = rng.normal(params.cov_mean, params.cov_var);
    const int off = design.unit_offset(w);
    for (int s = 0; s < design.plot(w).size; ++s) {
      v(off + s, 0) = v1;
      v(off + s, 1) = v2;
      if (params.within_cov_var > 0.0) {
        v(off + s, 0) += rng.normal(0.0, params.within_cov_var);
        v(off + s, 1) += rng.normal(0.0, params.within_cov_var);
      }
    }
  }

  int max_size = 0;
  for (int w = 0; w < params.whole_plots; ++w)
    max_size = std::max(max_size, design.plot(w).size);
  const double v2_grand = v.col(1).mean();

  Eigen::MatrixXd table(n, 4);
  for (int w = 0; w < params.whole_plots; ++w) {
    const int off = design.unit_offset(w);
    const int m = design.plot(w).size;
    const double theta =
        rng.normal(2.0 * max_size / m, params.theta_var);
    const double vbar_w1 =
        v.col(0).segment(off, m).mean();
    for (int s = 0; s < m; ++s) {
      const int i = off + s;
      const double eps = rng.uniform(-1.0, 1.0);
      double t1, t2;
      if (params.outcomes_use_averages) {
        t1 = vbar_w1 * vbar_w1;
        t2 = v2_grand * v2_grand;
      } else {
        t1 = v(i, 0) * v(i, 0);
        t2 = v(i, 1) * v(i, 1);
      }
      table(i, 0) = theta + 0.5 + 2.0 * t1 + 2.0 * t2 + eps;
      table(i, 1) = -0.5 * theta + 1.0 + t1 + t2 + eps;
      table(i, 2) = 0.5 * theta + 1.0 - t1 - t2 + eps;
      // The last arm doubles the first quadratic term twice, as specified.
      table(i, 3) = params.outcomes_use_averages
                        ? theta + 2.0 + 2.0 * t1 + 2.0 * t2 + eps
                        : theta + 2.0 + 2.0 * t1 + 2.0 * t1 + eps;
    }
  }

  out.population.analysis_covariates = v;
  if (params.x_is_first_coordinate) {
    out.population.design_covariates = v.leftCols(1);
    out.population.linking = Eigen::MatrixXd::Zero(1, 2);
    out.population.linking(0, 0) = 1.0;
  } else {
    out.population.design_covariates = v;
    out.population.linking = Eigen::MatrixXd::Identity(2, 2);
  }
  out.population.potential = table;
  out.population.validate(design);
  out.tau = contrast_matrix() * table.colwise().mean().transpose();
  return out;
}

// One estimator/scheme cell of the study: ht or haj with an optional
// .P / .L / .L.a suffix; .rnd marks classic randomization.
struct EstimatorSpec {
  std::string name;   // base name without .rnd
  Flavor flavor = Flavor::horvitz_thompson;
  enum class Kind { unadjusted, projection, regression, regression_alpha };
  Kind kind = Kind::unadjusted;
  Scheme scheme = Scheme::rerandomized;
};

inline EstimatorSpec parse_estimator_name(const std::string& raw) {
  EstimatorSpec spec;
  std::string rest = raw;
  auto strip_suffix = [&](const std::string& suffix) {
    if (rest.size() >= suffix.size() &&
        rest.compare(rest.size() - suffix.size(), suffix.size(), suffix) ==
            0) {
      rest = rest.substr(0, rest.size() - suffix.size());
      return true;
    }
    return false;
  };
  if (strip_suffix(".rnd")) spec.scheme = Scheme::randomized;
  if (strip_suffix(".L.a"))
    spec.kind = EstimatorSpec::Kind::regression_alpha;
  else if (strip_suffix(".L"))
    spec.kind = EstimatorSpec::Kind::regression;
  else if (strip_suffix(".P"))
    spec.kind = EstimatorSpec::Kind::projection;
  if (rest == "ht")
    spec.flavor = Flavor::horvitz_thompson;
  else if (rest == "haj")
    spec.flavor = Flavor::hajek;
  else
    throw ConfigError("unknown estimator name: " + raw);
  if (spec.scheme == Scheme::randomized &&
      spec.kind != EstimatorSpec::Kind::unadjusted)
    throw ConfigError("adjusted estimators are reported under "
                      "rerandomization only: " + raw);
  if (spec.kind == EstimatorSpec::Kind::regression_alpha &&
      spec.flavor != Flavor::horvitz_thompson)
    throw ConfigError("the size-adjusted regression variant is defined for "
                      "the HT flavor only: " + raw);
  spec.name = rest;
  if (spec.kind == EstimatorSpec::Kind::projection) spec.name += ".P";
  if (spec.kind == EstimatorSpec::Kind::regression) spec.name += ".L";
  if (spec.kind == EstimatorSpec::Kind::regression_alpha)
    spec.name += ".L.a";
  return spec;
}

inline std::vector<std::string> default_estimators(Scenario s) {
  if (s == Scenario::supp_s1)
    return {"ht.rnd", "ht", "ht.P", "ht.L"};
  return {"ht.rnd", "ht", "ht.P", "ht.L", "ht.L.a",
          "haj.rnd", "haj", "haj.P", "haj.L"};
}

struct StudyConfig {
  Scenario scenario = Scenario::custom;
  GeneratorParams generator;
  int replications = 2000;
  double alpha = 0.01;
  double xi = 0.05;
  std::uint64_t seed = 0;
  int mc_size = 100000;
  std::vector<std::string> estimators;
  int threads = 1;
  std::uint64_t max_draws = 1000000;
};

inline StudyConfig make_study_config(Scenario s, std::uint64_t seed) {
  StudyConfig cfg;
  cfg.scenario = s;
  cfg.generator = scenario_params(s);
  cfg.estimators = default_estimators(s);
  cfg.seed = seed;
  return cfg;
}

// Per (estimator, scheme, effect) summary over replications. sd and ese are
// absent when fewer than two replications contribute.
struct MetricCell {
  double bias = 0.0;
  std::optional<double> sd;
  std::optional<double> ese;
  double coverage = 0.0;
  double mean_length = 0.0;
  // Extra aggregates for uncertainty bookkeeping (not exported).
  double mean_se = 0.0;
  double se_std = 0.0;
  int reps = 0;
};

struct MetricRow {
  std::string estimator;
  std::string scheme;  // "rnd" or "rr"
  std::string effect;  // "A", "B", "AB"
  MetricCell cell;
  double acceptance_rate = 1.0;
};

struct StudyMetrics {
  std::vector<MetricRow> rows;
  double acceptance_rate_ht = 1.0;
  double acceptance_rate_haj = 1.0;
  double wall_seconds = 0.0;
  std::vector<std::string> replication_failures;

  const MetricCell* find(const std::string& estimator,
                         const std::string& scheme,
                         const std::string& effect) const {
    for (const auto& row : rows)
      if (row.estimator == estimator && row.scheme == scheme &&
          row.effect == effect)
        return &row.cell;
    return nullptr;
  }
};

namespace detail {

struct RepOutcome {
  Eigen::Vector3d tau = Eigen::Vector3d::Zero();
  std::array<EffectInterval, 3> intervals;
  bool ok = false;
};

struct SchemeTotals {
  std::atomic<std::uint64_t> draws{0};
  std::atomic<std::uint64_t> accepted{0};
};

}  // namespace detail

// Runs the replicated study: per replication one classic assignment and one
// accepted assignment per rerandomization flavor, every requested estimator
// with its interval, aggregated into the metric table. Deterministic given
// the seed for any thread count (each replication owns a substream and a
// result slot; the phi reference batch is drawn once per study).
inline StudyMetrics run_study(const StudyConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  StudyMetrics metrics;

  std::vector<EstimatorSpec> specs;
  for (const auto& name : config.estimators)
    specs.push_back(parse_estimator_name(name));

  RngStream root(config.seed, 0);
  RngStream pop_stream = root.substream(1);
  const GeneratedStudy study =
      generate_population(config.generator, pop_stream);
  const ValidatedDesign& design = study.design;
  const PopulationData& pop = study.population;
  const Eigen::MatrixXd& x = pop.design_covariates;
  const Eigen::MatrixXd& v = pop.analysis_covariates;

  bool need_classic = false, need_rr_ht = false, need_rr_haj = false;
  bool need_mc_batch = false;
  for (const auto& s : specs) {
    if (s.scheme == Scheme::randomized) {
      need_classic = true;
      continue;
    }
    (s.flavor == Flavor::horvitz_thompson ? need_rr_ht : need_rr_haj) = true;
    if (s.kind == EstimatorSpec::Kind::unadjusted ||
        s.kind == EstimatorSpec::Kind::regression ||
        s.kind == EstimatorSpec::Kind::regression_alpha)
      need_mc_batch = true;
  }

  // Study-level constants shared by all replications.
  const CovariateMoments x_moments = covariate_moments(design, x);
  const Eigen::MatrixXd xx_ht =
      sigma_xx(design, x_moments, Flavor::horvitz_thompson);
  const Eigen::MatrixXd xx_haj = sigma_xx(design, x_moments, Flavor::hajek);
  std::optional<BalanceCriterion> crit_ht, crit_haj;
  if (need_rr_ht)
    crit_ht = build_criterion(design, x, Flavor::horvitz_thompson,
                              config.alpha);
  if (need_rr_haj)
    crit_haj = build_criterion(design, x, Flavor::hajek, config.alpha);
  std::optional<ProjectionContext> proj_ht, proj_haj;
  for (const auto& s : specs)
    if (s.kind == EstimatorSpec::Kind::projection) {
      if (s.flavor == Flavor::horvitz_thompson && !proj_ht)
        proj_ht = make_projection_context(design, v, s.flavor);
      if (s.flavor == Flavor::hajek && !proj_haj)
        proj_haj = make_projection_context(design, v, s.flavor);
    }
  // The truncation threshold and the dimension of the truncated component
  // follow the balance criterion's effective rank.
  double d_threshold = 0.0;
  int zeta_dim = 0;
  if (crit_ht) {
    d_threshold = crit_ht->threshold;
    zeta_dim = crit_ht->rank;
  }
  if (crit_haj) {
    if (crit_ht && crit_haj->rank != crit_ht->rank)
      throw SingularSigmaXX(
          "the two flavors disagree on the contrast rank");
    d_threshold = crit_haj->threshold;
    zeta_dim = crit_haj->rank;
  }
  std::optional<PhiBatch> batch;
  if (need_mc_batch) {
    RngStream batch_stream = root.substream(2);
    batch = draw_phi_batch(config.mc_size, zeta_dim, d_threshold,
                           batch_stream);
  }

  const int reps = config.replications;
  std::vector<std::vector<detail::RepOutcome>> results(
      specs.size(), std::vector<detail::RepOutcome>(reps));
  detail::SchemeTotals totals_ht, totals_haj;
  std::vector<std::string> failures;
  std::mutex failure_mutex;

  auto run_replication = [&](int rep) {
    // Classic randomization arm.
    if (need_classic) {
      RngStream rng = root.substream(10).substream(rep);
      const Assignment asg = randomize(design, rng);
      const Eigen::VectorXd y = observe_outcomes(design, asg, *pop.potential);
      for (size_t e = 0; e < specs.size(); ++e) {
        const EstimatorSpec& s = specs[e];
        if (s.scheme != Scheme::randomized) continue;
        detail::RepOutcome& out = results[e][rep];
        out.tau = effect_estimate(arm_estimate(y, asg, design, s.flavor));
        const Eigen::Matrix3d tt =
            sigma_tau_tau_estimated(design, asg, y, s.flavor);
        out.intervals = per_effect_intervals_normal(
            out.tau, tt, design.whole_plots(), config.xi);
        out.ok = true;
      }
    }
    // One rerandomized arm per flavor in use.
    for (int f = 0; f < 2; ++f) {
      const Flavor flavor =
          f == 0 ? Flavor::horvitz_thompson : Flavor::hajek;
      if (f == 0 && !need_rr_ht) continue;
      if (f == 1 && !need_rr_haj) continue;
      const BalanceCriterion& crit = f == 0 ? *crit_ht : *crit_haj;
      const Eigen::MatrixXd& xx = f == 0 ? xx_ht : xx_haj;
      detail::SchemeTotals& totals = f == 0 ? totals_ht : totals_haj;
      RngStream rng = root.substream(11 + f).substream(rep);
      const RerandomizeResult rr =
          rerandomize(design, crit, rng, config.max_draws);
      totals.draws.fetch_add(rr.draws_used, std::memory_order_relaxed);
      totals.accepted.fetch_add(1, std::memory_order_relaxed);
      const Assignment& asg = rr.assignment;
      const Eigen::VectorXd y = observe_outcomes(design, asg, *pop.potential);

      for (size_t e = 0; e < specs.size(); ++e) {
        const EstimatorSpec& s = specs[e];
        if (s.scheme != Scheme::rerandomized || s.flavor != flavor) continue;
        detail::RepOutcome& out = results[e][rep];
        switch (s.kind) {
          case EstimatorSpec::Kind::unadjusted: {
            const SigmaBlocks blocks =
                sigma_estimated(design, asg, y, x, xx, flavor);
            out.tau = effect_estimate(arm_estimate(y, asg, design, flavor));
            const LimitLawSampler sampler =
                make_limit_sampler(blocks, d_threshold, config.mc_size);
            const Eigen::MatrixXd phi = phi_from_batch(sampler, *batch);
            out.intervals = per_effect_intervals_mc(
                out.tau, phi, design.whole_plots(), config.xi);
            break;
          }
          case EstimatorSpec::Kind::projection: {
            const ProjectionContext& ctx = f == 0 ? *proj_ht : *proj_haj;
            const AdjustedEstimate est =
                projection_estimate(design, asg, y, v, ctx, flavor);
            out.tau = est.tau_hat;
            out.intervals = per_effect_intervals_normal(
                out.tau, est.blocks.perp, design.whole_plots(), config.xi);
            break;
          }
          case EstimatorSpec::Kind::regression:
          case EstimatorSpec::Kind::regression_alpha: {
            const bool with_alpha =
                s.kind == EstimatorSpec::Kind::regression_alpha;
            const RegressionFit fit =
                flavor == Flavor::hajek
                    ? fit_wls_lin(design, asg, y, v)
                    : fit_ag_lin(design, asg, y, v, with_alpha);
            const AdjustedEstimate est =
                adjusted_estimate(design, asg, y, v, x, xx, fit);
            out.tau = est.tau_hat;
            const LimitLawSampler sampler =
                make_limit_sampler(est.blocks, d_threshold, config.mc_size);
            const Eigen::MatrixXd phi = phi_from_batch(sampler, *batch);
            out.intervals = per_effect_intervals_mc(
                out.tau, phi, design.whole_plots(), config.xi);
            break;
          }
        }
        out.ok = true;
      }
    }
  };

  auto guarded_replication = [&](int rep) {
    try {
      run_replication(rep);
    } catch (const std::exception& err) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      failures.push_back("replication " + std::to_string(rep) + ": " +
                         err.what());
    }
  };

  const int threads = std::max(1, config.threads);
  if (threads == 1 || reps == 1) {
    for (int rep = 0; rep < reps; ++rep) guarded_replication(rep);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          const int rep = next.fetch_add(1);
          if (rep >= reps) return;
          guarded_replication(rep);
        }
      });
    for (auto& t : pool) t.join();
  }

  metrics.replication_failures = failures;
  if (totals_ht.accepted.load() > 0)
    metrics.acceptance_rate_ht =
        static_cast<double>(totals_ht.accepted.load()) /
        static_cast<double>(totals_ht.draws.load());
  if (totals_haj.accepted.load() > 0)
    metrics.acceptance_rate_haj =
        static_cast<double>(totals_haj.accepted.load()) /
        static_cast<double>(totals_haj.draws.load());

  const char* effect_names[3] = {"A", "B", "AB"};
  for (size_t e = 0; e < specs.size(); ++e) {
    const EstimatorSpec& s = specs[e];
    for (int j = 0; j < 3; ++j) {
      MetricRow row;
      row.estimator = s.name;
      row.scheme = s.scheme == Scheme::randomized ? "rnd" : "rr";
      row.effect = effect_names[j];
      row.acceptance_rate =
          s.scheme == Scheme::randomized
              ? 1.0
              : (s.flavor == Flavor::horvitz_thompson
                     ? metrics.acceptance_rate_ht
                     : metrics.acceptance_rate_haj);
      double sum = 0.0, sum_sq = 0.0, se_sum = 0.0, se_sq = 0.0;
      double len_sum = 0.0;
      int covered = 0, n_ok = 0;
      for (int rep = 0; rep < reps; ++rep) {
        const detail::RepOutcome& out = results[e][rep];
        if (!out.ok) continue;
        ++n_ok;
        sum += out.tau[j];
        sum_sq += out.tau[j] * out.tau[j];
        se_sum += out.intervals[j].se;
        se_sq += out.intervals[j].se * out.intervals[j].se;
        len_sum += out.intervals[j].length();
        if (out.intervals[j].covers(study.tau[j])) ++covered;
      }
      MetricCell& cell = row.cell;
      cell.reps = n_ok;
      if (n_ok > 0) {
        cell.bias = sum / n_ok - study.tau[j];
        cell.coverage = static_cast<double>(covered) / n_ok;
        cell.mean_length = len_sum / n_ok;
        cell.mean_se = se_sum / n_ok;
      }
      if (n_ok > 1) {
        const double var =
            (sum_sq - sum * sum / n_ok) / (n_ok - 1);
        cell.sd = std::sqrt(std::max(var, 0.0));
        cell.ese = cell.mean_se - *cell.sd;
        const double se_var =
            (se_sq - se_sum * se_sum / n_ok) / (n_ok - 1);
        cell.se_std = std::sqrt(std::max(se_var, 0.0));
      }
      metrics.rows.push_back(std::move(row));
    }
  }
  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    t_start)
          .count();
  return metrics;
}

namespace detail {

inline std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

inline std::string format_optional(const std::optional<double>& value) {
  return value ? format_double(*value) : std::string();
}

}  // namespace detail

// Fixed column order, 17-significant-digit floats, LF endings; byte-stable
// for identical (config, seed).
inline void write_metrics_csv(const StudyMetrics& metrics,
                              std::ostream& out) {
  out << "estimator,scheme,effect,bias,sd,ese,coverage,mean_length,"
         "acceptance_rate\n";
  for (const auto& row : metrics.rows) {
    out << row.estimator << ',' << row.scheme << ',' << row.effect << ','
        << detail::format_double(row.cell.bias) << ','
        << detail::format_optional(row.cell.sd) << ','
        << detail::format_optional(row.cell.ese) << ','
        << detail::format_double(row.cell.coverage) << ','
        << detail::format_double(row.cell.mean_length) << ','
        << detail::format_double(row.acceptance_rate) << '\n';
  }
}

inline void write_metrics_json(const StudyMetrics& metrics,
                               std::ostream& out) {
  out << "{\n  \"rows\": [\n";
  for (size_t i = 0; i < metrics.rows.size(); ++i) {
    const auto& row = metrics.rows[i];
    out << "    {\"estimator\": \"" << row.estimator << "\", \"scheme\": \""
        << row.scheme << "\", \"effect\": \"" << row.effect
        << "\", \"bias\": " << detail::format_double(row.cell.bias)
        << ", \"sd\": "
        << (row.cell.sd ? detail::format_double(*row.cell.sd) : "null")
        << ", \"ese\": "
        << (row.cell.ese ? detail::format_double(*row.cell.ese) : "null")
        << ", \"coverage\": " << detail::format_double(row.cell.coverage)
        << ", \"mean_length\": "
        << detail::format_double(row.cell.mean_length)
        << ", \"acceptance_rate\": "
        << detail::format_double(row.acceptance_rate) << "}"
        << (i + 1 < metrics.rows.size() ? "," : "") << "\n";
  }
  out << "  ],\n  \"acceptance_rate_ht\": "
      << detail::format_double(metrics.acceptance_rate_ht)
      << ",\n  \"acceptance_rate_haj\": "
      << detail::format_double(metrics.acceptance_rate_haj) << "\n}\n";
}

// Writes the metric table to a file ("-" for stdout is handled by the CLI,
// not here). Binary mode keeps LF endings everywhere.
inline void export_metrics(const StudyMetrics& metrics,
                           const std::string& path,
                           const std::string& format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open metrics output file: " + path);
  if (format == "csv")
    write_metrics_csv(metrics, out);
  else if (format == "json")
    write_metrics_json(metrics, out);
  else
    throw ConfigError("metrics format must be csv or json");
}

}  // namespace splitplot
