#pragma once

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitplot/adjustment.hpp"
#include "splitplot/chi2.hpp"
#include "splitplot/design.hpp"
#include "splitplot/errors.hpp"
#include "splitplot/inference.hpp"
#include "splitplot/io.hpp"
#include "splitplot/moments.hpp"
#include "splitplot/oracle.hpp"
#include "splitplot/rerandomize.hpp"
#include "splitplot/simulate.hpp"

namespace splitplot::cli {

using json = nlohmann::json;

// Everything a subcommand run needs, parsed and validated before any
// computation. Unknown configuration keys are rejected.
struct RunConfig {
  std::string subcommand;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "-";
  std::string format = "csv";  // csv | json

  // Design / data sources.
  std::optional<DesignSpec> design;
  std::optional<std::string> data_path;
  IngestSchema schema;

  // Analysis options.
  Flavor flavor = Flavor::horvitz_thompson;
  bool rerandomized = false;
  double alpha = 0.01;
  double xi = 0.05;
  int mc_size = 100000;
  std::uint64_t max_draws = 1000000;
  std::vector<std::string> estimators;

  // Simulation options.
  Scenario scenario = Scenario::custom;
  bool scenario_set = false;
  GeneratorParams generator;
  int replications = 2000;
  int threads = 1;

  // Oracle options.
  std::uint64_t enumeration_cap = 1000000;
};

namespace detail {

inline void require_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& item : obj.items())
    if (!known.count(item.key()))
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
}

inline DesignSpec parse_design_json(const json& obj) {
  if (!obj.is_object()) throw ConfigError("design must be an object");
  DesignSpec spec;
  if (obj.contains("plots")) {
    require_keys(obj, {"w1", "plots"}, "design");
    if (!obj.contains("w1")) throw ConfigError("design needs w1");
    spec.w1 = obj.at("w1").get<int>();
    for (const auto& plot : obj.at("plots")) {
      require_keys(plot, {"m", "m_b1"}, "design.plots[]");
      spec.plots.push_back(PlotSize{plot.at("m").get<int>(),
                                    plot.at("m_b1").get<int>()});
    }
  } else {
    require_keys(obj, {"w", "w1", "m", "m_b1"}, "design");
    for (const std::string key : {"w", "w1", "m", "m_b1"})
      if (!obj.contains(key))
        throw ConfigError("uniform design needs key '" + key + "'");
    spec.w1 = obj.at("w1").get<int>();
    spec.plots.assign(obj.at("w").get<int>(),
                      PlotSize{obj.at("m").get<int>(),
                               obj.at("m_b1").get<int>()});
  }
  return spec;
}

inline void parse_data_json(const json& obj, RunConfig& cfg) {
  require_keys(obj,
               {"path", "x_columns", "v_columns", "plot_column",
                "b1_size_column", "outcome_column", "a_column", "b_column",
                "potential_columns", "w1"},
               "data");
  if (!obj.contains("path")) throw ConfigError("data needs a path");
  cfg.data_path = obj.at("path").get<std::string>();
  if (obj.contains("x_columns"))
    cfg.schema.x_columns = obj.at("x_columns").get<std::vector<std::string>>();
  if (obj.contains("v_columns"))
    cfg.schema.v_columns = obj.at("v_columns").get<std::vector<std::string>>();
  if (obj.contains("plot_column"))
    cfg.schema.plot_column = obj.at("plot_column").get<std::string>();
  if (obj.contains("b1_size_column"))
    cfg.schema.b1_size_column = obj.at("b1_size_column").get<std::string>();
  if (obj.contains("outcome_column"))
    cfg.schema.outcome_column = obj.at("outcome_column").get<std::string>();
  if (obj.contains("a_column"))
    cfg.schema.a_column = obj.at("a_column").get<std::string>();
  if (obj.contains("b_column"))
    cfg.schema.b_column = obj.at("b_column").get<std::string>();
  if (obj.contains("potential_columns"))
    cfg.schema.potential_columns =
        obj.at("potential_columns").get<std::vector<std::string>>();
  if (obj.contains("w1")) cfg.schema.w1 = obj.at("w1").get<int>();
}

inline void parse_generator_json(const json& obj, GeneratorParams& params) {
  require_keys(obj,
               {"whole_plots", "whole_plots_a1", "lambda_b0", "lambda_b1",
                "cov_mean", "cov_var", "within_cov_var",
                "x_is_first_coordinate", "outcomes_use_averages",
                "theta_var"},
               "custom");
  if (obj.contains("whole_plots"))
    params.whole_plots = obj.at("whole_plots").get<int>();
  if (obj.contains("whole_plots_a1"))
    params.whole_plots_a1 = obj.at("whole_plots_a1").get<int>();
  if (obj.contains("lambda_b0"))
    params.lambda_b0 = obj.at("lambda_b0").get<double>();
  if (obj.contains("lambda_b1"))
    params.lambda_b1 = obj.at("lambda_b1").get<double>();
  if (obj.contains("cov_mean"))
    params.cov_mean = obj.at("cov_mean").get<double>();
  if (obj.contains("cov_var"))
    params.cov_var = obj.at("cov_var").get<double>();
  if (obj.contains("within_cov_var"))
    params.within_cov_var = obj.at("within_cov_var").get<double>();
  if (obj.contains("x_is_first_coordinate"))
    params.x_is_first_coordinate =
        obj.at("x_is_first_coordinate").get<bool>();
  if (obj.contains("outcomes_use_averages"))
    params.outcomes_use_averages =
        obj.at("outcomes_use_averages").get<bool>();
  if (obj.contains("theta_var"))
    params.theta_var = obj.at("theta_var").get<double>();
}

}  // namespace detail

// Strict parse of a JSON configuration document for one subcommand.
// Reproducibility is mandatory: a seed must come from the config or the
// command line before any computation runs.
inline RunConfig parse_config(const std::string& text,
                              const std::string& subcommand) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& err) {
    throw ConfigError(std::string("config is not valid JSON: ") + err.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig cfg;
  cfg.subcommand = subcommand;
  std::set<std::string> known = {"seed", "out"};
  if (subcommand == "randomize") {
    known.insert({"design", "data"});
  } else if (subcommand == "rerandomize") {
    known.insert({"data", "flavor", "alpha", "max_draws", "drop_degenerate"});
  } else if (subcommand == "analyze") {
    known.insert({"data", "estimators", "rerandomized", "alpha", "xi",
                  "mc_size", "format", "drop_degenerate"});
  } else if (subcommand == "simulate") {
    known.insert({"scenario", "replications", "alpha", "xi", "mc_size",
                  "estimators", "threads", "format", "custom", "max_draws"});
  } else if (subcommand == "oracle-check") {
    known.insert({"design", "data", "cap"});
  } else {
    throw ConfigError("unknown subcommand: " + subcommand);
  }
  detail::require_keys(doc, known, "config");

  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned() &&
        !doc.at("seed").is_number_integer())
      throw ConfigError("seed must be an integer");
    cfg.seed = doc.at("seed").get<std::uint64_t>();
    cfg.seed_set = true;
  }
  if (doc.contains("out")) cfg.out = doc.at("out").get<std::string>();
  if (doc.contains("format")) {
    cfg.format = doc.at("format").get<std::string>();
    if (cfg.format != "csv" && cfg.format != "json")
      throw ConfigError("format must be csv or json");
  }
  if (doc.contains("design"))
    cfg.design = detail::parse_design_json(doc.at("design"));
  if (doc.contains("data")) detail::parse_data_json(doc.at("data"), cfg);
  if (doc.contains("flavor")) {
    const std::string f = doc.at("flavor").get<std::string>();
    if (f == "ht")
      cfg.flavor = Flavor::horvitz_thompson;
    else if (f == "haj")
      cfg.flavor = Flavor::hajek;
    else
      throw ConfigError("flavor must be ht or haj");
  }
  if (doc.contains("rerandomized"))
    cfg.rerandomized = doc.at("rerandomized").get<bool>();
  if (doc.contains("drop_degenerate"))
    cfg.schema.drop_degenerate = doc.at("drop_degenerate").get<bool>();
  if (doc.contains("alpha")) {
    cfg.alpha = doc.at("alpha").get<double>();
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
      throw ConfigError("alpha must lie in (0, 1)");
  }
  if (doc.contains("xi")) {
    cfg.xi = doc.at("xi").get<double>();
    if (!(cfg.xi > 0.0 && cfg.xi < 1.0))
      throw ConfigError("xi must lie in (0, 1)");
  }
  if (doc.contains("mc_size")) {
    cfg.mc_size = doc.at("mc_size").get<int>();
    if (cfg.mc_size < 100) throw ConfigError("mc_size must be at least 100");
  }
  if (doc.contains("max_draws"))
    cfg.max_draws = doc.at("max_draws").get<std::uint64_t>();
  if (doc.contains("estimators"))
    cfg.estimators = doc.at("estimators").get<std::vector<std::string>>();
  if (doc.contains("replications")) {
    cfg.replications = doc.at("replications").get<int>();
    if (cfg.replications < 1)
      throw ConfigError("replications must be at least 1");
  }
  if (doc.contains("threads")) {
    cfg.threads = doc.at("threads").get<int>();
    if (cfg.threads < 1) throw ConfigError("threads must be at least 1");
  }
  if (doc.contains("cap"))
    cfg.enumeration_cap = doc.at("cap").get<std::uint64_t>();
  if (doc.contains("scenario")) {
    const auto s = scenario_from_name(doc.at("scenario").get<std::string>());
    if (!s)
      throw ConfigError("unknown scenario: " +
                        doc.at("scenario").get<std::string>());
    cfg.scenario = *s;
    cfg.scenario_set = true;
    cfg.generator = scenario_params(*s);
  }
  if (doc.contains("custom")) {
    if (cfg.scenario_set && cfg.scenario != Scenario::custom)
      throw ConfigError("custom generator settings require scenario=custom");
    detail::parse_generator_json(doc.at("custom"), cfg.generator);
  }
  return cfg;
}

namespace detail {

// Output sink: stdout passthrough or file.
class OutputSink {
 public:
  OutputSink(const std::string& path, std::ostream& stdout_stream)
      : stream_(&stdout_stream) {
    if (path != "-") {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw IoError("cannot open output file: " + path);
      stream_ = file_.get();
    }
  }
  std::ostream& stream() { return *stream_; }

 private:
  std::ostream* stream_;
  std::unique_ptr<std::ofstream> file_;
};

inline void require_seed(const RunConfig& cfg) {
  if (!cfg.seed_set)
    throw ConfigError(
        "a seed is required (reproducibility is mandatory); pass --seed or "
        "set \"seed\" in the config");
}

struct LoadedData {
  ValidatedDesign design;
  IngestResult ingest;
};

inline LoadedData load_data(const RunConfig& cfg, IngestMode mode,
                            std::ostream& err_stream) {
  if (!cfg.data_path) throw ConfigError("this subcommand needs a data CSV");
  IngestSchema schema = cfg.schema;
  schema.mode = mode;
  IngestResult ingest = ingest_csv(read_csv_file(*cfg.data_path), schema);
  for (const auto& warning : ingest.warnings)
    err_stream << "warning: " << warning << "\n";
  LoadedData out{validate_design(ingest.design), std::move(ingest)};
  out.ingest.population.validate(out.design);
  return out;
}

inline int run_randomize(const RunConfig& cfg, std::ostream& out_stream,
                         std::ostream& err_stream) {
  require_seed(cfg);
  std::optional<ValidatedDesign> design;
  std::vector<std::string> plot_ids;
  if (cfg.design) {
    design = validate_design(*cfg.design);
  } else {
    LoadedData data = load_data(cfg, IngestMode::design_only, err_stream);
    design = std::move(data.design);
    plot_ids = std::move(data.ingest.plot_ids);
  }
  RngStream rng(cfg.seed, 0);
  const Assignment asg = randomize(*design, rng);
  OutputSink sink(cfg.out, out_stream);
  write_assignment_csv(*design, asg, plot_ids, sink.stream());
  return 0;
}

inline int run_rerandomize(const RunConfig& cfg, std::ostream& out_stream,
                           std::ostream& err_stream) {
  require_seed(cfg);
  LoadedData data = load_data(cfg, IngestMode::design_only, err_stream);
  if (data.ingest.population.design_covariates.cols() == 0)
    throw ConfigError("rerandomize needs x_columns in the data section");
  const BalanceCriterion criterion =
      build_criterion(data.design, data.ingest.population.design_covariates,
                      cfg.flavor, cfg.alpha);
  RngStream rng(cfg.seed, 0);
  RerandomizeDiagnostic diagnostic;
  try {
    const RerandomizeResult result = rerandomize(
        data.design, criterion, rng, cfg.max_draws, &diagnostic);
    err_stream << "accepted after " << result.draws_used
               << " draws; distance " << result.distance << " (threshold "
               << criterion.threshold << ", rank " << criterion.rank
               << ")\n";
    OutputSink sink(cfg.out, out_stream);
    write_assignment_csv(data.design, result.assignment,
                         data.ingest.plot_ids, sink.stream());
    return 0;
  } catch (const RejectionBudgetExceeded&) {
    err_stream << "budget of " << cfg.max_draws
               << " draws exhausted; best distance "
               << diagnostic.best_distance << " vs threshold "
               << criterion.threshold
               << "; writing the best assignment seen\n";
    OutputSink sink(cfg.out, out_stream);
    write_assignment_csv(data.design, diagnostic.best_assignment,
                         data.ingest.plot_ids, sink.stream());
    throw;
  }
}

struct AnalyzeRow {
  std::string estimator;
  Eigen::Vector3d tau;
  std::array<EffectInterval, 3> intervals;
  ConfidenceRegion region;
};

inline int run_analyze(const RunConfig& cfg, std::ostream& out_stream,
                       std::ostream& err_stream) {
  require_seed(cfg);
  LoadedData data = load_data(cfg, IngestMode::analyze, err_stream);
  const ValidatedDesign& design = data.design;
  const PopulationData& pop = data.ingest.population;
  const Assignment& asg = *data.ingest.assignment;
  const Eigen::VectorXd& y = *pop.observed;
  const Eigen::MatrixXd& x = pop.design_covariates;
  const Eigen::MatrixXd& v = pop.analysis_covariates;
  if (x.cols() == 0) throw ConfigError("analyze needs x_columns");

  std::vector<std::string> names = cfg.estimators;
  if (names.empty()) names = {"ht", "haj"};
  std::vector<EstimatorSpec> specs;
  for (const auto& name : names) {
    if (name.size() > 4 && name.rfind(".rnd") == name.size() - 4)
      throw ConfigError(
          "analyze takes the scheme from --rerandomized, not from the "
          "estimator name: " + name);
    specs.push_back(parse_estimator_name(name));
  }

  const Scheme scheme =
      cfg.rerandomized ? Scheme::rerandomized : Scheme::randomized;
  const CovariateMoments x_moments = covariate_moments(design, x);
  std::optional<PhiBatch> batch;
  double d_threshold = 0.0;
  if (scheme == Scheme::rerandomized) {
    const BalanceCriterion crit = build_criterion(
        design, x, Flavor::horvitz_thompson, cfg.alpha);
    d_threshold = crit.threshold;
    RngStream batch_stream = RngStream(cfg.seed, 0).substream(2);
    batch =
        draw_phi_batch(cfg.mc_size, crit.rank, d_threshold, batch_stream);
  }
  std::optional<ProjectionContext> proj_ht, proj_haj;

  std::vector<AnalyzeRow> rows;
  for (const auto& spec : specs) {
    const Eigen::MatrixXd xx = sigma_xx(design, x_moments, spec.flavor);
    AnalyzeRow row;
    row.estimator = spec.name;
    switch (spec.kind) {
      case EstimatorSpec::Kind::unadjusted: {
        const SigmaBlocks blocks =
            sigma_estimated(design, asg, y, x, xx, spec.flavor);
        row.tau = effect_estimate(arm_estimate(y, asg, design, spec.flavor));
        if (scheme == Scheme::rerandomized) {
          const LimitLawSampler sampler =
              make_limit_sampler(blocks, d_threshold, cfg.mc_size);
          const Eigen::MatrixXd phi = phi_from_batch(sampler, *batch);
          row.intervals = per_effect_intervals_mc(
              row.tau, phi, design.whole_plots(), cfg.xi);
          row.region = joint_region(row.tau, blocks, scheme, cfg.xi,
                                    design.whole_plots(), &sampler,
                                    &*batch);
        } else {
          row.intervals = per_effect_intervals_normal(
              row.tau, blocks.tau_tau, design.whole_plots(), cfg.xi);
          row.region = joint_region(row.tau, blocks, scheme, cfg.xi,
                                    design.whole_plots());
        }
        break;
      }
      case EstimatorSpec::Kind::projection: {
        auto& ctx = spec.flavor == Flavor::horvitz_thompson ? proj_ht
                                                            : proj_haj;
        if (!ctx) ctx = make_projection_context(design, v, spec.flavor);
        const AdjustedEstimate est =
            projection_estimate(design, asg, y, v, *ctx, spec.flavor);
        row.tau = est.tau_hat;
        row.intervals = per_effect_intervals_normal(
            row.tau, est.blocks.perp, design.whole_plots(), cfg.xi);
        row.region.center = row.tau;
        row.region.shape = est.blocks.perp;
        row.region.radius = chi2_quantile(3, 1.0 - cfg.xi);
        row.region.kind = RegionKind::wald_chi2;
        row.region.scale_w = design.whole_plots();
        break;
      }
      case EstimatorSpec::Kind::regression:
      case EstimatorSpec::Kind::regression_alpha: {
        const RegressionFit fit =
            spec.flavor == Flavor::hajek
                ? fit_wls_lin(design, asg, y, v)
                : fit_ag_lin(design, asg, y, v,
                             spec.kind ==
                                 EstimatorSpec::Kind::regression_alpha);
        for (const auto& warning : fit.warnings)
          err_stream << "warning: " << spec.name << ": " << warning << "\n";
        const AdjustedEstimate est =
            adjusted_estimate(design, asg, y, v, x, xx, fit);
        row.tau = est.tau_hat;
        if (scheme == Scheme::rerandomized) {
          const LimitLawSampler sampler =
              make_limit_sampler(est.blocks, d_threshold, cfg.mc_size);
          const Eigen::MatrixXd phi = phi_from_batch(sampler, *batch);
          row.intervals = per_effect_intervals_mc(
              row.tau, phi, design.whole_plots(), cfg.xi);
          row.region = joint_region(row.tau, est.blocks, scheme, cfg.xi,
                                    design.whole_plots(), &sampler,
                                    &*batch);
        } else {
          row.intervals = per_effect_intervals_normal(
              row.tau, est.blocks.tau_tau, design.whole_plots(), cfg.xi);
          row.region = joint_region(row.tau, est.blocks, scheme, cfg.xi,
                                    design.whole_plots());
        }
        break;
      }
    }
    rows.push_back(std::move(row));
  }

  OutputSink sink(cfg.out, out_stream);
  const char* effect_names[3] = {"A", "B", "AB"};
  if (cfg.format == "csv") {
    sink.stream() << "estimator,effect,estimate,se,ci_lower,ci_upper\n";
    for (const auto& row : rows)
      for (int j = 0; j < 3; ++j)
        sink.stream() << row.estimator << ',' << effect_names[j] << ','
                      << splitplot::detail::format_double(row.tau[j]) << ','
                      << splitplot::detail::format_double(
                             row.intervals[j].se)
                      << ','
                      << splitplot::detail::format_double(
                             row.intervals[j].lower())
                      << ','
                      << splitplot::detail::format_double(
                             row.intervals[j].upper())
                      << '\n';
  } else {
    json doc = json::array();
    for (const auto& row : rows) {
      json entry;
      entry["estimator"] = row.estimator;
      for (int j = 0; j < 3; ++j) {
        json e;
        e["estimate"] = row.tau[j];
        e["se"] = row.intervals[j].se;
        e["ci_lower"] = row.intervals[j].lower();
        e["ci_upper"] = row.intervals[j].upper();
        entry["effects"][effect_names[j]] = e;
      }
      json region;
      region["radius"] = row.region.radius;
      region["kind"] = row.region.kind == RegionKind::wald_chi2
                           ? "wald-chi2"
                           : "monte-carlo-quantile";
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          region["shape"][i][j] = row.region.shape(i, j);
      entry["joint_region"] = region;
      doc.push_back(entry);
    }
    sink.stream() << doc.dump(2) << "\n";
  }
  return 0;
}

inline int run_simulate(const RunConfig& cfg, std::ostream& out_stream,
                        std::ostream& err_stream) {
  require_seed(cfg);
  StudyConfig study;
  study.scenario = cfg.scenario_set ? cfg.scenario : Scenario::custom;
  study.generator = cfg.generator;
  study.replications = cfg.replications;
  study.alpha = cfg.alpha;
  study.xi = cfg.xi;
  study.seed = cfg.seed;
  study.mc_size = cfg.mc_size;
  study.estimators = cfg.estimators.empty()
                         ? default_estimators(study.scenario)
                         : cfg.estimators;
  study.threads = cfg.threads;
  study.max_draws = cfg.max_draws;

  const StudyMetrics metrics = run_study(study);
  for (const auto& failure : metrics.replication_failures)
    err_stream << "warning: " << failure << "\n";
  if (!metrics.replication_failures.empty() &&
      static_cast<int>(metrics.replication_failures.size()) >=
          cfg.replications)
    throw RejectionBudgetExceeded("every replication failed");
  err_stream << "study finished in " << metrics.wall_seconds
             << " s; acceptance rates ht=" << metrics.acceptance_rate_ht
             << " haj=" << metrics.acceptance_rate_haj << "\n";
  OutputSink sink(cfg.out, out_stream);
  if (cfg.format == "csv")
    write_metrics_csv(metrics, sink.stream());
  else
    write_metrics_json(metrics, sink.stream());
  return 0;
}

inline int run_oracle_check(const RunConfig& cfg, std::ostream& out_stream,
                            std::ostream& err_stream) {
  require_seed(cfg);
  ValidatedDesign design = [&] {
    if (cfg.design) return validate_design(*cfg.design);
    if (cfg.data_path) {
      LoadedData data = load_data(cfg, IngestMode::oracle, err_stream);
      return data.design;
    }
    throw ConfigError("oracle-check needs a design or a data CSV");
  }();
  PopulationData pop;
  if (cfg.data_path) {
    LoadedData data = load_data(cfg, IngestMode::oracle, err_stream);
    pop = data.ingest.population;
    if (pop.design_covariates.cols() == 0)
      throw ConfigError("oracle-check data needs x_columns");
  } else {
    pop = synthetic_oracle_population(design, cfg.seed);
  }
  const std::vector<OracleCheck> checks =
      oracle_check(design, pop, cfg.enumeration_cap);
  OutputSink sink(cfg.out, out_stream);
  bool all_pass = true;
  for (const auto& check : checks) {
    sink.stream() << (check.pass ? "[ok]   " : "[FAIL] ") << check.name
                  << " (error " << check.error << ", tolerance "
                  << check.tolerance << ")\n";
    all_pass = all_pass && check.pass;
  }
  if (!all_pass)
    throw NotPsd("enumeration oracle found a violated invariant");
  return 0;
}

inline void write_error_json(std::ostream& err_stream, const std::string& code,
                             const std::string& message,
                             const std::string& context) {
  json doc;
  doc["code"] = code;
  doc["message"] = message;
  doc["context"] = context;
  err_stream << doc.dump() << "\n";
}

}  // namespace detail

// Entry point shared by the binary and the end-to-end tests. argv-style
// arguments without the program name.
inline int run_main(const std::vector<std::string>& args,
                    std::ostream& out_stream, std::ostream& err_stream) {
  static const char* usage =
      "usage: splitplot <randomize|rerandomize|analyze|simulate|oracle-check>"
      " [options]\n"
      "  common: --config FILE --seed N --out PATH --json-errors\n"
      "  randomize:   --design FILE.json | --data FILE.csv --w1 N\n"
      "  rerandomize: --data FILE.csv --w1 N --x COL[,COL] --flavor ht|haj\n"
      "               --alpha A --max-draws N\n"
      "  analyze:     --data FILE.csv --x COLS --v COLS --estimators LIST\n"
      "               --rerandomized --alpha A --xi X --mc-size N\n"
      "               --format csv|json --drop-degenerate\n"
      "  simulate:    --scenario NAME --replications R --threads T\n"
      "               --mc-size N --alpha A --xi X --format csv|json\n"
      "  oracle-check: --design FILE.json --cap N\n";

  std::string subcommand;
  bool json_errors = false;
  try {
    if (args.empty()) {
      err_stream << usage;
      return 2;
    }
    subcommand = args[0];
    if (subcommand == "--help" || subcommand == "-h") {
      out_stream << usage;
      return 0;
    }

    // Collect flag values first; config file parsed below, flags override.
    std::map<std::string, std::string> flags;
    std::set<std::string> switches = {"--json-errors", "--rerandomized",
                                      "--drop-degenerate"};
    for (size_t i = 1; i < args.size(); ++i) {
      const std::string& arg = args[i];
      if (arg.rfind("--", 0) != 0)
        throw ConfigError("unexpected positional argument: " + arg);
      if (switches.count(arg)) {
        flags[arg] = "1";
        continue;
      }
      if (i + 1 >= args.size())
        throw ConfigError("flag " + arg + " needs a value");
      flags[arg] = args[++i];
    }
    json_errors = flags.count("--json-errors") > 0;

    RunConfig cfg;
    if (flags.count("--config")) {
      std::ifstream in(flags["--config"]);
      if (!in)
        throw IoError("cannot open config file: " + flags["--config"]);
      std::ostringstream text;
      text << in.rdbuf();
      cfg = parse_config(text.str(), subcommand);
    } else {
      cfg = parse_config("{}", subcommand);
    }

    static const std::map<std::string, std::set<std::string>> allowed = {
        {"randomize",
         {"--config", "--seed", "--out", "--json-errors", "--design",
          "--data", "--w1", "--m-b1-column", "--plot-column",
          "--drop-degenerate"}},
        {"rerandomize",
         {"--config", "--seed", "--out", "--json-errors", "--data", "--w1",
          "--x", "--flavor", "--alpha", "--max-draws", "--m-b1-column",
          "--plot-column", "--drop-degenerate"}},
        {"analyze",
         {"--config", "--seed", "--out", "--json-errors", "--data", "--x",
          "--v", "--estimators", "--rerandomized", "--alpha", "--xi",
          "--mc-size", "--format", "--drop-degenerate", "--outcome-column",
          "--plot-column"}},
        {"simulate",
         {"--config", "--seed", "--out", "--json-errors", "--scenario",
          "--replications", "--alpha", "--xi", "--mc-size", "--estimators",
          "--threads", "--format", "--max-draws"}},
        {"oracle-check",
         {"--config", "--seed", "--out", "--json-errors", "--design",
          "--data", "--x", "--w1", "--cap", "--m-b1-column",
          "--plot-column"}},
    };
    const auto allowed_it = allowed.find(subcommand);
    if (allowed_it == allowed.end())
      throw ConfigError("unknown subcommand: " + subcommand);
    for (const auto& [flag, value] : flags)
      if (!allowed_it->second.count(flag))
        throw ConfigError("flag " + flag + " is not valid for " + subcommand);

    auto split_list = [](const std::string& text) {
      std::vector<std::string> out;
      std::istringstream in(text);
      std::string item;
      while (std::getline(in, item, ',')) out.push_back(item);
      return out;
    };
    if (flags.count("--seed")) {
      cfg.seed = std::stoull(flags["--seed"]);
      cfg.seed_set = true;
    }
    if (flags.count("--out")) cfg.out = flags["--out"];
    if (flags.count("--design")) {
      std::ifstream in(flags["--design"]);
      if (!in)
        throw IoError("cannot open design file: " + flags["--design"]);
      json doc;
      try {
        in >> doc;
      } catch (const json::exception& err) {
        throw ConfigError(std::string("design file is not valid JSON: ") +
                          err.what());
      }
      cfg.design = detail::parse_design_json(doc);
    }
    if (flags.count("--data")) cfg.data_path = flags["--data"];
    if (flags.count("--w1")) cfg.schema.w1 = std::stoi(flags["--w1"]);
    if (flags.count("--x")) cfg.schema.x_columns = split_list(flags["--x"]);
    if (flags.count("--v")) cfg.schema.v_columns = split_list(flags["--v"]);
    if (flags.count("--m-b1-column"))
      cfg.schema.b1_size_column = flags["--m-b1-column"];
    if (flags.count("--plot-column"))
      cfg.schema.plot_column = flags["--plot-column"];
    if (flags.count("--outcome-column"))
      cfg.schema.outcome_column = flags["--outcome-column"];
    if (flags.count("--drop-degenerate")) cfg.schema.drop_degenerate = true;
    if (flags.count("--rerandomized")) cfg.rerandomized = true;
    if (flags.count("--flavor")) {
      if (flags["--flavor"] == "ht")
        cfg.flavor = Flavor::horvitz_thompson;
      else if (flags["--flavor"] == "haj")
        cfg.flavor = Flavor::hajek;
      else
        throw ConfigError("flavor must be ht or haj");
    }
    if (flags.count("--alpha")) {
      cfg.alpha = std::stod(flags["--alpha"]);
      if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
        throw ConfigError("alpha must lie in (0, 1)");
    }
    if (flags.count("--xi")) {
      cfg.xi = std::stod(flags["--xi"]);
      if (!(cfg.xi > 0.0 && cfg.xi < 1.0))
        throw ConfigError("xi must lie in (0, 1)");
    }
    if (flags.count("--mc-size")) cfg.mc_size = std::stoi(flags["--mc-size"]);
    if (flags.count("--max-draws"))
      cfg.max_draws = std::stoull(flags["--max-draws"]);
    if (flags.count("--estimators"))
      cfg.estimators = split_list(flags["--estimators"]);
    if (flags.count("--replications"))
      cfg.replications = std::stoi(flags["--replications"]);
    if (flags.count("--threads")) cfg.threads = std::stoi(flags["--threads"]);
    if (flags.count("--format")) {
      cfg.format = flags["--format"];
      if (cfg.format != "csv" && cfg.format != "json")
        throw ConfigError("format must be csv or json");
    }
    if (flags.count("--cap"))
      cfg.enumeration_cap = std::stoull(flags["--cap"]);
    if (flags.count("--scenario")) {
      const auto s = scenario_from_name(flags["--scenario"]);
      if (!s) throw ConfigError("unknown scenario: " + flags["--scenario"]);
      cfg.scenario = *s;
      cfg.scenario_set = true;
      cfg.generator = scenario_params(*s);
    }

    if (subcommand == "randomize")
      return detail::run_randomize(cfg, out_stream, err_stream);
    if (subcommand == "rerandomize")
      return detail::run_rerandomize(cfg, out_stream, err_stream);
    if (subcommand == "analyze")
      return detail::run_analyze(cfg, out_stream, err_stream);
    if (subcommand == "simulate")
      return detail::run_simulate(cfg, out_stream, err_stream);
    if (subcommand == "oracle-check")
      return detail::run_oracle_check(cfg, out_stream, err_stream);
    throw ConfigError("unknown subcommand: " + subcommand);
  } catch (const Error& err) {
    if (json_errors)
      detail::write_error_json(err_stream, err.name(), err.what(),
                               subcommand);
    else
      err_stream << "error (" << err.name() << "): " << err.what() << "\n";
    return static_cast<int>(err.kind());
  } catch (const std::exception& err) {
    if (json_errors)
      detail::write_error_json(err_stream, "InternalError", err.what(),
                               subcommand);
    else
      err_stream << "error: " << err.what() << "\n";
    return 3;
  }
}

}  // namespace splitplot::cli
