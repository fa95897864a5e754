#include "sepiv/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "sepiv/dgp.hpp"
#include "sepiv/diagnostics.hpp"
#include "sepiv/parallel.hpp"
#include "sepiv/stats.hpp"

namespace sepiv {

namespace {

using ojson = nlohmann::ordered_json;

// Options shared by every subcommand that fits nuisances.
struct CommonFlags {
  std::string config_path;
  std::optional<int> k;
  std::optional<int> grid_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> level;
  std::optional<double> bandwidth_scale;
  std::optional<double> relevance_tol;
  std::optional<int> jobs;
  std::string out;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file with RunConfig fields")->check(CLI::ExistingFile);
    app->add_option("--k", k, "cross-fitting folds");
    app->add_option("--grid-size", grid_size, "outcome grid points");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--level", level, "confidence level");
    app->add_option("--bandwidth-scale", bandwidth_scale, "multiplier on kernel bandwidths");
    app->add_option("--relevance-tol", relevance_tol, "minimum instrument strength");
    app->add_option("--jobs", jobs, "worker threads");
    app->add_option("--out", out, "write the result here instead of stdout");
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      c = config_from_json(ss.str());
    }
    if (k) c.k_folds = *k;
    if (grid_size) c.grid_size = *grid_size;
    if (seed) c.seed = *seed;
    if (level) c.level = *level;
    if (bandwidth_scale) c.bandwidth_scale = *bandwidth_scale;
    if (relevance_tol) c.relevance_tol = *relevance_tol;
    if (jobs) c.jobs = *jobs;
    c.check();
    return c;
  }
};

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text << '\n';
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::InvalidArgument, "cannot write " + path);
  f << text << '\n';
}

// Adds the resolved config to a JSON result.
std::string with_config(const std::string& result, const RunConfig& config) {
  ojson j = ojson::parse(result);
  j["config"] = ojson::parse(config_to_json(config));
  return j.dump();
}

EstimateResult run_method(const std::string& method, const Dataset& data, const RunConfig& config) {
  if (method == "sepiv")
    return config.median_reps > 1 ? median_adjust(data, config, config.median_reps) : crossfit_att(data, config);
  if (method == "2sls") return est_2sls(data, config.level);
  if (method == "ign") return est_ignorability_aipw(data, config);
  if (method == "ols") return est_ols(data, config.level);
  fail(ErrorCode::ConfigError, "unknown method '" + method + "'");
}

// Covariate probes for the direct check: the coordinate-wise median, then
// each covariate moved to its lower and upper quartile.
std::vector<std::vector<double>> default_probes(const Dataset& data) {
  const int d = data.dim();
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int j = 0; j < d; ++j) cols[static_cast<std::size_t>(j)].push_back(data.x(i)[static_cast<std::size_t>(j)]);
  std::vector<double> mid(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) mid[static_cast<std::size_t>(j)] = median(cols[static_cast<std::size_t>(j)]);
  std::vector<std::vector<double>> probes{mid};
  for (int j = 0; j < d; ++j)
    for (double p : {0.25, 0.75}) {
      auto v = mid;
      v[static_cast<std::size_t>(j)] = quantile(cols[static_cast<std::size_t>(j)], p);
      probes.push_back(v);
    }
  return probes;
}

struct BenchRow {
  std::string method;
  std::size_t ok = 0, failed = 0;
  double truth = 0, mean = 0, bias = 0, ese = 0, ase = 0, coverage = 0, mc_se = 0;
};

std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instrumental-variable ATT estimation under a logit-separable treatment model", "sepiv"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "draw a dataset from a built-in design");
  std::string sim_dgp = "continuous", sim_out, sim_truth_out;
  std::size_t sim_n = 1000;
  std::uint64_t sim_seed = 0, sim_rep = 0;
  sim->add_option("--dgp", sim_dgp, "continuous, binary, null_effect, linear_iv, randomized, choice, choice_interaction");
  sim->add_option("--n", sim_n, "rows")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed);
  sim->add_option("--rep", sim_rep, "replicate index");
  sim->add_option("--out", sim_out, "CSV path (stdout if omitted)");
  sim->add_option("--truth-out", sim_truth_out, "truth JSON path (default <out>.truth.json)");

  // estimate
  auto* est = app.add_subcommand("estimate", "estimate the ATT");
  CommonFlags est_flags;
  est_flags.attach(est);
  std::string est_data, est_method = "sepiv";
  int est_reps = 0;
  std::optional<double> est_truth;
  est->add_option("--data", est_data, "input CSV with header y,a,z,x1..xd")->required();
  est->add_option("--method", est_method)->check(CLI::IsMember({"sepiv", "2sls", "ign", "ols"}));
  est->add_option("--reps", est_reps, "median over this many fold splits");
  est->add_option("--truth", est_truth, "known ATT; adds truth and bias to the output");

  // falsify
  auto* fal = app.add_subcommand("falsify", "check the model's testable implication");
  CommonFlags fal_flags;
  fal_flags.attach(fal);
  std::string fal_data, fal_mode = "ks", fal_class = "cells";
  KsOptions ks;
  fal->add_option("--data", fal_data)->required();
  fal->add_option("--mode", fal_mode)->check(CLI::IsMember({"direct", "ks"}));
  fal->add_option("--b-reps", ks.b_reps, "bootstrap replicates");
  fal->add_option("--xi", ks.xi, "lower bound on the studentizing sd");
  fal->add_option("--alpha", ks.c, "test level");
  fal->add_option("--g-class", fal_class)->check(CLI::IsMember({"cells", "constant"}));

  // qtt
  auto* qtt = app.add_subcommand("qtt", "confidence interval for a quantile effect on the treated");
  CommonFlags qtt_flags;
  qtt_flags.attach(qtt);
  std::string qtt_data;
  QttOptions qopt;
  qtt->add_option("--data", qtt_data)->required();
  qtt->add_option("--q", qopt.q, "quantile level");
  qtt->add_option("--c", qopt.c, "1 - confidence level of the interval");
  qtt->add_option("--c1", qopt.c1, "level spent on the treated-quantile CI");
  qtt->add_option("--boot-reps", qopt.boot_reps);
  qtt->add_option("--candidates", qopt.n_candidates);
  qtt->add_option("--inner", qopt.n_inner);

  // benchmark
  auto* ben = app.add_subcommand("benchmark", "Monte Carlo study on a built-in design");
  CommonFlags ben_flags;
  ben_flags.attach(ben);
  std::string ben_dgp = "continuous", ben_methods = "sepiv,2sls,ign,ols", ben_format = "csv";
  std::size_t ben_n = 2000;
  int ben_reps = 200;
  std::optional<double> ben_truth;
  ben->add_option("--dgp", ben_dgp);
  ben->add_option("--n", ben_n)->check(CLI::PositiveNumber);
  ben->add_option("--reps", ben_reps, "Monte Carlo replications")->check(CLI::PositiveNumber);
  ben->add_option("--methods", ben_methods, "comma-separated subset of sepiv,2sls,ign,ols");
  ben->add_option("--truth", ben_truth, "override the design's ATT");
  ben->add_option("--format", ben_format)->check(CLI::IsMember({"csv", "json"}));

  std::vector<std::string> argv_store{"sepiv"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      fail(ErrorCode::InvalidArgument, e.what());
    }

    if (sim->parsed()) {
      const SimOutput s = simulate_by_id(sim_dgp, sim_n, sim_seed, sim_rep);
      std::ostringstream csv;
      write_csv(csv, s.data);
      double diff = 0.0, treated = 0.0;
      for (std::size_t i = 0; i < s.data.size(); ++i)
        if (s.data.a(i)) {
          diff += s.y1[i] - s.y0[i];
          treated += 1;
        }
      ojson truth;
      truth["dgp"] = s.dgp_id;
      truth["n"] = sim_n;
      truth["seed"] = sim_seed;
      truth["replicate"] = sim_rep;
      truth["true_att"] = s.true_att;
      truth["sample_att"] = treated > 0 ? diff / treated : 0.0;
      if (sim_out.empty()) {
        out << csv.str();
      } else {
        std::ofstream f(sim_out, std::ios::binary);
        if (!f) fail(ErrorCode::InvalidArgument, "cannot write " + sim_out);
        f << csv.str();
      }
      std::string tpath = sim_truth_out;
      if (tpath.empty() && !sim_out.empty()) tpath = sim_out + ".truth.json";
      if (!tpath.empty()) emit(truth.dump(), tpath, out);
      return 0;
    }

    if (est->parsed()) {
      RunConfig config = est_flags.resolve();
      if (est_reps > 0) config.median_reps = est_reps;
      config.check();
      const Dataset data = read_csv_file(est_data);
      const EstimateResult r = run_method(est_method, data, config);
      emit(with_config(result_to_json(r, est_truth), config), est_flags.out, out);
      return 0;
    }

    if (fal->parsed()) {
      const RunConfig config = fal_flags.resolve();
      const Dataset data = read_csv_file(fal_data);
      FalsificationReport r;
      if (fal_mode == "direct") {
        validate(data);
        const OutcomeGrid grid = make_outcome_grid(data, config);
        const auto theta = fit_theta(data, grid, config);
        r = falsify_direct(*theta, default_probes(data), config.relevance_tol);
      } else {
        ks.g_class = fal_class == "constant" ? TestClass::constant : TestClass::cells;
        r = falsify_ks(data, config, ks);
      }
      emit(with_config(falsification_to_json(r), config), fal_flags.out, out);
      return 0;
    }

    if (qtt->parsed()) {
      const RunConfig config = qtt_flags.resolve();
      const Dataset data = read_csv_file(qtt_data);
      emit(with_config(qtt_to_json(qtt_ci(data, config, qopt)), config), qtt_flags.out, out);
      return 0;
    }

    if (ben->parsed()) {
      const RunConfig config = ben_flags.resolve();
      std::vector<std::string> methods;
      {
        std::stringstream ss(ben_methods);
        std::string m;
        while (std::getline(ss, m, ','))
          if (!m.empty()) methods.push_back(m);
      }
      for (const auto& m : methods)
        if (m != "sepiv" && m != "2sls" && m != "ign" && m != "ols") fail(ErrorCode::ConfigError, "unknown method '" + m + "'");
      const auto R = static_cast<std::size_t>(ben_reps);
      // results[rep][method]; a failed fit leaves an empty slot
      std::vector<std::vector<std::optional<EstimateResult>>> results(R, std::vector<std::optional<EstimateResult>>(methods.size()));
      std::vector<double> truths(R, 0.0);
      RunConfig inner = config;
      inner.jobs = 1;
      parallel_for(R, config.jobs, [&](std::size_t r) {
        const SimOutput s = simulate_by_id(ben_dgp, ben_n, config.seed, r);
        truths[r] = s.true_att;
        RunConfig cr = inner;
        cr.seed = stream_seed(config.seed, "benchmark_rep", r);
        for (std::size_t m = 0; m < methods.size(); ++m) {
          try {
            results[r][m] = run_method(methods[m], s.data, cr);
          } catch (const Error&) {
          }
        }
      });
      std::vector<BenchRow> rows;
      for (std::size_t m = 0; m < methods.size(); ++m) {
        BenchRow row;
        row.method = methods[m];
        row.truth = ben_truth ? *ben_truth : truths.front();
        std::vector<double> taus;
        double se_sum = 0, cover = 0;
        for (std::size_t r = 0; r < R; ++r) {
          const auto& res = results[r][m];
          if (!res) {
            ++row.failed;
            continue;
          }
          taus.push_back(res->tau_hat);
          se_sum += res->se;
          cover += (res->ci[0] <= row.truth && row.truth <= res->ci[1]) ? 1 : 0;
        }
        row.ok = taus.size();
        if (row.ok > 0) {
          row.mean = mean(taus);
          row.bias = row.mean - row.truth;
          row.ese = row.ok > 1 ? sample_sd(taus) : 0.0;
          row.ase = se_sum / static_cast<double>(row.ok);
          row.coverage = cover / static_cast<double>(row.ok);
          row.mc_se = row.ese / std::sqrt(static_cast<double>(row.ok));
        }
        rows.push_back(row);
      }
      std::ostringstream text;
      if (ben_format == "json") {
        ojson j;
        j["dgp"] = ben_dgp;
        j["n"] = ben_n;
        j["reps"] = ben_reps;
        auto arr = ojson::array();
        for (const auto& row : rows)
          arr.push_back({{"method", row.method}, {"ok", row.ok}, {"failed", row.failed}, {"truth", row.truth},
                         {"mean", row.mean}, {"bias", row.bias}, {"ese", row.ese}, {"ase", row.ase},
                         {"coverage", row.coverage}, {"mc_se", row.mc_se}});
        j["table"] = arr;
        j["config"] = ojson::parse(config_to_json(config));
        text << j.dump();
      } else {
        text << "# dgp=" << ben_dgp << " n=" << ben_n << " reps=" << ben_reps << " config=" << config_to_json(config) << '\n';
        text << "method,ok,failed,truth,mean,bias,ese,ase,coverage,mc_se";
        for (const auto& row : rows)
          text << '\n'
               << row.method << ',' << row.ok << ',' << row.failed << ',' << format_double(row.truth) << ','
               << format_double(row.mean) << ',' << format_double(row.bias) << ',' << format_double(row.ese) << ','
               << format_double(row.ase) << ',' << format_double(row.coverage) << ',' << format_double(row.mc_se);
      }
      emit(text.str(), ben_flags.out, out);
      return 0;
    }
    fail(ErrorCode::InvalidArgument, "no subcommand");
  } catch (const Error& e) {
    ojson j;
    j["error"] = error_name(e.code());
    j["message"] = e.what();
    err << j.dump() << '\n';
    return is_validation_error(e.code()) ? 2 : 3;
  } catch (const nlohmann::json::exception& e) {
    ojson j;
    j["error"] = "ParseError";
    j["message"] = e.what();
    err << j.dump() << '\n';
    return 2;
  }
}

}  // namespace sepiv
