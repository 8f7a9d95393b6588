#include "breakiv/cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "breakiv/changepoint.hpp"
#include "breakiv/dataset.hpp"
#include "breakiv/estimators.hpp"
#include "breakiv/linalg.hpp"
#include "breakiv/montecarlo.hpp"
#include "breakiv/pipeline.hpp"
#include "breakiv/stats.hpp"

namespace breakiv {

namespace {

namespace fs = std::filesystem;

std::optional<std::string> resolve_cache_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("BREAKIV_CACHE_DIR")) return std::string(env);
  return std::string(".breakiv-cache");
}

// Exact-fit statistics can be +inf, which JSON cannot carry.
double json_safe(double v) { return std::isfinite(v) ? v : 1e300; }

void write_file(const std::string& dir, const std::string& name, const std::string& body) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream out(fs::path(dir) / name);
  if (!out) fail(ErrorCode::InvalidConfig, "cannot write into output dir " + dir);
  out << body;
}

struct CommonOpts {
  std::string data_path;
  std::string schema_path;
  bool add_intercept = false;
  std::string hac_kernel = "truncated";
  std::string hac_bw = "0";
  double trimming = 0.15;
  std::string out_dir;
  std::string format = "md";
  std::string cache_dir_flag;
  unsigned threads = 0;
  int paths = 100000;
  int grid = 1000;
  std::uint64_t cv_seed = 20240214;
};

void add_common_data_opts(CLI::App* cmd, CommonOpts& o, bool need_data = true) {
  auto* data = cmd->add_option("--data", o.data_path, "input CSV file");
  if (need_data) data->required();
  cmd->add_option("--schema", o.schema_path, "JSON sidecar column-role schema");
  cmd->add_flag("--add-intercept", o.add_intercept, "prepend a column of ones to Z1");
}

void add_common_run_opts(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--hac", o.hac_kernel, "HAC kernel: truncated|bartlett");
  cmd->add_option("--bw", o.hac_bw, "HAC bandwidth: auto|<integer>");
  cmd->add_option("--trim", o.trimming, "trimming fraction");
  cmd->add_option("--out", o.out_dir, "output directory for CSV/JSON artifacts");
  cmd->add_option("--format", o.format, "stdout format: md|csv|json");
  cmd->add_option("--cache-dir", o.cache_dir_flag,
                  "critical-value cache directory (default $BREAKIV_CACHE_DIR)");
  cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)");
  cmd->add_option("--paths", o.paths, "simulated paths for critical values");
  cmd->add_option("--grid", o.grid, "grid size for critical-value simulation");
  cmd->add_option("--cv-seed", o.cv_seed, "seed for critical-value simulation");
}

HacConfig make_hac(const CommonOpts& o) {
  HacConfig cfg;
  if (o.hac_kernel == "bartlett")
    cfg.kernel = Kernel::Bartlett;
  else if (o.hac_kernel == "truncated")
    cfg.kernel = Kernel::Truncated;
  else
    fail(ErrorCode::InvalidConfig, "unknown HAC kernel '" + o.hac_kernel + "'");
  if (o.hac_bw == "auto")
    cfg.bandwidth = Bandwidth::NeweyWestAuto();
  else
    cfg.bandwidth = Bandwidth::Fixed(std::stoi(o.hac_bw));
  return cfg;
}

CritvalSimParams make_sim(const CommonOpts& o) {
  CritvalSimParams sim;
  sim.n_paths = o.paths;
  sim.grid_size = o.grid;
  sim.seed = o.cv_seed;
  sim.threads = o.threads;
  return sim;
}

Dataset load_data(const CommonOpts& o) {
  CsvSchema schema;
  if (!o.schema_path.empty()) schema = load_schema_json(o.schema_path);
  return load_csv(o.data_path, schema, o.add_intercept);
}

// ---------------------------------------------------------------------------
// estimate

nlohmann::json estimate_json(const EstimateResult& res, int break_idx) {
  nlohmann::json j;
  j["estimator"] = estimator_name(res.kind);
  j["break"] = break_idx;
  nlohmann::json regimes = nlohmann::json::array();
  const Eigen::Index p = res.params.theta_per_regime.front().size();
  for (std::size_t r = 0; r < res.params.theta_per_regime.size(); ++r) {
    nlohmann::json reg;
    for (Eigen::Index i = 0; i < p; ++i) {
      const double est = res.params.theta_per_regime[r](i);
      const double se = res.std_errors(static_cast<Eigen::Index>(r) * p + i);
      nlohmann::json coef;
      coef["estimate"] = est;
      coef["std_error"] = se;
      coef["ci_low"] = est - kZ975 * se;
      coef["ci_high"] = est + kZ975 * se;
      reg.push_back(coef);
    }
    regimes.push_back(reg);
  }
  j["regimes"] = regimes;
  return j;
}

std::string estimate_markdown(const EstimateResult& res) {
  std::ostringstream os;
  os << "### " << estimator_name(res.kind) << "\n\n";
  os << "| Regime | Coefficient | Estimate | Std. error | 95% CI low | 95% CI high |\n";
  os << "|---|---|---|---|---|---|\n";
  const Eigen::Index p = res.params.theta_per_regime.front().size();
  char buf[192];
  for (std::size_t r = 0; r < res.params.theta_per_regime.size(); ++r) {
    for (Eigen::Index i = 0; i < p; ++i) {
      const double est = res.params.theta_per_regime[r](i);
      const double se = res.std_errors(static_cast<Eigen::Index>(r) * p + i);
      std::snprintf(buf, sizeof(buf), "| %zu | theta_%ld | %.6f | %.6f | %.6f | %.6f |\n",
                    r + 1, static_cast<long>(i + 1), est, se, est - kZ975 * se,
                    est + kZ975 * se);
      os << buf;
    }
  }
  return os.str();
}

std::string estimate_csv(const std::vector<EstimateResult>& results) {
  std::ostringstream os;
  os << "estimator,regime,coefficient,estimate,std_error,ci_low,ci_high\n";
  char buf[128];
  for (const auto& res : results) {
    const Eigen::Index p = res.params.theta_per_regime.front().size();
    for (std::size_t r = 0; r < res.params.theta_per_regime.size(); ++r)
      for (Eigen::Index i = 0; i < p; ++i) {
        const double est = res.params.theta_per_regime[r](i);
        const double se = res.std_errors(static_cast<Eigen::Index>(r) * p + i);
        std::snprintf(buf, sizeof(buf), "%s,%zu,%ld,%.10g,%.10g,%.10g,%.10g\n",
                      estimator_name(res.kind), r + 1, static_cast<long>(i + 1), est, se,
                      est - kZ975 * se, est + kZ975 * se);
        os << buf;
      }
  }
  return os.str();
}

int cmd_estimate(const CommonOpts& o, const std::string& estimator, int break_idx,
                 bool do_scan) {
  const Dataset data = load_data(o);
  const HacConfig hac = make_hac(o);
  int k = break_idx;
  if (do_scan)
    k = estimate_break_2sls(data, o.trimming).break_index;
  else if (k <= 0)
    fail(ErrorCode::InvalidConfig, "--break is required unless --scan is given");

  std::vector<EstimateResult> results;
  if (estimator == "gmm" || estimator == "all")
    results.push_back(split_sample_gmm(data, k, hac));
  if (estimator == "ts2sls" || estimator == "all") results.push_back(ts2sls(data, k, hac));
  if (estimator == "tsgmm" || estimator == "all") results.push_back(tsgmm(data, k, hac));
  if (results.empty())
    fail(ErrorCode::InvalidConfig, "unknown estimator '" + estimator + "'");

  nlohmann::json j;
  j["data"] = o.data_path;
  j["break"] = k;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : results) list.push_back(estimate_json(r, k));
  j["results"] = list;

  std::ostringstream md;
  md << "Break index: " << k << (do_scan ? " (estimated)" : " (given)") << "\n\n";
  for (const auto& r : results) md << estimate_markdown(r) << "\n";

  if (estimator == "all") {
    const EstimateResult* gmm = nullptr;
    const EstimateResult* tg = nullptr;
    for (const auto& r : results) {
      if (r.kind == EstimatorKind::SplitGMM) gmm = &r;
      if (r.kind == EstimatorKind::TSGMM) tg = &r;
    }
    const MatrixXd diff = gmm->avar_theta - tg->avar_theta;
    const double min_eig = min_eigenvalue(diff);
    md << "Efficiency check: min eigenvalue of avar(GMM) - avar(TSGMM) = " << min_eig
       << " (trace " << diff.trace() << ")\n";
    j["efficiency_gap_min_eigenvalue"] = min_eig;
    j["efficiency_gap_trace"] = diff.trace();
  }

  if (o.format == "json")
    std::cout << j.dump(2) << "\n";
  else if (o.format == "csv")
    std::cout << estimate_csv(results);
  else
    std::cout << md.str();
  write_file(o.out_dir, "estimate.json", j.dump(2) + "\n");
  write_file(o.out_dir, "estimate.csv", estimate_csv(results));
  return 0;
}

// ---------------------------------------------------------------------------
// breaktest / commontest

int cmd_breaktest(const CommonOpts& o) {
  const Dataset data = load_data(o);
  const WaldScan scan = sup_wald_scan(data, o.trimming, make_hac(o));
  const CriticalValueTable table = sup_wald_table(static_cast<int>(data.p()), o.trimming,
                                                  make_sim(o), resolve_cache_dir(o.cache_dir_flag));
  const BreakScan loc = estimate_break_2sls(data, o.trimming);

  nlohmann::json j;
  j["sup_wald"] = json_safe(scan.sup_stat);
  j["argmax_break"] = scan.argmax_break;
  j["estimated_break"] = loc.break_index;
  j["lambda_hat"] = loc.lambda_hat;
  nlohmann::json cvs;
  for (const auto& [level, cv] : table.levels) {
    char lbl[16];
    std::snprintf(lbl, sizeof(lbl), "%.2f", level);
    cvs[lbl] = cv;
    j["reject_at"][lbl] = scan.sup_stat > cv;
  }
  j["critical_values"] = cvs;

  std::ostringstream md;
  md << "Sup-Wald statistic: " << scan.sup_stat << "\n";
  md << "Wald-argmax break: " << scan.argmax_break
     << " (2SLS break estimate: " << loc.break_index << ")\n\n";
  md << "| Level | Critical value | Reject |\n|---|---|---|\n";
  for (const auto& [level, cv] : table.levels)
    md << "| " << level << " | " << cv << " | " << (scan.sup_stat > cv ? "yes" : "no")
       << " |\n";

  std::cout << (o.format == "json" ? j.dump(2) + "\n" : md.str());
  write_file(o.out_dir, "breaktest.json", j.dump(2) + "\n");
  return 0;
}

int cmd_commontest(const CommonOpts& o, int break_idx) {
  const Dataset data = load_data(o);
  const BreakTestReport rep = common_change_wald(data, break_idx, make_hac(o));

  nlohmann::json j;
  j["statistic"] = json_safe(rep.statistic);
  j["p_value"] = rep.p_value ? *rep.p_value : 0.0;
  j["break"] = break_idx;
  for (const auto& [level, cv] : rep.critical_values) {
    char lbl[16];
    std::snprintf(lbl, sizeof(lbl), "%.2f", level);
    j["critical_values"][lbl] = cv;
    j["reject_at"][lbl] = rep.decision_at.at(level);
  }

  std::ostringstream md;
  md << "Common-change Wald statistic at break " << break_idx << ": " << rep.statistic
     << " (p-value " << (rep.p_value ? *rep.p_value : 0.0) << ")\n\n";
  md << "| Level | chi-squared critical value | Reject |\n|---|---|---|\n";
  for (const auto& [level, cv] : rep.critical_values)
    md << "| " << level << " | " << cv << " | "
       << (rep.decision_at.at(level) ? "yes" : "no") << " |\n";

  std::cout << (o.format == "json" ? j.dump(2) + "\n" : md.str());
  write_file(o.out_dir, "commontest.json", j.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// pipeline

int cmd_pipeline(const CommonOpts& o, double level, int max_breaks, double bp_trim,
                 bool no_bonferroni) {
  const Dataset data = load_data(o);
  PipelineConfig cfg;
  cfg.trimming = o.trimming;
  cfg.bp_trimming = bp_trim;
  cfg.level = level;
  cfg.max_breaks = max_breaks;
  cfg.hac = make_hac(o);
  cfg.bonferroni = !no_bonferroni;
  cfg.critval_sim = make_sim(o);
  cfg.cache_dir = resolve_cache_dir(o.cache_dir_flag);

  const PipelineReport report = run_four_stage(data, cfg);
  std::cout << (o.format == "json" ? to_json(report) + "\n" : to_text(report));
  write_file(o.out_dir, "pipeline.json", to_json(report) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// mc

struct McCellSpec {
  std::string heading;
  McConfig cfg;
};

std::vector<McCellSpec> table_preset(int table, const McConfig& base) {
  std::vector<McCellSpec> cells;
  auto cell = [&](int T, int niv, ErrScheme scheme, McScenario scen, const char* extra = "") {
    McConfig c = base;
    c.T = T;
    c.n_iv = niv;
    c.scheme = scheme;
    c.scenario = scen;
    std::ostringstream os;
    os << "T=" << T << ", n_IV=" << niv << ", " << scheme_name(scheme) << extra;
    cells.push_back({os.str(), c});
  };
  const auto known = McScenario::KnownBreak;
  const auto est = McScenario::EstimatedBreak;
  switch (table) {
    case 1:
    case 2:
    case 3: {
      const ErrScheme s = table == 1 ? ErrScheme::HOM
                          : table == 2 ? ErrScheme::HET1
                                       : ErrScheme::HET2;
      for (int T : {400, 800})
        for (int niv : {1, 4}) cell(T, niv, s, known);
      break;
    }
    case 4:
    case 5:
    case 6: {
      const ErrScheme s = table == 4 ? ErrScheme::HOM
                          : table == 5 ? ErrScheme::HET1
                                       : ErrScheme::HET2;
      for (int T : {400, 800})
        for (int niv : {1, 4}) cell(T, niv, s, est);
      break;
    }
    case 7:
      for (ErrScheme s : {ErrScheme::HOM, ErrScheme::HET1, ErrScheme::HET2})
        cell(400, 4, s, McScenario::NoBreakEstimated);
      break;
    case 9:
      for (ErrScheme s : {ErrScheme::HOM, ErrScheme::HET1, ErrScheme::HET2})
        cell(400, 4, s, McScenario::PreTest);
      break;
    default:
      fail(ErrorCode::InvalidConfig, "unknown table preset " + std::to_string(table));
  }
  return cells;
}

ErrScheme parse_scheme(const std::string& s) {
  if (s == "hom" || s == "HOM") return ErrScheme::HOM;
  if (s == "het1" || s == "HET1") return ErrScheme::HET1;
  if (s == "het2" || s == "HET2") return ErrScheme::HET2;
  fail(ErrorCode::InvalidConfig, "unknown error scheme '" + s + "'");
}

McScenario parse_scenario(const std::string& s) {
  if (s == "known") return McScenario::KnownBreak;
  if (s == "estimated") return McScenario::EstimatedBreak;
  if (s == "nobreak") return McScenario::NoBreakEstimated;
  if (s == "pretest") return McScenario::PreTest;
  fail(ErrorCode::InvalidConfig, "unknown scenario '" + s + "'");
}

int cmd_mc(const CommonOpts& o, int table, int reps, std::uint64_t seed, int T, int niv,
           const std::string& scheme, const std::string& scenario, double lambda0,
           double change_size, double rho, double level) {
  McConfig base;
  base.n_reps = reps;
  base.seed = seed;
  base.trimming = o.trimming;
  base.level = level;
  base.hac = make_hac(o);
  base.threads = o.threads;
  base.critval_sim = make_sim(o);
  base.cache_dir = resolve_cache_dir(o.cache_dir_flag);
  base.rho = rho;
  base.lambda0 = lambda0;
  base.change_size = change_size;

  std::ostringstream md, csv;
  if (table == 8) {
    McConfig c = base;
    c.T = 400;
    c.n_iv = 1;
    for (ErrScheme s : {ErrScheme::HOM, ErrScheme::HET1, ErrScheme::HET2}) {
      c.scheme = s;
      const auto rows = detection_experiment(c, {1.0, 0.5, 0.3, 0.0});
      md << "### " << scheme_name(s) << "\n\n" << to_markdown(rows) << "\n";
      csv << "# " << scheme_name(s) << "\n" << to_csv(rows);
    }
  } else if (table > 0) {
    for (const auto& spec : table_preset(table, base)) {
      const McReport rep = run_mc(spec.cfg);
      md << "### " << spec.heading << "\n\n" << to_markdown(rep) << "\n";
      csv << "# " << spec.heading << "\n" << to_csv(rep);
    }
  } else {
    McConfig c = base;
    c.T = T;
    c.n_iv = niv;
    c.scheme = parse_scheme(scheme);
    c.scenario = parse_scenario(scenario);
    if (c.scenario == McScenario::NoBreakEstimated) c.lambda0.reset();
    const McReport rep = run_mc(c);
    md << to_markdown(rep);
    csv << to_csv(rep);
    if (!rep.estimated_breaks.empty())
      write_file(o.out_dir, "mc_breaks.csv", breaks_to_csv(rep));
  }
  std::cout << (o.format == "csv" ? csv.str() : md.str());
  write_file(o.out_dir, "mc.csv", csv.str());
  write_file(o.out_dir, "mc.md", md.str());
  return 0;
}

// ---------------------------------------------------------------------------
// critvals

int cmd_critvals(const CommonOpts& o, int p) {
  const CriticalValueTable table =
      sup_wald_table(p, o.trimming, make_sim(o), resolve_cache_dir(o.cache_dir_flag));
  nlohmann::json j;
  j["p"] = p;
  j["trimming"] = o.trimming;
  j["source"] =
      table.source == CriticalValueTable::Source::Hardcoded ? "hardcoded" : "simulated";
  std::ostringstream md;
  md << "Sup-Wald critical values (p=" << p << ", trimming=" << o.trimming << ")\n\n";
  md << "| Level | Critical value |\n|---|---|\n";
  for (const auto& [level, cv] : table.levels) {
    char lbl[16];
    std::snprintf(lbl, sizeof(lbl), "%.2f", level);
    j["critical_values"][lbl] = cv;
    md << "| " << level << " | " << cv << " |\n";
  }
  std::cout << (o.format == "json" ? j.dump(2) + "\n" : md.str());
  write_file(o.out_dir, "critvals.json", j.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// --config expansion: values from a JSON file become defaults for options
// that were not given on the command line.

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      ++i;
      continue;
    }
    out.push_back(args[i]);
  }
  if (config_path.empty()) return out;

  std::ifstream in(config_path);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot open config file " + config_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("bad config JSON: ") + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (std::find(out.begin(), out.end(), flag) != out.end()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else {
      out.push_back(flag);
      out.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Estimation and inference in linear IV models with structural changes"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string estimator = "all";
  int break_idx = -1;
  bool do_scan = false;
  double level = 0.05;
  int max_breaks = 2;
  double bp_trim = 0.2;
  bool no_bonferroni = false;
  int table = 0;
  int reps = 1000;
  std::uint64_t seed = 1;
  int T = 400, niv = 1, p_dim = 2;
  std::string scheme = "hom", scenario = "known";
  double lambda0 = 0.4, change_size = 1.0, rho = -0.5;

  auto* est = app.add_subcommand("estimate", "split-sample GMM / TS2SLS / TSGMM at a break");
  add_common_data_opts(est, o);
  add_common_run_opts(est, o);
  est->add_option("--estimator", estimator, "gmm|ts2sls|tsgmm|all");
  est->add_option("--break", break_idx, "break index (last index of regime 1)");
  est->add_flag("--scan", do_scan, "estimate the break location first");

  auto* bt = app.add_subcommand("breaktest", "sup-Wald test for a structural change");
  add_common_data_opts(bt, o);
  add_common_run_opts(bt, o);

  auto* ct = app.add_subcommand("commontest", "Wald test for a common first/second-stage change");
  add_common_data_opts(ct, o);
  add_common_run_opts(ct, o);
  ct->add_option("--break", break_idx, "first-stage break index")->required();

  auto* pl = app.add_subcommand("pipeline", "four-stage inference procedure");
  add_common_data_opts(pl, o);
  add_common_run_opts(pl, o);
  pl->add_option("--level", level, "nominal test level");
  pl->add_option("--max-breaks", max_breaks, "max first-stage breaks per equation");
  pl->add_option("--bp-trim", bp_trim, "trimming for first-stage break detection");
  pl->add_flag("--no-bonferroni", no_bonferroni, "disable the Bonferroni correction");

  auto* mc = app.add_subcommand("mc", "Monte Carlo experiments");
  add_common_run_opts(mc, o);
  mc->add_option("--table", table, "simulation-table preset (1-9)");
  mc->add_option("--reps", reps, "replications");
  mc->add_option("--seed", seed, "master seed");
  mc->add_option("--T", T, "sample size");
  mc->add_option("--niv", niv, "number of external instruments");
  mc->add_option("--scheme", scheme, "hom|het1|het2");
  mc->add_option("--scenario", scenario, "known|estimated|nobreak|pretest");
  mc->add_option("--lambda0", lambda0, "true change fraction");
  mc->add_option("--size", change_size, "change size");
  mc->add_option("--rho", rho, "error correlation");
  mc->add_option("--level", level, "test level for pre-testing");

  auto* cv = app.add_subcommand("critvals", "sup-Wald critical values");
  add_common_run_opts(cv, o);
  cv->add_option("--p", p_dim, "number of tested parameters")->required();

  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    args = expand_config(args);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    std::vector<const char*> cargs = {argv[0]};
    for (const auto& a : args) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (est->parsed()) return cmd_estimate(o, estimator, break_idx, do_scan);
    if (bt->parsed()) return cmd_breaktest(o);
    if (ct->parsed()) return cmd_commontest(o, break_idx);
    if (pl->parsed()) return cmd_pipeline(o, level, max_breaks, bp_trim, no_bonferroni);
    if (mc->parsed())
      return cmd_mc(o, table, reps, seed, T, niv, scheme, scenario, lambda0, change_size,
                    rho, level);
    if (cv->parsed()) return cmd_critvals(o, p_dim);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return is_validation_error(e.code()) ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace breakiv
