#pragma once

// Command-line front end: simulate, fdp, adjust and rerun. Every command
// writes its outputs atomically plus a manifest holding the fully resolved
// configuration, which `rerun` uses to regenerate the same files.

#include "pfa/pfa.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>

namespace pfa::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Invalid flag values or combinations; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small helpers

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// FNV-1a, recorded in manifests so a rerun can tell whether its inputs changed.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline std::optional<Index> parse_k(const std::string& s) {
  if (s == "auto") return std::nullopt;
  Index k = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), k);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || k < 0) {
    throw UsageError("--k must be a non-negative integer or 'auto', got '" + s + "'");
  }
  return k;
}

inline std::string k_to_string(const std::optional<Index>& k) { return k ? std::to_string(*k) : "auto"; }

struct MethodChoice {
  FactorMethod method = FactorMethod::least_squares;
  ThresholdRule penalty = ThresholdRule::soft;
};

inline MethodChoice parse_method(const std::string& s) {
  if (s == "ls") return {FactorMethod::least_squares, ThresholdRule::soft};
  if (s == "lad") return {FactorMethod::lad, ThresholdRule::soft};
  if (s == "scad") return {FactorMethod::penalized, ThresholdRule::scad};
  if (s == "huber") return {FactorMethod::penalized, ThresholdRule::soft};
  throw UsageError("--method must be one of ls, lad, scad, huber; got '" + s + "'");
}

inline std::string method_to_string(FactorMethod m, ThresholdRule penalty) {
  switch (m) {
    case FactorMethod::least_squares: return "ls";
    case FactorMethod::lad: return "lad";
    case FactorMethod::penalized: return penalty == ThresholdRule::scad ? "scad" : penalty == ThresholdRule::soft ? "huber" : "hard";
  }
  return "ls";
}

// ---------------------------------------------------------------------------
// Configuration <-> JSON

inline json poet_to_json(const PoetConfig& c) {
  return json{{"k", k_to_string(c.k)},           {"C", c.C},
              {"rule", std::string(to_string(c.rule))}, {"epsilon_k", c.epsilon_k},
              {"pd_floor", c.pd_floor},          {"escalate_c", c.escalate_c},
              {"max_doublings", c.max_doublings}, {"k_max", c.k_max},
              {"compute_min_eig", c.compute_min_eig}};
}

inline PoetConfig poet_from_json(const json& j) {
  PoetConfig c;
  c.k = parse_k(j.at("k").get<std::string>());
  c.C = j.at("C").get<double>();
  c.rule = parse_threshold_rule(j.at("rule").get<std::string>());
  c.epsilon_k = j.at("epsilon_k").get<double>();
  c.pd_floor = j.at("pd_floor").get<double>();
  c.escalate_c = j.at("escalate_c").get<bool>();
  c.max_doublings = j.at("max_doublings").get<int>();
  c.k_max = j.at("k_max").get<Index>();
  c.compute_min_eig = j.at("compute_min_eig").get<bool>();
  return c;
}

struct SimulateSpec {
  std::string preset = "table2";
  std::string experiment = "fdp";   // fdp | power
  SimulationConfig sim;
};

inline json simulate_to_json(const SimulateSpec& s) {
  const SimulationConfig& c = s.sim;
  json signal = c.signal.uniform ? json{{"kind", "uniform"}, {"lo", c.signal.lo}, {"hi", c.signal.hi}}
                                 : json{{"kind", "constant"}, {"value", c.signal.value}};
  return json{{"preset", s.preset},
              {"experiment", s.experiment},
              {"p", c.p},
              {"n", c.n},
              {"k_true", c.k_true},
              {"p1", c.p1},
              {"signal", signal},
              {"noise_model", std::string(to_string(c.sigma_u_kind))},
              {"sigma_u_scale", c.sigma_u_scale},
              {"rounds", c.rounds},
              {"seed", c.seed},
              {"t", c.t},
              {"poet", poet_to_json(c.poet)},
              {"method", method_to_string(c.method, c.penalty)},
              {"lambda", c.lambda ? json(*c.lambda) : json(nullptr)},
              {"benchmark", c.benchmark},
              {"k_sweep", c.k_sweep}};
}

inline SimulateSpec simulate_from_json(const json& j) {
  SimulateSpec s;
  s.preset = j.at("preset").get<std::string>();
  s.experiment = j.at("experiment").get<std::string>();
  SimulationConfig& c = s.sim;
  c.p = j.at("p").get<Index>();
  c.n = j.at("n").get<Index>();
  c.k_true = j.at("k_true").get<Index>();
  c.p1 = j.at("p1").get<Index>();
  const json& sig = j.at("signal");
  if (sig.at("kind").get<std::string>() == "uniform") {
    c.signal = SignalSpec::uniform_range(sig.at("lo").get<double>(), sig.at("hi").get<double>());
  } else {
    c.signal = SignalSpec::constant(sig.at("value").get<double>());
  }
  c.sigma_u_kind = parse_noise_model(j.at("noise_model").get<std::string>());
  c.sigma_u_scale = j.at("sigma_u_scale").get<double>();
  c.rounds = j.at("rounds").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.t = j.at("t").get<double>();
  c.poet = poet_from_json(j.at("poet"));
  const MethodChoice m = parse_method(j.at("method").get<std::string>());
  c.method = m.method;
  c.penalty = m.penalty;
  if (!j.at("lambda").is_null()) c.lambda = j.at("lambda").get<double>();
  c.benchmark = j.at("benchmark").get<bool>();
  c.k_sweep = j.at("k_sweep").get<std::vector<Index>>();
  return s;
}

struct DataSpec {
  std::string data;                  // absolute path
  std::string groups;                // absolute path or empty
  std::vector<double> thresholds;
  PoetConfig poet;
  FactorMethod method = FactorMethod::least_squares;
  ThresholdRule penalty = ThresholdRule::soft;
  std::optional<double> lambda;
  int rank = 0;
  bool standardize = true;
};

inline json data_to_json(const DataSpec& d) {
  return json{{"data", d.data},
              {"groups", d.groups.empty() ? json(nullptr) : json(d.groups)},
              {"t", d.thresholds},
              {"poet", poet_to_json(d.poet)},
              {"method", method_to_string(d.method, d.penalty)},
              {"lambda", d.lambda ? json(*d.lambda) : json(nullptr)},
              {"rank", d.rank},
              {"standardize", d.standardize}};
}

inline DataSpec data_from_json(const json& j) {
  DataSpec d;
  d.data = j.at("data").get<std::string>();
  if (!j.at("groups").is_null()) d.groups = j.at("groups").get<std::string>();
  d.thresholds = j.at("t").get<std::vector<double>>();
  d.poet = poet_from_json(j.at("poet"));
  const MethodChoice m = parse_method(j.at("method").get<std::string>());
  d.method = m.method;
  d.penalty = m.penalty;
  if (!j.at("lambda").is_null()) d.lambda = j.at("lambda").get<double>();
  d.rank = j.at("rank").get<int>();
  d.standardize = j.at("standardize").get<bool>();
  return d;
}

// ---------------------------------------------------------------------------
// Outputs

struct RunOutput {
  std::vector<std::string> files;   // names relative to the output directory
  json results;                     // summary copied into the manifest
  json inputs = json::object();
};

inline void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                           std::uint64_t seed, const std::string& started, const RunOutput& out) {
  json m{{"command", command},
         {"artifact_version", kVersion},
         {"seed", seed},
         {"timestamps", {{"started", started}, {"finished", utc_timestamp()}}},
         {"config", config},
         {"inputs", out.inputs},
         {"outputs", out.files},
         {"results", out.results}};
  write_file_atomic(out_dir / (command + ".manifest.json"), m.dump(2) + "\n");
}

inline json summary_json(const SummaryStat& s) {
  return json{{"mean", number_or_null(s.mean)}, {"sd", number_or_null(s.sd)}, {"count", s.count}};
}

// ---------------------------------------------------------------------------
// simulate

inline SimulateSpec simulate_preset(const std::string& preset) {
  SimulateSpec s;
  s.preset = preset;
  SimulationConfig& c = s.sim;
  c.rounds = 1000;
  if (preset == "table1" || preset == "table2") {
    c.sigma_u_kind = NoiseModel::strict_identity;
  } else if (preset == "krobust") {
    c.sigma_u_kind = NoiseModel::approximate;
    c.n = 50;
    c.benchmark = false;
    c.k_sweep = {3, 4, 5, 6, 7, 8, 9, 10};
  } else if (preset == "khat") {
    c.sigma_u_kind = NoiseModel::strict_identity;
    c.poet.k.reset();
    c.benchmark = false;
  } else if (preset == "power") {
    s.experiment = "power";
    c.sigma_u_kind = NoiseModel::approximate;
    c.sigma_u_scale = 0.1;
    c.p1 = 200;
    c.signal = SignalSpec::uniform_range(0.1, 0.5);
    c.t = kAdjustedThreshold;
    c.benchmark = false;
  } else {
    throw UsageError("unknown preset '" + preset + "' (expected table1, table2, krobust, khat or power)");
  }
  return s;
}

inline RunOutput run_simulate(const SimulateSpec& spec, const fs::path& out_dir, unsigned threads) {
  SimulationConfig cfg = spec.sim;
  cfg.threads = threads;
  RunOutput out;
  json res;

  if (spec.experiment == "power") {
    const ExperimentResult r = run_power_experiment(cfg);
    CsvWriter csv({"round", "R_adj", "V_adj", "fdp_adj", "fdp_adj_hat", "DE", "RE", "k_used", "c_used", "status"});
    for (const RoundRecord& rec : r.rounds) {
      csv.row({std::to_string(rec.round), std::to_string(rec.R), std::to_string(rec.V_true),
               format_double(rec.ok ? rec.fdp_true : std::nan("")), format_double(rec.fdp_poet),
               format_double(rec.de_poet), format_double(rec.re_poet), std::to_string(rec.k_used),
               format_double(rec.c_used), rec.ok ? "ok" : rec.error});
    }
    write_file_atomic(out_dir / "rounds.csv", csv.str());
    const PowerSummary& ps = *r.power;
    res = json{{"experiment", "power"},
               {"rounds", cfg.rounds},
               {"failed_rounds", r.failed_rounds},
               {"adjusted", {{"t", ps.t_adjusted}, {"fdr", ps.fdr_adjusted}, {"fnr", ps.fnr_adjusted}}},
               {"fixed", {{"t", ps.t_fixed}, {"fdr", ps.fdr_fixed}, {"fnr", ps.fnr_fixed}}},
               {"fdr_matched", ps.matched},
               {"bisection_steps", ps.bisection_steps},
               {"de_adjusted_estimate_percent", summary_json(r.de_poet)}};
  } else {
    const ExperimentResult r = run_fdp_experiment(cfg);
    std::vector<std::string> header{"round", "fdp_true", "fdp_A", "fdp_poet", "DE", "RE",
                                    "DE_A", "RE_A", "R", "V_true", "k_used", "c_used"};
    for (Index k : cfg.k_sweep) header.push_back("DE_K" + std::to_string(k));
    header.push_back("status");
    CsvWriter csv(header);
    std::map<Index, int> k_hist;
    for (const RoundRecord& rec : r.rounds) {
      std::vector<std::string> row{std::to_string(rec.round),     format_double(rec.fdp_true),
                                   format_double(rec.fdp_known_cov), format_double(rec.fdp_poet),
                                   format_double(rec.de_poet),     format_double(rec.re_poet),
                                   format_double(rec.de_known_cov), format_double(rec.re_known_cov),
                                   std::to_string(rec.R),          std::to_string(rec.V_true),
                                   std::to_string(rec.k_used),     format_double(rec.c_used)};
      for (std::size_t j = 0; j < cfg.k_sweep.size(); ++j) {
        row.push_back(rec.ok ? format_double(rec.de_sweep[j]) : "nan");
      }
      row.push_back(rec.ok ? "ok" : rec.error);
      csv.row(row);
      if (rec.ok) ++k_hist[rec.k_used];
    }
    write_file_atomic(out_dir / "rounds.csv", csv.str());
    json hist = json::object();
    for (const auto& [k, count] : k_hist) hist[std::to_string(k)] = count;
    json sweep = json::array();
    for (std::size_t j = 0; j < cfg.k_sweep.size(); ++j) {
      std::vector<double> abs_de;
      for (const RoundRecord& rec : r.rounds) {
        if (rec.ok) abs_de.push_back(100.0 * std::abs(rec.de_sweep[j]));
      }
      sweep.push_back(json{{"K", cfg.k_sweep[j]},
                           {"de_percent", summary_json(r.de_sweep[j])},
                           {"median_abs_de_percent", number_or_null(median_of(abs_de))}});
    }
    res = json{{"experiment", "fdp"},
               {"rounds", cfg.rounds},
               {"failed_rounds", r.failed_rounds},
               {"de_known_cov_percent", summary_json(r.de_known_cov)},
               {"re_known_cov_percent", summary_json(r.re_known_cov)},
               {"de_poet_percent", summary_json(r.de_poet)},
               {"re_poet_percent", summary_json(r.re_poet)},
               {"k_used_histogram", hist},
               {"k_sweep", sweep}};
  }
  write_file_atomic(out_dir / "result.json", res.dump(2) + "\n");
  out.files = {"rounds.csv", "result.json"};
  out.results = res;
  return out;
}

// ---------------------------------------------------------------------------
// fdp / adjust

struct PreparedAnalysis {
  std::vector<std::string> names;
  TestVector z;
  FactorFit fit;
  PoetEstimate poet;
  json summary;
};

inline PreparedAnalysis prepare_analysis(const DataSpec& spec, RunOutput& out) {
  const std::string data_text = read_text_file(spec.data);
  out.inputs["data"] = {{"path", spec.data}, {"fnv1a64", fnv1a_hex(data_text)}};
  NumericTable table = parse_numeric_csv(data_text);
  const Index rows = table.values.rows();
  const Index p = table.values.cols();
  if (p < 1) throw DataError("data has no variables");

  PreparedAnalysis a;
  a.names = table.names;
  json summary{{"p", p}};
  Matrix pooled;
  Vector z_raw;
  if (spec.groups.empty()) {
    if (rows < 2) throw DataError("need at least 2 samples, found " + std::to_string(rows));
    const DataMatrix x(table.values);
    z_raw = std::sqrt(static_cast<double>(rows)) * x.values().colwise().mean().transpose();
    pooled = x.values();
    summary["design"] = "one_sample";
    summary["n"] = rows;
    summary["statistic_scale"] = std::sqrt(static_cast<double>(rows));
  } else {
    const std::string group_text = read_text_file(spec.groups);
    out.inputs["groups"] = {{"path", spec.groups}, {"fnv1a64", fnv1a_hex(group_text)}};
    const std::vector<std::string> labels = parse_group_labels(group_text, rows);
    std::vector<std::string> levels;
    for (const auto& l : labels) {
      if (std::find(levels.begin(), levels.end(), l) == levels.end()) levels.push_back(l);
    }
    if (levels.size() != 2) {
      throw DataError("--groups must contain exactly two distinct labels, found " + std::to_string(levels.size()));
    }
    std::vector<Index> ix, iy;
    for (Index r = 0; r < rows; ++r) (labels[static_cast<std::size_t>(r)] == levels[0] ? ix : iy).push_back(r);
    if (ix.size() < 2 || iy.size() < 2) {
      throw DataError("each group needs at least 2 samples (found " + std::to_string(ix.size()) + " and " +
                      std::to_string(iy.size()) + ")");
    }
    Matrix xm(static_cast<Index>(ix.size()), p), ym(static_cast<Index>(iy.size()), p);
    for (std::size_t i = 0; i < ix.size(); ++i) xm.row(static_cast<Index>(i)) = table.values.row(ix[i]);
    for (std::size_t i = 0; i < iy.size(); ++i) ym.row(static_cast<Index>(i)) = table.values.row(iy[i]);
    const DataMatrix x(xm), y(ym);
    z_raw = two_sample_statistics(x, y).values();
    pooled.resize(rows, p);
    pooled.topRows(x.n()) = xm.rowwise() - xm.colwise().mean();
    pooled.bottomRows(y.n()) = ym.rowwise() - ym.colwise().mean();
    const double n = static_cast<double>(x.n()), m = static_cast<double>(y.n());
    summary["design"] = "two_sample";
    summary["groups"] = {{"first", levels[0]}, {"second", levels[1]}};
    summary["n"] = x.n();
    summary["m"] = y.n();
    summary["statistic_scale"] = std::sqrt(n * m / (n + m));
  }

  a.poet = poet_covariance(DataMatrix(pooled), spec.poet);
  auto [corr, d] = to_correlation(a.poet.sigma_poet);
  a.z = TestVector(spec.standardize ? Vector(z_raw.array() / d.array()) : z_raw);
  a.fit = fit_factors(corr, a.poet.k_used, a.z, spec.method, spec.penalty, spec.lambda);

  summary["standardized"] = spec.standardize;
  summary["k_used"] = a.poet.k_used;
  summary["k_auto"] = a.poet.k_auto;
  summary["k_selection_counts"] = a.poet.k_selection_counts;
  summary["c_used"] = a.poet.c_used;
  summary["omega_p"] = a.poet.omega_p;
  summary["residual_pd"] = a.poet.residual_pd;
  summary["min_eig_residual"] = number_or_null(a.poet.min_eig_residual);
  summary["method"] = method_to_string(spec.method, spec.penalty);
  summary["w"] = std::vector<double>(a.fit.w.w.data(), a.fit.w.w.data() + a.fit.w.w.size());
  summary["w_iterations"] = a.fit.w.iterations;
  summary["w_converged"] = a.fit.w.converged;
  a.summary = std::move(summary);
  return a;
}

inline std::vector<Index> rank_by(const Vector& pv, int m) {
  std::vector<Index> idx(static_cast<std::size_t>(pv.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return pv[a] < pv[b]; });
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(m)));
  return idx;
}

inline RunOutput run_fdp(const DataSpec& spec, const fs::path& out_dir) {
  RunOutput out;
  PreparedAnalysis a = prepare_analysis(spec, out);
  const FdpReport rep = fdp_curve(a.z, a.fit.fr, a.fit.w, spec.thresholds);
  CsvWriter csv({"t", "R", "V_hat", "fdp_hat", "fdp_hat_capped"});
  for (const FdpRow& r : rep.rows) {
    csv.row({format_double(r.t), std::to_string(r.R), format_double(r.V_hat), format_double(r.fdp_hat),
             format_double(r.fdp_hat_capped)});
  }
  write_file_atomic(out_dir / "fdp_report.csv", csv.str());
  out.files.push_back("fdp_report.csv");

  if (spec.rank > 0) {
    const PValueVector pv = pvalues(a.z);
    CsvWriter rk({"rank", "variable", "z", "p_value"});
    int pos = 0;
    for (Index i : rank_by(pv.values(), spec.rank)) {
      rk.row({std::to_string(++pos), a.names[static_cast<std::size_t>(i)], format_double(a.z[i]),
              format_double(pv[i])});
    }
    write_file_atomic(out_dir / "ranking.csv", rk.str());
    out.files.push_back("ranking.csv");
  }
  write_file_atomic(out_dir / "fdp_summary.json", a.summary.dump(2) + "\n");
  out.files.push_back("fdp_summary.json");
  out.results = a.summary;
  return out;
}

inline RunOutput run_adjust(const DataSpec& spec, const fs::path& out_dir) {
  RunOutput out;
  PreparedAnalysis a = prepare_analysis(spec, out);
  const TestVector z_adj = adjusted_statistics(a.fit.fr, a.fit.w, a.z);
  const PValueVector pv = pvalues(a.z);
  const PValueVector pv_adj = pvalues(z_adj);

  CsvWriter stats({"variable", "z", "p_value", "z_adjusted", "p_adjusted"});
  for (Index i = 0; i < a.z.size(); ++i) {
    stats.row({a.names[static_cast<std::size_t>(i)], format_double(a.z[i]), format_double(pv[i]),
               format_double(z_adj[i]), format_double(pv_adj[i])});
  }
  write_file_atomic(out_dir / "adjusted_statistics.csv", stats.str());

  check_threshold_list(spec.thresholds);
  CsvWriter rep({"t", "R", "V_hat", "fdp_hat", "fdp_hat_capped", "R_adj", "V_hat_adj", "fdp_adj_hat",
                 "fdp_adj_hat_capped"});
  for (double t : spec.thresholds) {
    const Index R = rejection_counts(pv, t).R;
    const Index R_adj = rejection_counts(pv_adj, t).R;
    const FdpEstimate e = fdp_estimate(a.fit.fr, a.fit.w, t, R);
    const FdpEstimate ea = fdp_adjusted_estimate(a.fit.fr, a.fit.w, t, R_adj);
    rep.row({format_double(t), std::to_string(R), format_double(e.V_hat), format_double(e.fdp_hat),
             format_double(e.fdp_hat_capped), std::to_string(R_adj), format_double(ea.V_hat),
             format_double(ea.fdp_hat), format_double(ea.fdp_hat_capped)});
  }
  write_file_atomic(out_dir / "adjust_report.csv", rep.str());
  out.files = {"adjusted_statistics.csv", "adjust_report.csv"};

  if (spec.rank > 0) {
    CsvWriter rk({"rank", "variable", "z_adjusted", "p_adjusted", "z", "p_value"});
    int pos = 0;
    for (Index i : rank_by(pv_adj.values(), spec.rank)) {
      rk.row({std::to_string(++pos), a.names[static_cast<std::size_t>(i)], format_double(z_adj[i]),
              format_double(pv_adj[i]), format_double(a.z[i]), format_double(pv[i])});
    }
    write_file_atomic(out_dir / "ranking_adjusted.csv", rk.str());
    out.files.push_back("ranking_adjusted.csv");
  }
  write_file_atomic(out_dir / "adjust_summary.json", a.summary.dump(2) + "\n");
  out.files.push_back("adjust_summary.json");
  out.results = a.summary;
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch

inline void execute(const std::string& command, const json& config, std::uint64_t seed, const fs::path& out_dir,
                    unsigned threads, std::ostream& log) {
  const std::string started = utc_timestamp();
  fs::create_directories(out_dir);
  RunOutput out;
  if (command == "simulate") {
    out = run_simulate(simulate_from_json(config), out_dir, threads);
  } else if (command == "fdp") {
    out = run_fdp(data_from_json(config), out_dir);
  } else if (command == "adjust") {
    out = run_adjust(data_from_json(config), out_dir);
  } else {
    throw UsageError("manifest names an unknown command '" + command + "'");
  }
  write_manifest(out_dir, command, config, seed, started, out);
  for (const auto& f : out.files) log << (out_dir / f).string() << "\n";
}

struct EstimationFlags {
  std::string k;
  double epsilon_k = 0.1;
  double c = 0.5;
  std::string rule = "soft";
  std::string method = "ls";
  std::optional<double> lambda;
};

inline void add_estimation_flags(CLI::App* sub, EstimationFlags& f) {
  sub->add_option("--k", f.k, "number of factors, or 'auto'")->capture_default_str();
  sub->add_option("--epsilon-k", f.epsilon_k, "constant for the data-driven k")->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--c", f.c, "threshold constant C (escalated until the residual is PD)")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--rule", f.rule, "residual thresholding rule")->capture_default_str()
      ->check(CLI::IsMember({"hard", "soft", "scad"}));
  sub->add_option("--method", f.method, "estimator of the realized factors")->capture_default_str()
      ->check(CLI::IsMember({"ls", "lad", "scad", "huber"}));
  sub->add_option("--lambda", f.lambda, "penalty level for scad/huber (default sqrt(2 log p))")
      ->check(CLI::NonNegativeNumber);
}

inline void apply_estimation_flags(const EstimationFlags& f, PoetConfig& poet, FactorMethod& method,
                                   ThresholdRule& penalty, std::optional<double>& lambda) {
  poet.k = parse_k(f.k);
  poet.epsilon_k = f.epsilon_k;
  poet.C = f.c;
  poet.rule = parse_threshold_rule(f.rule);
  const MethodChoice m = parse_method(f.method);
  method = m.method;
  penalty = m.penalty;
  lambda = f.lambda;
  if (lambda && method != FactorMethod::penalized) throw UsageError("--lambda only applies to --method scad or huber");
}

/// Entry point shared by the executable and the tests. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Estimate false discovery proportions under unknown dependence (POET-PFA)", "pfa"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  unsigned threads = default_thread_count();
  app.add_option("--threads", threads, "worker threads for simulations (default: PFA_THREADS or 1)")
      ->check(CLI::Range(1u, 1024u));

  // simulate
  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo experiment");
  std::string preset = "table2";
  std::optional<Index> s_n, s_p, s_p1;
  std::optional<int> s_rounds;
  std::optional<std::uint64_t> s_seed;
  std::optional<double> s_t, s_scale;
  std::optional<std::string> s_model;
  std::string s_out = ".";
  EstimationFlags s_est;
  s_est.k = "";
  sim->add_option("--preset", preset, "table1, table2, krobust, khat or power")->capture_default_str()
      ->check(CLI::IsMember({"table1", "table2", "krobust", "khat", "power"}));
  sim->add_option("--n", s_n, "sample size")->check(CLI::Range(Index{2}, Index{1} << 40));
  sim->add_option("--p", s_p, "dimension")->check(CLI::Range(Index{2}, Index{1} << 40));
  sim->add_option("--p1", s_p1, "number of false nulls")->check(CLI::NonNegativeNumber);
  sim->add_option("--rounds", s_rounds, "simulation rounds")->check(CLI::PositiveNumber);
  sim->add_option("--seed", s_seed, "64-bit seed");
  sim->add_option("--t", s_t, "rejection threshold")->check(CLI::Range(0.0, 1.0));
  sim->add_option("--model", s_model, "strict or approximate")->check(CLI::IsMember({"strict", "approximate"}));
  sim->add_option("--sigma-u-scale", s_scale, "scale of the approximate-model noise covariance")
      ->check(CLI::PositiveNumber);
  sim->add_option("--out-dir", s_out, "output directory")->capture_default_str();
  add_estimation_flags(sim, s_est);

  // fdp / adjust share their flags
  struct DataFlags {
    std::string data, groups, t = "1e-4:1e-1:20log", out = ".";
    int rank = 0;
    bool no_standardize = false;
    std::uint64_t seed = 0;
    EstimationFlags est;
  };
  DataFlags fdp_flags, adj_flags;
  fdp_flags.est.k = adj_flags.est.k = "auto";
  auto add_data_flags = [](CLI::App* sub, DataFlags& f) {
    sub->add_option("--data", f.data, "CSV, rows = samples, header of variable names")->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--groups", f.groups, "one group label per sample (two levels)")->check(CLI::ExistingFile);
    sub->add_option("--t", f.t, "thresholds: list and/or ranges like 1e-4:1e-1:20log")->capture_default_str();
    sub->add_option("--rank", f.rank, "also write the m most significant variables")->check(CLI::NonNegativeNumber);
    sub->add_flag("--no-standardize", f.no_standardize, "input is already on the unit-variance scale");
    sub->add_option("--seed", f.seed, "recorded in the manifest (the analysis is deterministic)");
    sub->add_option("--out-dir", f.out, "output directory")->capture_default_str();
    add_estimation_flags(sub, f.est);
  };
  auto* fdp = app.add_subcommand("fdp", "estimate the FDP curve of a data set");
  add_data_flags(fdp, fdp_flags);
  auto* adj = app.add_subcommand("adjust", "dependence-adjusted statistics and their FDP estimates");
  add_data_flags(adj, adj_flags);

  // rerun
  auto* rerun = app.add_subcommand("rerun", "repeat a run from its manifest");
  std::string manifest_path, rerun_out;
  rerun->add_option("--manifest", manifest_path, "manifest written by a previous run")->required()
      ->check(CLI::ExistingFile);
  rerun->add_option("--out-dir", rerun_out, "output directory (default: the manifest's directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help(e.what() == std::string() ? "" : "", CLI::AppFormatMode::Normal);
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    log << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    log << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (sim->parsed()) {
      SimulateSpec spec = simulate_preset(preset);
      SimulationConfig& c = spec.sim;
      if (s_n) c.n = *s_n;
      if (s_p) c.p = *s_p;
      if (s_p1) c.p1 = *s_p1;
      if (s_rounds) c.rounds = *s_rounds;
      if (s_seed) c.seed = *s_seed;
      if (s_t) c.t = *s_t;
      if (s_model) c.sigma_u_kind = parse_noise_model(*s_model);
      if (s_scale) c.sigma_u_scale = *s_scale;
      if (s_est.k.empty()) s_est.k = k_to_string(c.poet.k);
      apply_estimation_flags(s_est, c.poet, c.method, c.penalty, c.lambda);
      c.poet.compute_min_eig = false;
      if (spec.experiment == "power" && s_t) throw UsageError("--t is fixed at 0.001 for the power preset");
      try {
        c.validate();
      } catch (const ParameterError& e) {
        throw UsageError(e.what());
      }
      execute("simulate", simulate_to_json(spec), c.seed, s_out, threads, log);
      return 0;
    }
    if (fdp->parsed() || adj->parsed()) {
      const bool is_fdp = fdp->parsed();
      DataFlags& f = is_fdp ? fdp_flags : adj_flags;
      DataSpec spec;
      spec.data = fs::absolute(f.data).lexically_normal().string();
      if (!f.groups.empty()) spec.groups = fs::absolute(f.groups).lexically_normal().string();
      try {
        spec.thresholds = parse_threshold_list(f.t);
      } catch (const ParseError& e) {
        throw UsageError(std::string("--t: ") + e.what());
      }
      apply_estimation_flags(f.est, spec.poet, spec.method, spec.penalty, spec.lambda);
      spec.rank = f.rank;
      spec.standardize = !f.no_standardize;
      execute(is_fdp ? "fdp" : "adjust", data_to_json(spec), f.seed, f.out, threads, log);
      return 0;
    }
    if (rerun->parsed()) {
      json m;
      try {
        m = json::parse(read_text_file(manifest_path));
      } catch (const json::exception& e) {
        throw UsageError(std::string("manifest is not valid JSON: ") + e.what());
      }
      const fs::path out_dir = rerun_out.empty() ? fs::absolute(manifest_path).parent_path() : fs::path(rerun_out);
      try {
        execute(m.at("command").get<std::string>(), m.at("config"), m.at("seed").get<std::uint64_t>(), out_dir,
                threads, log);
      } catch (const json::exception& e) {
        throw UsageError(std::string("manifest is incomplete: ") + e.what());
      }
      return 0;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pfa::cli
