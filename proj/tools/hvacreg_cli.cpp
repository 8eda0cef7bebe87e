// hvacreg: fit / optimize / validate / sweep / export-milp.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hvacreg/config.hpp"
#include "hvacreg/errors.hpp"
#include "hvacreg/pipeline.hpp"

namespace {

using namespace hvacreg;

struct Overrides {
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<double> epsilon;
  std::optional<std::string> method;
  std::optional<std::size_t> num_windows;
  std::optional<std::size_t> components;
  std::optional<std::size_t> lnq_pieces;
  std::optional<std::size_t> exp_pieces;
  std::optional<std::string> signals_csv;
  std::optional<std::string> synth_kind;
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> synth_hours;
  std::optional<std::string> profile;
  std::optional<double> comfort_min;
  std::optional<double> comfort_max;
  std::optional<int> pool_radius;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON configuration file");
  cmd->add_option("-o,--out", o.out_dir, "Output directory");
  cmd->add_option("--epsilon", o.epsilon, "Risk level in (0, 0.5)");
  cmd->add_option("--num-windows", o.num_windows, "Compression windows per hour");
  cmd->add_option("--components", o.components, "Mixture components per feature");
  cmd->add_option("--lnq-pieces", o.lnq_pieces, "Tangent lines for ln of the normal quantile");
  cmd->add_option("--exp-pieces", o.exp_pieces, "Chords for exp(rho)");
  cmd->add_option("--signals", o.signals_csv, "Signal CSV (timestamp,value)");
  cmd->add_option("--synth", o.synth_kind, "Synthetic signal kind (constant|mean_reverting|bimodal_burst)");
  cmd->add_option("--synth-seed", o.synth_seed, "Synthetic signal seed");
  cmd->add_option("--synth-hours", o.synth_hours, "Synthetic signal hours");
  cmd->add_option("--profile", o.profile, "Day profile CSV");
  cmd->add_option("--comfort-min", o.comfort_min, "Lower comfort bound [C]");
  cmd->add_option("--comfort-max", o.comfort_max, "Upper comfort bound [C]");
  cmd->add_option("--pool-radius", o.pool_radius, "Hours-of-day pooled per fitted model (12 = all)");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  if (o.out_dir) c.output_dir = *o.out_dir;
  if (o.epsilon) c.formulation.epsilon = *o.epsilon;
  if (o.method) c.method = parse_method(*o.method);
  if (o.num_windows) c.num_windows = *o.num_windows;
  if (o.components) c.em.num_components = *o.components;
  if (o.lnq_pieces) c.formulation.lnq_pieces = *o.lnq_pieces;
  if (o.exp_pieces) c.formulation.exp_pieces = *o.exp_pieces;
  if (o.signals_csv) c.signals.csv_path = *o.signals_csv;
  if (o.synth_kind) c.signals.kind = parse_synth_kind(*o.synth_kind);
  if (o.synth_seed) c.signals.seed = *o.synth_seed;
  if (o.synth_hours) c.signals.hours = *o.synth_hours;
  if (o.profile) c.profile_path = *o.profile;
  if (o.comfort_min) c.building.comfort_min = *o.comfort_min;
  if (o.comfort_max) c.building.comfort_max = *o.comfort_max;
  if (o.pool_radius) c.pool_radius = *o.pool_radius;
  c.validate();
  return c;
}

std::string eps_tag(double eps) {
  std::ostringstream os;
  os << eps;
  return os.str();
}

int cmd_fit(const RunConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  log_msg(1, "loading signals");
  const auto split = split_signals(load_signals(cfg), cfg.holdout_fraction, cfg.split_seed);
  log_msg(1, "fitting on " + std::to_string(split.fit.size()) + " hours, " + std::to_string(split.holdout.size()) +
                 " held out");
  const auto fm = fit_models(cfg, split);
  write_fit(fm, dir);
  log_msg(1, "wrote " + std::to_string(2 * fm.num_windows * 24) + " mixture files to " + (dir / "mixtures").string());
  std::cout << "config_hash=" << fm.config_hash << '\n';
  return kExitOk;
}

int offers_exit_code(const std::vector<SolveResult>& offers) {
  int code = kExitOk;
  for (const auto& o : offers) {
    if (o.status == SolveStatus::numerical_failure) return kExitNumericalFailure;
    if (o.status == SolveStatus::infeasible) code = kExitInfeasible;
  }
  return code;
}

int cmd_optimize(const RunConfig& cfg, const std::string& output) {
  const fs::path dir = cfg.output_dir;
  const auto fm = load_fit(dir, cfg);
  const auto offers = optimize_day(cfg, fm, cfg.method);
  OfferFile f{fm.config_hash, cfg.method, cfg.formulation.epsilon, offers};
  const fs::path path =
      output.empty() ? dir / ("offers_" + to_string(cfg.method) + "_eps" + eps_tag(cfg.formulation.epsilon) + ".csv")
                     : fs::path(output);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_offers(f, out);
  }
  for (const auto& o : offers) {
    std::ostringstream os;
    os << "hour " << o.hour << ": " << to_string(o.status) << " p=" << o.p_ha << " R=" << o.r_ha
       << " obj=" << o.objective << " (" << o.subproblems << " solved, " << o.pruned << " pruned, " << o.wall_ms
       << " ms)";
    log_msg(o.ok() ? 2 : 1, os.str());
  }
  std::cout << path.string() << '\n';
  std::cout << "total_cost=" << total_cost(offers) << '\n';
  return offers_exit_code(offers);
}

int cmd_validate(const RunConfig& cfg, const std::vector<std::string>& files) {
  const fs::path dir = cfg.output_dir;
  const auto fm = load_fit(dir, cfg);
  std::vector<OfferFile> offer_files;
  for (const auto& p : files) offer_files.push_back(read_offers(fs::path(p)));
  for (const auto& f : offer_files)
    if (f.config_hash != fm.config_hash)
      throw ConfigurationError("offer file config " + f.config_hash + " does not match fit config " + fm.config_hash);
  const auto holdout = holdout_signals(cfg, fm);
  std::vector<MethodRun> runs;
  for (const auto& f : offer_files) {
    log_msg(1, "validating " + to_string(f.method) + " at epsilon " + eps_tag(f.epsilon) + " on " +
                   std::to_string(holdout.size()) + " holdout hours");
    runs.push_back({f.method, f.epsilon, f.offers, validate_day(cfg, f.offers, holdout)});
  }
  const auto rows = compare_methods(runs);
  {
    std::ofstream csv(dir / "report.csv", std::ios::binary);
    csv << "# config_hash=" << fm.config_hash << '\n';
    write_report_csv(rows, csv);
    std::ofstream js(dir / "report.json", std::ios::binary);
    auto j = comparison_json(runs, rows);
    j["config_hash"] = fm.config_hash;
    js << j.dump(2) << '\n';
  }
  write_report_csv(rows, std::cout);
  for (const auto& r : rows)
    if (r.exceeds_epsilon)
      log_msg(1, to_string(r.method) + " at epsilon " + eps_tag(r.epsilon) + ": empirical violation " +
                     std::to_string(r.max_violation) + " exceeds epsilon");
  return kExitOk;
}

std::vector<double> parse_values(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ParameterError("sweep: bad value '" + cell + "'");
    }
  }
  return out;
}

int cmd_sweep(const RunConfig& cfg, const std::string& axis, const std::string& values,
              const std::vector<std::string>& methods, bool no_validate) {
  const auto ax = parse_sweep_axis(axis);
  std::vector<Method> ms;
  for (const auto& m : methods) ms.push_back(parse_method(m));
  if (ms.empty()) ms.push_back(cfg.method);
  const auto rows = run_sweep(cfg, ax, parse_values(values), ms, !no_validate);
  fs::create_directories(cfg.output_dir);
  const fs::path path = fs::path(cfg.output_dir) / ("sweep_" + axis + ".csv");
  {
    std::ofstream out(path, std::ios::binary);
    out << "# config_hash=" << config_hash(cfg) << '\n';
    write_sweep_csv(rows, out);
  }
  write_sweep_csv(rows, std::cout);
  return kExitOk;
}

int cmd_export(const RunConfig& cfg, int hour, const std::string& output) {
  const fs::path dir = cfg.output_dir;
  const auto fm = load_fit(dir, cfg);
  const auto profile = cfg.day_profile();
  const HourInputs* in = nullptr;
  for (const auto& h : profile)
    if (h.hour == hour) in = &h;
  if (!in) throw ParameterError("export-milp: hour " + std::to_string(hour) + " not in the day profile");
  const auto specs = hour_specs(cfg, fm, *in, Method::proposed);
  const fs::path path = output.empty() ? dir / ("milp_h" + std::to_string(hour) + ".txt") : fs::path(output);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "\\ config_hash=" << fm.config_hash << " epsilon=" << cfg.formulation.epsilon << " hour=" << hour << '\n';
  write_bigm_export(specs, out);
  std::cout << path.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hour-ahead HVAC frequency-regulation capacity offers under non-Gaussian signal uncertainty"};
  app.require_subcommand(1);
  Overrides o;

  auto* fit = app.add_subcommand("fit", "Fit mixture models and write the feature cache");
  add_common(fit, o);

  std::string opt_output;
  auto* opt = app.add_subcommand("optimize", "Compute per-hour offers");
  add_common(opt, o);
  opt->add_option("-m,--method", o.method, "proposed | b1 | b2");
  opt->add_option("--output", opt_output, "Offer CSV path");

  std::vector<std::string> offer_files;
  auto* val = app.add_subcommand("validate", "Monte Carlo validation and method comparison");
  add_common(val, o);
  val->add_option("offers", offer_files, "Offer CSV files")->required();

  std::string axis, values;
  std::vector<std::string> methods;
  bool no_validate = false;
  auto* sweep = app.add_subcommand("sweep", "Sensitivity sweep");
  add_common(sweep, o);
  sweep->add_option("--axis", axis, "epsilon | num_windows | num_exp_pieces")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--methods", methods, "Methods to run (default: configured method)")->delimiter(',');
  sweep->add_flag("--no-validate", no_validate, "Skip Monte Carlo validation");

  int hour = 12;
  std::string exp_output;
  auto* exp = app.add_subcommand("export-milp", "Write the big-M mixed-integer form of one hour");
  add_common(exp, o);
  exp->add_option("--hour", hour, "Hour of day");
  exp->add_option("--output", exp_output, "Export path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto cfg = resolve(o);
    if (fit->parsed()) return cmd_fit(cfg);
    if (opt->parsed()) return cmd_optimize(cfg, opt_output);
    if (val->parsed()) return cmd_validate(cfg, offer_files);
    if (sweep->parsed()) return cmd_sweep(cfg, axis, values, methods, no_validate);
    if (exp->parsed()) return cmd_export(cfg, hour, exp_output);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumericalFailure;
  }
  return kExitUsage;
}
