// Command-line front end. Exit codes: 0 success, 1 data error, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "inertia/pipeline.hpp"
#include "inertia/synth.hpp"

namespace {

using namespace inertia;

constexpr int exit_data_error = 1;
constexpr int exit_usage_error = 2;

/// Number with an optional unit suffix, converted by the matching factor.
/// An empty suffix means the base unit.
double with_unit(const std::string& text, std::initializer_list<std::pair<std::string_view, double>> table) {
  std::string_view s = io::trim(text);
  std::size_t split = s.size();
  while (split > 0 && !(std::isdigit(static_cast<unsigned char>(s[split - 1])) || s[split - 1] == '.')) --split;
  const auto value = io::parse_double(s.substr(0, split));
  const auto suffix = io::trim(s.substr(split));
  if (!value) throw UsageError("malformed quantity '" + text + "'");
  for (const auto& [unit, factor] : table)
    if (unit == suffix) return *value * factor;
  throw UsageError("unknown unit '" + std::string(suffix) + "' in '" + text + "'");
}

double length_m(const std::string& t) { return with_unit(t, {{"", 1.0}, {"m", 1.0}, {"km", 1e3}, {"mm", 1e-3}}); }
double seconds(const std::string& t) { return with_unit(t, {{"", 1.0}, {"s", 1.0}, {"min", 60.0}, {"h", 3600.0}}); }
double density(const std::string& t) { return with_unit(t, {{"", 1.0}, {"kg/m3", 1.0}}); }
double pressure_pa(const std::string& t) { return with_unit(t, {{"", 1e5}, {"bar", 1e5}, {"Pa", 1.0}}); }

/// Flags shared by the analysis stages. Values given on the command line win
/// over the config file, which wins over built-in defaults.
struct CommonFlags {
  std::string config, topology, states, exclusions, out;
  double tau = 0.0, temperature = 0.0, hexbin_size = 0.0, horizon = 0.0;
  std::size_t threads = 0, hexbin_min_count = 0;
  std::vector<CLI::Option*> options;

  void attach(CLI::App* app, bool needs_network) {
    app->add_option("--config", config, "key=value file overriding defaults")->check(CLI::ExistingFile);
    if (needs_network) {
      options.push_back(app->add_option("--topology", topology, "topology.csv"));
      options.push_back(app->add_option("--states", states, "states.csv"));
      options.push_back(app->add_option("--exclusions", exclusions, "exclusions.csv"));
    }
    options.push_back(app->add_option("--out", out, "output directory (default: out)"));
    options.push_back(app->add_option("--tau", tau, "sampling interval in s; longer gaps are skipped (default 180)"));
    options.push_back(app->add_option("--temperature", temperature, "gas temperature in K (default 283.15)"));
    options.push_back(app->add_option("--threads", threads, "worker threads (default 1)"));
    options.push_back(app->add_option("--hexbin-size", hexbin_size, "hexagon size in log10 units (default 0.1)"));
    options.push_back(app->add_option("--hexbin-min-count", hexbin_min_count, "smallest reported bin count (default 1)"));
    options.push_back(app->add_option("--horizon", horizon, "observation horizon in s for occurrence rates"));
  }

  RunConfig resolve(bool needs_network) const {
    RunConfig cfg;
    if (!config.empty()) apply_config_file(cfg, config);
    auto given = [this](const char* name) {
      for (const auto* o : options)
        if (o->check_lname(name) && o->count() > 0) return true;
      return false;
    };
    if (given("topology")) cfg.topology = topology;
    if (given("states")) cfg.states = states;
    if (given("exclusions")) cfg.exclusions = exclusions;
    if (given("out")) cfg.out_dir = out;
    if (given("tau")) cfg.tau = tau;
    if (given("temperature")) cfg.gas.temperature = temperature;
    if (given("threads")) cfg.threads = threads;
    if (given("hexbin-size")) cfg.hexbin_size = hexbin_size;
    if (given("hexbin-min-count")) cfg.hexbin_min_count = hexbin_min_count;
    if (given("horizon")) cfg.horizon = horizon;
    if (needs_network) {
      if (cfg.topology.empty()) throw UsageError("--topology is required");
      if (cfg.states.empty()) throw UsageError("--states is required");
    }
    cfg.validate();
    return cfg;
  }
};

void print_scan(const ScanCounts& c) {
  std::cout << "frames " << c.frames << ", pairs " << c.pairs << " (" << c.diag.irregular_pairs << " skipped as gaps)\n"
            << "data points " << c.records_total << ", missing " << c.records_missing << ", excluded "
            << c.records_excluded << "\n"
            << "flow change at least the minimum " << c.prefilter_passed << "\n"
            << "relevant per pipe " << c.relevant << "\n";
}

void print_components(const ComponentCounts& c) {
  std::cout << "components " << c.total << " (none " << c.by_class[0] << ", small " << c.by_class[1] << ", high "
            << c.by_class[2] << ")\n";
}

void print_persistence(const PersistenceResult& r) {
  write_persistence_summary(r, std::cout);
}

void print_sweep(const std::vector<SweepRow>& rows) {
  for (const auto& r : rows)
    std::cout << io::format_double(units::pa_to_bar(r.threshold)) << " bar: " << r.n_components << " components, "
              << r.n_pipe_datapoints << " pipe data points, " << interval_column(r.rate) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inertia-term relevance analysis for gas network state histories"};
  app.require_subcommand(1);

  // derive-threshold
  auto* derive = app.add_subcommand("derive-threshold", "Print the smallest flow change that can matter");
  std::string lmax = "200km", tau_min = "180s", dmin = "150mm", rho_max = "0.9", abs_small = "0.1bar";
  derive->add_option("--Lmax", lmax, "longest pipe (m, km)")->capture_default_str();
  derive->add_option("--tau-min", tau_min, "shortest time step (s, min, h)")->capture_default_str();
  derive->add_option("--Dmin", dmin, "smallest diameter (mm, m)")->capture_default_str();
  derive->add_option("--rho-max", rho_max, "largest normal density (kg/m3)")->capture_default_str();
  derive->add_option("--abs-small", abs_small, "small-relevance threshold (bar, Pa)")->capture_default_str();
  std::string derive_config;
  derive->add_option("--config", derive_config, "key=value file overriding defaults")->check(CLI::ExistingFile);

  CommonFlags scan_flags, comp_flags, pers_flags, report_flags, run_flags;
  auto* scan = app.add_subcommand("scan", "Compute per-pipe terms and relevance flags (terms.csv)");
  scan_flags.attach(scan, true);
  auto* comps = app.add_subcommand("components", "Group relevant pipes and evaluate longest paths (components.csv)");
  comp_flags.attach(comps, true);
  auto* pers = app.add_subcommand("persistence", "Run lengths, chains and the realism filter");
  pers_flags.attach(pers, false);
  auto* report = app.add_subcommand("report", "Threshold sweep and hexbin tables");
  report_flags.attach(report, false);
  auto* run = app.add_subcommand("run", "All stages in one pass");
  run_flags.attach(run, true);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic history from a scenario file");
  std::string scenario_path, synth_out = "synth";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> frames;
  synth->add_option("--scenario", scenario_path, "scenario file")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output directory for topology.csv and states.csv")->capture_default_str();
  synth->add_option("--seed", seed, "override the scenario seed");
  synth->add_option("--frames", frames, "override the number of frames");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_usage_error;
  }

  try {
    if (*derive) {
      RunConfig cfg;
      if (!derive_config.empty()) apply_config_file(cfg, derive_config);
      const double dq = derive_min_flow_change(length_m(lmax), seconds(tau_min), length_m(dmin), density(rho_max),
                                               pressure_pa(abs_small));
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f", units::m3s_to_knm3h(dq));
      std::cout << "min_flow_change_kNm3h=" << buf << '\n'
                << "min_flow_change_kNm3h_exact=" << io::format_double(units::m3s_to_knm3h(dq)) << '\n'
                << "safe_side_kNm3h=" << io::format_double(units::m3s_to_knm3h(cfg.thresholds.min_flow_change))
                << '\n';
      return 0;
    }
    if (*scan) {
      print_scan(run_scan(scan_flags.resolve(true)));
      return 0;
    }
    if (*comps) {
      print_components(run_components(comp_flags.resolve(true)));
      return 0;
    }
    if (*pers) {
      print_persistence(run_persistence(pers_flags.resolve(false)));
      return 0;
    }
    if (*report) {
      print_sweep(run_report(report_flags.resolve(false)));
      return 0;
    }
    if (*run) {
      const auto s = run_all(run_flags.resolve(true));
      print_scan(s.scan);
      print_components(s.components);
      print_persistence(s.persistence);
      print_sweep(s.sweep);
      return 0;
    }
    if (*synth) {
      auto sc = parse_scenario_file(scenario_path);
      if (seed) sc.seed = *seed;
      if (frames) sc.frames = *frames;
      auto topo = detail::open_output(synth_out, "topology.csv");
      serialize_topology(sc.network, topo);
      auto states = detail::open_output(synth_out, "states.csv");
      write_states_header(states);
      simulate(sc, [&](const StateFrame& f) { write_state_frame(sc.network, f, states); });
      std::cout << "wrote " << sc.frames << " frames for " << sc.network.elements().size() << " elements to "
                << synth_out << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return exit_usage_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_data_error;
  }
  return exit_usage_error;
}
