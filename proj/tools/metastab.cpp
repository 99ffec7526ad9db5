#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <thread>

#include "metastab/config.hpp"
#include "metastab/report.hpp"

namespace fs = std::filesystem;
using namespace metastab;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;

int worker_count() {
  const char* env = std::getenv("METASTAB_WORKERS");
  if (!env || !*env) return std::max(1u, std::thread::hardware_concurrency());
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (*end || v < 1 || v > 1024) throw ConfigError(0, "METASTAB_WORKERS", "expected an integer between 1 and 1024");
  return static_cast<int>(v);
}

// Landscape problems (no saddle at H, empty valleys, bad wells) surface here,
// before any expensive work, and count as configuration errors.
void precheck(const ExperimentSpec& s) {
  try {
    Problem p = make_problem(s.field, s.cycles, s.H, s.epsilon, s.seeds_per_axis, s.barycentric);
    auto check = [&](const std::vector<int>& v, const char* what) {
      for (int w : v)
        if (w >= p.ls.M())
          throw Error(std::string(what) + " names well " + std::to_string(w + 1) + " but there are only " +
                      std::to_string(p.ls.M()));
    };
    check(s.wells, "wells");
    check(s.set_A, "set_A");
    check(s.set_B, "set_B");
    if (s.collapse_well >= p.ls.M()) throw Error("collapse names a well that does not exist");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(0, s.name, e.what());
  }
}

std::string utc_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

int cmd_validate(const std::string& path) {
  Config cfg = load_config(path);
  for (const auto& s : cfg.experiments) precheck(s);
  for (size_t k = 0; k < cfg.experiments.size(); ++k) {
    const auto& s = cfg.experiments[k];
    std::cout << s.name << ": kind " << s.kind << ", potential " << s.potential << ", " << s.Ns.size()
              << " values of N\n";
  }
  std::cout << "ok\n";
  return kExitPass;
}

int cmd_run(const std::string& path, const std::string& out_override, bool dump_flows, bool quiet) {
  Config cfg = load_config(path);
  const int workers = worker_count();
  for (const auto& s : cfg.experiments) precheck(s);
  fs::path out = out_override.empty() ? fs::path(cfg.output.dir) : fs::path(out_override);
  fs::create_directories(out);

  Json timing = Json::object();
  timing["started"] = utc_now();
  timing["workers"] = workers;
  Json per = Json::object();
  std::vector<ExperimentOutput> runs;
  std::vector<Row> rows;
  Json saddles = Json::array();
  for (size_t k = 0; k < cfg.experiments.size(); ++k) {
    ExperimentSpec spec = cfg.experiments[k];
    spec.workers = workers;
    spec.dump_flows = spec.dump_flows || dump_flows;
    auto t0 = std::chrono::steady_clock::now();
    ExperimentResult res;
    try {
      res = run_experiment(spec);
    } catch (const Error& e) {
      std::cerr << "error: experiment " << spec.name << ": " << e.what() << "\n";
      return kExitFail;
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    per[spec.name] = secs;
    int failed = 0;
    for (const auto& r : res.rows) failed += r.pass ? 0 : 1;
    if (!quiet)
      std::cout << (failed ? "[FAIL] " : "[PASS] ") << spec.name << " (" << spec.kind << "): " << res.rows.size()
                << " checks, " << failed << " failed\n";
    if (!quiet)
      for (const auto& r : res.rows)
        if (!r.pass)
          std::cout << "    " << r.theorem_tag << " N=" << r.N << " ratio=" << format_double(r.ratio)
                    << " tolerance=" << format_double(r.tolerance) << "\n";
    rows.insert(rows.end(), res.rows.begin(), res.rows.end());
    saddles.push_back(Json{{"experiment", spec.name}, {"saddles", sanitize(res.saddles)}});
    if (cfg.output.plots) {
      fs::create_directories(out / "plots");
      for (const auto& [name, text] : gnuplot_files(spec, res)) write_text(out / "plots" / name, text);
    }
    if (!res.flow_dumps.empty()) {
      fs::create_directories(out / "flows");
      for (const auto& [name, text] : res.flow_dumps) write_text(out / "flows" / name, text);
    }
    runs.push_back(ExperimentOutput{spec, std::move(res), cfg.echo[k]});
  }
  timing["seconds"] = per;

  std::ostringstream csv;
  write_rows_csv(csv, rows);
  write_text(out / cfg.output.csv, csv.str());
  write_text(out / cfg.output.json, make_report(runs, timing).dump(2) + "\n");
  write_text(out / "saddles.json", saddles.dump(2) + "\n");

  bool ok = true;
  for (const auto& r : runs) ok = ok && r.result.passed();
  if (!quiet) std::cout << (ok ? "all checks passed" : "some checks failed") << "; wrote " << out.string() << "\n";
  return ok ? kExitPass : kExitFail;
}

int cmd_list_builtins() {
  for (const auto& b : builtin_potentials()) {
    std::cout << b.name << "  F = " << b.formula << "  box";
    for (size_t k = 0; k < b.box.lo.size(); ++k) std::cout << " [" << b.box.lo[k] << ", " << b.box.hi[k] << "]";
    std::cout << "\n";
  }
  std::cout << "kinds:";
  for (const auto& k : experiment_kinds()) std::cout << " " << k;
  std::cout << "\n";
  return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metastability checks for cyclic non-reversible lattice chains"};
  app.require_subcommand(1);
  std::string config, out;
  bool dump_flows = false, quiet = false;

  auto* run = app.add_subcommand("run", "run every experiment in a config file and write reports");
  run->add_option("config", config, "YAML configuration")->required();
  run->add_option("-o,--out", out, "output directory (overrides output.dir)");
  run->add_flag("--dump-flows", dump_flows, "write flow CSV dumps for flows-verify experiments");
  run->add_flag("-q,--quiet", quiet, "print nothing on success");

  auto* validate = app.add_subcommand("validate", "parse a config file and check its landscapes");
  validate->add_option("config", config, "YAML configuration")->required();

  auto* list = app.add_subcommand("list-builtins", "list builtin potentials and experiment kinds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitPass : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, out, dump_flows, quiet);
    if (*validate) return cmd_validate(config);
    if (*list) return cmd_list_builtins();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << (config.empty() ? "" : config + ": ") << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
  return kExitConfig;
}
