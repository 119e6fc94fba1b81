// rimesa_cli: dataset generation, experiment runs, metric recomputation and parameter sweeps.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rimesa/rimesa.hpp"

using namespace rimesa;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kTrialFailures = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw UsageError("bad number '" + v + "' for " + key);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

// "rc=1,dc=30,pc=0.9" plus optional bc (delay, steps) and tg (two-generals rate).
NetworkConfig parse_net(const std::string& spec, NetworkConfig net) {
  for (const auto& item : split(spec, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--net expects key=value pairs, got '" + item + "'");
    const std::string k = item.substr(0, eq);
    const double v = parse_double(k, item.substr(eq + 1));
    if (k == "rc") net.rate = v;
    else if (k == "dc") net.range = v;
    else if (k == "pc") net.success = v;
    else if (k == "bc") net.delay = static_cast<long>(v);
    else if (k == "tg") net.two_generals_rate = v;
    else throw UsageError("unknown network key '" + k + "'");
  }
  return net;
}

struct ScenarioArgs {
  std::string scenario = "cpgo-planar";
  int robots = 3;
  int length = 100;
  unsigned long long seed = 0;
  double outliers = 0.15;
  double sigma_r_deg = 0.25;
  double sigma_rz_deg = 1.0;
  double sigma_t = 0.05;

  void add(CLI::App* app) {
    app->add_option("--scenario", scenario, "Measurement configuration")
        ->check(CLI::IsMember({"cpgo-planar", "range-aided-planar", "range-only-planar", "bearing-range-only-planar",
                               "landmark-planar", "landmark-direct-planar", "cpgo-3d"}));
    app->add_option("--robots", robots, "Team size")->check(CLI::PositiveNumber);
    app->add_option("--length", length, "Poses per robot")->check(CLI::Range(2, 1000000));
    app->add_option("--seed", seed, "Dataset seed");
    app->add_option("--outliers", outliers, "Outlier fraction of loop closures (0 or 0.10-0.25)");
    app->add_option("--sigma-r", sigma_r_deg, "Rotation noise, degrees");
    app->add_option("--sigma-rz", sigma_rz_deg, "Range and bearing noise, degrees for bearings");
    app->add_option("--sigma-t", sigma_t, "Translation noise, meters");
  }

  ScenarioConfig config() const {
    ScenarioConfig c = scenario_preset(scenario);
    c.robots = robots;
    c.length = length;
    c.seed = seed;
    c.outlier_fraction = outliers;
    c.sigma_r = deg(sigma_r_deg);
    c.sigma_rz = deg(sigma_rz_deg);
    c.sigma_t = sigma_t;
    c.validate();
    return c;
  }
};

struct RunArgs {
  std::string methods = "rimesa,independent";
  std::string net = "rc=1,dc=30,pc=0.9";
  std::string quality;
  unsigned long long net_seed = 0;
  std::string out = "results";
  int record_every = 1;
  bool threaded = false;
  bool histories = true;

  void add(CLI::App* app) {
    app->add_option("--methods", methods,
                    "Comma list: rimesa,kimesa,imesa,mesa_plus,independent,centralized_oracle,centralized_gnc");
    app->add_option("--net", net, "Network: rc=<rate>,dc=<range m>,pc=<success>[,bc=<delay>][,tg=<rate>]");
    app->add_option("--quality", quality, "Communication quality preset a-e, applied before --net")
        ->check(CLI::IsMember({"a", "b", "c", "d", "e"}));
    app->add_option("--net-seed", net_seed, "Network simulator seed");
    app->add_option("--out", out, "Output directory (RIMESA_OUTPUT_DIR overrides)");
    app->add_option("--record-every", record_every, "Record the solution every N steps")->check(CLI::PositiveNumber);
    app->add_flag("--threaded", threaded, "Run robot updates on worker threads");
    app->add_flag("!--no-history", histories, "Skip history files");
  }

  RunConfig config(unsigned long long seed_offset = 0) const {
    RunConfig rc;
    rc.methods = parse_methods(methods);
    NetworkConfig base;
    if (!quality.empty()) base = quality_preset(quality[0], base);
    rc.network = parse_net(net, base);
    rc.network.seed = net_seed + seed_offset;
    rc.record_every = record_every;
    rc.threaded = threaded;
    rc.validate();
    return rc;
  }
};

template <int D>
bool run_dataset(const Dataset<D>& ds, const RunConfig& rc, OutputFiles& files, const fs::path& dir,
                 const std::string& name, unsigned long long seed, bool histories) {
  const auto runs = run(ds, rc);
  write_outputs(files, dir, name, seed, runs, histories);
  bool ok = true;
  for (const auto& r : runs) {
    if (!r.ok) {
      ok = false;
      std::fprintf(stderr, "%s on %s (seed %llu) failed: %s\n", r.method.c_str(), name.c_str(), seed,
                   r.error.c_str());
    }
  }
  return ok;
}

int cmd_generate(const ScenarioArgs& s, const std::string& out) {
  const ScenarioConfig c = s.config();
  if (c.dim == 3) save(generate<3>(c), out);
  else save(generate<2>(c), out);
  std::printf("wrote %s\n", out.c_str());
  return kOk;
}

int cmd_run(const std::string& dataset, const RunArgs& a) {
  const RunConfig rc = a.config();
  const fs::path dir = output_directory(a.out);
  auto files = open_outputs(dir);
  const std::string name = fs::path(dataset).stem().string();
  std::printf("network seed %llu, output %s\n", a.net_seed, dir.string().c_str());
  bool ok;
  if (dataset_dimension(dataset) == 3) ok = run_dataset(load<3>(dataset), rc, files, dir, name, a.net_seed, a.histories);
  else ok = run_dataset(load<2>(dataset), rc, files, dir, name, a.net_seed, a.histories);
  return ok ? kOk : kTrialFailures;
}

template <int D>
int metrics_for(const std::string& history, const std::string& dataset, const std::string& method) {
  std::ifstream in(history);
  if (!in) throw std::runtime_error("cannot open " + history);
  const auto ds = load<D>(dataset);
  const auto report = evaluate(load_history<D>(in), ds.ground_truth(), measurement_labels(ds));
  write_report_header(std::cout);
  write_report_row(std::cout, method, fs::path(dataset).stem().string(), 0, "ok", report);
  return kOk;
}

int cmd_metrics(const std::string& history, const std::string& dataset, const std::string& method) {
  return dataset_dimension(dataset) == 3 ? metrics_for<3>(history, dataset, method)
                                         : metrics_for<2>(history, dataset, method);
}

// "--axis sigma_rz=0.5,1,2" or "--axis quality=a,c,e".
int cmd_sweep(const ScenarioArgs& s, const RunArgs& a, const std::string& axis, int trials) {
  const auto eq = axis.find('=');
  if (eq == std::string::npos) throw UsageError("--axis expects name=v1,v2,...");
  const std::string key = axis.substr(0, eq);
  const auto values = split(axis.substr(eq + 1), ',');
  if (values.empty()) throw UsageError("--axis has no values");
  if (key != "sigma_rz" && key != "quality") throw UsageError("sweep axis must be sigma_rz or quality");

  const fs::path dir = output_directory(a.out);
  auto files = open_outputs(dir);
  bool ok = true;
  for (const auto& v : values) {
    ScenarioArgs sc = s;
    RunArgs ra = a;
    if (key == "sigma_rz") sc.sigma_rz_deg = parse_double(key, v);
    else ra.quality = v;
    if (key == "quality" && (v.size() != 1 || v[0] < 'a' || v[0] > 'e')) throw UsageError("quality must be a-e");
    const std::string cell = key + "=" + v;
    for (int t = 0; t < trials; ++t) {
      sc.seed = s.seed + static_cast<unsigned long long>(t);
      const ScenarioConfig c = sc.config();
      const RunConfig rc = ra.config(static_cast<unsigned long long>(t));
      std::printf("%s trial %d (seed %llu)\n", cell.c_str(), t, sc.seed);
      std::fflush(stdout);
      if (c.dim == 3) ok &= run_dataset(generate<3>(c), rc, files, dir, cell, sc.seed, a.histories);
      else ok &= run_dataset(generate<2>(c), rc, files, dir, cell, sc.seed, a.histories);
    }
  }
  return ok ? kOk : kTrialFailures;
}

// Flat "key = value" file expanded into options placed ahead of the command line, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::vector<std::string> out;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (path.empty()) return out;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path);
  std::vector<std::string> opts;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string x) {
      const auto b = x.find_first_not_of(" \t\r"), e = x.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(n) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    for (auto& c : key)
      if (c == '_') c = '-';
    if (value == "true") opts.push_back("--" + key);
    else if (value != "false") opts.insert(opts.end(), {"--" + key, value});
  }
  // Right after the subcommand name.
  const auto at = out.empty() ? out.end() : out.begin() + 1;
  out.insert(at, opts.begin(), opts.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed robust SLAM experiments"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_flag("-h,--help", "Print help; every subcommand also accepts --config <key=value file>");

  ScenarioArgs gen_s;
  std::string gen_out = "dataset.txt";
  auto* gen = app.add_subcommand("generate", "Generate a synthetic multi-robot dataset");
  gen_s.add(gen);
  gen->add_option("-o,--output", gen_out, "Dataset file to write");

  std::string run_ds;
  RunArgs run_a;
  auto* runc = app.add_subcommand("run", "Run methods over a dataset and write metric CSVs");
  runc->add_option("--dataset", run_ds, "Dataset file")->required()->check(CLI::ExistingFile);
  run_a.add(runc);

  std::string hist, met_ds, met_method = "unknown";
  auto* met = app.add_subcommand("metrics", "Recompute metrics from a saved history");
  met->add_option("--history", hist, "History file")->required()->check(CLI::ExistingFile);
  met->add_option("--dataset", met_ds, "Dataset the history was produced from")->required()->check(CLI::ExistingFile);
  met->add_option("--method", met_method, "Method label for the output row");

  ScenarioArgs sw_s;
  RunArgs sw_a;
  std::string sw_axis = "sigma_rz=0.5,1,2,4";
  int sw_trials = 5;
  auto* sw = app.add_subcommand("sweep", "Grid over noise level or communication quality");
  sw_s.add(sw);
  sw_a.add(sw);
  sw->add_option("--axis", sw_axis, "Axis: sigma_rz=<deg list> or quality=<a-e list>");
  sw->add_option("--trials", sw_trials, "Seeds per cell")->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_generate(gen_s, gen_out);
    if (*runc) return cmd_run(run_ds, run_a);
    if (*met) return cmd_metrics(hist, met_ds, met_method);
    if (*sw) return cmd_sweep(sw_s, sw_a, sw_axis, sw_trials);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kTrialFailures;
  }
  return kUsage;
}
