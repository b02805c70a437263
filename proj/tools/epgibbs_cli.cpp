// Command-line driver: dataset generation, chains, benchmarks, the
// scale-mixture diagnostic and evaluation over finished runs.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <epgibbs/harness.hpp>

using namespace epg;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> sampler;
  std::optional<int> sweeps;
  std::optional<int> refresh_every;
  std::optional<int> quad_m;
  std::optional<double> alpha;
  std::optional<int> threads;
  std::optional<int> n;
  std::optional<int> K;
  std::optional<std::string> snr;
  std::vector<std::string> dirs;
};

void add_common(CLI::App *cmd, Flags &f) {
  cmd->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "root seed (overrides the config)");
  cmd->add_option("--out", f.out, "output directory (overrides the config)");
}

void add_sampler_flags(CLI::App *cmd, Flags &f) {
  cmd->add_option("--sampler", f.sampler, "naive | blocked | collapsed | ep");
  cmd->add_option("--sweeps", f.sweeps, "number of Gibbs sweeps");
  cmd->add_option("--refresh-every", f.refresh_every, "full EP refresh cadence (0 = never)");
  cmd->add_option("--quad-m", f.quad_m, "quadrature nodes for the MVT scale");
  cmd->add_option("--alpha", f.alpha, "Dirichlet concentration");
  cmd->add_option("--threads", f.threads, "worker threads for candidate evaluation");
}

ExperimentConfig load_config(const Flags &f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : config_from_json(read_json(f.config));
  if (f.seed)
    c.seed = *f.seed;
  if (f.out)
    c.out = *f.out;
  if (f.sampler)
    c.sampler = *f.sampler;
  if (f.sweeps)
    c.sweeps = *f.sweeps;
  if (f.refresh_every)
    c.refresh_every = *f.refresh_every;
  if (f.quad_m)
    c.quad_m = *f.quad_m;
  if (f.alpha)
    c.alpha = *f.alpha;
  if (f.threads)
    c.threads = *f.threads;
  if (f.n) {
    c.ts.n = *f.n;
    c.mvt.n = *f.n;
  }
  if (f.K) {
    c.ts.K = *f.K;
    c.mvt.K = *f.K;
  }
  if (f.snr)
    c.mvt.mean_scale = MvtGenParams::snr_scale(*f.snr);
  return c;
}

int fail(const std::string &command, const std::optional<std::string> &out,
         const std::exception &e) {
  const json rec = {{"error", {{"command", command}, {"type", error_kind(e)}, {"message", e.what()}}}};
  std::cerr << rec.dump() << '\n';
  if (out) {
    try {
      fs::create_directories(*out);
      write_json(fs::path(*out) / "error.json", rec);
    } catch (const std::exception &) {
      // the record on stderr is enough
    }
  }
  return 2;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"EP-collapsed Gibbs samplers for Student-t mixtures and time-series clustering"};
  app.require_subcommand(1);
  Flags f;

  auto *gen_ts = app.add_subcommand("generate-ts", "simulate a time-series clustering dataset");
  add_common(gen_ts, f);
  gen_ts->add_option("--n", f.n, "number of series");
  gen_ts->add_option("--K", f.K, "number of clusters");

  auto *gen_mvt = app.add_subcommand("generate-mvt", "simulate a Student-t mixture dataset");
  add_common(gen_mvt, f);
  gen_mvt->add_option("--n", f.n, "number of items");
  gen_mvt->add_option("--K", f.K, "number of clusters");
  gen_mvt->add_option("--snr", f.snr, "easy | medium | hard");

  auto *run_cmd = app.add_subcommand("run", "run one chain and write trace.csv, timing.csv, summary.json");
  add_common(run_cmd, f);
  add_sampler_flags(run_cmd, f);

  auto *bench_cmd = app.add_subcommand("bench", "per-sweep wall time against the number of items");
  add_common(bench_cmd, f);
  add_sampler_flags(bench_cmd, f);

  auto *gsm_cmd = app.add_subcommand("gsm-diag", "stale-site diagnostic on 1-D scale mixtures");
  add_common(gsm_cmd, f);

  auto *eval_cmd = app.add_subcommand("eval", "summarize finished run directories");
  eval_cmd->add_option("dirs", f.dirs, "run directories")->required();
  eval_cmd->add_option("--out", f.out, "write eval.json here (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "eval") {
      std::vector<fs::path> dirs(f.dirs.begin(), f.dirs.end());
      const json j = evaluate_runs(dirs);
      if (f.out) {
        fs::create_directories(*f.out);
        write_json(fs::path(*f.out) / "eval.json", j);
      } else {
        std::cout << j.dump(2) << '\n';
      }
      return 0;
    }
    ExperimentConfig c = load_config(f);
    const std::uint64_t seed = c.seed_value();
    if (command == "generate-ts") {
      write_ts_dataset(c.out, generate_ts(c.ts, seed), ts_gen_json(c.ts), seed);
    } else if (command == "generate-mvt") {
      write_mvt_dataset(c.out, generate_mvt(c.mvt, seed), mvt_gen_json(c.mvt), seed);
    } else if (command == "run") {
      const RunResult r = run(c);
      std::printf("%s/%s: %d sweeps, final nmi %s, wrote %s\n", c.model.c_str(), c.sampler.c_str(),
                  c.sweeps, fmt_double(r.trace.rows.back().nmi).c_str(), c.out.c_str());
    } else if (command == "bench") {
      c.validate();
      const BenchResult b = bench(c);
      write_bench(c.out, c, b);
      for (const auto &[g, s] : b.summary.slope)
        std::printf("%s: log-log slope %.3f\n", g.c_str(), s);
    } else if (command == "gsm-diag") {
      c.model = "gsm";
      c.validate();
      const GsmDiagResult res = gsm_diagnostic(c.gsm, seed);
      write_gsm(c.out, c, res);
      std::printf("gsm-diag: %zu rows, wrote %s\n", res.rows.size(), c.out.c_str());
    }
  } catch (const std::exception &e) {
    std::optional<std::string> out = f.out;
    if (!out && !f.config.empty()) {
      try {
        out = config_from_json(read_json(f.config)).out;
      } catch (const std::exception &) {
      }
    }
    return fail(command, out, e);
  }
  return 0;
}
