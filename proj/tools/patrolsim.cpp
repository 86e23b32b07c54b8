#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "patrolsim/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> only;
  bool quiet = false;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("-c,--config", o.config, "JSON experiment plan")->required();
  sub->add_option("-j,--jobs", o.jobs, "parallel month-runs (overrides config 'jobs')");
  sub->add_option("-s,--seed", o.seed, "master seed (overrides config 'seed')");
  sub->add_option("-o,--out", o.out, "output directory (overrides config 'output_dir')");
  sub->add_flag("-q,--quiet", o.quiet, "print only warnings and failures");
}

void print_log(const patrolsim::RunLog& log, bool quiet) {
  if (!quiet) {
    for (const auto& m : log.info) std::cerr << "info: " << m << "\n";
    for (const auto& m : log.outputs) std::cerr << "wrote " << m << "\n";
  }
  for (const auto& m : log.warnings) std::cerr << "warning: " << m << "\n";
  for (const auto& m : log.failures) std::cerr << "failed: " << m << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulate generative patrol allocation and audit its fairness."};
  app.set_version_flag("--version", std::string("patrolsim ") + PATROLSIM_VERSION);
  app.require_subcommand(1);

  Options o;
  const char* commands[][2] = {
      {"ingest", "load and filter crime data, write tagged incidents"},
      {"grid", "run every (cell, month, replicate) and write monthly/annual metrics"},
      {"sensitivity", "sweep radius, officer count or reporting probability"},
      {"debias", "compare biased and rebalanced GAN training"},
      {"stats", "neighborhood regression and correlations"},
      {"plots", "render SVG charts from monthly.csv"},
      {"all", "every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, o);
    if (std::string(name) == "grid") {
      sub->add_option("--only", o.only, "run a single month-run by label, e.g. Baltimore/2019/3/detected/r0");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto plan = patrolsim::load_plan(o.config, {o.seed, o.jobs, o.out});
    patrolsim::RunLog log;
    const int rc = patrolsim::run_command(plan, command, log, o.only);
    print_log(log, o.quiet);
    return rc;
  } catch (const patrolsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const patrolsim::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "run failure: " << e.what() << "\n";
    return 3;
  }
}
