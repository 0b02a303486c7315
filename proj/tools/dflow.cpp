// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

// dflow: command-line front end for sampling, baselines, oracle checks,
// batch metrics and the loopback score server.

#include "dflow/error.hpp"
#include "dflow/harness.hpp"
#include "dflow/log.hpp"
#include "dflow/remote_score.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>
#include <optional>

namespace {

dflow::StubScoreServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server != nullptr) {
    g_server->stop();
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string endpoint;
  int jobs = 1;
};

dflow::RunConfig resolve(const Common& c) {
  dflow::RunConfig cfg = dflow::load_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
  }
  if (!c.out.empty()) {
    cfg.out = c.out;
  }
  if (!c.endpoint.empty()) {
    cfg.endpoint = c.endpoint;
  }
  return cfg;
}

void add_common(CLI::App* cmd, Common& c, bool runs) {
  cmd->add_option("--config", c.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override the configured seed");
  if (runs) {
    cmd->add_option("--out", c.out, "Override the output directory");
    cmd->add_option("--endpoint", c.endpoint, "Remote eps_hat service (host:port)");
    cmd->add_option("--jobs", c.jobs, "Worker threads for independent trajectories")->check(CLI::PositiveNumber);
  }
}

}  // namespace

int main(int argc, char** argv) {
  dflow::init_logging();
  CLI::App app{"Sample differentiable-representation parameters with pulled-back diffusion dynamics"};
  app.set_version_flag("--version", dflow::version_string());
  app.require_subcommand(1);

  Common sample_opts;
  auto* sample = app.add_subcommand("sample", "Run the DDRep sampler and write run artifacts");
  add_common(sample, sample_opts, true);

  Common baseline_opts;
  auto* baseline = app.add_subcommand("baseline", "Run SDS/SJC gradient ascent and write run artifacts");
  add_common(baseline, baseline_opts, true);

  Common oracle_opts;
  auto* oracle = app.add_subcommand("oracle-check", "Check Jacobian products and pullbacks on the configured rep");
  add_common(oracle, oracle_opts, false);

  std::vector<std::string> batches;
  int permutations = 200;
  double bandwidth = 0.0;
  std::uint64_t metrics_seed = 0;
  auto* metrics = app.add_subcommand("metrics", "Compare two stored samples.csv batches");
  metrics->add_option("batches", batches, "Two samples.csv files")->required()->expected(2)->check(CLI::ExistingFile);
  metrics->add_option("--permutations", permutations, "Permutation count")->check(CLI::PositiveNumber);
  metrics->add_option("--bandwidth", bandwidth, "Kernel bandwidth (<= 0: median heuristic)");
  metrics->add_option("--seed", metrics_seed, "Permutation seed");

  std::string stub_config;
  int port = 0;
  auto* serve = app.add_subcommand("serve-stub", "Serve the configured analytic score over HTTP on 127.0.0.1");
  serve->add_option("--config", stub_config, "JSON run configuration (target section)")
      ->required()
      ->check(CLI::ExistingFile);
  serve->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sample) {
      const auto out = dflow::run_sample(resolve(sample_opts), sample_opts.jobs);
      std::cout << "wrote " << out.dir.string() << " (" << out.samples.rows() << " samples, " << out.nfe
                << " NFE)\n";
    } else if (*baseline) {
      const auto out = dflow::run_baseline(resolve(baseline_opts), baseline_opts.jobs);
      std::cout << "wrote " << out.dir.string() << " (" << out.samples.rows() << " runs, " << out.nfe << " NFE)\n";
    } else if (*oracle) {
      const auto checks = dflow::run_oracle_check(resolve(oracle_opts));
      dflow::print_oracle_table(std::cout, checks);
      for (const auto& c : checks) {
        if (!c.passed) {
          return 1;
        }
      }
    } else if (*metrics) {
      const auto a = dflow::read_samples_csv(batches[0]);
      const auto b = dflow::read_samples_csv(batches[1]);
      std::cout << dflow::compare_batches(a, b, permutations, bandwidth, metrics_seed) << '\n';
    } else if (*serve) {
      const auto cfg = dflow::load_config(stub_config);
      dflow::StubScoreServer server(dflow::build_score(cfg), port);
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cout << "listening on " << server.endpoint() << std::endl;
      server.wait();
      g_server = nullptr;
    }
  } catch (const dflow::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 2;
  } catch (const dflow::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
