#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "elastic/config.hpp"
#include "elastic/harness.hpp"

namespace h = elastic::harness;

int main(int argc, char** argv) {
  CLI::App app{"elastic averaging SGD workbench"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run an experiment config");
  std::string config_pos, config_opt;
  std::optional<std::string> bind, connect, port_file;
  std::optional<std::size_t> dim, worker_id;
  run->add_option("path", config_pos, "config file");
  run->add_option("--config", config_opt, "config file (alternative to the positional)");
  run->add_option("--bind", bind, "center listen address host:port");
  run->add_option("--connect", connect, "center address for a worker");
  run->add_option("--dim", dim, "problem dimension");
  run->add_option("--worker-id", worker_id, "worker index");
  run->add_option("--port-file", port_file, "center writes its port here");

  auto* sum = app.add_subcommand("summarize", "time-to-threshold / speedup table from metrics CSVs");
  std::string pattern, output;
  double threshold = 0.0;
  sum->add_option("glob", pattern, "metrics CSV glob")->required();
  sum->add_option("--threshold", threshold, "objective threshold")->required();
  sum->add_option("--output,-o", output, "also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : h::kExitInvalid;
  }

  try {
    if (*run) {
      if (config_pos.empty() == config_opt.empty())
        throw elastic::ConfigError("run: give exactly one config path");
      elastic::ExperimentConfig cfg =
          elastic::ExperimentConfig::load(config_pos.empty() ? config_opt : config_pos);
      if (bind) cfg.set("bind", *bind);
      if (connect) cfg.set("connect", *connect);
      if (dim) cfg.set("dim", std::to_string(*dim));
      if (worker_id) cfg.set("worker_id", std::to_string(*worker_id));
      if (port_file) cfg.set("port_file", *port_file);
      h::run(std::move(cfg));
    } else {
      const auto files = h::expand_glob(pattern);
      if (files.empty()) throw elastic::ConfigError("summarize: no files match '" + pattern + "'");
      const auto rows = h::summarize(files, threshold);
      h::write_summary_csv(std::cout, rows);
      if (!output.empty()) {
        std::ofstream out(output);
        if (!out) throw elastic::Error("cannot write '" + output + "'");
        h::write_summary_csv(out, rows);
      }
    }
  } catch (const std::exception& e) {
    const int rc = h::exit_code_for_current_exception();
    std::cerr << "elastic-opt: " << e.what() << '\n';
    return rc;
  }
  return h::kExitOk;
}
