// ifscert <experiment> --config <path> [--seed N] [--out DIR] [--threads N]
//
// Exit codes: 0 certified/pass/completed, 2 refuted/fail, 3 inconclusive/not
// found, 1 error (nothing is written).

#include "ifscert/runner.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ifscert::Error(ifscert::ErrorCode::ConfigInvalid, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grid certificates and estimators for random volume-preserving IFSs"};
  app.set_version_flag("--version", ifscert::kToolVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  for (const auto& kind : ifscert::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind, "run a " + kind + " experiment");
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--threads", threads, "worker threads (default: IFSCERT_THREADS, config, 1)")
        ->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : ifscert::kExitError;
  }
  const std::string kind = app.get_subcommands().front()->get_name();

  try {
    const auto start = std::chrono::steady_clock::now();
    const auto config = ifscert::io::parse_config(read_file(config_path));
    const ifscert::Exec exec = ifscert::resolve_threads(threads, config);
    const auto result = ifscert::run_experiment(kind, config, seed, exec);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const ifscert::io::json meta = {{"timestamp_utc", ifscert::utc_timestamp()},
                                    {"wall_seconds", seconds},
                                    {"threads", exec.threads},
                                    {"config_path", config_path}};
    ifscert::write_outputs(out_dir, result, meta);
    std::cout << kind << ": " << result.outcome << " (exit " << result.exit_code << ")\n";
    return result.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "ifscert " << kind << ": " << e.what() << "\n";
    return ifscert::kExitError;
  }
}
