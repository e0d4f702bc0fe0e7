// sgflow <experiment> --config <file> [--seed N] [--out DIR] [--override key=value]...
//
// Exit status: 0 success, 2 configuration or I/O error, 3 numeric error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sgflow/experiments.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericError = 3;

}  // namespace

int main(int argc, char** argv) {
  namespace ex = sgflow::experiments;

  CLI::App app{"Experiments on SGD, stochastic gradient flow and ridge regression."};
  std::string experiment;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::string> overrides;
  bool print_config = false;

  app.add_option("experiment", experiment, "Experiment to run")
      ->required()
      ->check(CLI::IsMember(ex::names()));
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Base seed (overrides the config)");
  auto* out_opt = app.add_option("--out", out, "Output directory (overrides the config)");
  app.add_option("--override", overrides, "Set a config field, e.g. problem.n=80")->take_all();
  app.add_flag("--print-config", print_config, "Print the resolved configuration and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    std::optional<nlohmann::json> file;
    if (!config_path.empty()) {
      try {
        file = nlohmann::json::parse(sgflow::read_text(config_path));
      } catch (const nlohmann::json::parse_error& e) {
        throw ex::ConfigError("config: " + config_path + " is not valid JSON: " + e.what());
      }
    }
    const auto config = ex::resolve_config(
        experiment, file, overrides, seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt,
        out_opt->count() ? std::optional<std::string>(out) : std::nullopt);
    if (print_config) {
      std::cout << config.dump(2) << "\n";
      return 0;
    }
    const auto meta = ex::run(config);
    std::cout << meta["summary"].dump(2) << "\n";
    return 0;
  } catch (const sgflow::NumericError& e) {
    std::cerr << "sgflow " << experiment << ": numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const sgflow::ValidationError& e) {
    std::cerr << "sgflow " << experiment << ": " << e.what() << "\n";
    return kConfigError;
  } catch (const sgflow::IoError& e) {
    std::cerr << "sgflow " << experiment << ": " << e.what() << "\n";
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "sgflow " << experiment << ": config: " << e.what() << "\n";
    return kConfigError;
  }
}
