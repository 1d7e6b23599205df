#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sepcross/io/config.hpp"
#include "sepcross/io/runner.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

}  // namespace

int main(int argc, char** argv) {
  using namespace sepcross;
  CLI::App app{"Separatrix crossing: averaged flow, full simulations and capture statistics"};
  app.require_subcommand(1);
  Flags flags;
  for (const std::string& name : io::subcommand_names()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment from a JSON config");
    sub->add_option("--config", flags.config, "JSON run configuration")->required()->envname("SEPCROSS_CONFIG");
    sub->add_option("--out", flags.out, "output directory")->envname("SEPCROSS_OUT")->capture_default_str();
    sub->add_option("--seed", flags.seed, "seed, overrides the config")->envname("SEPCROSS_SEED");
    sub->add_option("--threads", flags.threads, "worker threads (0: all cores)")->envname("SEPCROSS_THREADS");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? io::kExitOk : io::kExitConfig;
  }
  const io::Subcommand command = io::parse_subcommand(app.get_subcommands().front()->get_name());

  io::RunConfig config;
  try {
    io::json j = io::load_json(flags.config);
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    if (flags.seed) j["seed"] = *flags.seed;
    if (flags.threads) j["threads"] = *flags.threads;
    config = io::parse_config(j, command);
  } catch (const ConfigError& e) {
    io::diagnose(std::cerr, "config", e.what());
    return io::kExitConfig;
  } catch (const Error& e) {
    io::diagnose(std::cerr, "model", e.what());
    return io::kExitModel;
  }
  return io::run(config, flags.out, std::cerr);
}
