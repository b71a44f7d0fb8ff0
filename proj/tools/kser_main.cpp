// kser: data preparation, training, evaluation, ablation and diagnostics.
//
// Exit codes: 0 success, 1 invalid config or arguments, 2 runtime or data
// error, 3 training diverged.

#include "kser/error.hpp"
#include "kser/experiments.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <functional>
#include <map>
#include <optional>

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2, kDivergence = 3 };

using Command = std::function<void(const kser::ExperimentConfig&, const std::filesystem::path&)>;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge selection and alignment for CTR models"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";

  const std::map<std::string, std::pair<std::string, Command>> commands = {
      {"prepare", {"Load, split and cache a dataset", kser::cmd_prepare}},
      {"gen-synth", {"Generate a planted-signal dataset and knowledge pack", kser::cmd_gen_synth}},
      {"train", {"Train under the configured strategy", kser::cmd_train}},
      {"evaluate", {"Score a checkpoint on a split", kser::cmd_evaluate}},
      {"ablate", {"Compare full, no_esfnet and no_esa variants", kser::cmd_ablate}},
      {"diagnostics", {"Export gate weights, attention scores and knowledge vectors", kser::cmd_diagnostics}},
  };
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a config key, e.g. --set train.lr=5e-4");
    sub->add_option("--out", out_dir, "Output directory")->required();
    sub->add_option("--seed", seed, "Run seed (data seed for gen-synth and prepare)");
    sub->add_option("--log-level", log_level, "trace|debug|info|warn|error|off");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  spdlog::set_default_logger(spdlog::default_logger()->clone("kser"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (seed) {
      overrides.push_back("train.seed=" + std::to_string(*seed));
      if (name == "gen-synth" || name == "prepare") overrides.push_back("dataset.synthetic_seed=" + std::to_string(*seed));
    }
    const kser::ExperimentConfig cfg = kser::load_config(config_path, overrides);
    commands.at(name).second(cfg, out_dir);
    return kOk;
  } catch (const kser::ValidationError& e) {
    spdlog::error("{}", e.what());
    return kValidation;
  } catch (const kser::DivergenceError& e) {
    spdlog::error("training diverged: {}", e.what());
    return kDivergence;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
}
