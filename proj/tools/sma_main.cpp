#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sma/commands.hpp"
#include "sma/config.hpp"

namespace {

// --config file, then --set overrides, then the SMA_OUTPUT_DIR environment variable.
sma::RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  sma::RunConfig cfg = path.empty() ? sma::RunConfig{} : sma::load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw sma::ConfigError("--set expects key=value, got '" + kv + "'");
    sma::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (const char* env = std::getenv("SMA_OUTPUT_DIR"); env != nullptr && *env != '\0') cfg.output_dir = env;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  sma::tune_allocator();
  CLI::App app{"Self-diversified multi-channel attention: training and analysis harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file (schema_version = 1)");
    sub->add_option("--set", overrides, "override one config key, key=value (repeatable)");
  };

  auto* synth = app.add_subcommand("synth", "write the synthetic train/val sets as P6 images + manifests");
  auto* train = app.add_subcommand("train", "train a model; writes metrics.csv and best.ckpt");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation set");
  auto* sweep = app.add_subcommand("sweep-n", "train one model per attention channel count");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  auto* params = app.add_subcommand("params", "parameter audit and attention overhead");
  auto* exp = app.add_subcommand("export-attention", "write attention heatmaps for images");
  for (auto* sub : {synth, train, eval, sweep, gradcheck, params, exp}) add_common(sub);

  std::string checkpoint;
  std::size_t folds = 0;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--folds", folds, "subject-disjoint folds (0: whole set)");

  std::vector<std::size_t> n_values;
  sweep->add_option("--n", n_values, "channel counts, e.g. --n 1 3 5 7")->required();

  std::vector<std::string> images;
  exp->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  exp->add_option("images", images, "P6 images")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sma::kExitConfig;
  }

  return sma::run_guarded(
      [&]() -> int {
        const sma::RunConfig cfg = resolve_config(config_path, overrides);
        if (*synth) return sma::cmd_synth(cfg, std::cout);
        if (*train) return sma::cmd_train(cfg, std::cout);
        if (*eval) return sma::cmd_eval(cfg, checkpoint, folds, std::cout);
        if (*sweep) return sma::cmd_sweep_n(cfg, n_values, std::cout);
        if (*gradcheck) return sma::cmd_gradcheck(cfg, std::cout);
        if (*params) return sma::cmd_params(cfg, std::cout);
        std::vector<std::filesystem::path> paths(images.begin(), images.end());
        return sma::cmd_export_attention(cfg, checkpoint, paths, std::cout);
      },
      std::cerr);
}
