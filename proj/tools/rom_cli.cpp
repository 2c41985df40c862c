#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "rom/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration (defaults apply to missing keys)");
  cmd->add_option("--seed", c.seed, "Run a single seed instead of the configured list");
  cmd->add_option("--out", c.out, "Output root directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rom::harness;
  CLI::App app{"Reduced-order modelling and control of a reaction-diffusion system"};
  app.require_subcommand(1);

  Common common;
  std::string model;
  auto* gen = app.add_subcommand("gen-data", "Simulate the training and test datasets");
  auto* train = app.add_subcommand("train", "Fit dmdc, larom or deeprom");
  train->add_option("--model", model, "dmdc | larom | deeprom (overrides train.model)")
      ->check(CLI::IsMember({"dmdc", "larom", "deeprom"}));
  auto* train_ctrl = app.add_subcommand("train-ctrl", "Train DeepROC controllers and the DMDc+LQR baseline");
  auto* eval_pred = app.add_subcommand("eval-pred", "Recursive prediction NMSE on the test set");
  auto* eval_ctrl = app.add_subcommand("eval-ctrl", "Closed-loop runs from the reference initial state");
  auto* modes = app.add_subcommand("modes", "Export and match DMDc and LAROM dynamic modes");
  bool print_config = false;
  auto* show = app.add_subcommand("config", "Print the resolved configuration");
  for (auto* cmd : {gen, train, train_ctrl, eval_pred, eval_ctrl, modes, show}) add_common(cmd, common);
  show->add_flag("--defaults", print_config, "Ignore --config and print the defaults");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = common.config.empty() || print_config
                                 ? RunConfig::from_json(json::object(), common.seed)
                                 : RunConfig::load(common.config, common.seed);
    const Layout layout{common.out};
    json summary;
    if (*gen) summary = cmd_gen_data(config, layout);
    if (*train) summary = cmd_train(config, layout, model);
    if (*train_ctrl) summary = cmd_train_ctrl(config, layout);
    if (*eval_pred) summary = cmd_eval_pred(config, layout);
    if (*eval_ctrl) summary = cmd_eval_ctrl(config, layout);
    if (*modes) summary = cmd_modes(config, layout);
    if (*show) summary = config.resolved;
    std::cout << summary.dump(2) << '\n';
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
