#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctxrank/harness.hpp"
#include "ctxrank/selftest.hpp"

namespace {

// The default config path is allowed to be absent (built-in defaults apply);
// an explicitly passed path must exist.
ctxrank::ExperimentConfig load_config(const std::string& path, bool explicitly_set) {
  if (!explicitly_set && !std::filesystem::exists(path)) return ctxrank::ExperimentConfig{};
  return ctxrank::load_experiment_config(path);
}

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    const std::string tok = csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (tok.empty()) throw std::invalid_argument("malformed --grid value: " + csv);
    out.push_back(std::stod(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"context-aware re-ranking over multi-page search sessions"};
  app.require_subcommand(1);

  std::string config_path = "config.json";
  bool deterministic = false;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file (JSON)");
    cmd->add_flag("--deterministic", deterministic,
                  "single-threaded deterministic execution (already the default; accepted for "
                  "script compatibility)");
  };

  auto* gen = app.add_subcommand("generate", "generate the synthetic catalog and session log");
  std::uint64_t seed = 0;
  add_common(gen);
  gen->add_option("--seed", seed, "override the generator seed from the config");

  auto* tr = app.add_subcommand("train", "train one CEM-family method and write its checkpoint");
  std::string method;
  tr->add_option("--method", method, "method name (QEM, LCEM, SCEM, LSCEM)")->required();
  add_common(tr);

  auto* ev = app.add_subcommand("evaluate", "evaluate all configured methods on the test split");
  std::string reference;
  ev->add_option("--reference", reference, "reference method for relative improvements");
  add_common(ev);

  auto* sw = app.add_subcommand("sweep", "train and evaluate across a parameter grid");
  std::string param;
  sw->add_option("--param", param, "one of: lambda_c, lambda_u, dim")->required();
  std::string grid_csv;
  sw->add_option("--grid", grid_csv, "comma-separated grid values (default depends on --param)");
  add_common(sw);

  app.add_subcommand("selftest", "run the built-in numerical checks");

  CLI11_PARSE(app, argc, argv);
  const CLI::App* sub = app.get_subcommands().front();

  try {
    if (sub->get_name() == "selftest") return ctxrank::cmd_selftest(std::cout);

    const bool explicit_config = sub->count("--config") > 0;
    ctxrank::ExperimentConfig cfg = load_config(config_path, explicit_config);

    if (sub->get_name() == "generate") {
      if (gen->count("--seed") > 0) cfg.gen.seed = seed;
      return ctxrank::cmd_generate(cfg, std::cout);
    }
    if (sub->get_name() == "train") return ctxrank::cmd_train(cfg, method, std::cout);
    if (sub->get_name() == "evaluate") {
      if (!reference.empty()) cfg.reference = reference == "PROD-proxy" ? "PROD" : reference;
      return ctxrank::cmd_evaluate(cfg, std::cout);
    }
    if (sub->get_name() == "sweep") {
      const std::vector<double> grid =
          grid_csv.empty() ? ctxrank::default_grid(param) : parse_grid(grid_csv);
      return ctxrank::cmd_sweep(cfg, param, grid, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
