// mcsim command-line driver: run scenarios, compare runs, list presets.

#include <algorithm>
#include <iostream>

#include <CLI11.hpp>

#include "mcsim/scenario.hpp"

namespace {

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            const std::vector<std::uint64_t>& seeds, std::string out_dir) {
  // A bare preset name is accepted in place of a file.
  const auto names = mcsim::preset_names();
  const bool is_preset = !std::filesystem::exists(config_path) &&
                         std::find(names.begin(), names.end(), config_path) != names.end();
  mcsim::ScenarioConfig cfg = is_preset ? mcsim::preset(config_path) : mcsim::load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (out_dir.empty()) out_dir = "runs/" + cfg.preset + "_seed" + std::to_string(cfg.seed);

  if (seeds.empty()) {
    const auto s = mcsim::run_scenario(cfg, out_dir);
    s.report.write(std::cout);
    return 0;
  }
  // Sweep: one subdirectory per seed, runs are independent.
  for (std::uint64_t sd : seeds) {
    cfg.seed = sd;
    const auto dir = std::filesystem::path(out_dir) / ("seed_" + std::to_string(sd));
    const auto s = mcsim::run_scenario(cfg, dir);
    std::cout << dir.string() << ": consumption = "
              << (s.report.avg_resource_consumption ? std::to_string(*s.report.avg_resource_consumption)
                                                    : std::string("undefined"))
              << '\n';
  }
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, bool assert_orderings) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  const auto c = mcsim::compare_runs(paths);
  mcsim::write_comparison(std::cout, c);
  if (assert_orderings) {
    for (const auto& chk : c.checks) {
      if (!chk.passed) return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mcsim: unicast, multicast and multi-link media delivery simulator"};
  app.set_version_flag("--version", mcsim::kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "Run one scenario (or a seed sweep)");
  run->add_option("config", config_path, "JSON config file, or a preset name")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--seeds", seeds, "Run once per listed seed into <out>/seed_<n>")->delimiter(',');
  run->add_option("--out", out_dir, "Output directory");

  std::vector<std::string> dirs;
  bool assert_orderings = false;
  auto* compare = app.add_subcommand("compare", "Compare completed runs");
  compare->add_option("dirs", dirs, "Run directories")->required()->expected(2, -1);
  compare->add_flag("--assert-orderings", assert_orderings, "Exit 1 if an ordering check fails");

  auto* presets = app.add_subcommand("presets", "List built-in presets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      return cmd_run(config_path, seed, seeds, out_dir);
    }
    if (*compare) return cmd_compare(dirs, assert_orderings);
    if (*presets) {
      for (const auto& n : mcsim::preset_names()) std::cout << n << "  " << mcsim::preset_description(n) << '\n';
      return 0;
    }
  } catch (const mcsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
