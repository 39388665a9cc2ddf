#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "imuot/pipeline.hpp"

namespace pl = imuot::pipeline;

namespace {

const std::map<std::string, std::string> kAbout = {
    {"generate", "simulate the eight slider domains and write a dataset directory"},
    {"train", "supervised training on one domain, a union, or one model per domain"},
    {"adapt", "train for a consecutive source split with OT adaptation or augmentation"},
    {"eval", "error matrices, fragility, fusion baseline or a single checkpoint"},
    {"shift", "raw and latent domain-shift matrices plus per-domain CDFs"},
    {"report", "summary tables from the matrices in an experiment directory"},
};

struct Sub {
  CLI::App* app = nullptr;
  std::string config;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> opts;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic IMU odometry with optimal-transport domain adaptation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(IMUOT_VERSION));

  std::map<std::string, std::unique_ptr<Sub>> subs;
  for (const auto& name : pl::commands()) {
    auto s = std::make_unique<Sub>();
    s->app = app.add_subcommand(name, kAbout.at(name));
    s->app->add_option("--config", s->config, "flat key = value file; flags override it")
        ->check(CLI::ExistingFile);
    for (const auto& spec : pl::options_for(name)) {
      std::string help = spec.help;
      if (!spec.flag && !spec.default_value.empty()) help += " [" + spec.default_value + "]";
      if (spec.flag) {
        s->opts[spec.name] = s->app->add_flag("--" + spec.name, s->flags[spec.name], help);
      } else {
        s->opts[spec.name] = s->app->add_option("--" + spec.name, s->values[spec.name], help);
      }
    }
    subs[name] = std::move(s);
  }

  std::string manifest;
  std::string rerun_out;
  auto* rerun = app.add_subcommand("rerun", "re-execute a run from its manifest and compare checksums");
  rerun->add_option("--manifest", manifest, "manifest written by an earlier run")->required();
  auto* rerun_out_opt = rerun->add_option("--out", rerun_out, "alternative output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (rerun->parsed()) {
      std::optional<std::string> out;
      if (rerun_out_opt->count() > 0) out = rerun_out;
      const auto report = pl::rerun(manifest, out, std::cerr);
      if (!report.mismatched.empty()) {
        for (const auto& f : report.mismatched) std::cerr << "mismatch: " << f << '\n';
        return 3;
      }
      std::cout << "reproduced " << report.original.checksums.size() << " files\n";
      return 0;
    }
    for (const auto& [name, s] : subs) {
      if (!s->app->parsed()) continue;
      pl::Options options;
      if (!s->config.empty()) options = pl::read_config_file(s->config);
      for (const auto& [key, opt] : s->opts) {
        if (opt->count() == 0) continue;
        options[key] = s->flags.count(key) ? (s->flags[key] ? "true" : "false") : s->values[key];
      }
      const auto m = pl::run(name, options, std::cerr);
      std::cout << "wrote " << m.checksums.size() << " files; manifest "
                << pl::manifest_path(name, m.output_dir, pl::manifest_variant(name, m.config)).string() << '\n';
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pl::exit_code(e);
  }
}
