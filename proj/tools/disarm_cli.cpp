#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <set>
#include <string>

#include "disarm/checkpoint.hpp"
#include "disarm/config.hpp"
#include "disarm/experiment.hpp"

namespace {

struct Common {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string estimator;
  std::optional<std::int64_t> steps;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  std::string names;
  for (const auto& n : disarm::preset_names()) names += (names.empty() ? "" : ", ") + n;
  cmd->add_option("--preset", c.preset, "built-in config: " + names);
  cmd->add_option("--seed", c.seed, "override the seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--estimator", c.estimator, "override the driving estimator");
  cmd->add_option("--steps", c.steps, "override the step count");
}

disarm::ExperimentConfig resolve(const Common& c, const std::string& fallback_preset) {
  if (!c.config_path.empty() && !c.preset.empty()) {
    throw disarm::ConfigError("give --config or --preset, not both");
  }
  disarm::ExperimentConfig cfg;
  if (!c.config_path.empty()) {
    cfg = disarm::load_config(c.config_path);
  } else if (!c.preset.empty()) {
    cfg = disarm::preset(c.preset);
  } else if (!fallback_preset.empty()) {
    cfg = disarm::preset(fallback_preset);
  } else {
    throw disarm::ConfigError("need --config or --preset");
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (!c.estimator.empty()) cfg.estimator = c.estimator;
  if (c.steps) cfg.steps = *c.steps;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient estimators for Bernoulli latent variables"};
  app.require_subcommand(1);

  Common toy_opts, train_opts, probe_opts, eval_opts, show_opts;
  std::optional<double> p0;
  std::vector<std::string> probes;
  std::string checkpoint;

  auto* toy = app.add_subcommand("toy", "optimize the toy objective (default preset toy-0.49)");
  add_common(toy, toy_opts);
  toy->add_option("--p0", p0, "target p0 in (0, 1)");

  auto* train = app.add_subcommand("train", "train a VAE");
  add_common(train, train_opts);

  auto* probe = app.add_subcommand("probe", "train while tracking probe-estimator variances");
  add_common(probe, probe_opts);
  probe->add_option("--probes", probes, "probe estimators")->delimiter(',');

  auto* eval = app.add_subcommand("eval", "test bound of a checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);

  auto* inspect = app.add_subcommand("inspect-checkpoint", "print a checkpoint's shape table");
  std::string inspect_path;
  inspect->add_option("path", inspect_path, "checkpoint file")->required()->check(CLI::ExistingFile);

  auto* show = app.add_subcommand("show-config", "print the effective config");
  add_common(show, show_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (toy->parsed()) {
      auto cfg = resolve(toy_opts, "toy-0.49");
      if (cfg.kind != disarm::ExperimentKind::toy) throw disarm::ConfigError("toy needs a toy config");
      if (p0) cfg.toy.p0 = *p0;
      std::cout << disarm::run(cfg).dump(2) << '\n';
    } else if (train->parsed()) {
      auto cfg = resolve(train_opts, "");
      if (cfg.kind == disarm::ExperimentKind::toy) throw disarm::ConfigError("use the toy subcommand for toy configs");
      std::cout << disarm::run(cfg).dump(2) << '\n';
    } else if (probe->parsed()) {
      auto cfg = resolve(probe_opts, "");
      if (!probes.empty()) cfg.probes = probes;
      if (cfg.probes.empty()) {
        std::set<std::string> seen;
        for (const std::string& p : {cfg.estimator, std::string("arm"), std::string("reinforce_loo")}) {
          if (seen.insert(p).second) cfg.probes.push_back(p);
        }
      }
      if (cfg.kind == disarm::ExperimentKind::vae_elbo) cfg.kind = disarm::ExperimentKind::variance_probe;
      std::cout << disarm::run(cfg).dump(2) << '\n';
    } else if (eval->parsed()) {
      const auto cfg = resolve(eval_opts, "");
      std::cout << disarm::evaluate(cfg, checkpoint).dump(2) << '\n';
    } else if (inspect->parsed()) {
      const auto cp = disarm::read_checkpoint(inspect_path);
      nlohmann::ordered_json doc;
      doc["format_version"] = disarm::kCheckpointVersion;
      doc["step"] = cp.step;
      doc["entries"] = nlohmann::ordered_json::array();
      for (const auto& e : cp.entries) {
        nlohmann::ordered_json entry;
        entry["name"] = e.name;
        if (const auto* net = std::get_if<disarm::DenseNetwork>(&e.value)) {
          entry["kind"] = "network";
          for (const auto& layer : net->layers()) {
            entry["layers"].push_back({{"rows", layer.weight.rows()},
                                       {"cols", layer.weight.cols()},
                                       {"activation", layer.activation == disarm::Activation::identity ? "identity" : "leaky_relu"},
                                       {"slope", layer.slope}});
          }
          entry["parameters"] = net->parameter_count();
        } else {
          entry["kind"] = "vector";
          entry["length"] = std::get<Eigen::VectorXd>(e.value).size();
        }
        doc["entries"].push_back(entry);
      }
      std::cout << doc.dump(2) << '\n';
    } else if (show->parsed()) {
      auto cfg = resolve(show_opts, "");
      std::cout << disarm::to_json(cfg).dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return EXIT_FAILURE;
  }
  return EXIT_SUCCESS;
}
