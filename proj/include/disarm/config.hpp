#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace disarm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { toy, vae_elbo, vae_hierarchical, vae_multisample, variance_probe };

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string& name);

struct SyntheticSpec {
  Eigen::Index count = 256;
  Eigen::Index test_count = 64;
  Eigen::Index side = 16;
};

// Either IDX files (`path`, optional `test_path`) or a synthetic set.
struct DatasetSpec {
  std::string path;
  std::string test_path;
  Eigen::Index test_count = 0;  // held-out tail of `path` when no test_path; 0 = none
  std::optional<SyntheticSpec> synthetic;
};

struct ToySpec {
  double p0 = 0.49;
  double phi = 0.0;
  double lr = 0.1;  // SGD on phi
  Eigen::Index mc_samples = 5000;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::vae_elbo;
  std::string estimator = "disarm";
  std::vector<std::string> probes;
  double beta = 0.5;
  double baseline = 0.0;

  DatasetSpec dataset;
  std::vector<Eigen::Index> latent_dims{200};
  std::vector<Eigen::Index> hidden;  // empty: linear encoder/decoder
  double leaky_slope = 0.3;

  std::int64_t steps = 1000000;
  Eigen::Index batch_size = 50;
  double network_lr = 1e-4;
  double prior_lr = 1e-2;
  Eigen::Index k = 1;

  ToySpec toy;

  std::optional<std::uint64_t> seed;
  std::string out = "runs/out";
  std::int64_t log_every = 100;
  std::int64_t eval_every = 0;  // 0 disables the test bound
  Eigen::Index eval_samples = 100;
  Eigen::Index eval_count = 0;  // 0 = whole test set
  std::int64_t checkpoint_every = 0;
};

// Strict: unknown keys and wrong types are errors. Missing keys keep defaults.
ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::ordered_json to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

// Checks ranges, the seed, estimator names and that dataset files exist.
void validate(const ExperimentConfig& config);

std::vector<std::string> preset_names();
ExperimentConfig preset(const std::string& name);

}  // namespace disarm
