#include "disarm/config.hpp"

#include <fstream>
#include <set>

#include "disarm/bernoulli.hpp"

namespace disarm {

using nlohmann::json;

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::toy: return "toy";
    case ExperimentKind::vae_elbo: return "vae_elbo";
    case ExperimentKind::vae_hierarchical: return "vae_hierarchical";
    case ExperimentKind::vae_multisample: return "vae_multisample";
    case ExperimentKind::variance_probe: return "variance_probe";
  }
  throw std::logic_error("unknown experiment kind");
}

ExperimentKind experiment_kind_from_string(const std::string& name) {
  for (auto k : {ExperimentKind::toy, ExperimentKind::vae_elbo, ExperimentKind::vae_hierarchical,
                 ExperimentKind::vae_multisample, ExperimentKind::variance_probe}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown experiment kind '" + name + "'");
}

namespace {

// Reads typed fields from one JSON object and remembers which keys it knows.
class Fields {
 public:
  Fields(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  const json* find(const std::string& key) {
    known_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void integer(const std::string& key, std::int64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<std::int64_t>();
    }
  }
  void index(const std::string& key, Eigen::Index& out) {
    std::int64_t v = out;
    integer(key, v);
    out = static_cast<Eigen::Index>(v);
  }
  void real(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void text(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  void index_list(const std::string& key, std::vector<Eigen::Index>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) fail(key, "expected an array of integers");
        out.push_back(static_cast<Eigen::Index>(e.get<std::int64_t>()));
      }
    }
  }
  void text_list(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "expected an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(key, "expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!known_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(where_ + "." + key + ": " + msg);
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> known_;
};

}  // namespace

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  Fields f(doc, "config");

  std::string kind = to_string(c.kind);
  f.text("kind", kind);
  c.kind = experiment_kind_from_string(kind);
  f.text("estimator", c.estimator);
  f.text_list("probes", c.probes);
  f.real("beta", c.beta);
  f.real("baseline", c.baseline);

  if (const json* d = f.find("dataset")) {
    Fields df(*d, "config.dataset");
    df.text("path", c.dataset.path);
    df.text("test_path", c.dataset.test_path);
    df.index("test_count", c.dataset.test_count);
    if (const json* s = df.find("synthetic")) {
      Fields sf(*s, "config.dataset.synthetic");
      SyntheticSpec spec;
      sf.index("count", spec.count);
      sf.index("test_count", spec.test_count);
      sf.index("side", spec.side);
      sf.finish();
      c.dataset.synthetic = spec;
    }
    df.finish();
  }

  f.index_list("latent_dims", c.latent_dims);
  f.index_list("hidden", c.hidden);
  f.real("leaky_slope", c.leaky_slope);
  f.integer("steps", c.steps);
  f.index("batch_size", c.batch_size);
  f.real("network_lr", c.network_lr);
  f.real("prior_lr", c.prior_lr);
  f.index("k", c.k);

  if (const json* t = f.find("toy")) {
    Fields tf(*t, "config.toy");
    tf.real("p0", c.toy.p0);
    tf.real("phi", c.toy.phi);
    tf.real("lr", c.toy.lr);
    tf.index("mc_samples", c.toy.mc_samples);
    tf.finish();
  }

  if (const json* s = f.find("seed")) {
    const bool ok = s->is_number_unsigned() || (s->is_number_integer() && s->get<std::int64_t>() >= 0);
    if (!ok) f.fail("seed", "expected a non-negative integer");
    c.seed = s->get<std::uint64_t>();
  }
  f.text("out", c.out);
  f.integer("log_every", c.log_every);
  f.integer("eval_every", c.eval_every);
  f.index("eval_samples", c.eval_samples);
  f.index("eval_count", c.eval_count);
  f.integer("checkpoint_every", c.checkpoint_every);
  f.finish();
  return c;
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(c.kind);
  j["estimator"] = c.estimator;
  j["probes"] = c.probes;
  j["beta"] = c.beta;
  j["baseline"] = c.baseline;
  nlohmann::ordered_json d;
  d["path"] = c.dataset.path;
  d["test_path"] = c.dataset.test_path;
  d["test_count"] = c.dataset.test_count;
  if (c.dataset.synthetic) {
    d["synthetic"] = {{"count", c.dataset.synthetic->count},
                      {"test_count", c.dataset.synthetic->test_count},
                      {"side", c.dataset.synthetic->side}};
  }
  j["dataset"] = d;
  j["latent_dims"] = c.latent_dims;
  j["hidden"] = c.hidden;
  j["leaky_slope"] = c.leaky_slope;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["network_lr"] = c.network_lr;
  j["prior_lr"] = c.prior_lr;
  j["k"] = c.k;
  j["toy"] = {{"p0", c.toy.p0}, {"phi", c.toy.phi}, {"lr", c.toy.lr}, {"mc_samples", c.toy.mc_samples}};
  if (c.seed) j["seed"] = *c.seed;
  j["out"] = c.out;
  j["log_every"] = c.log_every;
  j["eval_every"] = c.eval_every;
  j["eval_samples"] = c.eval_samples;
  j["eval_count"] = c.eval_count;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(c.seed.has_value(), "seed is mandatory");
  require(c.steps >= 0, "steps must be >= 0");
  require(c.log_every >= 1, "log_every must be >= 1");
  require(c.eval_every >= 0 && c.checkpoint_every >= 0, "intervals must be >= 0");
  require(c.beta >= 0.0 && c.beta <= 1.0, "beta must lie in [0, 1]");
  require(c.leaky_slope >= 0.0, "leaky_slope must be >= 0");

  EstimatorId driver;
  try {
    driver = estimator_from_string(c.estimator);
    for (const auto& p : c.probes) estimator_from_string(p);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (c.kind == ExperimentKind::toy) {
    require(c.toy.p0 > 0.0 && c.toy.p0 < 1.0, "toy.p0 must lie in (0, 1)");
    require(c.toy.mc_samples >= 2, "toy.mc_samples must be >= 2");
    require(driver != EstimatorId::vimco && driver != EstimatorId::disarm_multisample &&
                driver != EstimatorId::exact,
            "toy estimator must be a single-objective estimator");
    return;
  }

  require(!c.latent_dims.empty(), "latent_dims must not be empty");
  for (auto d : c.latent_dims) require(d >= 1, "latent dims must be >= 1");
  for (auto h : c.hidden) require(h >= 1, "hidden widths must be >= 1");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.network_lr >= 0.0 && c.prior_lr >= 0.0, "learning rates must be >= 0");
  require(c.eval_samples >= 1, "eval_samples must be >= 1");

  const auto& ds = c.dataset;
  if (ds.synthetic) {
    require(ds.path.empty(), "dataset: give either path or synthetic, not both");
    require(ds.synthetic->count >= 1 && ds.synthetic->test_count >= 0 && ds.synthetic->side >= 4,
            "dataset.synthetic: bad sizes");
  } else {
    require(!ds.path.empty(), "dataset: path or synthetic is required");
    require(std::filesystem::exists(ds.path), "dataset path does not exist: " + ds.path);
    require(ds.test_path.empty() || std::filesystem::exists(ds.test_path),
            "dataset test_path does not exist: " + ds.test_path);
  }

  switch (c.kind) {
    case ExperimentKind::vae_elbo:
    case ExperimentKind::variance_probe:
      require(c.latent_dims.size() == 1, "single-layer VAE needs exactly one latent dim");
      require(driver != EstimatorId::vimco && driver != EstimatorId::disarm_multisample &&
                  driver != EstimatorId::exact,
              "vae_elbo estimator must be a single-objective estimator");
      if (c.kind == ExperimentKind::variance_probe) require(!c.probes.empty(), "variance_probe needs probes");
      break;
    case ExperimentKind::vae_hierarchical:
      require(driver == EstimatorId::disarm || driver == EstimatorId::arm,
              "hierarchical estimator must be disarm or arm");
      for (const auto& p : c.probes) {
        const auto id = estimator_from_string(p);
        require(id == EstimatorId::disarm || id == EstimatorId::arm,
                "hierarchical probes must be disarm or arm");
      }
      break;
    case ExperimentKind::vae_multisample:
      require(c.latent_dims.size() == 1, "multi-sample VAE needs exactly one latent dim");
      require(driver == EstimatorId::disarm || driver == EstimatorId::disarm_multisample ||
                  driver == EstimatorId::vimco,
              "multi-sample estimator must be disarm or vimco");
      require(c.k >= 1, "k must be >= 1");
      for (const auto& p : c.probes) {
        const auto id = estimator_from_string(p);
        require(id == EstimatorId::disarm || id == EstimatorId::disarm_multisample ||
                    id == EstimatorId::vimco,
                "multi-sample probes must be disarm or vimco");
        if (id == EstimatorId::vimco) require(c.k >= 2, "vimco probe needs k >= 2");
      }
      break;
    case ExperimentKind::toy:
      break;
  }
}

std::vector<std::string> preset_names() {
  return {"toy-0.49", "toy-0.499", "toy-0.4999", "vae-tiny", "vae-paper-linear"};
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.seed = 1;
  c.out = "runs/" + name;
  if (name.rfind("toy-", 0) == 0) {
    const std::string p0 = name.substr(4);
    if (p0 != "0.49" && p0 != "0.499" && p0 != "0.4999") throw ConfigError("unknown preset '" + name + "'");
    c.kind = ExperimentKind::toy;
    c.toy.p0 = std::stod(p0);
    c.probes = {"disarm", "arm", "reinforce_loo"};
    c.steps = 5000;
    c.log_every = 100;
    return c;
  }
  if (name == "vae-tiny") {
    c.kind = ExperimentKind::vae_elbo;
    c.dataset.synthetic = SyntheticSpec{};
    c.latent_dims = {20};
    c.steps = 20000;
    c.log_every = 100;
    c.eval_every = 1000;
    c.checkpoint_every = 5000;
    return c;
  }
  if (name == "vae-paper-linear") {
    c.kind = ExperimentKind::vae_elbo;
    c.dataset.path = "data/mnist/train-images-idx3-ubyte";
    c.dataset.test_path = "data/mnist/t10k-images-idx3-ubyte";
    c.latent_dims = {200};
    c.steps = 1000000;
    c.log_every = 1000;
    c.eval_every = 10000;
    c.eval_count = 1000;
    c.checkpoint_every = 100000;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace disarm
