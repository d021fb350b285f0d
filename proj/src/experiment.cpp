#include "disarm/experiment.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <optional>

#include "disarm/checkpoint.hpp"
#include "disarm/estimators.hpp"
#include "disarm/math.hpp"
#include "disarm/variance_tracker.hpp"
#include "disarm/vae.hpp"

namespace disarm {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

MetricsWriter::MetricsWriter(const fs::path& dir)
    : metrics_(dir / "metrics.jsonl", std::ios::trunc), timing_(dir / "timing.jsonl", std::ios::trunc) {
  if (!metrics_ || !timing_) throw std::runtime_error("cannot open metrics files in " + dir.string());
}

void MetricsWriter::record(const ojson& rec, double wall_ms) {
  metrics_ << rec.dump() << '\n';
  metrics_.flush();
  ojson t;
  t["step"] = rec.at("step");
  t["wall_ms"] = wall_ms;
  timing_ << t.dump() << '\n';
  timing_.flush();
}

void write_json_file(const fs::path& path, const ojson& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

namespace {

// Independent streams, one per purpose, so that e.g. evaluation never shifts
// the training randomness.
struct Streams {
  explicit Streams(std::uint64_t seed) : root(seed) {}
  Rng root;
  Rng train() const { return root.split(0); }
  Rng probe() const { return root.split(1); }
  Rng eval() const { return root.split(2); }
  Rng data() const { return root.split(3); }
  Rng init() const { return root.split(4); }
  Rng batches() const { return root.split(5); }
};

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%08lld.ckpt", static_cast<long long>(step));
  return buf;
}

// -- toy ---------------------------------------------------------------------

ojson run_toy(const ExperimentConfig& c, const fs::path& out, MetricsWriter& metrics) {
  const Streams streams(*c.seed);
  const EstimatorId driver = estimator_from_string(c.estimator);
  const EstimatorOptions options{c.beta, c.baseline};
  const double p0 = c.toy.p0;
  ObjectiveFunction f([p0](const Bits& b) { return toy_value(p0, b(0) != 0); });

  std::vector<EstimatorId> probes;
  for (const auto& p : c.probes) probes.push_back(estimator_from_string(p));

  Eigen::VectorXd phi(1);
  phi(0) = c.toy.phi;
  Optimizer sgd(SgdConfig{c.toy.lr});
  VarianceTracker tracker;
  std::size_t evals = 0;
  const auto t0 = Clock::now();

  for (std::int64_t s = 1; s <= c.steps; ++s) {
    const LogitParameterVector logits(phi);
    Rng rng = streams.train().split(static_cast<std::uint64_t>(s));
    const GradientEstimate g = estimate(driver, logits, f, rng, options);
    if (!g.partials.allFinite()) {
      throw NonFiniteError("toy: non-finite gradient at step " + std::to_string(s) +
                           " (phi=" + std::to_string(phi(0)) + ")");
    }
    tracker.update(g.partials);
    evals += g.objective_evals;

    if (s % c.log_every == 0 || s == c.steps) {
      ojson rec;
      rec["step"] = s;
      rec["objective"] = toy_expected_value(p0, phi(0));
      rec["sigma"] = sigmoid(phi(0));
      rec["grad"] = g.partials(0);
      rec["exact_grad"] = toy_exact_gradient(p0, phi(0));
      rec["grad_var"] = ojson{{"phi", tracker.mean_variance()}};
      if (!probes.empty()) {
        // Fresh Monte-Carlo variance at this snapshot; sample m is shared by
        // all probes.
        ojson pv;
        const Rng probe_rng = streams.probe().split(static_cast<std::uint64_t>(s));
        for (std::size_t j = 0; j < probes.size(); ++j) {
          double mean = 0.0;
          double m2 = 0.0;
          for (Eigen::Index m = 0; m < c.toy.mc_samples; ++m) {
            Rng r = probe_rng.split(static_cast<std::uint64_t>(m));
            const double x = estimate(probes[j], logits, f, r, options).partials(0);
            const double delta = x - mean;
            mean += delta / static_cast<double>(m + 1);
            m2 += delta * (x - mean);
          }
          pv[c.probes[j]] = m2 / static_cast<double>(c.toy.mc_samples - 1);
        }
        rec["probe_var"] = pv;
      }
      rec["estimator_id"] = c.estimator;
      rec["seed"] = *c.seed;
      metrics.record(rec, elapsed_ms(t0));
    }
    sgd.step(phi, g.partials);
    if (c.checkpoint_every > 0 && s % c.checkpoint_every == 0) {
      write_checkpoint(out / "checkpoints" / checkpoint_name(s),
                       Checkpoint{static_cast<std::uint64_t>(s), {{"phi", phi}}});
    }
  }
  write_checkpoint(out / "final.ckpt", Checkpoint{static_cast<std::uint64_t>(c.steps), {{"phi", phi}}});

  ojson summary;
  summary["kind"] = to_string(c.kind);
  summary["estimator_id"] = c.estimator;
  summary["seed"] = *c.seed;
  summary["steps"] = c.steps;
  summary["final_phi"] = phi(0);
  summary["final_sigma"] = sigmoid(phi(0));
  summary["final_objective"] = toy_expected_value(p0, phi(0));
  summary["objective_evals"] = evals;
  return summary;
}

// -- VAE family --------------------------------------------------------------

Checkpoint snapshot(std::int64_t step, const BernoulliVAE& vae) {
  return {static_cast<std::uint64_t>(step),
          {{"encoder", vae.encoder}, {"decoder", vae.decoder}, {"prior", vae.prior_logits}}};
}

Checkpoint snapshot(std::int64_t step, const HierarchicalVAE& hvae) {
  Checkpoint cp{static_cast<std::uint64_t>(step), {}};
  for (std::size_t t = 0; t < hvae.layer_count(); ++t) {
    cp.entries.push_back({"encoder." + std::to_string(t), hvae.encoders[t]});
    cp.entries.push_back({"decoder." + std::to_string(t), hvae.decoders[t]});
  }
  cp.entries.push_back({"prior", hvae.prior_logits});
  return cp;
}

Batch test_batch(const ExperimentConfig& c, const DataSplit& data, const Streams& streams) {
  const Eigen::Index n = c.eval_count > 0 ? std::min(c.eval_count, data.test.count()) : data.test.count();
  if (n == 0) throw ConfigError("test bound requested but the test set is empty");
  std::vector<Eigen::Index> cols(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) cols[static_cast<std::size_t>(i)] = i;
  Rng rng = streams.eval().split(0);
  return make_batch(data.test, data.mean, cols, rng);
}

// Either model flavour behind one interface for the training loop.
struct Model {
  std::optional<BernoulliVAE> single;
  std::optional<HierarchicalVAE> layered;

  Checkpoint snapshot(std::int64_t step) const {
    return single ? disarm::snapshot(step, *single) : disarm::snapshot(step, *layered);
  }
  double test_bound(const Batch& batch, Eigen::Index samples, const Rng& rng) const {
    const Eigen::VectorXd b = single ? importance_bound(*single, batch, samples, rng)
                                     : importance_bound(*layered, batch, samples, rng);
    return b.mean();
  }
};

Model build_model(const ExperimentConfig& c, Eigen::Index data_dim, const Streams& streams) {
  Rng init = streams.init();
  Model m;
  if (c.kind == ExperimentKind::vae_hierarchical) {
    m.layered = HierarchicalVAE::create(data_dim, c.latent_dims, c.hidden, init, c.leaky_slope);
  } else {
    m.single = BernoulliVAE::create(data_dim, c.latent_dims.front(), c.hidden, init, c.leaky_slope);
  }
  return m;
}

struct StepOutput {
  double objective = 0.0;
  std::size_t evals = 0;
  Eigen::VectorXd encoder;
  Eigen::VectorXd decoder;
  Eigen::VectorXd prior;
};

MultiSampleMethod multisample_method(EstimatorId id) {
  return id == EstimatorId::vimco ? MultiSampleMethod::vimco_2k : MultiSampleMethod::disarm_k_pairs;
}

ojson run_vae(const ExperimentConfig& c, const fs::path& out, MetricsWriter& metrics) {
  const Streams streams(*c.seed);
  const DataSplit data = load_data(c);
  Model model = build_model(c, data.train.pixel_count(), streams);
  const TrainingRates rates{c.network_lr, c.prior_lr};
  const EstimatorId driver = estimator_from_string(c.estimator);
  const EstimatorSpec spec{driver, c.beta, c.baseline};

  std::optional<VaeOptimizers> opt;
  std::optional<HierarchicalOptimizers> hopt;
  if (model.single) {
    opt = VaeOptimizers::make(rates);
  } else {
    hopt = HierarchicalOptimizers::make(model.layered->layer_count(), rates);
  }

  const bool evaluating = c.eval_every > 0;
  const std::optional<Batch> held_out =
      evaluating ? std::optional<Batch>(test_batch(c, data, streams)) : std::nullopt;

  const bool probing = c.kind == ExperimentKind::variance_probe ||
                       (c.kind != ExperimentKind::vae_elbo && !c.probes.empty());
  std::vector<EstimatorId> probe_ids;
  if (probing) {
    for (const auto& p : c.probes) probe_ids.push_back(estimator_from_string(p));
  }

  // Inference-network gradient of probe `id` at the current snapshot, on the
  // driver's stream so that shared-sampling estimators see the same draws.
  auto probe_gradient = [&](EstimatorId id, const Batch& batch, const Rng& rng) -> Eigen::VectorXd {
    switch (c.kind) {
      case ExperimentKind::vae_hierarchical:
        return flatten(hierarchical_gradients(*model.layered, batch, id, rng).grads.encoders);
      case ExperimentKind::vae_multisample:
        if (id == EstimatorId::vimco) {
          // Two independent K-sample VIMCO estimates averaged: same cost as K pairs.
          const auto a = multisample_gradients(*model.single, batch, c.k, MultiSampleMethod::vimco_k, rng.split(1));
          const auto b = multisample_gradients(*model.single, batch, c.k, MultiSampleMethod::vimco_k, rng.split(2));
          return 0.5 * (a.grads.encoder.flatten() + b.grads.encoder.flatten());
        }
        return multisample_gradients(*model.single, batch, c.k, MultiSampleMethod::disarm_k_pairs, rng)
            .grads.encoder.flatten();
      default:
        return elbo_gradients(*model.single, batch, EstimatorSpec{id, c.beta, c.baseline}, rng)
            .grads.encoder.flatten();
    }
  };

  auto train_step = [&](const Batch& batch, const Rng& rng) {
    StepOutput o;
    if (c.kind == ExperimentKind::vae_hierarchical) {
      const auto r = hierarchical_disarm_step(*model.layered, batch, *hopt, rng, driver);
      o.objective = r.objective;
      o.evals = r.objective_evals;
      o.encoder = flatten(r.grads.encoders);
      o.decoder = flatten(r.grads.decoders);
      o.prior = r.grads.prior;
      return o;
    }
    const auto r = c.kind == ExperimentKind::vae_multisample
                       ? multisample_step(*model.single, batch, c.k, multisample_method(driver), *opt, rng)
                       : elbo_step(*model.single, batch, spec, *opt, rng);
    o.objective = r.objective;
    o.evals = r.objective_evals;
    o.encoder = r.grads.encoder.flatten();
    o.decoder = r.grads.decoder.flatten();
    o.prior = r.grads.prior;
    return o;
  };

  VarianceTracker enc_var, dec_var, prior_var;
  std::vector<VarianceTracker> probe_var(probe_ids.size());
  std::size_t evals = 0;
  double window_sum = 0.0;
  std::int64_t window_n = 0;
  double last_objective = 0.0;
  std::optional<double> last_bound;
  const auto t0 = Clock::now();
  const Eigen::Index n_train = data.train.count();

  for (std::int64_t s = 1; s <= c.steps; ++s) {
    const auto su = static_cast<std::uint64_t>(s);
    Rng batch_rng = streams.batches().split(su);
    std::vector<Eigen::Index> cols(static_cast<std::size_t>(c.batch_size));
    for (auto& col : cols) {
      col = std::min<Eigen::Index>(n_train - 1, static_cast<Eigen::Index>(batch_rng.uniform() * static_cast<double>(n_train)));
    }
    const Batch batch = make_batch(data.train, data.mean, cols, batch_rng);
    const Rng rng = streams.train().split(su);

    for (std::size_t j = 0; j < probe_ids.size(); ++j) {
      probe_var[j].update(probe_gradient(probe_ids[j], batch, rng));
    }

    StepOutput o;
    try {
      o = train_step(batch, rng);
    } catch (const NonFiniteError& e) {
      ojson diag;
      diag["step"] = s;
      diag["error"] = e.what();
      diag["last_objective"] = last_objective;
      write_json_file(out / "diagnostic.json", diag);
      write_checkpoint(out / "diagnostic.ckpt", model.snapshot(s - 1));
      throw;
    }
    evals += o.evals;
    enc_var.update(o.encoder);
    dec_var.update(o.decoder);
    prior_var.update(o.prior);
    window_sum += o.objective;
    ++window_n;
    last_objective = o.objective;

    const bool eval_now = evaluating && (s % c.eval_every == 0 || s == c.steps);
    if (eval_now) last_bound = model.test_bound(*held_out, c.eval_samples, streams.eval().split(su));

    if (s % c.log_every == 0 || s == c.steps) {
      ojson rec;
      rec["step"] = s;
      rec["objective"] = o.objective;
      rec["objective_avg"] = window_sum / static_cast<double>(window_n);
      if (eval_now) rec["test_bound"] = *last_bound;
      rec["grad_var"] = ojson{{"encoder", enc_var.mean_variance()},
                              {"decoder", dec_var.mean_variance()},
                              {"prior", prior_var.mean_variance()}};
      if (!probe_ids.empty()) {
        ojson pv;
        for (std::size_t j = 0; j < probe_ids.size(); ++j) pv[c.probes[j]] = probe_var[j].mean_variance();
        rec["probe_var"] = pv;
      }
      rec["estimator_id"] = c.estimator;
      rec["seed"] = *c.seed;
      metrics.record(rec, elapsed_ms(t0));
      window_sum = 0.0;
      window_n = 0;
    }
    if (c.checkpoint_every > 0 && s % c.checkpoint_every == 0) {
      write_checkpoint(out / "checkpoints" / checkpoint_name(s), model.snapshot(s));
    }
  }
  write_checkpoint(out / "final.ckpt", model.snapshot(c.steps));

  ojson summary;
  summary["kind"] = to_string(c.kind);
  summary["estimator_id"] = c.estimator;
  summary["seed"] = *c.seed;
  summary["steps"] = c.steps;
  summary["final_objective"] = last_objective;
  if (last_bound) summary["final_test_bound"] = *last_bound;
  summary["objective_evals"] = evals;
  return summary;
}

}  // namespace

DataSplit load_data(const ExperimentConfig& c) {
  DataSplit d;
  if (c.dataset.synthetic) {
    const Streams streams(*c.seed);
    const auto& s = *c.dataset.synthetic;
    d.train = synthetic_images(s.count, s.side, streams.data().split(0));
    if (s.test_count > 0) {
      d.test = synthetic_images(s.test_count, s.side, streams.data().split(1));
    } else {
      d.test = ImageSet{s.side, s.side, Eigen::MatrixXd(s.side * s.side, 0)};
    }
  } else {
    ImageSet all = load_idx_images(c.dataset.path);
    if (!c.dataset.test_path.empty()) {
      d.train = std::move(all);
      d.test = load_idx_images(c.dataset.test_path);
    } else {
      const Eigen::Index held = std::min(c.dataset.test_count, all.count() - 1);
      d.train = ImageSet{all.rows, all.cols, all.pixels.leftCols(all.count() - held)};
      d.test = ImageSet{all.rows, all.cols, all.pixels.rightCols(held)};
    }
  }
  if (d.train.count() == 0) throw ConfigError("training set is empty");
  d.mean = mean_image(d.train);
  return d;
}

ojson run(const ExperimentConfig& c) {
  validate(c);
  const fs::path out(c.out);
  fs::create_directories(out);
  if (c.checkpoint_every > 0) fs::create_directories(out / "checkpoints");
  write_json_file(out / "config.json", to_json(c));
  MetricsWriter metrics(out);
  const ojson summary = c.kind == ExperimentKind::toy ? run_toy(c, out, metrics) : run_vae(c, out, metrics);
  write_json_file(out / "summary.json", summary);
  return summary;
}

ojson evaluate(const ExperimentConfig& c, const fs::path& checkpoint_path) {
  validate(c);
  if (c.kind == ExperimentKind::toy) {
    const Checkpoint cp = read_checkpoint(checkpoint_path);
    const double phi = cp.vector("phi")(0);
    return ojson{{"step", cp.step}, {"phi", phi}, {"sigma", sigmoid(phi)},
                 {"objective", toy_expected_value(c.toy.p0, phi)}};
  }
  const Streams streams(*c.seed);
  const DataSplit data = load_data(c);
  const Checkpoint cp = read_checkpoint(checkpoint_path);
  Model model;
  if (c.kind == ExperimentKind::vae_hierarchical) {
    HierarchicalVAE h;
    for (std::size_t t = 0; t < c.latent_dims.size(); ++t) {
      h.encoders.push_back(cp.network("encoder." + std::to_string(t)));
      h.decoders.push_back(cp.network("decoder." + std::to_string(t)));
    }
    h.prior_logits = cp.vector("prior");
    h.validate();
    model.layered = std::move(h);
  } else {
    BernoulliVAE v{cp.network("encoder"), cp.network("decoder"), cp.vector("prior")};
    v.validate();
    model.single = std::move(v);
  }
  const Batch batch = test_batch(c, data, streams);
  const double bound = model.test_bound(batch, c.eval_samples, streams.eval().split(cp.step));
  return ojson{{"step", cp.step}, {"test_bound", bound}, {"eval_samples", c.eval_samples},
               {"test_examples", batch.size()}};
}

}  // namespace disarm
