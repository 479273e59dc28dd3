#include "vlabel/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vlabel/random.hpp"

namespace vlabel {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::standard:
      return "standard";
    case Variant::random_pairs:
      return "random_pairs";
    case Variant::reduced_frames:
      return "reduced_frames";
    case Variant::voice_only:
      return "voice_only";
    case Variant::image_only:
      return "image_only";
  }
  return "standard";
}

Variant variant_from_string(const std::string& name) {
  for (auto v : {Variant::standard, Variant::random_pairs, Variant::reduced_frames, Variant::voice_only,
                 Variant::image_only}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name +
                    "' (expected standard, random_pairs, reduced_frames, voice_only or image_only)");
}

TrainConfig TrainConfig::paper(Variant v) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.batch_size = 8;
  cfg.epochs = 200;
  cfg.learning_rate = 1e-3;
  if (v == Variant::image_only) {
    cfg.epochs = 80;
    cfg.learning_rate = 1e-5;
  } else if (v == Variant::voice_only) {
    cfg.learning_rate = 1e-6;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ConfigError("adam epsilon must be positive");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},       {"batch_size", cfg.batch_size}, {"learning_rate", cfg.learning_rate},
          {"seed", cfg.seed},           {"variant", to_string(cfg.variant)}, {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},         {"epsilon", cfg.epsilon}};
}

namespace {

template <typename V>
V typed(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key 'train." + key + "' has the wrong type");
  }
}

std::size_t count_value(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
    throw ConfigError("config key 'train." + key + "' must be a non-negative integer");
  }
  return j.get<std::size_t>();
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "epochs") {
      base.epochs = count_value(v, k);
    } else if (k == "batch_size") {
      base.batch_size = count_value(v, k);
    } else if (k == "learning_rate") {
      if (!v.is_number()) throw ConfigError("config key 'train.learning_rate' has the wrong type");
      base.learning_rate = v.get<double>();
    } else if (k == "seed") {
      base.seed = count_value(v, k);
    } else if (k == "variant") {
      base.variant = variant_from_string(typed<std::string>(v, k));
    } else if (k == "beta1" || k == "beta2" || k == "epsilon") {
      if (!v.is_number()) throw ConfigError("config key 'train." + k + "' has the wrong type");
      (k == "beta1" ? base.beta1 : k == "beta2" ? base.beta2 : base.epsilon) = v.get<double>();
    } else {
      throw ConfigError("unknown config key 'train." + k + "'");
    }
  }
  return base;
}

ModelConfig variant_model_config(ModelConfig base, Variant v) {
  switch (v) {
    case Variant::voice_only:
      base.kind = ModelKind::voice_only;
      break;
    case Variant::image_only:
      base.kind = ModelKind::image_only;
      break;
    case Variant::reduced_frames:
      base.kind = ModelKind::joint;
      base.image_frames = 3;
      break;
    case Variant::standard:
    case Variant::random_pairs:
      base.kind = ModelKind::joint;
      break;
  }
  return base;
}

std::vector<double> compute_class_weights(const std::vector<std::size_t>& counts) {
  if (counts.empty()) throw TrainError("class weights need at least one class");
  std::size_t most = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) {
      throw TrainError("class " + std::to_string(k) + " has no training samples; its weight is undefined");
    }
    most = std::max(most, counts[k]);
  }
  std::vector<double> w(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) w[k] = static_cast<double>(most) / static_cast<double>(counts[k]);
  return w;
}

void adam_step(ModelParams<float>& params, const std::map<std::string, Tensor<float>>& grads, AdamState& state,
               const TrainConfig& cfg) {
  for (const auto& [name, g] : grads) {
    const auto& p = params.at(name);
    if (g.shape() != p.shape()) {
      throw TrainError("gradient for " + name + " has shape " + shape_str(g.shape()) + ", parameter is " +
                       shape_str(p.shape()));
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw TrainError("non-finite gradient in " + name + " at element " + std::to_string(i) + " (step " +
                         std::to_string(state.step + 1) + "); update aborted");
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, g] : grads) {
    if (!ModelParams<float>::trainable(name)) continue;
    auto& p = params.at(name);
    auto& m = state.m.try_emplace(name, p.shape()).first->second;
    auto& v = state.v.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1 - cfg.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(p[i] - cfg.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg.epsilon));
    }
  }
}

std::vector<Batch> make_batches(const Dataset& data, const std::vector<std::size_t>& indices, const TrainConfig& cfg,
                                std::uint64_t epoch_seed) {
  if (indices.empty()) throw TrainError("cannot build batches from an empty training set");
  Rng rng(epoch_seed);
  std::vector<std::size_t> order = indices;
  rng.shuffle(order);

  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (auto i : indices) by_class[data.samples.at(i).label].push_back(i);

  std::vector<Batch> batches;
  Batch current;
  for (auto i : order) {
    const auto& s = data.samples[i];
    BatchItem item{i, i, s.label, {}, false};
    if (cfg.variant == Variant::random_pairs) {
      const auto& pool = by_class[s.label];
      if (pool.size() < 2) {
        item.fallback = true;
      } else {
        item.voice = pool[rng.below(pool.size())];
        item.image = pool[rng.below(pool.size())];
      }
    } else if (cfg.variant == Variant::reduced_frames) {
      item.frames = rng.sample_without_replacement(s.frames.dim(0), 3);
      std::sort(item.frames.begin(), item.frames.end());
    }
    current.push_back(std::move(item));
    if (current.size() == cfg.batch_size) batches.push_back(std::move(current)), current.clear();
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

void assemble_batch(const Dataset& data, const Batch& batch, const ModelConfig& cfg, Tensor<float>& spectrograms,
                    Tensor<float>& frames, Tensor<float>& targets) {
  const std::size_t n = batch.size();
  targets = Tensor<float>({n, cfg.num_classes});
  if (cfg.kind != ModelKind::image_only) {
    const std::size_t bins = cfg.voice_bins(), len = cfg.voice_frames(), per = bins * len;
    spectrograms = Tensor<float>({n, bins, len});
    for (std::size_t b = 0; b < n; ++b) {
      const auto& src = data.samples.at(batch[b].voice).spectrogram;
      if (src.shape() != Shape{bins, len}) {
        throw ConfigError("spectrogram " + shape_str(src.shape()) + " does not match config [" +
                          std::to_string(bins) + "x" + std::to_string(len) + "]");
      }
      std::copy(src.data().begin(), src.data().end(), spectrograms.data().begin() + b * per);
    }
  }
  if (cfg.kind != ModelKind::voice_only) {
    const std::size_t f = cfg.image_frames, h = cfg.image_height, w = cfg.image_width, plane = h * w;
    frames = Tensor<float>({n, f, h, w});
    for (std::size_t b = 0; b < n; ++b) {
      const auto& src = data.samples.at(batch[b].image).frames;
      if (src.dim(1) != h || src.dim(2) != w) throw ConfigError("frame stack does not match config dims");
      std::vector<std::size_t> pick = batch[b].frames;
      if (pick.empty()) {
        pick = src.dim(0) == f ? std::vector<std::size_t>{} : inference_frame_indices(src.dim(0), f);
        if (pick.empty())
          for (std::size_t k = 0; k < f; ++k) pick.push_back(k);
      }
      if (pick.size() != f) throw ConfigError("batch item selects " + std::to_string(pick.size()) + " frames, model takes " + std::to_string(f));
      for (std::size_t k = 0; k < f; ++k) {
        const float* from = src.data().data() + pick[k] * plane;
        std::copy(from, from + plane, frames.data().data() + (b * f + k) * plane);
      }
    }
  }
  for (std::size_t b = 0; b < n; ++b) targets.at({b, batch[b].label}) = 1.0f;
}

TrainResult train(const Dataset& data, const std::vector<std::size_t>& indices, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const ModelConfig mcfg = variant_model_config(model_cfg, cfg.variant);
  mcfg.validate();
  if (data.num_classes() != mcfg.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes()) + " classes, model expects " +
                      std::to_string(mcfg.num_classes));
  }
  TrainResult result;
  result.class_weights = compute_class_weights(data.class_counts(indices));
  Tensor<float> weights({mcfg.num_classes});
  for (std::size_t k = 0; k < mcfg.num_classes; ++k) weights[k] = static_cast<float>(result.class_weights[k]);

  result.model.config = mcfg;
  result.model.params = init_params<float>(mcfg, derive_seed(cfg.seed, "init"));
  auto& params = result.model.params;
  AdamState adam;
  Tensor<float> spec, frames, targets;
  std::map<std::string, Tensor<float>> grads;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(data, indices, cfg, derive_seed(cfg.seed, "epoch", epoch));
    EpochLog log{epoch + 1, 0.0, 0, 0};
    double weighted_sum = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      if (hooks.on_batch) hooks.on_batch(batch);
      for (const auto& item : batch) log.fallbacks += item.fallback;
      assemble_batch(data, batch, mcfg, spec, frames, targets);
      Tape<float> tape;
      auto bound = bind(tape, params, true);
      Var<float> sv, fv;
      if (mcfg.kind != ModelKind::image_only) sv = tape.constant(spec);
      if (mcfg.kind != ModelKind::voice_only) fv = tape.constant(frames);
      auto l = loss(forward(bound, mcfg, sv, fv, Mode::train), targets, weights);
      const double value = l.value()[0];
      if (!std::isfinite(value)) {
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1));
      }
      tape.backward(l);
      grads.clear();
      for (const auto& [name, var] : bound.vars) {
        if (!ModelParams<float>::trainable(name)) continue;
        if (const auto* g = var.grad()) grads.emplace(name, *g);
      }
      adam_step(params, grads, adam, cfg);
      weighted_sum += value * static_cast<double>(batch.size());
      seen += batch.size();
      ++log.steps;
    }
    log.mean_loss = weighted_sum / static_cast<double>(seen);
    result.steps += log.steps;
    result.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
  }
  return result;
}

PredictionResult predict_sample(const Model& model, const PairedSample& sample) {
  return predict(model, sample.spectrogram, sample.frames);
}

std::string format_loss_log(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "# epoch mean_loss steps fallbacks\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu %.9g %zu %zu\n", e.epoch, e.mean_loss, e.steps, e.fallbacks);
    os << buf;
  }
  return os.str();
}

}  // namespace vlabel
