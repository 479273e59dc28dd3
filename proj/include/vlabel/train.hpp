#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlabel/data.hpp"
#include "vlabel/model.hpp"

namespace vlabel {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { standard, random_pairs, reduced_frames, voice_only, image_only };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  Variant variant = Variant::standard;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Full-scale schedule: 200 epochs, batch 8, lr 1e-3; the single-branch ablations
  /// use 80 epochs at 1e-5 (image) and 200 epochs at 1e-6 (voice).
  static TrainConfig paper(Variant v = Variant::standard);
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Architecture for a variant: branch-only kinds or a 3-frame image input.
ModelConfig variant_model_config(ModelConfig base, Variant v);

struct AdamState {
  std::size_t step = 0;
  std::map<std::string, Tensor<float>> m;
  std::map<std::string, Tensor<float>> v;
};

/// w_k = max(counts) / counts_k. Zero counts are rejected.
std::vector<double> compute_class_weights(const std::vector<std::size_t>& counts);

/// Bias-corrected Adam on every trainable tensor that has a gradient entry.
/// A non-finite gradient aborts before any parameter changes.
void adam_step(ModelParams<float>& params, const std::map<std::string, Tensor<float>>& grads, AdamState& state,
               const TrainConfig& cfg);

/// One training example: which sample provides audio, which provides frames,
/// the target label and (for reduced inputs) the frame indices used.
struct BatchItem {
  std::size_t voice = 0;
  std::size_t image = 0;
  std::size_t label = 0;
  std::vector<std::size_t> frames;  // empty means all frames
  bool fallback = false;            // random pair fell back to the true pair
};

using Batch = std::vector<BatchItem>;

/// Seeded epoch plan over the given sample indices.
std::vector<Batch> make_batches(const Dataset& data, const std::vector<std::size_t>& indices, const TrainConfig& cfg,
                                std::uint64_t epoch_seed);

/// Builds the [N, bins, frames] and [N, F, H, W] inputs of a batch.
void assemble_batch(const Dataset& data, const Batch& batch, const ModelConfig& cfg, Tensor<float>& spectrograms,
                    Tensor<float>& frames, Tensor<float>& targets);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t steps = 0;
  std::size_t fallbacks = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  std::vector<double> class_weights;
  std::size_t steps = 0;
};

/// Called after each epoch with the log entry; also receives every batch when set.
struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const Batch&)> on_batch;
};

/// Trains cfg.kind (after variant adjustment) on the given indices.
TrainResult train(const Dataset& data, const std::vector<std::size_t>& indices, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Inputs of one sample for prediction under a (possibly reduced-frame) config.
PredictionResult predict_sample(const Model& model, const PairedSample& sample);

std::string format_loss_log(const std::vector<EpochLog>& log);

}  // namespace vlabel
