#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlabel/layers.hpp"
#include "vlabel/signal.hpp"

namespace vlabel {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Which head sits on top of the branches.
enum class ModelKind { joint, voice_only, image_only };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct ModelConfig {
  std::size_t num_classes = 5;
  ModelKind kind = ModelKind::joint;
  double width_multiplier = 0.125;

  // Voice input: 1 s clips turned into bins x frames spectrograms.
  double sample_rate = 8000.0;
  double clip_seconds = 1.0;
  SpectrogramConfig spectrogram{510, 200, 120, WindowShape::hann};

  // Image input: frames are treated as channels.
  std::size_t image_frames = 25;
  std::size_t image_height = 64;
  std::size_t image_width = 96;

  std::vector<std::size_t> voice_channels{16, 32, 64, 64, 128, 128};
  std::vector<std::size_t> image_widths{8, 16, 32, 64, 128};
  /// 1-based indices of voice convolutions followed by a pool.
  std::vector<std::size_t> voice_pool_after{1, 2, 3, 4};
  /// 1-based indices of image blocks followed by a pool.
  std::vector<std::size_t> image_pool_after{1, 2, 3, 4, 5};

  BatchNormConfig batch_norm{};

  static constexpr std::size_t kVoiceConvs = 6;
  static constexpr std::size_t kImageBlocks = 5;
  static constexpr std::array<std::size_t, kImageBlocks> kImageBlockSizes{2, 2, 3, 3, 3};

  /// Full-scale dimensions: 48 kHz, 1024x66 spectrograms, 25x350x690 frames, R = 1024.
  static ModelConfig paper();
  /// Full-scale channel plans scaled by `width` (minimum 4 channels), desk-scale inputs.
  static ModelConfig desk(double width = 0.125);

  std::size_t joint_channels() const { return voice_channels.back(); }
  std::size_t voice_bins() const { return spectrogram.bins(); }
  std::size_t voice_frames() const;
  /// Time length of P after the voice pooling plan.
  std::size_t voice_time_out() const;
  /// Spatial size of Q after the image pooling plan.
  std::pair<std::size_t, std::size_t> image_hw_out() const;

  void validate() const;
};

/// Scales a width-1 channel plan, never below 4 channels.
std::vector<std::size_t> scale_channels(const std::vector<std::size_t>& base, double width);

nlohmann::json to_json(const ModelConfig& cfg);
/// Strict parse: unknown keys and type mismatches raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// All learnable tensors plus batch-norm running statistics, keyed by layer name.
template <typename T>
struct ModelParams {
  std::map<std::string, Tensor<T>> tensors;

  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  static bool trainable(const std::string& name);
  std::size_t parameter_count() const;
};

/// Fan-in scaled uniform conv weights, zero biases and beta, unit gamma,
/// zero running mean and unit running variance.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Zeroes the weights and bias of the classification head (decoder or branch head).
template <typename T>
void zero_head(ModelParams<T>& params, const ModelConfig& cfg);

/// Parameters registered on a tape for one forward pass.
template <typename T>
struct BoundParams {
  ModelParams<T>* params = nullptr;
  std::map<std::string, Var<T>> vars;

  Var<T> operator[](const std::string& name) const;
};

template <typename T>
BoundParams<T> bind(Tape<T>& tape, ModelParams<T>& params, bool requires_grad);

/// Named intermediate activations captured during a forward pass.
template <typename T>
using ActivationTrace = std::map<std::string, Var<T>>;

/// [N, bins, frames] -> P as [N, R, k_t]. Frequency bins are conv channels.
template <typename T>
Var<T> voice_branch(const BoundParams<T>& bound, const ModelConfig& cfg, Var<T> spectrogram, Mode mode,
                    ActivationTrace<T>* trace = nullptr);

/// [N, frames, H, W] -> Q as [N, R, h, w].
template <typename T>
Var<T> image_branch(const BoundParams<T>& bound, const ModelConfig& cfg, Var<T> frames, Mode mode,
                    ActivationTrace<T>* trace = nullptr);

/// C[i,j,k] = sum_r Q[i,j,r] P[k,r] for Q as [h, w, R] and P as [k_t, R].
template <typename T>
Tensor<T> joint(const Tensor<T>& q, const Tensor<T>& p);
template <typename T>
Var<T> joint(Var<T> q, Var<T> p);

/// Batched channel-first joint: Q [N, R, h, w] and P [N, R, k_t] give C [N, k_t, h, w].
template <typename T>
Var<T> joint_batched(Var<T> q, Var<T> p);

/// C [N, k_t, h, w] -> logits [N, K] through a 3x3 conv and global average pooling.
template <typename T>
Var<T> decode(const BoundParams<T>& bound, Var<T> c, ActivationTrace<T>* trace = nullptr);

/// Single-branch head: conv over the branch output (1D for P, 2D for Q), then GAP.
template <typename T>
Var<T> branch_only_forward(const BoundParams<T>& bound, const ModelConfig& cfg, Var<T> input, ModelKind which,
                           Mode mode, ActivationTrace<T>* trace = nullptr);

/// Full forward for cfg.kind. Unused inputs may be default-constructed.
template <typename T>
Var<T> forward(const BoundParams<T>& bound, const ModelConfig& cfg, Var<T> spectrogram, Var<T> frames, Mode mode,
               ActivationTrace<T>* trace = nullptr);

/// Weighted categorical cross-entropy over [N, K] logits with one-hot targets.
template <typename T>
Var<T> loss(Var<T> logits, const Tensor<T>& targets, const Tensor<T>& weights);

/// Lowest index among maximal entries.
std::size_t argmax(std::span<const float> values);

/// Evenly spaced frame indices used when the model takes fewer frames than recorded.
std::vector<std::size_t> inference_frame_indices(std::size_t available, std::size_t wanted);

/// Copies the listed frames of a [F, H, W] stack.
Tensor<float> select_frames(const Tensor<float>& stack, const std::vector<std::size_t>& indices);

struct Model {
  ModelConfig config;
  ModelParams<float> params;
};

struct PredictionResult {
  std::size_t label = 0;
  std::vector<float> probabilities;
};

/// Inference on precomputed inputs: spectrogram [bins, frames] and stack [F, H, W].
PredictionResult predict(const Model& model, const Tensor<float>& spectrogram, const Tensor<float>& frames);

/// Versioned binary checkpoint: magic, config echo, then named float32 tensors.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);
/// In-memory form of the checkpoint format.
std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::string& bytes);

}  // namespace vlabel
