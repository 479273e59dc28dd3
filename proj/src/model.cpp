#include "vlabel/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "vlabel/io.hpp"
#include "vlabel/random.hpp"

namespace vlabel {

namespace {

const std::vector<std::size_t> kPaperVoiceChannels{128, 256, 512, 512, 1024, 1024};
const std::vector<std::size_t> kPaperImageWidths{64, 128, 256, 512, 1024};

bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::joint:
      return "joint";
    case ModelKind::voice_only:
      return "voice_only";
    case ModelKind::image_only:
      return "image_only";
  }
  return "joint";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "joint") return ModelKind::joint;
  if (name == "voice_only") return ModelKind::voice_only;
  if (name == "image_only") return ModelKind::image_only;
  throw ConfigError("unknown model kind '" + name + "' (expected joint, voice_only or image_only)");
}

std::vector<std::size_t> scale_channels(const std::vector<std::size_t>& base, double width) {
  if (!(width > 0)) throw ConfigError("width_multiplier must be positive");
  std::vector<std::size_t> out;
  for (auto c : base) {
    out.push_back(std::max<std::size_t>(4, static_cast<std::size_t>(std::llround(static_cast<double>(c) * width))));
  }
  return out;
}

ModelConfig ModelConfig::paper() {
  ModelConfig cfg;
  cfg.width_multiplier = 1.0;
  cfg.sample_rate = 48000.0;
  cfg.spectrogram = SpectrogramConfig{2046, 1200, 720, WindowShape::hann};
  cfg.image_height = 350;
  cfg.image_width = 690;
  cfg.voice_channels = kPaperVoiceChannels;
  cfg.image_widths = kPaperImageWidths;
  return cfg;
}

ModelConfig ModelConfig::desk(double width) {
  ModelConfig cfg;
  cfg.width_multiplier = width;
  cfg.voice_channels = scale_channels(kPaperVoiceChannels, width);
  cfg.image_widths = scale_channels(kPaperImageWidths, width);
  return cfg;
}

std::size_t ModelConfig::voice_frames() const {
  const auto samples = static_cast<std::size_t>(std::llround(clip_seconds * sample_rate));
  return spectrogram.frames(samples);
}

std::size_t ModelConfig::voice_time_out() const {
  std::size_t len = voice_frames();
  for (std::size_t i = 1; i <= kVoiceConvs; ++i) {
    if (contains(voice_pool_after, i)) {
      if (len < 2) throw ConfigError("voice pooling plan shrinks the time axis below 1");
      len /= 2;
    }
  }
  return len;
}

std::pair<std::size_t, std::size_t> ModelConfig::image_hw_out() const {
  std::size_t h = image_height, w = image_width;
  for (std::size_t b = 1; b <= kImageBlocks; ++b) {
    if (contains(image_pool_after, b)) {
      if (h < 2 || w < 2) throw ConfigError("image pooling plan shrinks a spatial axis below 1");
      h /= 2;
      w /= 2;
    }
  }
  return {h, w};
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (voice_channels.size() != kVoiceConvs) throw ConfigError("voice_channels must list 6 channel counts");
  if (image_widths.size() != kImageBlocks) throw ConfigError("image_widths must list 5 block widths");
  for (auto c : voice_channels)
    if (c == 0) throw ConfigError("voice channel counts must be positive");
  for (auto c : image_widths)
    if (c == 0) throw ConfigError("image block widths must be positive");
  if (voice_channels.back() != image_widths.back()) {
    throw ConfigError("last voice channel count (" + std::to_string(voice_channels.back()) +
                      ") must equal last image block width (" + std::to_string(image_widths.back()) + ")");
  }
  for (auto i : voice_pool_after)
    if (i < 1 || i > kVoiceConvs) throw ConfigError("voice_pool_after entries must be in [1, 6]");
  for (auto i : image_pool_after)
    if (i < 1 || i > kImageBlocks) throw ConfigError("image_pool_after entries must be in [1, 5]");
  if (image_frames == 0 || image_height == 0 || image_width == 0) throw ConfigError("image dims must be positive");
  if (!(sample_rate > 0) || !(clip_seconds > 0)) throw ConfigError("sample_rate and clip_seconds must be positive");
  try {
    spectrogram.validate();
  } catch (const SignalError& e) {
    throw ConfigError(std::string("spectrogram: ") + e.what());
  }
  if (voice_frames() == 0) throw ConfigError("clip is shorter than one spectrogram window");
  (void)voice_time_out();
  (void)image_hw_out();
}

nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["num_classes"] = cfg.num_classes;
  j["kind"] = to_string(cfg.kind);
  j["width_multiplier"] = cfg.width_multiplier;
  j["sample_rate"] = cfg.sample_rate;
  j["clip_seconds"] = cfg.clip_seconds;
  j["spectrogram"] = {{"fft_points", cfg.spectrogram.fft_points},
                      {"window_length", cfg.spectrogram.window_length},
                      {"hop", cfg.spectrogram.hop},
                      {"window", cfg.spectrogram.window == WindowShape::hann ? "hann" : "rectangular"}};
  j["image_frames"] = cfg.image_frames;
  j["image_height"] = cfg.image_height;
  j["image_width"] = cfg.image_width;
  j["voice_channels"] = cfg.voice_channels;
  j["image_widths"] = cfg.image_widths;
  j["voice_pool_after"] = cfg.voice_pool_after;
  j["image_pool_after"] = cfg.image_pool_after;
  j["batch_norm"] = {{"momentum", cfg.batch_norm.momentum}, {"epsilon", cfg.batch_norm.epsilon}};
  return j;
}

namespace {

template <typename V>
V get_as(const nlohmann::json& value, const std::string& key) {
  try {
    if constexpr (std::is_same_v<V, std::size_t>) {
      if (!value.is_number_unsigned()) throw ConfigError("key '" + key + "' must be a non-negative integer");
    } else if constexpr (std::is_same_v<V, double>) {
      if (!value.is_number()) throw ConfigError("key '" + key + "' must be a number");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!value.is_string()) throw ConfigError("key '" + key + "' must be a string");
    } else if constexpr (std::is_same_v<V, std::vector<std::size_t>>) {
      if (!value.is_array()) throw ConfigError("key '" + key + "' must be an array of integers");
      for (const auto& e : value)
        if (!e.is_number_unsigned()) throw ConfigError("key '" + key + "' must be an array of integers");
    }
    return value.get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

void require_object(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
}

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig cfg) {
  require_object(j, "model");
  bool explicit_voice = false, explicit_image = false, width_given = false;
  for (const auto& [key, value] : j.items()) {
    const std::string path = "model." + key;
    if (key == "num_classes") {
      cfg.num_classes = get_as<std::size_t>(value, path);
    } else if (key == "kind") {
      cfg.kind = model_kind_from_string(get_as<std::string>(value, path));
    } else if (key == "width_multiplier") {
      cfg.width_multiplier = get_as<double>(value, path);
      width_given = true;
    } else if (key == "sample_rate") {
      cfg.sample_rate = get_as<double>(value, path);
    } else if (key == "clip_seconds") {
      cfg.clip_seconds = get_as<double>(value, path);
    } else if (key == "spectrogram") {
      require_object(value, path);
      for (const auto& [sk, sv] : value.items()) {
        const std::string sp = path + "." + sk;
        if (sk == "fft_points") {
          cfg.spectrogram.fft_points = get_as<std::size_t>(sv, sp);
        } else if (sk == "window_length") {
          cfg.spectrogram.window_length = get_as<std::size_t>(sv, sp);
        } else if (sk == "hop") {
          cfg.spectrogram.hop = get_as<std::size_t>(sv, sp);
        } else if (sk == "window") {
          const auto w = get_as<std::string>(sv, sp);
          if (w == "hann")
            cfg.spectrogram.window = WindowShape::hann;
          else if (w == "rectangular")
            cfg.spectrogram.window = WindowShape::rectangular;
          else
            throw ConfigError("key '" + sp + "': unknown window '" + w + "'");
        } else {
          throw ConfigError("unknown config key '" + sp + "'");
        }
      }
    } else if (key == "image_frames") {
      cfg.image_frames = get_as<std::size_t>(value, path);
    } else if (key == "image_height") {
      cfg.image_height = get_as<std::size_t>(value, path);
    } else if (key == "image_width") {
      cfg.image_width = get_as<std::size_t>(value, path);
    } else if (key == "voice_channels") {
      cfg.voice_channels = get_as<std::vector<std::size_t>>(value, path);
      explicit_voice = true;
    } else if (key == "image_widths") {
      cfg.image_widths = get_as<std::vector<std::size_t>>(value, path);
      explicit_image = true;
    } else if (key == "voice_pool_after") {
      cfg.voice_pool_after = get_as<std::vector<std::size_t>>(value, path);
    } else if (key == "image_pool_after") {
      cfg.image_pool_after = get_as<std::vector<std::size_t>>(value, path);
    } else if (key == "batch_norm") {
      require_object(value, path);
      for (const auto& [bk, bv] : value.items()) {
        const std::string bp = path + "." + bk;
        if (bk == "momentum")
          cfg.batch_norm.momentum = get_as<double>(bv, bp);
        else if (bk == "epsilon")
          cfg.batch_norm.epsilon = get_as<double>(bv, bp);
        else
          throw ConfigError("unknown config key '" + bp + "'");
      }
    } else {
      throw ConfigError("unknown config key '" + path + "'");
    }
  }
  if (width_given && !explicit_voice) cfg.voice_channels = scale_channels(kPaperVoiceChannels, cfg.width_multiplier);
  if (width_given && !explicit_image) cfg.image_widths = scale_channels(kPaperImageWidths, cfg.width_multiplier);
  return cfg;
}

template <typename T>
Tensor<T>& ModelParams<T>::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("model has no parameter '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("model has no parameter '" + name + "'");
  return it->second;
}

template <typename T>
bool ModelParams<T>::trainable(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return !ends_with(".running_mean") && !ends_with(".running_var");
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors)
    if (trainable(name)) n += t.size();
  return n;
}

namespace {

template <typename T>
void add_conv(ModelParams<T>& p, const std::string& prefix, const ConvSpec& spec, std::uint64_t seed) {
  Tensor<T> w(spec.weight_shape());
  const std::size_t fan_in = spec.in_channels * (spec.spatial_rank == 1 ? 3 : 9);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Rng rng(derive_seed(seed, prefix));
  for (auto& v : w.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  p.tensors[prefix + ".weight"] = std::move(w);
  p.tensors[prefix + ".bias"] = Tensor<T>(spec.bias_shape());
}

template <typename T>
void add_bn(ModelParams<T>& p, const std::string& prefix, std::size_t channels) {
  p.tensors[prefix + ".gamma"] = Tensor<T>::ones({channels});
  p.tensors[prefix + ".beta"] = Tensor<T>({channels});
  p.tensors[prefix + ".running_mean"] = Tensor<T>({channels});
  p.tensors[prefix + ".running_var"] = Tensor<T>::ones({channels});
}

std::vector<std::string> head_prefixes(ModelKind kind) {
  switch (kind) {
    case ModelKind::joint:
      return {"decoder.conv"};
    case ModelKind::voice_only:
      return {"voice_head.conv"};
    case ModelKind::image_only:
      return {"image_head.conv"};
  }
  return {};
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<T> p;
  const bool voice = cfg.kind != ModelKind::image_only;
  const bool image = cfg.kind != ModelKind::voice_only;
  if (voice) {
    std::size_t in = cfg.voice_bins();
    for (std::size_t i = 1; i <= ModelConfig::kVoiceConvs; ++i) {
      const std::size_t out = cfg.voice_channels[i - 1];
      add_conv(p, "voice.conv" + std::to_string(i), ConvSpec{in, out, 1}, seed);
      add_bn(p, "voice.bn" + std::to_string(i), out);
      in = out;
    }
  }
  if (image) {
    std::size_t in = cfg.image_frames;
    std::size_t conv = 1;
    for (std::size_t b = 0; b < ModelConfig::kImageBlocks; ++b) {
      for (std::size_t k = 0; k < ModelConfig::kImageBlockSizes[b]; ++k, ++conv) {
        const std::size_t out = cfg.image_widths[b];
        add_conv(p, "image.conv" + std::to_string(conv), ConvSpec{in, out, 2}, seed);
        add_bn(p, "image.bn" + std::to_string(conv), out);
        in = out;
      }
    }
  }
  const std::size_t r = cfg.joint_channels();
  switch (cfg.kind) {
    case ModelKind::joint:
      add_conv(p, "decoder.conv", ConvSpec{cfg.voice_time_out(), cfg.num_classes, 2}, seed);
      // Each joint entry sums r products, so the fan-in init alone starts with huge logits.
      for (auto& v : p.tensors["decoder.conv.weight"].storage()) v /= static_cast<T>(r);
      break;
    case ModelKind::voice_only:
      add_conv(p, "voice_head.conv", ConvSpec{r, cfg.num_classes, 1}, seed);
      break;
    case ModelKind::image_only:
      add_conv(p, "image_head.conv", ConvSpec{r, cfg.num_classes, 2}, seed);
      break;
  }
  return p;
}

template <typename T>
void zero_head(ModelParams<T>& params, const ModelConfig& cfg) {
  for (const auto& prefix : head_prefixes(cfg.kind)) {
    params.at(prefix + ".weight").fill(T(0));
    params.at(prefix + ".bias").fill(T(0));
  }
}

template <typename T>
Var<T> BoundParams<T>::operator[](const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw ConfigError("model has no parameter '" + name + "'");
  return it->second;
}

template <typename T>
BoundParams<T> bind(Tape<T>& tape, ModelParams<T>& params, bool requires_grad) {
  BoundParams<T> b;
  b.params = &params;
  for (auto& [name, t] : params.tensors) {
    if (!ModelParams<T>::trainable(name)) continue;
    b.vars.emplace(name, requires_grad ? tape.parameter(t) : tape.constant(t));
  }
  return b;
}

namespace {

template <typename T>
Var<T> conv_bn_relu(const BoundParams<T>& bound, Var<T> x, const std::string& conv, const std::string& bn,
                    Mode mode, const BatchNormConfig& bn_cfg, bool one_d) {
  Var<T> y = one_d ? conv1d(x, bound[conv + ".weight"], bound[conv + ".bias"])
                   : conv2d(x, bound[conv + ".weight"], bound[conv + ".bias"]);
  BatchNormStats<T> stats{&bound.params->at(bn + ".running_mean"), &bound.params->at(bn + ".running_var")};
  y = batch_norm(y, bound[bn + ".gamma"], bound[bn + ".beta"], stats, mode, bn_cfg);
  return relu(y);
}

}  // namespace

template <typename T>
Var<T> voice_branch(const BoundParams<T>& bound, const ModelConfig& cfg, Var<T> spectrogram, Mode mode,
                    ActivationTrace<T>* trace) {
  const auto& s = spectrogram.shape();
  if (s.size() != 3 || s[1] != cfg.voice_bins() || s[2] != cfg.voice_frames()) {
    throw ConfigError("voice branch expects [N, " + std::to_string(cfg.voice_bins()) + ", " +
                      std::to_string(cfg.voice_frames()) + "], got " + shape_str(s));
  }
  Var<T> x = spectrogram;
  for (std::size_t i = 1; i <= ModelConfig::kVoiceConvs; ++i) {
    x = conv_bn_relu(bound, x, "voice.conv" + std::to_string(i), "voice.bn" + std::to_string(i), mode,
                     cfg.batch_norm, true);
    if (trace) (*trace)["voice.conv" + std::to_string(i)] = x;
    if (contains(cfg.voice_pool_after, i)) x = max_pool(x);
  }
  return x;
}

template <typename T>
Var<T> image_branch(const BoundParams<T>& bound, const ModelConfig& cfg, Var<T> frames, Mode mode,
                    ActivationTrace<T>* trace) {
  const auto& s = frames.shape();
  if (s.size() != 4 || s[1] != cfg.image_frames || s[2] != cfg.image_height || s[3] != cfg.image_width) {
    throw ConfigError("image branch expects [N, " + std::to_string(cfg.image_frames) + ", " +
                      std::to_string(cfg.image_height) + ", " + std::to_string(cfg.image_width) + "], got " +
                      shape_str(s));
  }
  Var<T> x = frames;
  std::size_t conv = 1;
  for (std::size_t b = 0; b < ModelConfig::kImageBlocks; ++b) {
    for (std::size_t k = 0; k < ModelConfig::kImageBlockSizes[b]; ++k, ++conv) {
      x = conv_bn_relu(bound, x, "image.conv" + std::to_string(conv), "image.bn" + std::to_string(conv), mode,
                       cfg.batch_norm, false);
      if (trace) (*trace)["image.conv" + std::to_string(conv)] = x;
    }
    if (contains(cfg.image_pool_after, b + 1)) x = max_pool(x);
  }
  return x;
}

template <typename T>
Tensor<T> joint(const Tensor<T>& q, const Tensor<T>& p) {
  if (q.rank() != 3 || p.rank() != 2 || q.dim(2) != p.dim(1)) {
    throw DimensionError("joint: Q " + shape_str(q.shape()) + " and P " + shape_str(p.shape()) +
                         " must share the channel axis R");
  }
  return contract(q, p, {{2, 1}});
}

template <typename T>
Var<T> joint(Var<T> q, Var<T> p) {
  const auto& qs = q.shape();
  const auto& ps = p.shape();
  if (qs.size() != 3 || ps.size() != 2 || qs[2] != ps[1]) {
    throw DimensionError("joint: Q " + shape_str(qs) + " and P " + shape_str(ps) + " must share the channel axis R");
  }
  return contract(q, p, {{2, 1}});
}

template <typename T>
Var<T> joint_batched(Var<T> q, Var<T> p) {
  const auto& qs = q.shape();
  const auto& ps = p.shape();
  if (qs.size() != 4 || ps.size() != 3 || qs[0] != ps[0] || qs[1] != ps[1]) {
    throw DimensionError("joint: Q " + shape_str(qs) + " and P " + shape_str(ps) +
                         " must share batch and channel axes");
  }
  const std::size_t n = qs[0], r = qs[1], hw = qs[2] * qs[3], kt = ps[2];
  Tensor<T> out({n, kt, qs[2], qs[3]});
  const T* qv = q.value().data().data();
  const T* pv = p.value().data().data();
  for (std::size_t s = 0; s < n; ++s) {
    // C_s [kt, hw] = P_s^T [kt, R] * Q_s [R, hw]
    gemm<T>(true, false, kt, hw, r, T(1), pv + s * r * kt, kt, qv + s * r * hw, hw, T(0),
            out.data().data() + s * kt * hw, hw);
  }
  const auto iq = q.id, ip = p.id;
  return q.tape->record(std::move(out), {q, p},
                        [=](const Tape<T>& tape, const Tensor<T>& g, std::vector<Tensor<T>*>& grads) {
                          const T* qv = tape.value(iq).data().data();
                          const T* pv = tape.value(ip).data().data();
                          for (std::size_t s = 0; s < n; ++s) {
                            const T* gs = g.data().data() + s * kt * hw;
                            if (grads[0]) {
                              gemm<T>(false, false, r, hw, kt, T(1), pv + s * r * kt, kt, gs, hw, T(1),
                                      grads[0]->data().data() + s * r * hw, hw);
                            }
                            if (grads[1]) {
                              gemm<T>(false, true, r, kt, hw, T(1), qv + s * r * hw, hw, gs, hw, T(1),
                                      grads[1]->data().data() + s * r * kt, kt);
                            }
                          }
                        });
}

template <typename T>
Var<T> decode(const BoundParams<T>& bound, Var<T> c, ActivationTrace<T>* trace) {
  const auto& ws = bound["decoder.conv.weight"].shape();
  if (c.shape().size() != 4 || c.shape()[1] != ws[1]) {
    throw ConfigError("decoder expects " + std::to_string(ws[1]) + " voice-time channels, got " +
                      shape_str(c.shape()));
  }
  Var<T> y = conv2d(c, bound["decoder.conv.weight"], bound["decoder.conv.bias"]);
  if (trace) (*trace)["decoder.conv"] = y;
  return global_avg_pool(y);
}

template <typename T>
Var<T> branch_only_forward(const BoundParams<T>& bound, const ModelConfig& cfg, Var<T> input, ModelKind which,
                           Mode mode, ActivationTrace<T>* trace) {
  if (which == ModelKind::voice_only) {
    Var<T> p = voice_branch(bound, cfg, input, mode, trace);
    Var<T> y = conv1d(p, bound["voice_head.conv.weight"], bound["voice_head.conv.bias"]);
    if (trace) (*trace)["voice_head.conv"] = y;
    return global_avg_pool(y);
  }
  if (which == ModelKind::image_only) {
    Var<T> q = image_branch(bound, cfg, input, mode, trace);
    Var<T> y = conv2d(q, bound["image_head.conv.weight"], bound["image_head.conv.bias"]);
    if (trace) (*trace)["image_head.conv"] = y;
    return global_avg_pool(y);
  }
  throw ConfigError("branch_only_forward needs voice_only or image_only");
}

template <typename T>
Var<T> forward(const BoundParams<T>& bound, const ModelConfig& cfg, Var<T> spectrogram, Var<T> frames, Mode mode,
               ActivationTrace<T>* trace) {
  switch (cfg.kind) {
    case ModelKind::voice_only:
      return branch_only_forward(bound, cfg, spectrogram, ModelKind::voice_only, mode, trace);
    case ModelKind::image_only:
      return branch_only_forward(bound, cfg, frames, ModelKind::image_only, mode, trace);
    case ModelKind::joint:
      break;
  }
  Var<T> p = voice_branch(bound, cfg, spectrogram, mode, trace);
  Var<T> q = image_branch(bound, cfg, frames, mode, trace);
  Var<T> c = joint_batched(q, p);
  if (trace) (*trace)["joint"] = c;
  return decode(bound, c, trace);
}

template <typename T>
Var<T> loss(Var<T> logits, const Tensor<T>& targets, const Tensor<T>& weights) {
  return weighted_cross_entropy(logits, targets, weights);
}

std::size_t argmax(std::span<const float> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<std::size_t> inference_frame_indices(std::size_t available, std::size_t wanted) {
  if (wanted == 0 || wanted > available) {
    throw ConfigError("cannot pick " + std::to_string(wanted) + " frames from " + std::to_string(available));
  }
  std::vector<std::size_t> idx(wanted);
  if (wanted == 1) return {available / 2};
  for (std::size_t i = 0; i < wanted; ++i) {
    idx[i] = static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(available - 1) / static_cast<double>(wanted - 1)));
  }
  return idx;
}

Tensor<float> select_frames(const Tensor<float>& stack, const std::vector<std::size_t>& indices) {
  if (stack.rank() != 3) throw DimensionError("frame stack must be [F, H, W], got " + shape_str(stack.shape()));
  const std::size_t plane = stack.dim(1) * stack.dim(2);
  Tensor<float> out({indices.size(), stack.dim(1), stack.dim(2)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= stack.dim(0)) throw DimensionError("frame index out of range");
    std::copy_n(stack.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * plane), plane,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return out;
}

PredictionResult predict(const Model& model, const Tensor<float>& spectrogram, const Tensor<float>& frames) {
  const auto& cfg = model.config;
  Tape<float> tape;
  // Infer mode reads the running statistics without writing them.
  auto& params = const_cast<ModelParams<float>&>(model.params);
  BoundParams<float> bound = bind(tape, params, false);
  Var<float> spec_var, frame_var;
  if (cfg.kind != ModelKind::image_only) {
    spec_var = tape.constant(spectrogram.reshaped({1, spectrogram.dim(0), spectrogram.dim(1)}));
  }
  if (cfg.kind != ModelKind::voice_only) {
    Tensor<float> stack = frames.dim(0) == cfg.image_frames
                              ? frames
                              : select_frames(frames, inference_frame_indices(frames.dim(0), cfg.image_frames));
    frame_var = tape.constant(stack.reshaped({1, stack.dim(0), stack.dim(1), stack.dim(2)}));
  }
  Var<float> logits = forward(bound, cfg, spec_var, frame_var, Mode::infer);
  const Tensor<float> probs = softmax(logits.value());
  PredictionResult result;
  result.probabilities.assign(probs.data().begin(), probs.data().end());
  result.label = argmax(result.probabilities);
  return result;
}

namespace {

constexpr char kCheckpointMagic[4] = {'V', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t n) {
    need(n * 4);
    std::memcpy(dst, bytes_.data() + pos_, n * 4);
    pos_ += n * 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string config = to_json(model.config).dump();
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out += config;
  put_u32(out, static_cast<std::uint32_t>(model.params.tensors.size()));
  for (const auto& [name, t] : model.params.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(float));
  }
  return out;
}

Model deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(4) != std::string(kCheckpointMagic, 4)) throw std::runtime_error("not a checkpoint (bad magic)");
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Model model;
  const auto config_len = in.u32();
  model.config = model_config_from_json(nlohmann::json::parse(in.str(config_len)));
  model.config.validate();
  const auto count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.str(in.u32());
    const auto rank = in.u32();
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    Tensor<float> t(shape);
    in.floats(t.data().data(), t.size());
    model.params.tensors.emplace(name, std::move(t));
  }
  if (!in.done()) throw std::runtime_error("trailing bytes after checkpoint payload");
  const ModelParams<float> expected = init_params<float>(model.config, 0);
  for (const auto& [name, t] : expected.tensors) {
    if (!model.params.contains(name) || model.params.at(name).shape() != t.shape()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' is missing or has the wrong shape");
    }
  }
  if (expected.tensors.size() != model.params.tensors.size()) {
    throw std::runtime_error("checkpoint has tensors the config does not describe");
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  write_file_atomic(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

#define VLABEL_INSTANTIATE(T)                                                                                 \
  template struct ModelParams<T>;                                                                             \
  template struct BoundParams<T>;                                                                             \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                   \
  template void zero_head(ModelParams<T>&, const ModelConfig&);                                                \
  template BoundParams<T> bind(Tape<T>&, ModelParams<T>&, bool);                                               \
  template Var<T> voice_branch(const BoundParams<T>&, const ModelConfig&, Var<T>, Mode, ActivationTrace<T>*);  \
  template Var<T> image_branch(const BoundParams<T>&, const ModelConfig&, Var<T>, Mode, ActivationTrace<T>*);  \
  template Tensor<T> joint(const Tensor<T>&, const Tensor<T>&);                                                \
  template Var<T> joint(Var<T>, Var<T>);                                                                       \
  template Var<T> joint_batched(Var<T>, Var<T>);                                                               \
  template Var<T> decode(const BoundParams<T>&, Var<T>, ActivationTrace<T>*);                                  \
  template Var<T> branch_only_forward(const BoundParams<T>&, const ModelConfig&, Var<T>, ModelKind, Mode,      \
                                      ActivationTrace<T>*);                                                    \
  template Var<T> forward(const BoundParams<T>&, const ModelConfig&, Var<T>, Var<T>, Mode, ActivationTrace<T>*); \
  template Var<T> loss(Var<T>, const Tensor<T>&, const Tensor<T>&);

VLABEL_INSTANTIATE(float)
VLABEL_INSTANTIATE(double)

}  // namespace vlabel
