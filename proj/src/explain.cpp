#include "vlabel/explain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vlabel/io.hpp"

namespace vlabel {

std::vector<std::string> cam_layers(const ModelConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.kind == ModelKind::voice_only) return out;
  std::size_t convs = 0;
  for (auto n : ModelConfig::kImageBlockSizes) convs += n;
  for (std::size_t i = 1; i <= convs; ++i) out.push_back("image.conv" + std::to_string(i));
  out.push_back(cfg.kind == ModelKind::joint ? "decoder.conv" : "image_head.conv");
  return out;
}

Tensor<double> cam_from_activation(const Tensor<double>& activation, const Tensor<double>& gradient) {
  if (activation.rank() != 3 || activation.shape() != gradient.shape()) {
    throw ExplainError("Grad-CAM expects matching [C, h, w] activation and gradient, got " +
                       shape_str(activation.shape()) + " and " + shape_str(gradient.shape()));
  }
  const std::size_t c = activation.dim(0), hw = activation.dim(1) * activation.dim(2);
  Tensor<double> map({activation.dim(1), activation.dim(2)});
  for (std::size_t k = 0; k < c; ++k) {
    double alpha = 0;
    for (std::size_t i = 0; i < hw; ++i) alpha += gradient[k * hw + i];
    alpha /= static_cast<double>(hw);
    for (std::size_t i = 0; i < hw; ++i) map[i] += alpha * activation[k * hw + i];
  }
  for (auto& v : map.storage()) v = std::max(v, 0.0);
  return map;
}

Tensor<double> upsample_bilinear(const Tensor<double>& map, std::size_t height, std::size_t width) {
  if (map.rank() != 2 || height == 0 || width == 0) throw ExplainError("bilinear resize expects a 2D map");
  const std::size_t h = map.dim(0), w = map.dim(1);
  auto coord = [](std::size_t dst, std::size_t out, std::size_t in, std::size_t& lo, std::size_t& hi, double& frac) {
    double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(src));
    hi = std::min(lo + 1, in - 1);
    frac = src - static_cast<double>(lo);
  };
  Tensor<double> out({height, width});
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, height, h, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, width, w, x0, x1, fx);
      const double top = map.at({y0, x0}) * (1 - fx) + map.at({y0, x1}) * fx;
      const double bottom = map.at({y1, x0}) * (1 - fx) + map.at({y1, x1}) * fx;
      out.at({y, x}) = top * (1 - fy) + bottom * fy;
    }
  }
  return out;
}

Heatmap grad_cam(const Model& model, const Tensor<float>& spectrogram, const Tensor<float>& frames,
                 std::size_t target_class, const std::string& layer) {
  const auto& cfg = model.config;
  const auto layers = cam_layers(cfg);
  if (std::find(layers.begin(), layers.end(), layer) == layers.end()) {
    std::string valid;
    for (const auto& l : layers) valid += (valid.empty() ? "" : ", ") + l;
    throw ExplainError("unknown Grad-CAM layer '" + layer + "'; valid layers: " + (valid.empty() ? "none" : valid));
  }
  if (target_class >= cfg.num_classes) {
    throw ExplainError("target class " + std::to_string(target_class) + " is outside [0, " +
                       std::to_string(cfg.num_classes) + ")");
  }
  if (frames.rank() != 3 || frames.dim(1) != cfg.image_height || frames.dim(2) != cfg.image_width) {
    throw ExplainError("frame stack " + shape_str(frames.shape()) + " does not match the model input");
  }
  const Tensor<float> stack = frames.dim(0) == cfg.image_frames
                                  ? frames
                                  : select_frames(frames, inference_frame_indices(frames.dim(0), cfg.image_frames));

  Tape<float> tape;
  // Infer mode only reads the running statistics.
  auto& params = const_cast<ModelParams<float>&>(model.params);
  auto bound = bind(tape, params, false);
  // A differentiable input makes every downstream activation carry a gradient.
  Var<float> fv = tape.parameter(stack.reshaped({1, stack.dim(0), stack.dim(1), stack.dim(2)}));
  Var<float> sv;
  if (cfg.kind != ModelKind::image_only) {
    if (spectrogram.rank() != 2) throw ExplainError("spectrogram must be [bins, frames]");
    sv = tape.constant(spectrogram.reshaped({1, spectrogram.dim(0), spectrogram.dim(1)}));
  }
  ActivationTrace<float> trace;
  Var<float> logits = forward(bound, cfg, sv, fv, Mode::infer, &trace);
  Tensor<float> pick({1, cfg.num_classes});
  pick[target_class] = 1.0f;
  tape.backward(sum(mul(logits, tape.constant(pick))));

  const Var<float> act = trace.at(layer);
  const auto& a = act.value();
  const Shape s{a.dim(1), a.dim(2), a.dim(3)};
  Tensor<double> ad(s), gd(s);
  for (std::size_t i = 0; i < a.size(); ++i) ad[i] = a[i];
  if (const auto* g = act.grad())
    for (std::size_t i = 0; i < g->size(); ++i) gd[i] = (*g)[i];

  const Tensor<double> up = upsample_bilinear(cam_from_activation(ad, gd), cfg.image_height, cfg.image_width);
  double peak = 0;
  for (double v : up.data()) peak = std::max(peak, v);
  Heatmap out{Tensor<float>({cfg.image_height, cfg.image_width}), target_class, layer};
  if (peak > 0)
    for (std::size_t i = 0; i < up.size(); ++i) out.values[i] = static_cast<float>(up[i] / peak);
  return out;
}

Heatmap probe_wrong_pair(const Model& model, const PairedSample& image_sample, const PairedSample& voice_sample,
                         std::size_t target_class, const std::string& layer) {
  return grad_cam(model, voice_sample.spectrogram, image_sample.frames, target_class, layer);
}

double mass_fraction(const Heatmap& map, const Rect& rect) {
  const std::size_t h = map.values.dim(0), w = map.values.dim(1);
  if (rect.x + rect.width > w || rect.y + rect.height > h) throw ExplainError("region outside the heatmap");
  double inside = 0, total = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = map.values.at({y, x});
      total += v;
      if (y >= rect.y && y < rect.y + rect.height && x >= rect.x && x < rect.x + rect.width) inside += v;
    }
  return total > 0 ? inside / total : 0.0;
}

Colormap colormap_from_string(const std::string& name) {
  if (name == "jet") return Colormap::jet;
  if (name == "hot") return Colormap::hot;
  throw ExplainError("unknown colormap '" + name + "' (expected jet or hot)");
}

std::array<double, 3> colormap_rgb(Colormap map, double h) {
  h = std::clamp(h, 0.0, 1.0);
  auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  if (map == Colormap::hot) return {c(3 * h), c(3 * h - 1), c(3 * h - 2)};
  return {c(1.5 - std::abs(4 * h - 3)), c(1.5 - std::abs(4 * h - 2)), c(1.5 - std::abs(4 * h - 1))};
}

RgbImage render_overlay(const Heatmap& map, const Tensor<float>& frame, Colormap colormap) {
  if (frame.shape() != map.values.shape()) {
    throw ExplainError("frame " + shape_str(frame.shape()) + " does not match heatmap " +
                       shape_str(map.values.shape()));
  }
  RgbImage img{frame.dim(1), frame.dim(0), {}};
  img.pixels.reserve(frame.size() * 3);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double h = std::clamp(static_cast<double>(map.values[i]), 0.0, 1.0);
    const double g = std::clamp(static_cast<double>(frame[i]), 0.0, 1.0);
    const auto rgb = colormap_rgb(colormap, h);
    for (double c : rgb) {
      const double v = (1 - h) * g + h * c;
      img.pixels.push_back(static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))));
    }
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  if (image.pixels.size() != image.width * image.height * 3) throw ExplainError("pixel buffer does not match dims");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  write_file_atomic(path, out);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw ExplainError(path.string() + ": not a binary PPM");
  RgbImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw ExplainError(path.string() + ": only 8-bit PPM is supported");
  } catch (const std::logic_error&) {
    throw ExplainError(path.string() + ": malformed PPM header");
  }
  ++pos;  // single whitespace after maxval
  const std::size_t n = img.width * img.height * 3;
  if (bytes.size() < pos + n) throw ExplainError(path.string() + ": truncated PPM payload");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

std::string heatmap_filename(const std::string& sample, std::size_t target_class, const std::string& layer) {
  return sample + "_" + std::to_string(target_class) + "_" + layer + ".ppm";
}

std::filesystem::path export_heatmap(const Heatmap& map, const Tensor<float>& frame, const std::filesystem::path& path,
                                     Colormap colormap) {
  write_ppm(path, render_overlay(map, frame, colormap));
  return path;
}

}  // namespace vlabel
