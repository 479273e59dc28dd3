#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlabel/data.hpp"
#include "vlabel/model.hpp"

namespace vlabel {

class ExplainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-negative map in [0, 1] at frame resolution.
struct Heatmap {
  Tensor<float> values;  // [H, W]
  std::size_t target_class = 0;
  std::string layer;
};

/// Last conv of the image branch, before its pool.
inline constexpr const char* kDefaultCamLayer = "image.conv13";

/// Layers of `cfg` that Grad-CAM can use.
std::vector<std::string> cam_layers(const ModelConfig& cfg);

/// ReLU(sum_c alpha_c A_c) with alpha_c the spatial mean of grad_c. Both inputs are [C, h, w].
Tensor<double> cam_from_activation(const Tensor<double>& activation, const Tensor<double>& gradient);

/// Bilinear resize of [h, w] to [height, width] with pixel-centre alignment.
Tensor<double> upsample_bilinear(const Tensor<double>& map, std::size_t height, std::size_t width);

/// Grad-CAM of target_class in infer mode. spectrogram is [bins, frames], frames is [F, H, W].
Heatmap grad_cam(const Model& model, const Tensor<float>& spectrogram, const Tensor<float>& frames,
                 std::size_t target_class, const std::string& layer = kDefaultCamLayer);

/// Grad-CAM of the image of one sample paired with the voice of another.
Heatmap probe_wrong_pair(const Model& model, const PairedSample& image_sample, const PairedSample& voice_sample,
                         std::size_t target_class, const std::string& layer = kDefaultCamLayer);

/// Share of the map's total mass inside rect (0 for an all-zero map).
double mass_fraction(const Heatmap& map, const Rect& rect);

enum class Colormap { jet, hot };

Colormap colormap_from_string(const std::string& name);

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

/// Ramp colour for h in [0, 1] as RGB components in [0, 1].
std::array<double, 3> colormap_rgb(Colormap map, double h);

/// (1 - h) * gray + h * colormap(h) per pixel; frame is [H, W] in [0, 1].
RgbImage render_overlay(const Heatmap& map, const Tensor<float>& frame, Colormap colormap = Colormap::jet);

void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);

/// `<sample>_<class>_<layer>.ppm`
std::string heatmap_filename(const std::string& sample, std::size_t target_class, const std::string& layer);

/// Writes the overlay of map on frame ([H, W]) to path and returns it.
std::filesystem::path export_heatmap(const Heatmap& map, const Tensor<float>& frame, const std::filesystem::path& path,
                                     Colormap colormap = Colormap::jet);

}  // namespace vlabel
