#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "vlabel/tensor.hpp"

namespace vlabel {

class SignalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AudioClip {
  std::vector<double> samples;
  double sample_rate = 48000.0;

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class WindowShape { hann, rectangular };

struct SpectrogramConfig {
  std::size_t fft_points = 2046;
  std::size_t window_length = 1200;
  std::size_t hop = 720;
  WindowShape window = WindowShape::hann;

  std::size_t bins() const { return fft_points / 2 + 1; }
  std::size_t frames(std::size_t signal_length) const;
  void validate() const;
};

/// Magnitude spectrogram after per-clip standardization. `values` is bins x frames.
struct Spectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  Tensor<float> values;
};

/// Crops from the start or zero-pads at the end to round(target_seconds * rate) samples.
AudioClip normalize_duration(const AudioClip& clip, double target_seconds);

/// Periodic window (Hann: 0.5 - 0.5 cos(2 pi n / length)).
std::vector<double> make_window(WindowShape shape, std::size_t length);

/// Raw STFT magnitudes (bins x frames) before standardization.
Tensor<double> stft_magnitude(const std::vector<double>& samples, const SpectrogramConfig& cfg);

/// Subtract the mean and divide by the standard deviation; constant input maps to zeros.
void standardize(std::vector<double>& values);

Spectrogram compute_spectrogram(const AudioClip& clip, const SpectrogramConfig& cfg);

/// Mono 16-bit PCM WAV. Samples are scaled to [-1, 1).
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace vlabel
