#include "vlabel/signal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <string>

#include <fftw3.h>

#include "vlabel/io.hpp"

namespace vlabel {

std::size_t SpectrogramConfig::frames(std::size_t signal_length) const {
  if (signal_length < window_length) return 0;
  return (signal_length - window_length) / hop + 1;
}

void SpectrogramConfig::validate() const {
  if (fft_points < 2) throw SignalError("fft_points must be at least 2");
  if (window_length == 0 || window_length > fft_points) {
    throw SignalError("window_length must be in [1, fft_points], got " + std::to_string(window_length));
  }
  if (hop == 0 || hop > window_length) throw SignalError("hop must be in [1, window_length], got " + std::to_string(hop));
}

AudioClip normalize_duration(const AudioClip& clip, double target_seconds) {
  if (!(target_seconds > 0)) throw SignalError("target duration must be positive");
  if (!(clip.sample_rate > 0)) throw SignalError("sample rate must be positive");
  if (clip.samples.empty()) throw SignalError("cannot normalize an empty clip");
  const auto target = static_cast<std::size_t>(std::llround(target_seconds * clip.sample_rate));
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(target, 0.0);
  const std::size_t keep = std::min(target, clip.samples.size());
  std::copy_n(clip.samples.begin(), keep, out.samples.begin());
  return out;
}

std::vector<double> make_window(WindowShape shape, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (shape == WindowShape::hann) {
    for (std::size_t n = 0; n < length; ++n) {
      w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(length));
    }
  }
  return w;
}

namespace {

// Only plan execution is thread-safe in FFTW; creating and destroying plans is serialized.
std::mutex& fftw_planner() {
  static std::mutex m;
  return m;
}

}  // namespace

Tensor<double> stft_magnitude(const std::vector<double>& samples, const SpectrogramConfig& cfg) {
  cfg.validate();
  if (samples.size() < cfg.window_length) {
    throw SignalError("clip of " + std::to_string(samples.size()) + " samples is shorter than one window of " +
                      std::to_string(cfg.window_length));
  }
  const std::size_t n_fft = cfg.fft_points;
  const std::size_t bins = cfg.bins();
  const std::size_t frames = cfg.frames(samples.size());
  const std::vector<double> window = make_window(cfg.window, cfg.window_length);

  // The frame buffer is zero-padded past window_length.
  double* in = fftw_alloc_real(n_fft);
  fftw_complex* spectrum = fftw_alloc_complex(n_fft / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in, spectrum, FFTW_ESTIMATE);
  }
  std::fill(in, in + n_fft, 0.0);

  Tensor<double> out({bins, frames});
  for (std::size_t f = 0; f < frames; ++f) {
    const double* src = samples.data() + f * cfg.hop;
    for (std::size_t n = 0; n < cfg.window_length; ++n) in[n] = src[n] * window[n];
    fftw_execute(plan);
    for (std::size_t k = 0; k < bins; ++k) out[k * frames + f] = std::hypot(spectrum[k][0], spectrum[k][1]);
  }
  {
    std::lock_guard lock(fftw_planner());
    fftw_destroy_plan(plan);
  }
  fftw_free(spectrum);
  fftw_free(in);
  return out;
}

void standardize(std::vector<double>& values) {
  if (values.empty()) return;
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  const double sd = std::sqrt(var);
  // Relative guard: constant inputs still carry rounding noise of order |mean| * 1e-16.
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  for (double& v : values) v = (v - mean) / sd;
}

Spectrogram compute_spectrogram(const AudioClip& clip, const SpectrogramConfig& cfg) {
  Tensor<double> mag = stft_magnitude(clip.samples, cfg);
  standardize(mag.storage());
  Spectrogram out;
  out.bins = mag.dim(0);
  out.frames = mag.dim(1);
  out.values = mag.cast<float>();
  return out;
}

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SignalError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw SignalError(path.string() + ": not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t len = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw SignalError(path.string() + ": truncated chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16) throw SignalError(path.string() + ": short fmt chunk");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw SignalError(path.string() + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw SignalError(path.string() + ": only 16-bit PCM is supported");
      if (channels != 1) {
        throw SignalError(path.string() + ": expected mono audio, found " + std::to_string(channels) + " channels");
      }
      if (rate == 0) throw SignalError(path.string() + ": zero sample rate");
      AudioClip clip;
      clip.sample_rate = rate;
      clip.samples.resize(len / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i));
        clip.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      return clip;
    }
    pos = body + len + (len & 1);
  }
  throw SignalError(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto rate = static_cast<std::uint32_t>(std::llround(clip.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double v : clip.samples) {
    const double scaled = std::clamp(std::nearbyint(v * 32768.0), -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  try {
    write_file_atomic(path, out);
  } catch (const std::runtime_error& e) {
    throw SignalError(e.what());
  }
}

}  // namespace vlabel
