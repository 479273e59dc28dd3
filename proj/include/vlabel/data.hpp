#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlabel/model.hpp"
#include "vlabel/signal.hpp"
#include "vlabel/tensor.hpp"

namespace vlabel {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a synchronized window does not fit inside a recording.
class RangeError : public DataError {
 public:
  RangeError(const std::string& what, double shortfall_seconds)
      : DataError(what), shortfall_seconds(shortfall_seconds) {}
  double shortfall_seconds;
};

/// Collects every problem found while loading a dataset.
class LoadError : public DataError {
 public:
  explicit LoadError(std::vector<std::string> items);
  std::vector<std::string> items;
};

struct SampleRecord {
  std::string id;
  std::string patient_id;
  std::size_t label = 0;
  std::string audio_path;   // relative to the manifest directory unless absolute
  std::string frames_path;  // same
  double mention_time = 0.0;
};

struct Manifest {
  std::string dataset_id;
  std::vector<std::string> class_names;
  std::vector<SampleRecord> samples;
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// Frame stacks on disk: "USTK", u32 version, u32 frames, u32 height, u32 width, float32 payload.
void write_frame_stack(const std::filesystem::path& path, const Tensor<float>& frames);
Tensor<float> read_frame_stack(const std::filesystem::path& path);
std::string encode_frame_stack(const Tensor<float>& frames);
Tensor<float> decode_frame_stack(const std::string& bytes, const std::string& source = "<memory>");

struct Recording {
  double audio_start = 0.0;
  double audio_seconds = 0.0;
  double video_start = 0.0;
  std::size_t video_frames = 0;
  double fps = 25.0;
};

struct SyncWindow {
  double audio_offset = 0.0;  // seconds after audio_start
  std::size_t first_frame = 0;
  std::size_t last_frame = 0;  // inclusive
};

/// One second of audio from the mention onwards and the 25 frames starting at
/// floor((mention - video_start) * fps).
SyncWindow synchronize(const Recording& rec, double mention_time, std::size_t frames = 25, double audio_seconds = 1.0);

struct Rect {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Crops every frame of a [F, H, W] stack to rect.
Tensor<float> crop_frames(const Tensor<float>& frames, const Rect& rect);

/// A fully materialized training example.
struct PairedSample {
  std::string id;
  std::string patient_id;
  std::size_t label = 0;
  Tensor<float> spectrogram;  // [bins, frames]
  Tensor<float> frames;       // [F, H, W]
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<PairedSample> samples;

  std::size_t num_classes() const { return class_names.size(); }
  /// Patient ids in order of first appearance.
  std::vector<std::string> patients() const;
  std::vector<std::size_t> indices_of(const std::string& patient) const;
  std::vector<std::size_t> indices_except(const std::string& patient) const;
  std::vector<std::size_t> class_counts(const std::vector<std::size_t>& indices) const;
};

/// Per-patient and per-class sample counts, laid out like a patient x class table.
struct CountTable {
  std::vector<std::string> class_names;
  std::vector<std::string> patients;
  std::vector<std::vector<std::size_t>> counts;  // [patient][class]
  std::vector<std::size_t> class_totals;
  std::size_t total = 0;

  std::string format() const;
};

CountTable count_table(const Manifest& m);
CountTable count_table(const Dataset& d);

/// Loads audio and frames, normalizes clip duration and computes spectrograms for cfg.
Dataset load_dataset(const std::filesystem::path& manifest_path, const ModelConfig& cfg);

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t patients = 12;
  std::size_t min_per_patient = 3;
  std::size_t max_per_patient = 10;
  std::size_t num_classes = 5;
  double sample_rate = 8000.0;
  std::size_t frames = 25;
  std::size_t height = 64;
  std::size_t width = 96;
  /// Use the clinical patient x class counts (12 patients, 5 classes, 143 samples).
  bool clinical_counts = false;
};

/// Blob centre of a class as fractions of (height, width).
std::pair<double, double> class_blob_centre(std::size_t label, std::size_t num_classes);
/// Tone frequency of a class in Hz.
double class_frequency(std::size_t label, std::size_t num_classes, double sample_rate);

struct SynthReport {
  Manifest manifest;
  /// Nearest-centroid accuracy on mean spectrograms of the generated audio.
  double centroid_accuracy = 0.0;
};

/// Writes a deterministic synthetic dataset (manifest.json, audio/*.wav, frames/*.ustk) into dir.
SynthReport synth_generate(const SynthConfig& cfg, const std::filesystem::path& dir);

/// The patient x class counts of the clinical dataset summary (143 samples).
const std::vector<std::vector<std::size_t>>& clinical_count_matrix();
const std::vector<std::string>& clinical_class_names();

}  // namespace vlabel
