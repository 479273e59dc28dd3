#include "vlabel/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "vlabel/io.hpp"
#include "vlabel/random.hpp"

namespace vlabel {

static_assert(std::endian::native == std::endian::little, "frame stack I/O assumes a little-endian host");

namespace {

std::string join_items(const std::vector<std::string>& items) {
  std::string out = "dataset failed to load (" + std::to_string(items.size()) + " problem" +
                    (items.size() == 1 ? "" : "s") + ")";
  for (const auto& item : items) out += "\n  - " + item;
  return out;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}

constexpr char kStackMagic[4] = {'U', 'S', 'T', 'K'};
constexpr std::uint32_t kStackVersion = 1;

template <typename V>
V required(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw DataError(where + ": unknown field '" + it.key() + "'");
    }
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

LoadError::LoadError(std::vector<std::string> items_in) : DataError(join_items(items_in)), items(std::move(items_in)) {}

nlohmann::json to_json(const Manifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"id", s.id},
                       {"patient_id", s.patient_id},
                       {"label", s.label},
                       {"audio", s.audio_path},
                       {"frames", s.frames_path},
                       {"mention_time", s.mention_time}});
  }
  return {{"dataset_id", m.dataset_id}, {"class_names", m.class_names}, {"samples", samples}};
}

Manifest manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("manifest: expected a JSON object");
  reject_unknown(j, {"dataset_id", "class_names", "samples"}, "manifest");
  Manifest m;
  m.dataset_id = required<std::string>(j, "dataset_id", "manifest");
  m.class_names = required<std::vector<std::string>>(j, "class_names", "manifest");
  if (!j.contains("samples") || !j.at("samples").is_array()) throw DataError("manifest: 'samples' must be an array");
  std::size_t n = 0;
  for (const auto& s : j.at("samples")) {
    const std::string where = "manifest sample #" + std::to_string(n++);
    if (!s.is_object()) throw DataError(where + ": expected an object");
    reject_unknown(s, {"id", "patient_id", "label", "audio", "frames", "mention_time"}, where);
    SampleRecord r;
    r.id = required<std::string>(s, "id", where);
    r.patient_id = required<std::string>(s, "patient_id", where);
    r.label = required<std::size_t>(s, "label", where);
    r.audio_path = required<std::string>(s, "audio", where);
    r.frames_path = required<std::string>(s, "frames", where);
    r.mention_time = s.contains("mention_time") ? required<double>(s, "mention_time", where) : 0.0;
    m.samples.push_back(std::move(r));
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  write_file_atomic(path, to_json(m).dump(2) + "\n");
}

std::string encode_frame_stack(const Tensor<float>& frames) {
  if (frames.rank() != 3) throw DataError("frame stack must be [frames, height, width], got " + shape_str(frames.shape()));
  for (float v : frames.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("frame stack values must lie in [0, 1]");
  }
  std::string out(kStackMagic, 4);
  put_u32(out, kStackVersion);
  for (std::size_t d = 0; d < 3; ++d) put_u32(out, static_cast<std::uint32_t>(frames.dim(d)));
  const auto* bytes = reinterpret_cast<const char*>(frames.data().data());
  out.append(bytes, frames.size() * sizeof(float));
  return out;
}

Tensor<float> decode_frame_stack(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kStackMagic, 4) != 0) {
    throw DataError(source + ": bad magic, not a frame stack");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kStackVersion) throw DataError(source + ": unsupported frame stack version " + std::to_string(version));
  const Shape shape{get_u32(bytes, 8), get_u32(bytes, 12), get_u32(bytes, 16)};
  if (shape[0] == 0 || shape[1] == 0 || shape[2] == 0) throw DataError(source + ": empty frame stack");
  const std::size_t payload = shape_numel(shape) * sizeof(float);
  if (bytes.size() - 20 != payload) {
    throw DataError(source + ": payload is " + std::to_string(bytes.size() - 20) + " bytes, expected " +
                    std::to_string(payload));
  }
  Tensor<float> t(shape);
  std::memcpy(t.data().data(), bytes.data() + 20, payload);
  for (float v : t.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError(source + ": pixel value outside [0, 1]");
  }
  return t;
}

void write_frame_stack(const std::filesystem::path& path, const Tensor<float>& frames) {
  write_file_atomic(path, encode_frame_stack(frames));
}

Tensor<float> read_frame_stack(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  return decode_frame_stack(bytes, path.string());
}

SyncWindow synchronize(const Recording& rec, double mention_time, std::size_t frames, double audio_seconds) {
  if (!(rec.fps > 0)) throw DataError("fps must be positive");
  SyncWindow w;
  w.audio_offset = mention_time - rec.audio_start;
  if (w.audio_offset < 0) throw RangeError("mention precedes the audio recording", -w.audio_offset);
  const double audio_over = w.audio_offset + audio_seconds - rec.audio_seconds;
  if (audio_over > 1e-9) {
    throw RangeError("audio window overruns the recording by " + std::to_string(audio_over) + " s", audio_over);
  }
  const double rel = mention_time - rec.video_start;
  if (rel < 0) throw RangeError("mention precedes the video recording", -rel);
  // Small guard so exact products such as 12.0 * 25 are not floored below 300.
  w.first_frame = static_cast<std::size_t>(std::floor(rel * rec.fps + 1e-9));
  w.last_frame = w.first_frame + frames - 1;
  if (w.last_frame >= rec.video_frames) {
    const double missing = static_cast<double>(w.last_frame + 1 - rec.video_frames) / rec.fps;
    throw RangeError("frame window overruns the video by " + std::to_string(w.last_frame + 1 - rec.video_frames) +
                         " frames (" + std::to_string(missing) + " s)",
                     missing);
  }
  return w;
}

Tensor<float> crop_frames(const Tensor<float>& frames, const Rect& rect) {
  if (frames.rank() != 3) throw DataError("crop expects [frames, height, width], got " + shape_str(frames.shape()));
  const std::size_t f = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
  if (rect.width == 0 || rect.height == 0 || rect.x + rect.width > w || rect.y + rect.height > h) {
    throw DataError("crop rect (" + std::to_string(rect.x) + ", " + std::to_string(rect.y) + ", " +
                    std::to_string(rect.width) + ", " + std::to_string(rect.height) + ") is outside " +
                    std::to_string(w) + "x" + std::to_string(h) + " frames");
  }
  Tensor<float> out({f, rect.height, rect.width});
  for (std::size_t k = 0; k < f; ++k)
    for (std::size_t y = 0; y < rect.height; ++y) {
      const float* src = frames.data().data() + (k * h + rect.y + y) * w + rect.x;
      std::copy(src, src + rect.width, out.data().data() + (k * rect.height + y) * rect.width);
    }
  return out;
}

std::vector<std::string> Dataset::patients() const {
  std::vector<std::string> out;
  for (const auto& s : samples)
    if (std::find(out.begin(), out.end(), s.patient_id) == out.end()) out.push_back(s.patient_id);
  return out;
}

std::vector<std::size_t> Dataset::indices_of(const std::string& patient) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].patient_id == patient) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::indices_except(const std::string& patient) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].patient_id != patient) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::class_counts(const std::vector<std::size_t>& indices) const {
  std::vector<std::size_t> counts(num_classes(), 0);
  for (auto i : indices) ++counts.at(samples.at(i).label);
  return counts;
}

namespace {

template <typename Rows>
CountTable make_table(const std::vector<std::string>& class_names, const Rows& rows) {
  CountTable t;
  t.class_names = class_names;
  t.class_totals.assign(class_names.size(), 0);
  for (const auto& [patient, label] : rows) {
    auto it = std::find(t.patients.begin(), t.patients.end(), patient);
    std::size_t p = static_cast<std::size_t>(it - t.patients.begin());
    if (it == t.patients.end()) {
      t.patients.push_back(patient);
      t.counts.emplace_back(class_names.size(), 0);
    }
    if (label >= class_names.size()) throw DataError("label " + std::to_string(label) + " is outside the class list");
    ++t.counts[p][label];
    ++t.class_totals[label];
    ++t.total;
  }
  return t;
}

}  // namespace

CountTable count_table(const Manifest& m) {
  std::vector<std::pair<std::string, std::size_t>> rows;
  for (const auto& s : m.samples) rows.emplace_back(s.patient_id, s.label);
  return make_table(m.class_names, rows);
}

CountTable count_table(const Dataset& d) {
  std::vector<std::pair<std::string, std::size_t>> rows;
  for (const auto& s : d.samples) rows.emplace_back(s.patient_id, s.label);
  return make_table(d.class_names, rows);
}

std::string CountTable::format() const {
  std::size_t name_w = 5;
  for (const auto& c : class_names) name_w = std::max(name_w, c.size());
  std::size_t col_w = 7;
  for (const auto& p : patients) col_w = std::max(col_w, p.size() + 1);
  std::ostringstream os;
  auto cell = [&](const std::string& s, std::size_t w) { os << std::string(w > s.size() ? w - s.size() : 0, ' ') << s; };
  os << std::string(name_w, ' ');
  cell("Samples", 8);
  for (const auto& p : patients) cell(p, col_w);
  os << "\n";
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    os << class_names[k] << std::string(name_w - class_names[k].size(), ' ');
    cell(std::to_string(class_totals[k]), 8);
    for (std::size_t p = 0; p < patients.size(); ++p) cell(std::to_string(counts[p][k]), col_w);
    os << "\n";
  }
  os << "Total" << std::string(name_w - 5, ' ');
  cell(std::to_string(total), 8);
  for (std::size_t p = 0; p < patients.size(); ++p) {
    std::size_t s = 0;
    for (auto c : counts[p]) s += c;
    cell(std::to_string(s), col_w);
  }
  os << "\n";
  return os.str();
}

Dataset load_dataset(const std::filesystem::path& manifest_path, const ModelConfig& cfg) {
  const Manifest m = read_manifest(manifest_path);
  std::vector<std::string> errors;
  if (m.samples.empty()) throw LoadError({manifest_path.string() + ": manifest lists no samples"});
  if (m.class_names.size() != cfg.num_classes) {
    errors.push_back("manifest has " + std::to_string(m.class_names.size()) + " classes, config expects " +
                     std::to_string(cfg.num_classes));
  }
  std::set<std::string> seen;
  for (const auto& s : m.samples) {
    if (!seen.insert(s.id).second) errors.push_back("duplicate sample id '" + s.id + "'");
  }
  if (!errors.empty()) throw LoadError(errors);

  const auto base = manifest_path.parent_path();
  Dataset d;
  d.class_names = m.class_names;
  const std::size_t want_samples = static_cast<std::size_t>(std::llround(cfg.clip_seconds * cfg.sample_rate));
  for (const auto& r : m.samples) {
    const std::string who = "sample '" + r.id + "'";
    if (r.label >= m.class_names.size()) {
      errors.push_back(who + ": label " + std::to_string(r.label) + " is outside the class list");
      continue;
    }
    PairedSample s{r.id, r.patient_id, r.label, {}, {}};
    const auto audio = resolve(base, r.audio_path);
    const auto frames = resolve(base, r.frames_path);
    bool ok = true;
    if (!std::filesystem::exists(audio)) {
      errors.push_back(who + ": missing audio file " + audio.string());
      ok = false;
    }
    if (!std::filesystem::exists(frames)) {
      errors.push_back(who + ": missing frame file " + frames.string());
      ok = false;
    }
    if (!ok) continue;
    try {
      AudioClip clip = read_wav(audio);
      if (std::abs(clip.sample_rate - cfg.sample_rate) > 1e-9) {
        errors.push_back(who + ": audio sample rate " + std::to_string(clip.sample_rate) + " Hz, config expects " +
                         std::to_string(cfg.sample_rate) + " Hz");
        continue;
      }
      clip = normalize_duration(clip, cfg.clip_seconds);
      if (clip.samples.size() != want_samples) throw SignalError("unexpected clip length");
      s.spectrogram = compute_spectrogram(clip, cfg.spectrogram).values;
    } catch (const std::exception& e) {
      errors.push_back(who + ": " + e.what());
      continue;
    }
    try {
      s.frames = read_frame_stack(frames);
    } catch (const std::exception& e) {
      errors.push_back(who + ": " + e.what());
      continue;
    }
    if (s.frames.dim(1) != cfg.image_height || s.frames.dim(2) != cfg.image_width ||
        s.frames.dim(0) < cfg.image_frames) {
      errors.push_back(who + ": frame stack " + shape_str(s.frames.shape()) + " does not fit config [" +
                       std::to_string(cfg.image_frames) + "x" + std::to_string(cfg.image_height) + "x" +
                       std::to_string(cfg.image_width) + "]");
      continue;
    }
    d.samples.push_back(std::move(s));
  }
  if (!errors.empty()) throw LoadError(errors);
  return d;
}

const std::vector<std::vector<std::size_t>>& clinical_count_matrix() {
  // [patient][class] for pancreas, portal vein, pancreatic duct, PVC, bile duct.
  static const std::vector<std::vector<std::size_t>> counts{
      {0, 0, 1, 0, 1}, {0, 1, 11, 2, 4}, {0, 1, 0, 1, 2}, {1, 1, 2, 1, 3}, {1, 1, 5, 3, 8}, {0, 0, 4, 1, 2},
      {0, 0, 0, 0, 1}, {5, 8, 5, 7, 2},  {4, 5, 2, 8, 10}, {2, 0, 3, 0, 3}, {2, 6, 2, 1, 5}, {1, 1, 3, 0, 0}};
  return counts;
}

const std::vector<std::string>& clinical_class_names() {
  static const std::vector<std::string> names{"pancreas", "portal vein", "pancreatic duct", "PVC", "bile duct"};
  return names;
}

std::pair<double, double> class_blob_centre(std::size_t label, std::size_t num_classes) {
  // Classes 0/4 and 1/3 overlap: their centres differ by less than the position jitter.
  static const std::pair<double, double> table[] = {{0.25, 0.24}, {0.25, 0.72}, {0.72, 0.27}, {0.27, 0.75},
                                                    {0.27, 0.27}, {0.72, 0.75}, {0.80, 0.62}, {0.62, 0.12}};
  if (label >= num_classes) throw DataError("label outside class range");
  const auto& c = table[label % 8];
  const double shift = 0.03 * static_cast<double>(label / 8);
  return {c.first + shift, c.second + shift};
}

double class_frequency(std::size_t label, std::size_t num_classes, double sample_rate) {
  if (label >= num_classes) throw DataError("label outside class range");
  const double span = num_classes > 1 ? static_cast<double>(label) / static_cast<double>(num_classes - 1) : 0.0;
  return sample_rate * (0.04 + 0.26 * span);
}

namespace {

struct PatientTraits {
  double freq_jitter;
  double harmonic;
  double noise_sd;
  double gain;
  double speckle;
};

std::vector<std::vector<std::size_t>> synth_layout(const SynthConfig& cfg) {
  if (cfg.clinical_counts) {
    if (cfg.patients != 12 || cfg.num_classes != 5) {
      throw DataError("clinical count layout needs 12 patients and 5 classes");
    }
    std::vector<std::vector<std::size_t>> labels(12);
    for (std::size_t p = 0; p < 12; ++p)
      for (std::size_t k = 0; k < 5; ++k) labels[p].insert(labels[p].end(), clinical_count_matrix()[p][k], k);
    return labels;
  }
  Rng rng(derive_seed(cfg.seed, "layout"));
  const std::size_t k = cfg.num_classes;
  // Class prevalence follows the clinical totals for five classes, uniform otherwise.
  std::vector<double> base(k, 1.0);
  if (k == 5) base = {16, 24, 38, 24, 41};
  std::vector<std::vector<std::size_t>> labels(cfg.patients);
  for (std::size_t p = 0; p < cfg.patients; ++p) {
    const std::size_t n = cfg.min_per_patient + rng.below(cfg.max_per_patient - cfg.min_per_patient + 1);
    std::vector<double> w(k);
    for (std::size_t c = 0; c < k; ++c) {
      const double u = rng.uniform(0.1, 1.0);
      w[c] = rng.uniform() < 0.3 ? 0.0 : base[c] * u * u;
    }
    if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) w[rng.below(k)] = 1.0;
    double total = 0;
    for (double v : w) total += v;
    for (std::size_t i = 0; i < n; ++i) {
      double r = rng.uniform() * total;
      std::size_t c = 0;
      while (c + 1 < k && r >= w[c]) r -= w[c++];
      while (w[c] == 0.0) c = (c + k - 1) % k;
      labels[p].push_back(c);
    }
  }
  // Every class needs at least two patients so each leave-one-out fold still sees it.
  for (std::size_t c = 0; c < k; ++c) {
    auto coverage = [&] {
      std::size_t n = 0;
      for (const auto& l : labels)
        if (std::find(l.begin(), l.end(), c) != l.end()) ++n;
      return n;
    };
    std::vector<std::size_t> order(cfg.patients);
    for (std::size_t p = 0; p < cfg.patients; ++p) order[p] = p;
    rng.shuffle(order);
    for (auto p : order) {
      if (coverage() >= 2) break;
      auto& l = labels[p];
      if (std::find(l.begin(), l.end(), c) != l.end()) continue;
      // Relabel a sample whose class the patient has more than once.
      for (std::size_t i = 0; i < l.size(); ++i) {
        if (std::count(l.begin(), l.end(), l[i]) >= 2) {
          l[i] = c;
          break;
        }
      }
    }
    // Small layouts may have no duplicates left to relabel; add a sample instead.
    for (auto p : order) {
      if (coverage() >= 2) break;
      auto& l = labels[p];
      if (std::find(l.begin(), l.end(), c) == l.end()) l.push_back(c);
    }
  }
  return labels;
}

AudioClip synth_audio(Rng& rng, std::size_t label, const SynthConfig& cfg, const PatientTraits& t) {
  AudioClip clip;
  clip.sample_rate = cfg.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(rng.uniform(0.6, 1.4) * cfg.sample_rate));
  const double f = class_frequency(label, cfg.num_classes, cfg.sample_rate) * (1 + t.freq_jitter) *
                   (1 + rng.uniform(-0.01, 0.01));
  const double start = rng.uniform(0.0, 0.15) * cfg.sample_rate;
  const double length = rng.uniform(0.45, 0.8) * cfg.sample_rate;
  const double ramp = 0.02 * cfg.sample_rate;
  const double amp = rng.uniform(0.25, 0.5);
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) - start;
    double env = 0;
    if (pos >= 0 && pos < length) {
      env = 1;
      if (pos < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * pos / ramp);
      if (length - pos < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (length - pos) / ramp);
    }
    const double w = 2 * std::numbers::pi * f * static_cast<double>(i) / cfg.sample_rate + phase;
    const double v = env * amp * (std::sin(w) + t.harmonic * std::sin(2 * w)) + t.noise_sd * rng.normal();
    clip.samples[i] = std::clamp(v, -1.0, 32767.0 / 32768.0);
  }
  return clip;
}

Tensor<float> synth_frames(Rng& rng, std::size_t label, const SynthConfig& cfg, const PatientTraits& t) {
  const double h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);
  struct Blob {
    double y, x, dy, dx, sigma, amp;
  };
  auto make_blob = [&](std::size_t cls) {
    const auto [cy, cx] = class_blob_centre(cls, cfg.num_classes);
    return Blob{cy * h + rng.uniform(-0.03, 0.03) * h,
                cx * w + rng.uniform(-0.03, 0.03) * w,
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                0.08 * std::min(h, w) * rng.uniform(0.9, 1.1),
                rng.uniform(0.45, 0.65) * t.gain};
  };
  std::vector<Blob> blobs{make_blob(label)};
  // Half the stacks also show a dimmer landmark of another class in a different quadrant.
  if (cfg.num_classes > 1 && rng.uniform() < 0.5) {
    const auto [ly, lx] = class_blob_centre(label, cfg.num_classes);
    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
      const auto [oy, ox] = class_blob_centre(c, cfg.num_classes);
      if ((oy < 0.5) != (ly < 0.5) || (ox < 0.5) != (lx < 0.5)) others.push_back(c);
    }
    if (!others.empty()) {
      blobs.push_back(make_blob(others[rng.below(others.size())]));
      blobs.back().amp *= 0.6;
    }
  }
  Tensor<float> out({cfg.frames, cfg.height, cfg.width});
  float* px = out.data().data();
  const double denom = cfg.frames > 1 ? static_cast<double>(cfg.frames - 1) : 1.0;
  for (std::size_t f = 0; f < cfg.frames; ++f) {
    const double drift = static_cast<double>(f) / denom;
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        double v = 0.15;
        for (const auto& b : blobs) {
          const double ry = static_cast<double>(y) - (b.y + b.dy * drift);
          const double rx = static_cast<double>(x) - (b.x + b.dx * drift);
          v += b.amp * std::exp(-(ry * ry + rx * rx) / (2 * b.sigma * b.sigma));
        }
        v *= t.gain * (1 + t.speckle * rng.normal());
        *px++ = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  }
  return out;
}

double centroid_accuracy(const std::vector<std::vector<double>>& features, const std::vector<std::size_t>& labels,
                         std::size_t k) {
  // Leave-one-out nearest centroid.
  const std::size_t dim = features.front().size();
  std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) sums[labels[i]][d] += features[i][d];
    ++counts[labels[i]];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t pick = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t n = counts[c] - (labels[i] == c ? 1 : 0);
      if (n == 0) continue;
      double dist = 0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double centre = (sums[c][d] - (labels[i] == c ? features[i][d] : 0.0)) / static_cast<double>(n);
        dist += (features[i][d] - centre) * (features[i][d] - centre);
      }
      if (dist < best) {
        best = dist;
        pick = c;
      }
    }
    correct += pick == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(features.size());
}

std::string two_digits(std::size_t v) { return (v < 10 ? "0" : "") + std::to_string(v); }

}  // namespace

SynthReport synth_generate(const SynthConfig& cfg, const std::filesystem::path& dir) {
  if (cfg.num_classes < 2) throw DataError("synthetic data needs at least 2 classes");
  if (cfg.patients < 2 || cfg.min_per_patient == 0 || cfg.min_per_patient > cfg.max_per_patient) {
    throw DataError("invalid synthetic patient/sample counts");
  }
  if (cfg.frames == 0 || cfg.height < 2 || cfg.width < 2 || !(cfg.sample_rate > 0)) {
    throw DataError("invalid synthetic dims");
  }
  const auto labels = synth_layout(cfg);
  std::filesystem::create_directories(dir / "audio");
  std::filesystem::create_directories(dir / "frames");

  SynthReport report;
  Manifest& m = report.manifest;
  m.dataset_id = "synthetic-seed" + std::to_string(cfg.seed);
  if (cfg.num_classes == 5) {
    m.class_names = clinical_class_names();
  } else {
    for (std::size_t c = 0; c < cfg.num_classes; ++c) m.class_names.push_back("class" + std::to_string(c));
  }

  // Spectrogram settings for the separability check: 25 ms windows, 15 ms hop.
  const auto window = static_cast<std::size_t>(std::llround(0.025 * cfg.sample_rate));
  std::size_t fft = 2;
  while (fft < window) fft *= 2;
  const SpectrogramConfig spec{fft, window, static_cast<std::size_t>(std::llround(0.015 * cfg.sample_rate)),
                               WindowShape::hann};
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> feature_labels;

  std::size_t serial = 0;
  for (std::size_t p = 0; p < cfg.patients; ++p) {
    Rng prng(derive_seed(cfg.seed, "patient", p));
    const PatientTraits traits{prng.uniform(-0.03, 0.03), prng.uniform(0.1, 0.5), prng.uniform(0.03, 0.12),
                               prng.uniform(0.75, 1.25), prng.uniform(0.08, 0.16)};
    const std::string pid = "p" + two_digits(p + 1);
    double clock = prng.uniform(5.0, 30.0);
    for (std::size_t i = 0; i < labels[p].size(); ++i, ++serial) {
      const std::size_t label = labels[p][i];
      Rng rng(derive_seed(cfg.seed, "sample", serial));
      const std::string id = pid + "_s" + two_digits(i + 1);
      AudioClip clip = synth_audio(rng, label, cfg, traits);
      Tensor<float> frames = synth_frames(rng, label, cfg, traits);
      write_wav(dir / "audio" / (id + ".wav"), clip);
      write_frame_stack(dir / "frames" / (id + ".ustk"), frames);
      m.samples.push_back({id, pid, label, "audio/" + id + ".wav", "frames/" + id + ".ustk", clock});
      clock += prng.uniform(5.0, 40.0);

      // Feature for the separability check uses the stored 16-bit audio.
      AudioClip stored = read_wav(dir / "audio" / (id + ".wav"));
      auto mag = compute_spectrogram(normalize_duration(stored, 1.0), spec).values;
      std::vector<double> mean(mag.dim(0), 0.0);
      for (std::size_t b = 0; b < mag.dim(0); ++b) {
        for (std::size_t t = 0; t < mag.dim(1); ++t) mean[b] += mag.at({b, t});
        mean[b] /= static_cast<double>(mag.dim(1));
      }
      features.push_back(std::move(mean));
      feature_labels.push_back(label);
    }
  }
  write_manifest(dir / "manifest.json", m);
  report.centroid_accuracy = centroid_accuracy(features, feature_labels, cfg.num_classes);
  return report;
}

}  // namespace vlabel
