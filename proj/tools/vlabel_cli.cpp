#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vlabel/config.hpp"
#include "vlabel/data.hpp"
#include "vlabel/eval.hpp"
#include "vlabel/explain.hpp"
#include "vlabel/io.hpp"
#include "vlabel/signal.hpp"
#include "vlabel/train.hpp"

namespace fs = std::filesystem;
using namespace vlabel;

namespace {

struct RunFlags {
  std::string config;
  ConfigOverrides overrides;
  // CLI11 binds plain values; copied into the optionals after parsing.
  double lr = 0;
  std::size_t epochs = 0, batch = 0;
  std::uint64_t seed = 0;
  std::string variant, data, out;
  CLI::Option *lr_opt = nullptr, *epochs_opt = nullptr, *batch_opt = nullptr, *seed_opt = nullptr,
              *variant_opt = nullptr, *data_opt = nullptr, *out_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON config file");
    app->add_flag("--paper-mode", overrides.paper_mode, "Full-scale dimensions and schedule");
    lr_opt = app->add_option("--lr", lr, "Learning rate");
    epochs_opt = app->add_option("--epochs", epochs, "Training epochs");
    batch_opt = app->add_option("--batch-size", batch, "Batch size");
    seed_opt = app->add_option("--seed", seed, "Master seed");
    variant_opt = app->add_option("--variant", variant,
                                  "standard, random_pairs, reduced_frames, voice_only or image_only");
    data_opt = app->add_option("--data", data, "Dataset manifest");
    out_opt = app->add_option("-o,--out", out, "Output directory");
  }

  RunConfig resolve() {
    if (*lr_opt) overrides.learning_rate = lr;
    if (*epochs_opt) overrides.epochs = epochs;
    if (*batch_opt) overrides.batch_size = batch;
    if (*seed_opt) overrides.seed = seed;
    if (*variant_opt) overrides.variant = variant;
    if (*data_opt) overrides.data = data;
    if (*out_opt) overrides.out = out;
    std::optional<fs::path> path;
    if (!config.empty()) path = config;
    RunConfig cfg = load_config(path, overrides);
    if (cfg.data.empty()) throw ConfigError("no dataset given (--data or 'data' in the config)");
    return cfg;
  }
};

void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

void log_line(const std::string& s) { std::cerr << s << std::endl; }

// Spectrogram and frame stack for one sample given by id or by raw files.
struct SampleInput {
  std::string id;
  std::optional<std::size_t> label;
  Tensor<float> spectrogram;
  Tensor<float> frames;
};

SampleInput raw_input(const ModelConfig& cfg, const fs::path& audio, const fs::path& frames) {
  SampleInput in;
  in.id = audio.stem().string();
  AudioClip clip = read_wav(audio);
  if (std::abs(clip.sample_rate - cfg.sample_rate) > 1e-9) {
    throw SignalError(audio.string() + ": sample rate " + std::to_string(clip.sample_rate) + " Hz, model expects " +
                      std::to_string(cfg.sample_rate) + " Hz");
  }
  in.spectrogram = compute_spectrogram(normalize_duration(clip, cfg.clip_seconds), cfg.spectrogram).values;
  in.frames = read_frame_stack(frames);
  return in;
}

const PairedSample& find_sample(const Dataset& d, const std::string& id) {
  for (const auto& s : d.samples)
    if (s.id == id) return s;
  throw DataError("no sample '" + id + "' in the dataset");
}

int cmd_synth(const SynthConfig& cfg, const std::string& out) {
  const auto report = synth_generate(cfg, out);
  write_json(fs::path(out) / "synth.json", {{"seed", cfg.seed},
                                            {"patients", cfg.patients},
                                            {"min_per_patient", cfg.min_per_patient},
                                            {"max_per_patient", cfg.max_per_patient},
                                            {"num_classes", cfg.num_classes},
                                            {"sample_rate", cfg.sample_rate},
                                            {"frames", cfg.frames},
                                            {"height", cfg.height},
                                            {"width", cfg.width},
                                            {"clinical_counts", cfg.clinical_counts},
                                            {"centroid_accuracy", report.centroid_accuracy},
                                            {"version", kVersion}});
  std::cout << count_table(report.manifest).format();
  std::printf("nearest-centroid accuracy on audio: %.3f\n", report.centroid_accuracy);
  std::printf("manifest: %s\n", (fs::path(out) / "manifest.json").string().c_str());
  return 0;
}

int cmd_train(RunFlags& flags) {
  const RunConfig cfg = flags.resolve();
  const fs::path out = cfg.out;
  write_run_record(out, cfg, "train");
  const Dataset data = load_dataset(cfg.data, cfg.model);
  std::vector<std::size_t> all(data.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochLog& e) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch %zu: loss %.6f", e.epoch, e.mean_loss);
    log_line(buf);
  };
  const TrainResult r = train(data, all, cfg.model, cfg.train, hooks);
  save_checkpoint(out / "model.ckpt", r.model);
  write_file_atomic(out / "loss.log", format_loss_log(r.log));
  write_json(out / "train.json", {{"variant", to_string(cfg.train.variant)},
                                  {"samples", all.size()},
                                  {"steps", r.steps},
                                  {"class_weights", r.class_weights},
                                  {"class_names", data.class_names}});
  std::printf("checkpoint: %s\n", (out / "model.ckpt").string().c_str());
  return 0;
}

int cmd_evaluate(RunFlags& flags, std::size_t jobs) {
  const RunConfig cfg = flags.resolve();
  const fs::path out = cfg.out;
  write_run_record(out, cfg, "evaluate");
  const Dataset data = load_dataset(cfg.data, cfg.model);
  std::cerr << count_table(data).format();
  LopoOptions opt;
  opt.jobs = jobs;
  opt.log = log_line;
  const LopoResult r = lopo_run(data, cfg.model, cfg.train, opt);
  write_predictions(out / "predictions.txt", r.predictions);
  write_json(out / "metrics.json", to_json(r.confusion, r.metrics, data.class_names));
  write_json(out / "folds.json", to_json(r.folds));
  std::printf("accuracy %.4f  macro precision %.4f  macro recall %.4f  macro F1 %.4f  (m = %zu, n = %zu)\n",
              r.metrics.accuracy, r.metrics.macro_precision, r.metrics.macro_recall, r.metrics.macro_f1, r.metrics.m,
              r.metrics.n);
  for (const auto& f : r.folds) {
    if (f.skipped) {
      std::printf("  %s: skipped (%s)\n", f.patient.c_str(), f.reason.c_str());
    } else {
      std::printf("  %s: %zu/%zu\n", f.patient.c_str(), f.correct, f.test_size);
    }
  }
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& manifest, const std::string& sample,
                const std::string& audio, const std::string& frames) {
  const Model model = load_checkpoint(checkpoint);
  SampleInput in;
  std::vector<std::string> names;
  if (!manifest.empty()) {
    if (sample.empty()) throw ConfigError("--sample is required with --data");
    const Dataset d = load_dataset(manifest, model.config);
    const auto& s = find_sample(d, sample);
    in = {s.id, s.label, s.spectrogram, s.frames};
    names = d.class_names;
  } else {
    if (audio.empty() || frames.empty()) throw ConfigError("give --data and --sample, or --audio and --frames");
    in = raw_input(model.config, audio, frames);
  }
  const auto pr = predict(model, in.spectrogram, in.frames);
  nlohmann::json j{{"sample", in.id}, {"predicted", pr.label}, {"probabilities", pr.probabilities}};
  if (!names.empty()) j["predicted_name"] = names.at(pr.label);
  if (in.label) j["true_label"] = *in.label;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_gradcam(const std::string& checkpoint, const std::string& manifest, std::vector<std::string> samples,
                std::optional<std::size_t> target, const std::string& layer, const std::string& colormap_name,
                const std::string& out, bool wrong_pairs) {
  const Model model = load_checkpoint(checkpoint);
  const Dataset d = load_dataset(manifest, model.config);
  const Colormap cmap = colormap_from_string(colormap_name);
  fs::create_directories(out);
  auto middle = [](const Tensor<float>& stack) {
    const std::size_t f = stack.dim(0) / 2, plane = stack.dim(1) * stack.dim(2);
    Tensor<float> frame({stack.dim(1), stack.dim(2)});
    std::copy(stack.data().begin() + f * plane, stack.data().begin() + (f + 1) * plane, frame.data().begin());
    return frame;
  };
  std::size_t written = 0;
  if (wrong_pairs) {
    // One representative per class; every image class against every voice class.
    std::vector<const PairedSample*> reps(d.num_classes(), nullptr);
    for (const auto& s : d.samples)
      if (!reps[s.label]) reps[s.label] = &s;
    for (std::size_t i = 0; i < reps.size(); ++i)
      for (std::size_t j = 0; j < reps.size(); ++j) {
        if (!reps[i] || !reps[j]) continue;
        const std::size_t cls = target.value_or(j);
        const Heatmap h = probe_wrong_pair(model, *reps[i], *reps[j], cls, layer);
        const std::string name = reps[i]->id + "-" + reps[j]->id;
        export_heatmap(h, middle(reps[i]->frames), fs::path(out) / heatmap_filename(name, cls, layer), cmap);
        ++written;
      }
  } else {
    if (samples.empty())
      for (const auto& s : d.samples) samples.push_back(s.id);
    for (const auto& id : samples) {
      const auto& s = find_sample(d, id);
      const std::size_t cls = target.value_or(s.label);
      const Heatmap h = grad_cam(model, s.spectrogram, s.frames, cls, layer);
      export_heatmap(h, middle(s.frames), fs::path(out) / heatmap_filename(s.id, cls, layer), cmap);
      ++written;
    }
  }
  std::printf("wrote %zu heatmaps to %s\n", written, out.c_str());
  return 0;
}

int cmd_metrics(const std::string& predictions, const std::string& manifest, const std::string& out) {
  const auto preds = read_predictions(predictions);
  std::vector<std::string> names;
  if (!manifest.empty()) names = read_manifest(manifest).class_names;
  const auto cm = confusion(preds, names.empty() ? prediction_classes(preds) : names.size());
  const auto j = to_json(cm, metrics(cm), names);
  if (!out.empty()) write_json(out, j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_bootstrap(const std::string& predictions, std::size_t subsets, std::size_t size, std::uint64_t seed,
                  const std::string& out) {
  const auto b = bootstrap_accuracy(read_predictions(predictions), subsets, size, seed);
  if (!out.empty()) write_json(out, to_json(b));
  std::printf("bootstrap accuracy %.4f +/- %.4f over %zu subsets of %zu patients\n", b.mean, b.std, subsets, size);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Folds run in parallel through --jobs; BLAS stays single-threaded so results do not depend on thread count.
  set_single_threaded_blas();

  CLI::App app{"Voice and image landmark classifier"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthConfig synth;
  std::string synth_out = "synthetic";
  auto* s = app.add_subcommand("synth", "Write a deterministic synthetic dataset");
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--patients", synth.patients, "Number of patients")->capture_default_str();
  s->add_option("--min-samples", synth.min_per_patient, "Fewest samples per patient")->capture_default_str();
  s->add_option("--max-samples", synth.max_per_patient, "Most samples per patient")->capture_default_str();
  s->add_option("--classes", synth.num_classes, "Number of classes")->capture_default_str();
  s->add_option("--sample-rate", synth.sample_rate, "Audio sample rate")->capture_default_str();
  s->add_option("--frames", synth.frames, "Frames per stack")->capture_default_str();
  s->add_option("--height", synth.height, "Frame height")->capture_default_str();
  s->add_option("--width", synth.width, "Frame width")->capture_default_str();
  s->add_flag("--clinical-counts", synth.clinical_counts, "Use the 12-patient, 143-sample clinical layout");
  s->add_option("-o,--out", synth_out, "Output directory")->capture_default_str();

  RunFlags train_flags, eval_flags;
  auto* t = app.add_subcommand("train", "Train on every sample of a dataset");
  train_flags.attach(t);

  std::size_t jobs = 1;
  auto* e = app.add_subcommand("evaluate", "Leave-one-patient-out evaluation");
  eval_flags.attach(e);
  e->add_option("-j,--jobs", jobs, "Folds trained in parallel")->capture_default_str();

  std::string checkpoint, manifest, sample, audio, frames_path;
  auto* p = app.add_subcommand("predict", "Label one sample");
  p->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  p->add_option("--data", manifest, "Dataset manifest");
  p->add_option("--sample", sample, "Sample id in the manifest");
  p->add_option("--audio", audio, "WAV file");
  p->add_option("--frames", frames_path, "Frame stack file");

  std::vector<std::string> cam_samples;
  std::size_t cam_class = 0;
  std::string layer = kDefaultCamLayer, colormap = "jet", cam_out = "heatmaps";
  bool wrong_pairs = false;
  auto* g = app.add_subcommand("gradcam", "Write Grad-CAM overlays");
  g->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  g->add_option("--data", manifest, "Dataset manifest")->required();
  g->add_option("--sample", cam_samples, "Sample ids (default: all)");
  auto* class_opt = g->add_option("--class", cam_class, "Target class (default: true label)");
  g->add_option("--layer", layer, "Convolution layer")->capture_default_str();
  g->add_option("--colormap", colormap, "jet or hot")->capture_default_str();
  g->add_option("-o,--out", cam_out, "Output directory")->capture_default_str();
  g->add_flag("--wrong-pairs", wrong_pairs, "Grid of every image class against every voice class");

  std::string predictions, report_out;
  auto* m = app.add_subcommand("metrics", "Metrics report from a predictions file");
  m->add_option("predictions", predictions, "Predictions file")->required();
  m->add_option("--data", manifest, "Manifest for class names");
  m->add_option("-o,--out", report_out, "Write the JSON report here");

  std::size_t subsets = 100, subset_size = 10;
  std::uint64_t boot_seed = 1;
  auto* b = app.add_subcommand("bootstrap", "Bootstrap accuracy over patient subsets");
  b->add_option("predictions", predictions, "Predictions file")->required();
  b->add_option("--subsets", subsets, "Number of subsets")->capture_default_str();
  b->add_option("--size", subset_size, "Patients per subset")->capture_default_str();
  b->add_option("--seed", boot_seed, "Seed")->capture_default_str();
  b->add_option("-o,--out", report_out, "Write the JSON report here");

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    std::cerr << "error: unknown command '" << argv[1] << "'\n\n" << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    if (code != 0) std::cerr << "\n" << app.help();
    return code;
  }

  try {
    if (*s) return cmd_synth(synth, synth_out);
    if (*t) return cmd_train(train_flags);
    if (*e) return cmd_evaluate(eval_flags, jobs);
    if (*p) return cmd_predict(checkpoint, manifest, sample, audio, frames_path);
    if (*g) {
      std::optional<std::size_t> target;
      if (*class_opt) target = cam_class;
      return cmd_gradcam(checkpoint, manifest, cam_samples, target, layer, colormap, cam_out, wrong_pairs);
    }
    if (*m) return cmd_metrics(predictions, manifest, report_out);
    if (*b) return cmd_bootstrap(predictions, subsets, subset_size, boot_seed, report_out);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
