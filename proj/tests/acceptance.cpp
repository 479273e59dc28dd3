// Acceptance run: one PASS/FAIL line per criterion, exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "gradcheck.hpp"
#include "metric_oracles.hpp"
#include "model_fixtures.hpp"
#include "oracles.hpp"
#include "scratch.hpp"
#include "vlabel/data.hpp"
#include "vlabel/eval.hpp"
#include "vlabel/explain.hpp"
#include "vlabel/layers.hpp"
#include "vlabel/signal.hpp"
#include "vlabel/train.hpp"

using namespace vlabel;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail = what;
    pass = false;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Layer and full tiny-model gradients against central differences.
Outcome gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0;
  std::size_t instances = 0;
  auto check = [&](const gradcheck::Builder& build, const std::vector<Tensor<double>>& in, const Tensor<double>& probe,
                   const char* op) {
    const double e = gradcheck::worst_error(build, in, probe);
    worst = std::max(worst, e);
    ++instances;
    o.require(e < 1e-4, std::string(op) + " relative error " + fmt("%.3g", e));
  };
  for (int trial = 0; trial < 50; ++trial) {
    {
      const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(3), cout = 1 + rng.below(3), len = 1 + rng.below(6);
      check([](Tape<double>&, const std::vector<Var<double>>& v) { return conv1d(v[0], v[1], v[2]); },
            {oracle::random_tensor<double>({n, cin, len}, rng), oracle::random_tensor<double>({cout, cin, 3}, rng),
             oracle::random_tensor<double>({cout}, rng)},
            oracle::random_tensor<double>({n, cout, len}, rng), "conv1d");
    }
    {
      const bool wide = trial % 5 == 0;
      const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(2), cout = 1 + rng.below(3);
      const std::size_t h = wide ? 32 : 1 + rng.below(5), w = wide ? 33 : 1 + rng.below(5);
      check([](Tape<double>&, const std::vector<Var<double>>& v) { return conv2d(v[0], v[1], v[2]); },
            {oracle::random_tensor<double>({n, cin, h, w}, rng), oracle::random_tensor<double>({cout, cin, 3, 3}, rng),
             oracle::random_tensor<double>({cout}, rng)},
            oracle::random_tensor<double>({n, cout, h, w}, rng), "conv2d");
    }
    for (const Mode mode : {Mode::train, Mode::infer}) {
      const std::size_t n = 2 + rng.below(3), c = 1 + rng.below(3), len = 1 + rng.below(4);
      const auto mean = oracle::random_tensor<double>({c}, rng);
      const auto var = oracle::random_tensor<double>({c}, rng, 0.5, 2.0);
      check(
          [&](Tape<double>&, const std::vector<Var<double>>& v) {
            Tensor<double> m = mean, s = var;
            return batch_norm(v[0], v[1], v[2], BatchNormStats<double>{&m, &s}, mode);
          },
          {oracle::random_tensor<double>({n, c, len}, rng), oracle::random_tensor<double>({c}, rng, 0.5, 1.5),
           oracle::random_tensor<double>({c}, rng)},
          oracle::random_tensor<double>({n, c, len}, rng), "batch_norm");
    }
    {
      auto x = oracle::random_tensor<double>({1 + rng.below(2), 1 + rng.below(3), 2 + rng.below(5), 2 + rng.below(5)},
                                             rng);
      const auto s = x.shape();
      check([](Tape<double>&, const std::vector<Var<double>>& v) { return relu(v[0]); }, {x},
            oracle::random_tensor<double>(s, rng), "relu");
      check([](Tape<double>&, const std::vector<Var<double>>& v) { return max_pool(v[0]); }, {x},
            oracle::random_tensor<double>({s[0], s[1], s[2] / 2, s[3] / 2}, rng), "max_pool");
      check([](Tape<double>&, const std::vector<Var<double>>& v) { return global_avg_pool(v[0]); }, {x},
            oracle::random_tensor<double>({s[0], s[1]}, rng), "global_avg_pool");
    }
    {
      const std::size_t n = 1 + rng.below(4), k = 2 + rng.below(4);
      Tensor<double> targets({n, k});
      for (std::size_t i = 0; i < n; ++i) targets.at({i, rng.below(k)}) = 1.0;
      const auto weights = oracle::random_tensor<double>({k}, rng, 0.5, 3.0);
      check([&](Tape<double>&,
                const std::vector<Var<double>>& v) { return weighted_cross_entropy(v[0], targets, weights); },
            {oracle::random_tensor<double>({n, k}, rng, -3, 3)}, Tensor<double>({1}, 1.0), "weighted_cross_entropy");
    }
    {
      const std::size_t n = 1 + rng.below(2), r = 1 + rng.below(5), h = 1 + rng.below(4), w = 1 + rng.below(4),
                        kt = 1 + rng.below(4);
      check([](Tape<double>&, const std::vector<Var<double>>& v) { return joint_batched(v[0], v[1]); },
            {oracle::random_tensor<double>({n, r, h, w}, rng), oracle::random_tensor<double>({n, r, kt}, rng)},
            oracle::random_tensor<double>({n, kt, h, w}, rng), "joint");
    }
    {
      const auto report = fixtures::full_model_gradient(100 + static_cast<std::uint64_t>(trial), ModelKind::joint, 4,
                                                        trial % 2 ? Mode::infer : Mode::train);
      worst = std::max(worst, report.worst);
      ++instances;
      o.require(report.worst < 1e-4, "full joint model at " + report.worst_name + " " + fmt("%.3g", report.worst));
    }
  }
  const double secs = seconds_since(t0);
  o.require(secs < 120, "took " + fmt("%.0f s", secs));
  if (o.pass)
    o.detail = std::to_string(instances) + " instances, worst relative error " + fmt("%.2g", worst) + ", " +
               fmt("%.1f s", secs);
  return o;
}

// 2. Joint of (Q, P) against the triple loop.
Outcome joint_oracle() {
  Outcome o;
  Rng rng(77);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6), r = 1 + rng.below(20), kt = 1 + rng.below(6);
    const auto q = oracle::random_tensor<double>({h, w, r}, rng);
    const auto p = oracle::random_tensor<double>({kt, r}, rng);
    worst = std::max(worst, max_relative_error(joint(q, p), oracle::joint(q, p), 1e-12));
  }
  o.require(worst < 1e-6, "relative error " + fmt("%.3g", worst));
  if (o.pass) o.detail = "100 shapes, worst relative error " + fmt("%.2g", worst);
  return o;
}

AudioClip tone(std::size_t n, double rate) {
  AudioClip clip{std::vector<double>(n), rate};
  for (std::size_t i = 0; i < n; ++i) clip.samples[i] = std::sin(0.01 * static_cast<double>(i * i % 9973));
  return clip;
}

// 3. Spectrogram shapes.
Outcome spectrogram_shapes() {
  Outcome o;
  const auto full = compute_spectrogram(tone(48000, 48000), SpectrogramConfig{2046, 1200, 720, WindowShape::hann});
  o.require(full.values.shape() == Shape{1024, 66}, "full-scale shape");
  const auto desk_cfg = ModelConfig::desk();
  const auto desk = compute_spectrogram(tone(8000, 8000), desk_cfg.spectrogram);
  o.require(desk.values.shape() == Shape{256, 66}, "desk shape");
  o.require(desk_cfg.voice_bins() == 256 && desk_cfg.voice_frames() == 66, "desk config");
  if (o.pass) o.detail = "1024x66 and 256x66";
  return o;
}

// 4. Class weights from the clinical counts.
Outcome class_weights() {
  Outcome o;
  const auto w = compute_class_weights({16, 24, 38, 24, 41});
  const std::vector<double> expect{2.6, 1.7, 1.1, 1.7, 1.0};
  std::string shown;
  for (std::size_t k = 0; k < 5; ++k) {
    const double r = std::round(w[k] * 10) / 10;
    o.require(r == expect[k], "class " + std::to_string(k) + " rounds to " + fmt("%.1f", r));
    shown += (k ? ", " : "") + fmt("%.1f", r);
  }
  if (o.pass) o.detail = "[" + shown + "]";
  return o;
}

// 5. Branch output shapes at full scale.
Outcome shape_chain() {
  Outcome o;
  auto cfg = ModelConfig::paper();
  o.require(cfg.image_hw_out() == std::pair<std::size_t, std::size_t>{10, 21}, "declared image output");
  o.require(cfg.voice_time_out() == 4, "declared voice output");

  auto voice_cfg = cfg;
  voice_cfg.kind = ModelKind::voice_only;
  auto vp = init_params<float>(voice_cfg, 2);
  Tape<float> t1;
  auto vb = bind(t1, vp, false);
  const auto p = voice_branch(vb, voice_cfg, t1.constant(Tensor<float>({1, 1024, 66}, 0.1f)), Mode::infer);
  o.require(p.shape() == Shape{1, cfg.joint_channels(), 4}, "voice branch output");

  // Full width is too heavy for the image branch; the spatial chain does not depend on it.
  auto narrow = cfg;
  narrow.kind = ModelKind::image_only;
  narrow.image_widths = {4, 4, 4, 4, 8};
  narrow.voice_channels = {4, 4, 4, 4, 8, 8};
  auto ip = init_params<float>(narrow, 2);
  Tape<float> t2;
  auto ib = bind(t2, ip, false);
  const auto q = image_branch(ib, narrow, t2.constant(Tensor<float>({1, 25, 350, 690}, 0.5f)), Mode::infer);
  o.require(q.shape() == Shape{1, 8, 10, 21}, "image branch output");
  if (o.pass) o.detail = "25x350x690 -> 10x21xR, 1024x66 -> 4xR (R=" + std::to_string(cfg.joint_channels()) + ")";
  return o;
}

// 6. Metrics against brute force.
Outcome metrics_oracle() {
  Outcome o;
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.below(5);
    const auto preds = oracle::random_predictions(rng, k);
    const auto cm = confusion(preds, k);
    const auto r = metrics(cm);
    const auto b = oracle::brute_force(preds, k);
    auto close = [](double a, double e) { return std::abs(a - e) <= 1e-12 * std::max(1.0, std::abs(e)); };
    o.require(close(r.accuracy, b.accuracy) && close(r.macro_precision, b.macro_p) &&
                  close(r.macro_recall, b.macro_r) && close(r.macro_f1, b.macro_f1),
              "macro metrics differ at trial " + std::to_string(trial));
    for (std::size_t c = 0; c < k; ++c) {
      o.require(close(r.precision[c], b.p[c]) && close(r.recall[c], b.r[c]) && close(r.f1[c], b.f1[c]),
                "class metrics differ at trial " + std::to_string(trial));
      for (std::size_t q = 0; q < k; ++q) {
        std::size_t n = 0;
        for (const auto& x : preds) n += x.true_label == c && x.predicted == q;
        o.require(cm.counts[c][q] == n, "confusion count differs at trial " + std::to_string(trial));
      }
    }
    for (const auto& row : cm.normalized())
      if (row) o.require(std::abs(std::accumulate(row->begin(), row->end(), 0.0) - 1.0) <= 1e-9, "row sum");
  }
  if (o.pass) o.detail = "1000 random prediction sets";
  return o;
}

// 7. Leave-one-patient-out partition on the clinical layout.
Outcome lopo_partition() {
  Outcome o;
  Dataset d;
  d.class_names = clinical_class_names();
  const auto& counts = clinical_count_matrix();
  for (std::size_t p = 0; p < counts.size(); ++p)
    for (std::size_t k = 0; k < counts[p].size(); ++k)
      for (std::size_t i = 0; i < counts[p][k]; ++i)
        d.samples.push_back({"s" + std::to_string(d.samples.size()), "patient" + std::to_string(p + 1), k, {}, {}});
  o.require(d.samples.size() == 143, "layout has " + std::to_string(d.samples.size()) + " samples");
  std::size_t tested = 0;
  const auto plans = lopo_plan(d);
  for (const auto& plan : plans) {
    for (auto i : plan.train) o.require(d.samples[i].patient_id != plan.patient, "test patient in training set");
    for (auto i : plan.test) o.require(d.samples[i].patient_id == plan.patient, "foreign sample in test set");
    tested += plan.test.size();
  }
  o.require(plans.size() == 12, "fold count");
  o.require(tested == 143, "pooled predictions " + std::to_string(tested));
  if (o.pass) o.detail = "12 folds, 143 pooled predictions";
  return o;
}

struct SynthRun {
  Dataset data;
  LopoResult joint;
  LopoResult image_only;
  double joint_seconds = 0;
  double image_seconds = 0;
  std::size_t cam_samples = 0;
  std::size_t cam_hits = 0;
  bool cam_maps_valid = true;
  std::string cam_problem;
};

Rect blob_quadrant(std::size_t label, std::size_t classes, std::size_t h, std::size_t w) {
  const auto [cy, cx] = class_blob_centre(label, classes);
  return Rect{cx < 0.5 ? 0 : w / 2, cy < 0.5 ? 0 : h / 2, w / 2, h / 2};
}

// Joint and image-only LOPO on the seed-7 dataset; Grad-CAM of every correct held-out joint prediction.
SynthRun synth_lopo(const Dataset& data, std::size_t jobs) {
  SynthRun run;
  const auto model_cfg = ModelConfig::desk();
  TrainConfig train_cfg;
  train_cfg.seed = 7;

  LopoOptions opt;
  opt.jobs = jobs;
  opt.log = [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); };
  opt.on_fold = [&](const FoldPlan& plan, const Model& model, const FoldReport&) {
    for (auto i : plan.test) {
      const auto& s = data.samples[i];
      if (predict_sample(model, s).label != s.label) continue;
      const auto map = grad_cam(model, s.spectrogram, s.frames, s.label);
      const auto& v = map.values.storage();
      const float peak = *std::max_element(v.begin(), v.end());
      if (*std::min_element(v.begin(), v.end()) < 0 || (peak != 1.0f && peak != 0.0f)) {
        run.cam_maps_valid = false;
        run.cam_problem = s.id;
      }
      const double mass =
          mass_fraction(map, blob_quadrant(s.label, model.config.num_classes, s.frames.dim(1), s.frames.dim(2)));
      ++run.cam_samples;
      run.cam_hits += mass >= 0.5;
    }
  };
  auto t0 = std::chrono::steady_clock::now();
  run.joint = lopo_run(data, model_cfg, train_cfg, opt);
  run.joint_seconds = seconds_since(t0);

  opt.on_fold = nullptr;
  train_cfg.variant = Variant::image_only;
  t0 = std::chrono::steady_clock::now();
  run.image_only = lopo_run(data, model_cfg, train_cfg, opt);
  run.image_seconds = seconds_since(t0);
  return run;
}

// 8. Joint accuracy and its margin over image-only.
Outcome synthetic_learning(const SynthRun& run, std::size_t jobs) {
  Outcome o;
  const double joint_acc = run.joint.metrics.accuracy, image_acc = run.image_only.metrics.accuracy;
  const double secs = run.joint_seconds + run.image_seconds;
  o.require(run.joint.predictions.size() == run.data.samples.size(), "joint run skipped samples");
  o.require(joint_acc >= 0.85, "joint accuracy " + fmt("%.3f", joint_acc));
  o.require(image_acc <= joint_acc - 0.15, "image-only accuracy " + fmt("%.3f", image_acc) + " vs joint " +
                                               fmt("%.3f", joint_acc));
  o.require(secs <= 1800, "runtime " + fmt("%.0f s", secs));
  std::string folds;
  for (const auto& f : run.joint.folds)
    folds += " " + f.patient + ":" + (f.skipped ? std::string("skip") : std::to_string(f.correct) + "/" +
                                                                            std::to_string(f.test_size));
  if (o.pass)
    o.detail = "joint " + fmt("%.3f", joint_acc) + ", image-only " + fmt("%.3f", image_acc) + ", " +
               std::to_string(run.data.samples.size()) + " samples, " + fmt("%.0f s", secs) + " on " +
               std::to_string(jobs) + " core(s);" + folds;
  return o;
}

// 9. Variant batch contracts over complete training runs.
Outcome variant_contracts(const Dataset& data) {
  Outcome o;
  std::vector<std::size_t> all(data.samples.size());
  std::iota(all.begin(), all.end(), 0);
  std::size_t pairs = 0, swapped = 0, reduced = 0;

  TrainConfig cfg;
  cfg.seed = 7;
  cfg.variant = Variant::random_pairs;
  TrainHooks hooks;
  hooks.on_batch = [&](const Batch& batch) {
    for (const auto& it : batch) {
      ++pairs;
      swapped += it.voice != it.image;
      o.require(data.samples[it.voice].label == it.label && data.samples[it.image].label == it.label,
                "random pair with mismatched labels");
    }
  };
  const auto rp = train(data, all, ModelConfig::desk(), cfg, hooks);
  o.require(pairs == cfg.epochs * data.samples.size(), "random-pairs run emitted " + std::to_string(pairs) + " pairs");
  o.require(swapped > 0, "no pair mixed two samples");

  cfg.variant = Variant::reduced_frames;
  hooks.on_batch = [&](const Batch& batch) {
    for (const auto& it : batch) {
      ++reduced;
      std::set<std::size_t> distinct(it.frames.begin(), it.frames.end());
      o.require(it.frames.size() == 3 && distinct.size() == 3, "reduced input without 3 distinct frames");
      o.require(!it.frames.empty() && *distinct.rbegin() < data.samples[it.image].frames.dim(0), "frame out of range");
    }
  };
  const auto rf = train(data, all, ModelConfig::desk(), cfg, hooks);
  o.require(reduced == cfg.epochs * data.samples.size(), "reduced-frames run emitted " + std::to_string(reduced));
  o.require(rf.model.config.image_frames == 3, "reduced model sees " + std::to_string(rf.model.config.image_frames));
  if (o.pass)
    o.detail = std::to_string(pairs) + " random pairs (" + std::to_string(swapped) + " mixed), " +
               std::to_string(reduced) + " reduced inputs over two " + std::to_string(cfg.epochs) + "-epoch runs";
  (void)rp;
  return o;
}

// 10. Bootstrap degenerate case and reproducibility.
Outcome bootstrap() {
  Outcome o;
  std::vector<Prediction> uniform;
  for (int p = 0; p < 12; ++p)
    for (int i = 0; i < 5 * (1 + p % 3); ++i)
      uniform.push_back(oracle::pred(0, i % 5 == 4 ? 1 : 0, 2, "pt" + std::to_string(p)));
  const auto u = bootstrap_accuracy(uniform, 100, 10, 3);
  o.require(u.std == 0.0, "uniform std " + fmt("%.3g", u.std));

  Rng rng(4);
  std::vector<Prediction> mixed;
  for (int p = 0; p < 12; ++p)
    for (int i = 0; i < 8; ++i)
      mixed.push_back(oracle::pred(0, rng.uniform() < 0.7 ? 0 : 1, 2, "pt" + std::to_string(p)));
  const auto a = bootstrap_accuracy(mixed, 100, 10, 9), b = bootstrap_accuracy(mixed, 100, 10, 9);
  o.require(to_json(a).dump() == to_json(b).dump(), "repeat differs");
  o.require(a.accuracies.size() == 100, "subset count");
  if (o.pass) o.detail = "uniform std 0, repeat identical (mean " + fmt("%.4f", a.mean) + ")";
  return o;
}

// 11. Grad-CAM maps and where their mass falls.
Outcome gradcam(const SynthRun& run) {
  Outcome o;
  o.require(run.cam_maps_valid, "map for " + run.cam_problem + " is not non-negative and max-normalized");
  o.require(run.cam_samples > 0, "no correct predictions");
  const double share = run.cam_samples ? double(run.cam_hits) / double(run.cam_samples) : 0.0;
  o.require(share >= 0.7, std::to_string(run.cam_hits) + "/" + std::to_string(run.cam_samples) +
                              " correct predictions have >= 50% mass in the cue quadrant");
  if (o.pass)
    o.detail = std::to_string(run.cam_hits) + "/" + std::to_string(run.cam_samples) + " (" + fmt("%.2f", share) +
               ") at " + kDefaultCamLayer;
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 12. Repeated runs with one seed give identical bytes.
Outcome determinism(const Dataset& full) {
  Outcome o;
  SynthConfig sc;
  sc.patients = 4;
  sc.seed = 11;
  const auto a = scratch::dir("accept_synth_a"), b = scratch::dir("accept_synth_b");
  synth_generate(sc, a);
  synth_generate(sc, b);
  for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    o.require(slurp(e.path()) == slurp(b / std::filesystem::relative(e.path(), a)), "synth file differs");
  }

  Dataset d;
  d.class_names = full.class_names;
  const auto patients = full.patients();
  for (const auto& s : full.samples)
    if (std::find(patients.begin(), patients.begin() + 4, s.patient_id) != patients.begin() + 4) d.samples.push_back(s);

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 5;
  std::vector<std::size_t> all(d.samples.size());
  std::iota(all.begin(), all.end(), 0);
  const auto m1 = train(d, all, ModelConfig::desk(), cfg), m2 = train(d, all, ModelConfig::desk(), cfg);
  o.require(serialize_checkpoint(m1.model) == serialize_checkpoint(m2.model), "checkpoints differ");
  o.require(format_loss_log(m1.log) == format_loss_log(m2.log), "loss logs differ");

  LopoOptions serial, parallel;
  parallel.jobs = 2;
  const auto r1 = lopo_run(d, ModelConfig::desk(), cfg, serial);
  const auto r2 = lopo_run(d, ModelConfig::desk(), cfg, parallel);
  o.require(format_predictions(r1.predictions) == format_predictions(r2.predictions), "predictions differ");
  o.require(to_json(r1.confusion, r1.metrics).dump() == to_json(r2.confusion, r2.metrics).dump(), "reports differ");
  // Folds whose training split lacks a class are skipped, so size subsets by the patients predicted.
  std::set<std::string> predicted;
  for (const auto& p : r1.predictions) predicted.insert(p.patient_id);
  o.require(predicted.size() >= 2, "fewer than 2 patients predicted");
  if (o.pass) {
    const std::size_t size = predicted.size() - 1;
    o.require(to_json(bootstrap_accuracy(r1.predictions, 20, size, 1)).dump() ==
                  to_json(bootstrap_accuracy(r2.predictions, 20, size, 1)).dump(),
              "bootstrap reports differ");
  }
  if (o.pass)
    o.detail = "synth files, checkpoint, loss log, " + std::to_string(r1.predictions.size()) +
               " predictions and reports identical (1 and 2 jobs)";
  return o;
}

}  // namespace

int main() {
  set_single_threaded_blas();
  const std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  int failures = 0;
  auto report = [&](int n, const char* name, auto&& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    std::printf("criterion %2d %-24s %s  %s\n", n, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };

  report(1, "gradients", [&] { return gradients(); });
  report(2, "joint oracle", [&] { return joint_oracle(); });
  report(3, "spectrogram shape", [&] { return spectrogram_shapes(); });
  report(4, "class weights", [&] { return class_weights(); });
  report(5, "shape chain", [&] { return shape_chain(); });
  report(6, "metrics oracle", [&] { return metrics_oracle(); });
  report(7, "lopo partition", [&] { return lopo_partition(); });

  const auto dir = scratch::dir("accept_synth7");
  synth_generate(SynthConfig{}, dir);
  const auto data = load_dataset(dir / "manifest.json", ModelConfig::desk());

  auto run = synth_lopo(data, jobs);
  run.data = data;
  report(8, "synthetic learning", [&] { return synthetic_learning(run, jobs); });
  report(9, "variant contracts", [&] { return variant_contracts(data); });
  report(10, "bootstrap", [&] { return bootstrap(); });
  report(11, "grad-cam", [&] { return gradcam(run); });
  report(12, "determinism", [&] { return determinism(data); });
  std::printf("%d of 12 criteria failed\n", failures);
  return failures;
}
