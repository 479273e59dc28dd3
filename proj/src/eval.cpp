#include "vlabel/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "vlabel/io.hpp"
#include "vlabel/random.hpp"

namespace vlabel {

std::size_t ConfusionMatrix::total() const {
  std::size_t s = 0;
  for (const auto& row : counts)
    for (auto c : row) s += c;
  return s;
}

std::size_t ConfusionMatrix::support(std::size_t t) const {
  std::size_t s = 0;
  for (auto c : counts.at(t)) s += c;
  return s;
}

std::vector<std::optional<std::vector<double>>> ConfusionMatrix::normalized() const {
  std::vector<std::optional<std::vector<double>>> out(classes());
  for (std::size_t t = 0; t < classes(); ++t) {
    const std::size_t s = support(t);
    if (s == 0) continue;
    std::vector<double> row(classes());
    for (std::size_t p = 0; p < classes(); ++p) row[p] = static_cast<double>(counts[t][p]) / static_cast<double>(s);
    out[t] = std::move(row);
  }
  return out;
}

ConfusionMatrix confusion(const std::vector<Prediction>& predictions, std::size_t num_classes) {
  if (predictions.empty()) throw EvalError("confusion matrix needs at least one prediction");
  if (num_classes == 0) throw EvalError("confusion matrix needs at least one class");
  ConfusionMatrix cm;
  cm.counts.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (const auto& p : predictions) {
    if (p.true_label >= num_classes || p.predicted >= num_classes) {
      throw EvalError("prediction for '" + p.sample_id + "' has a label outside [0, " + std::to_string(num_classes) +
                      ")");
    }
    ++cm.counts[p.true_label][p.predicted];
  }
  return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  if (k == 0 || cm.total() == 0) throw EvalError("metrics need a non-empty confusion matrix");
  MetricsReport r;
  r.n = k;
  r.m = cm.total();
  r.tp.assign(k, 0);
  r.fp.assign(k, 0);
  r.fn.assign(k, 0);
  r.precision.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  r.f1.assign(k, 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < k; ++i) {
    r.tp[i] = cm.counts[i][i];
    correct += r.tp[i];
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      r.fp[i] += cm.counts[j][i];
      r.fn[i] += cm.counts[i][j];
    }
    if (r.tp[i] + r.fp[i] == 0) {
      r.undefined_precision.push_back(i);
    } else {
      r.precision[i] = static_cast<double>(r.tp[i]) / static_cast<double>(r.tp[i] + r.fp[i]);
    }
    if (r.tp[i] + r.fn[i] == 0) {
      r.undefined_recall.push_back(i);
    } else {
      r.recall[i] = static_cast<double>(r.tp[i]) / static_cast<double>(r.tp[i] + r.fn[i]);
    }
    if (r.precision[i] + r.recall[i] == 0.0) {
      r.undefined_f1.push_back(i);
    } else {
      r.f1[i] = 2 * r.precision[i] * r.recall[i] / (r.precision[i] + r.recall[i]);
    }
    r.macro_precision += r.precision[i];
    r.macro_recall += r.recall[i];
    r.macro_f1 += r.f1[i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.m);
  r.macro_precision /= static_cast<double>(k);
  r.macro_recall /= static_cast<double>(k);
  r.macro_f1 /= static_cast<double>(k);
  return r;
}

std::vector<FoldPlan> lopo_plan(const Dataset& data) {
  const auto patients = data.patients();
  if (patients.size() < 2) throw EvalError("leave-one-patient-out needs at least 2 patients");
  std::vector<FoldPlan> plans;
  for (const auto& p : patients) {
    FoldPlan plan{p, data.indices_except(p), data.indices_of(p), {}};
    const auto counts = data.class_counts(plan.train);
    for (std::size_t k = 0; k < counts.size(); ++k)
      if (counts[k] == 0) plan.missing_classes.push_back(k);
    plans.push_back(std::move(plan));
  }
  return plans;
}

std::uint64_t fold_seed(std::uint64_t master, const std::string& patient) {
  return derive_seed(master, "fold:" + patient);
}

LopoResult lopo_run(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                    const LopoOptions& options) {
  const auto plans = lopo_plan(data);
  std::vector<FoldReport> reports(plans.size());
  std::vector<std::vector<Prediction>> fold_predictions(plans.size());
  std::mutex callback_mutex;
  auto log = [&](const std::string& line) {
    if (!options.log) return;
    std::lock_guard<std::mutex> lock(callback_mutex);
    options.log(line);
  };

  auto run_fold = [&](std::size_t f) {
    const auto& plan = plans[f];
    FoldReport& rep = reports[f];
    rep.patient = plan.patient;
    rep.train_size = plan.train.size();
    rep.test_size = plan.test.size();
    if (!plan.missing_classes.empty()) {
      rep.skipped = true;
      rep.reason = "training split lacks class";
      for (auto k : plan.missing_classes) rep.reason += " " + std::to_string(k);
      log("fold " + plan.patient + ": skipped, " + rep.reason);
      return;
    }
    const auto start = std::chrono::steady_clock::now();
    TrainConfig cfg = train_cfg;
    cfg.seed = fold_seed(train_cfg.seed, plan.patient);
    TrainResult trained = train(data, plan.train, model_cfg, cfg);
    rep.final_loss = trained.log.empty() ? 0.0 : trained.log.back().mean_loss;
    for (auto i : plan.test) {
      const auto& s = data.samples[i];
      const auto pr = predict_sample(trained.model, s);
      Prediction p{s.id, s.patient_id, s.label, pr.label, {}};
      p.probabilities.assign(pr.probabilities.begin(), pr.probabilities.end());
      rep.correct += p.predicted == p.true_label;
      fold_predictions[f].push_back(std::move(p));
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[160];
    std::snprintf(buf, sizeof buf, "fold %s: %zu/%zu correct, final loss %.4f, %.1f s", plan.patient.c_str(),
                  rep.correct, rep.test_size, rep.final_loss, rep.seconds);
    log(buf);
    if (options.on_fold) {
      std::lock_guard<std::mutex> lock(callback_mutex);
      options.on_fold(plan, trained.model, rep);
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, plans.size()));
  if (jobs == 1) {
    for (std::size_t f = 0; f < plans.size(); ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (std::size_t f = next++; f < plans.size(); f = next++) {
          try {
            run_fold(f);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& w : workers) w.join();
    if (failure) std::rethrow_exception(failure);
  }

  LopoResult result;
  result.folds = std::move(reports);
  for (auto& fp : fold_predictions)
    for (auto& p : fp) result.predictions.push_back(std::move(p));
  if (result.predictions.empty()) throw EvalError("every fold was skipped; no predictions to score");
  result.confusion = confusion(result.predictions, data.num_classes());
  result.metrics = metrics(result.confusion);
  return result;
}

BootstrapResult bootstrap_accuracy(const std::vector<Prediction>& predictions, std::size_t subsets,
                                   std::size_t subset_size, std::uint64_t seed) {
  std::vector<std::string> patients;
  for (const auto& p : predictions)
    if (std::find(patients.begin(), patients.end(), p.patient_id) == patients.end()) patients.push_back(p.patient_id);
  if (subset_size == 0 || subsets == 0) throw EvalError("bootstrap needs positive subset count and size");
  if (patients.size() < subset_size) {
    throw EvalError("bootstrap needs at least " + std::to_string(subset_size) + " patients, got " +
                    std::to_string(patients.size()));
  }
  std::vector<std::size_t> correct(patients.size(), 0), total(patients.size(), 0);
  for (const auto& p : predictions) {
    const auto idx = static_cast<std::size_t>(std::find(patients.begin(), patients.end(), p.patient_id) - patients.begin());
    ++total[idx];
    correct[idx] += p.predicted == p.true_label;
  }
  Rng rng(derive_seed(seed, "bootstrap"));
  BootstrapResult r;
  for (std::size_t s = 0; s < subsets; ++s) {
    const auto pick = rng.sample_without_replacement(patients.size(), subset_size);
    std::size_t c = 0, t = 0;
    std::vector<std::string> names;
    for (auto i : pick) {
      c += correct[i];
      t += total[i];
      names.push_back(patients[i]);
    }
    r.accuracies.push_back(static_cast<double>(c) / static_cast<double>(t));
    r.subsets.push_back(std::move(names));
  }
  // Shifted by the first value so identical accuracies give exactly zero spread.
  const double shift = r.accuracies.front();
  double d_mean = 0;
  for (double a : r.accuracies) d_mean += a - shift;
  d_mean /= static_cast<double>(subsets);
  double var = 0;
  for (double a : r.accuracies) var += (a - shift - d_mean) * (a - shift - d_mean);
  r.mean = shift + d_mean;
  r.std = std::sqrt(var / static_cast<double>(subsets));
  return r;
}

std::string format_predictions(const std::vector<Prediction>& predictions) {
  std::ostringstream os;
  os << "# sample_id patient_id true_label predicted probabilities...\n";
  char buf[64];
  for (const auto& p : predictions) {
    for (const auto* id : {&p.sample_id, &p.patient_id}) {
      if (id->empty() || id->find_first_of(" \t\r\n") != std::string::npos) {
        throw EvalError("identifier '" + *id + "' cannot be written: empty or contains whitespace");
      }
    }
    os << p.sample_id << ' ' << p.patient_id << ' ' << p.true_label << ' ' << p.predicted;
    for (double v : p.probabilities) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::vector<Prediction> parse_predictions(const std::string& text) {
  std::vector<Prediction> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0, width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    Prediction p;
    long long t = -1, pred = -1;
    if (!(fields >> p.sample_id >> p.patient_id >> t >> pred) || t < 0 || pred < 0) {
      throw EvalError("predictions line " + std::to_string(lineno) + ": expected id, patient, true and predicted labels");
    }
    p.true_label = static_cast<std::size_t>(t);
    p.predicted = static_cast<std::size_t>(pred);
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        p.probabilities.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw EvalError("predictions line " + std::to_string(lineno) + ": bad probability '" + tok + "'");
      }
    }
    if (p.probabilities.empty()) throw EvalError("predictions line " + std::to_string(lineno) + ": no probabilities");
    if (width == 0) width = p.probabilities.size();
    if (p.probabilities.size() != width) {
      throw EvalError("predictions line " + std::to_string(lineno) + ": expected " + std::to_string(width) +
                      " probabilities");
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  write_file_atomic(path, format_predictions(predictions));
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  try {
    return parse_predictions(read_file(path));
  } catch (const EvalError& e) {
    throw EvalError(path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw EvalError(e.what());
  }
}

std::size_t prediction_classes(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) throw EvalError("no predictions");
  return predictions.front().probabilities.size();
}

nlohmann::json to_json(const ConfusionMatrix& cm, const MetricsReport& r, const std::vector<std::string>& class_names) {
  nlohmann::json normalized = nlohmann::json::array();
  for (const auto& row : cm.normalized()) normalized.push_back(row ? nlohmann::json(*row) : nlohmann::json(nullptr));
  nlohmann::json j{{"accuracy", r.accuracy},
                   {"macro_precision", r.macro_precision},
                   {"macro_recall", r.macro_recall},
                   {"macro_f1", r.macro_f1},
                   {"m", r.m},
                   {"n", r.n},
                   {"per_class",
                    {{"tp", r.tp},
                     {"fp", r.fp},
                     {"fn", r.fn},
                     {"precision", r.precision},
                     {"recall", r.recall},
                     {"f1", r.f1}}},
                   {"undefined",
                    {{"precision", r.undefined_precision}, {"recall", r.undefined_recall}, {"f1", r.undefined_f1}}},
                   {"confusion", cm.counts},
                   {"confusion_normalized", normalized}};
  if (!class_names.empty()) j["class_names"] = class_names;
  return j;
}

nlohmann::json to_json(const BootstrapResult& b) {
  return {{"mean", b.mean}, {"std", b.std}, {"accuracies", b.accuracies}, {"subsets", b.subsets}};
}

nlohmann::json to_json(const std::vector<FoldReport>& folds) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& f : folds) {
    out.push_back({{"patient", f.patient},
                   {"train_size", f.train_size},
                   {"test_size", f.test_size},
                   {"skipped", f.skipped},
                   {"reason", f.reason},
                   {"correct", f.correct},
                   {"final_loss", f.final_loss}});
  }
  return out;
}

}  // namespace vlabel
