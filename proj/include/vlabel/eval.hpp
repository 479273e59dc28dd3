#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlabel/data.hpp"
#include "vlabel/train.hpp"

namespace vlabel {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Prediction {
  std::string sample_id;
  std::string patient_id;
  std::size_t true_label = 0;
  std::size_t predicted = 0;
  std::vector<double> probabilities;
};

/// counts[t][p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;

  std::size_t classes() const { return counts.size(); }
  std::size_t total() const;
  std::size_t support(std::size_t t) const;
  /// Row-normalized view; rows without support are nullopt.
  std::vector<std::optional<std::vector<double>>> normalized() const;
};

struct MetricsReport {
  double accuracy = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  std::vector<std::size_t> tp, fp, fn;
  std::vector<double> precision, recall, f1;
  /// Classes whose precision, recall or F1 had a zero denominator (counted as 0).
  std::vector<std::size_t> undefined_precision, undefined_recall, undefined_f1;
  std::size_t m = 0;  // predictions
  std::size_t n = 0;  // classes
};

ConfusionMatrix confusion(const std::vector<Prediction>& predictions, std::size_t num_classes);
MetricsReport metrics(const ConfusionMatrix& cm);

struct FoldPlan {
  std::string patient;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> missing_classes;  // absent from the training split
};

/// One fold per patient, in order of first appearance.
std::vector<FoldPlan> lopo_plan(const Dataset& data);

struct FoldReport {
  std::string patient;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  bool skipped = false;
  std::string reason;
  std::size_t correct = 0;
  double final_loss = 0;
  double seconds = 0;
};

struct LopoOptions {
  std::size_t jobs = 1;
  /// Called once per trained fold with its model; may run on worker threads but never concurrently.
  std::function<void(const FoldPlan&, const Model&, const FoldReport&)> on_fold;
  std::function<void(const std::string&)> log;
};

struct LopoResult {
  std::vector<Prediction> predictions;  // fixed patient order
  std::vector<FoldReport> folds;
  ConfusionMatrix confusion;
  MetricsReport metrics;
};

/// Trains one model per held-out patient and pools the held-out predictions.
/// Folds whose training split lacks a class are skipped and reported.
LopoResult lopo_run(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                    const LopoOptions& options = {});

/// Seed for one fold, derived from the master seed and the patient id.
std::uint64_t fold_seed(std::uint64_t master, const std::string& patient);

struct BootstrapResult {
  double mean = 0;
  double std = 0;  // population standard deviation
  std::vector<double> accuracies;
  std::vector<std::vector<std::string>> subsets;
};

/// Each subset draws subset_size distinct patients and pools their predictions.
BootstrapResult bootstrap_accuracy(const std::vector<Prediction>& predictions, std::size_t subsets = 100,
                                   std::size_t subset_size = 10, std::uint64_t seed = 1);

std::string format_predictions(const std::vector<Prediction>& predictions);
std::vector<Prediction> parse_predictions(const std::string& text);
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

/// Number of classes named by a predictions list (length of the probability vectors).
std::size_t prediction_classes(const std::vector<Prediction>& predictions);

nlohmann::json to_json(const ConfusionMatrix& cm, const MetricsReport& report,
                       const std::vector<std::string>& class_names = {});
nlohmann::json to_json(const BootstrapResult& b);
nlohmann::json to_json(const std::vector<FoldReport>& folds);

}  // namespace vlabel
