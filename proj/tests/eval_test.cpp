#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "metric_oracles.hpp"
#include "scratch.hpp"
#include "train_fixtures.hpp"
#include "vlabel/eval.hpp"

using namespace vlabel;

using oracle::pred;
using oracle::brute_force;
using oracle::random_predictions;

namespace {

std::vector<Prediction> from_counts(const std::vector<std::vector<std::size_t>>& counts) {
  std::vector<Prediction> out;
  for (std::size_t t = 0; t < counts.size(); ++t)
    for (std::size_t p = 0; p < counts.size(); ++p)
      for (std::size_t i = 0; i < counts[t][p]; ++i) out.push_back(pred(t, p, counts.size()));
  return out;
}

}  // namespace

TEST_CASE("two class hand example") {
  auto cm = confusion(from_counts({{1, 1}, {0, 2}}), 2);
  auto r = metrics(cm);
  CHECK(r.accuracy == doctest::Approx(0.75));
  CHECK(r.precision[0] == doctest::Approx(1.0));
  CHECK(r.precision[1] == doctest::Approx(2.0 / 3));
  CHECK(r.recall[0] == doctest::Approx(0.5));
  CHECK(r.recall[1] == doctest::Approx(1.0));
  CHECK(r.macro_precision == doctest::Approx(5.0 / 6));
  CHECK(r.macro_recall == doctest::Approx(0.75));
  CHECK(r.m == 4);
  CHECK(r.n == 2);
}

TEST_CASE("perfect and degenerate matrices") {
  auto r = metrics(confusion(from_counts({{3, 0, 0}, {0, 2, 0}, {0, 0, 5}}), 3));
  CHECK(r.accuracy == 1.0);
  CHECK(r.macro_precision == 1.0);
  CHECK(r.macro_recall == 1.0);
  CHECK(r.macro_f1 == 1.0);
  auto norm = confusion(from_counts({{3, 0, 0}, {0, 2, 0}, {0, 0, 5}}), 3).normalized();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK((*norm[i])[j] == (i == j ? 1.0 : 0.0));

  auto single = confusion({pred(1, 0, 2)}, 2);
  auto sn = single.normalized();
  CHECK_FALSE(sn[0].has_value());
  CHECK((*sn[1])[0] == 1.0);
  auto sr = metrics(single);
  CHECK(sr.accuracy == 0.0);
  CHECK(sr.undefined_recall == std::vector<std::size_t>{0});
  CHECK(sr.undefined_precision == std::vector<std::size_t>{1});
  CHECK(sr.undefined_f1 == std::vector<std::size_t>{0, 1});

  CHECK_THROWS_AS(confusion({}, 3), EvalError);
  CHECK_THROWS_AS(confusion({pred(3, 0, 3)}, 3), EvalError);
}

TEST_CASE("portal vein row") {
  std::vector<std::vector<std::size_t>> counts(5, std::vector<std::size_t>(5, 0));
  counts[1][1] = 22;
  counts[1][2] = 2;
  counts[0][0] = 16;
  auto norm = confusion(from_counts(counts), 5).normalized();
  const auto& row = *norm[1];
  CHECK(row[0] == 0.0);
  CHECK(std::round(row[1] * 100) / 100 == 0.92);
  CHECK(std::round(row[2] * 100) / 100 == 0.08);
  CHECK(row[3] == 0.0);
  CHECK(row[4] == 0.0);
  auto r = metrics(confusion(from_counts(counts), 5));
  CHECK(r.m == 40);
  CHECK(r.n == 5);
}

TEST_CASE("metrics match brute force") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.below(5);
    const auto preds = random_predictions(rng, k);
    const auto cm = confusion(preds, k);
    const auto r = metrics(cm);
    const auto b = brute_force(preds, k);
    CHECK(cm.total() == preds.size());
    CHECK(r.accuracy == doctest::Approx(b.accuracy).epsilon(1e-12));
    CHECK(r.macro_precision == doctest::Approx(b.macro_p).epsilon(1e-12));
    CHECK(r.macro_recall == doctest::Approx(b.macro_r).epsilon(1e-12));
    CHECK(r.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-12));
    std::size_t tp = 0;
    for (std::size_t c = 0; c < k; ++c) {
      tp += r.tp[c];
      CHECK(r.precision[c] == doctest::Approx(b.p[c]).epsilon(1e-12));
      CHECK(r.recall[c] == doctest::Approx(b.r[c]).epsilon(1e-12));
      CHECK(r.f1[c] == doctest::Approx(b.f1[c]).epsilon(1e-12));
      if (r.precision[c] + r.recall[c] > 0)
        CHECK(r.f1[c] == doctest::Approx(2 * r.precision[c] * r.recall[c] / (r.precision[c] + r.recall[c])));
      std::size_t counted = 0;
      for (const auto& x : preds) counted += x.true_label == c && x.predicted == c;
      CHECK(cm.counts[c][c] == counted);
    }
    CHECK(r.accuracy == doctest::Approx(double(tp) / double(preds.size())));
    for (const auto& row : cm.normalized()) {
      if (!row) continue;
      CHECK(std::abs(std::accumulate(row->begin(), row->end(), 0.0) - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("metrics under permutation and relabeling") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(4);
    auto preds = random_predictions(rng, k);
    const auto base = metrics(confusion(preds, k));

    auto shuffled = preds;
    rng.shuffle(shuffled);
    CHECK(metrics(confusion(shuffled, k)).accuracy == base.accuracy);

    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    auto relabeled = preds;
    for (auto& p : relabeled) {
      p.true_label = perm[p.true_label];
      p.predicted = perm[p.predicted];
    }
    const auto r = metrics(confusion(relabeled, k));
    CHECK(r.accuracy == base.accuracy);
    CHECK(r.macro_precision == doctest::Approx(base.macro_precision).epsilon(1e-12));
    CHECK(r.macro_recall == doctest::Approx(base.macro_recall).epsilon(1e-12));
    CHECK(r.macro_f1 == doctest::Approx(base.macro_f1).epsilon(1e-12));
    for (std::size_t c = 0; c < k; ++c) {
      CHECK(r.precision[perm[c]] == base.precision[c]);
      CHECK(r.recall[perm[c]] == base.recall[c]);
      CHECK(r.f1[perm[c]] == base.f1[c]);
    }
  }
}

TEST_CASE("bootstrap with uniform patient accuracy") {
  std::vector<Prediction> preds;
  for (int p = 0; p < 12; ++p)
    for (int i = 0; i < 5 * (1 + p % 3); ++i)
      preds.push_back(pred(0, i % 5 == 4 ? 1 : 0, 2, "pt" + std::to_string(p)));
  auto b = bootstrap_accuracy(preds, 100, 10, 3);
  CHECK(b.mean == 0.8);
  CHECK(b.std == 0.0);
  CHECK(b.accuracies.size() == 100);
  for (const auto& s : b.subsets) CHECK(std::set<std::string>(s.begin(), s.end()).size() == 10);
}

TEST_CASE("bootstrap is reproducible") {
  Rng rng(4);
  std::vector<Prediction> preds;
  for (int p = 0; p < 12; ++p)
    for (int i = 0; i < 8; ++i) preds.push_back(pred(0, rng.uniform() < 0.7 ? 0 : 1, 2, "pt" + std::to_string(p)));
  auto a = bootstrap_accuracy(preds, 100, 10, 9);
  auto b = bootstrap_accuracy(preds, 100, 10, 9);
  auto c = bootstrap_accuracy(preds, 100, 10, 10);
  CHECK(a.accuracies == b.accuracies);
  CHECK(a.subsets == b.subsets);
  CHECK(a.mean == b.mean);
  CHECK(a.std == b.std);
  CHECK(a.subsets != c.subsets);
  CHECK(a.std > 0);
  CHECK_THROWS_AS(bootstrap_accuracy(preds, 100, 13, 1), EvalError);
}

TEST_CASE("lopo plan partitions by patient") {
  // Clinical-shaped dataset: 12 patients, 143 samples; tensors are not needed for planning.
  Dataset d;
  d.class_names = clinical_class_names();
  const auto& counts = clinical_count_matrix();
  for (std::size_t p = 0; p < counts.size(); ++p)
    for (std::size_t k = 0; k < 5; ++k)
      for (std::size_t i = 0; i < counts[p][k]; ++i)
        d.samples.push_back({"s" + std::to_string(d.samples.size()), "patient" + std::to_string(p + 1), k, {}, {}});
  REQUIRE(d.samples.size() == 143);
  auto plans = lopo_plan(d);
  CHECK(plans.size() == 12);
  std::size_t tested = 0;
  for (const auto& plan : plans) {
    for (auto i : plan.train) CHECK(d.samples[i].patient_id != plan.patient);
    for (auto i : plan.test) CHECK(d.samples[i].patient_id == plan.patient);
    CHECK(plan.train.size() + plan.test.size() == 143);
    CHECK(plan.missing_classes.empty());
    tested += plan.test.size();
  }
  CHECK(tested == 143);
}

TEST_CASE("lopo run pools every fold") {
  auto d = fixtures::tiny_dataset(4, 4, 31);
  TrainConfig cfg;
  cfg.epochs = 2;
  std::set<std::string> seen;
  LopoOptions opt;
  opt.on_fold = [&](const FoldPlan& plan, const Model& model, const FoldReport& rep) {
    for (auto i : plan.train) CHECK(d.samples[i].patient_id != plan.patient);
    CHECK(model.config.kind == ModelKind::joint);
    CHECK(rep.test_size == plan.test.size());
    seen.insert(plan.patient);
  };
  auto r = lopo_run(d, fixtures::tiny_config(), cfg, opt);
  CHECK(seen.size() == 4);
  CHECK(r.predictions.size() == d.samples.size());
  CHECK(r.metrics.m == d.samples.size());
  for (std::size_t i = 1; i < r.predictions.size(); ++i)
    CHECK(r.predictions[i - 1].patient_id <= r.predictions[i].patient_id);
  for (const auto& p : r.predictions) {
    CHECK(std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p.predicted == static_cast<std::size_t>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                                  p.probabilities.begin()));
  }

  opt.jobs = 3;
  opt.on_fold = nullptr;
  auto parallel = lopo_run(d, fixtures::tiny_config(), cfg, opt);
  REQUIRE(parallel.predictions.size() == r.predictions.size());
  for (std::size_t i = 0; i < r.predictions.size(); ++i) {
    CHECK(parallel.predictions[i].sample_id == r.predictions[i].sample_id);
    CHECK(parallel.predictions[i].probabilities == r.predictions[i].probabilities);
  }
}

TEST_CASE("lopo skips folds that lose a class") {
  auto d = fixtures::tiny_dataset(4, 4, 32);
  for (auto& s : d.samples)
    if (s.label == 2) s.patient_id = "p0";
  TrainConfig cfg;
  cfg.epochs = 1;
  auto r = lopo_run(d, fixtures::tiny_config(), cfg);
  std::size_t skipped = 0;
  for (const auto& f : r.folds)
    if (f.skipped) {
      ++skipped;
      CHECK(f.patient == "p0");
      CHECK(f.reason.find('2') != std::string::npos);
    }
  CHECK(skipped == 1);
  for (const auto& p : r.predictions) CHECK(p.patient_id != "p0");
}

TEST_CASE("fold seeds depend on patient") {
  CHECK(fold_seed(1, "p01") == fold_seed(1, "p01"));
  CHECK(fold_seed(1, "p01") != fold_seed(1, "p02"));
  CHECK(fold_seed(1, "p01") != fold_seed(2, "p01"));
}

TEST_CASE("predictions text round trip") {
  Rng rng(5);
  std::vector<Prediction> preds;
  for (int i = 0; i < 30; ++i) {
    Prediction p{"s" + std::to_string(i), "p" + std::to_string(i % 4), rng.below(3), 0, {}};
    double a = rng.uniform(), b = rng.uniform() * (1 - a);
    p.probabilities = {a, b, 1 - a - b};
    p.predicted = static_cast<std::size_t>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                           p.probabilities.begin());
    preds.push_back(p);
  }
  const auto dir = scratch::dir("preds");
  write_predictions(dir / "p.txt", preds);
  auto back = read_predictions(dir / "p.txt");
  REQUIRE(back.size() == preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(back[i].sample_id == preds[i].sample_id);
    CHECK(back[i].patient_id == preds[i].patient_id);
    CHECK(back[i].true_label == preds[i].true_label);
    CHECK(back[i].predicted == preds[i].predicted);
    CHECK(back[i].probabilities == preds[i].probabilities);
  }
  CHECK(format_predictions(back) == format_predictions(preds));
  CHECK(prediction_classes(back) == 3);

  auto spaced = preds;
  spaced[0].sample_id = "a b";
  CHECK_THROWS_AS(format_predictions(spaced), EvalError);
  CHECK_THROWS_AS(parse_predictions("s p 0 1 0.5 x\n"), EvalError);
  CHECK_THROWS_AS(parse_predictions("s p 0 1 0.5 0.5\nt p 0 1 1\n"), EvalError);
}

TEST_CASE("metrics json") {
  auto cm = confusion(from_counts({{1, 1}, {0, 0}}), 2);
  auto j = to_json(cm, metrics(cm), {"a", "b"});
  CHECK(j["accuracy"] == 0.5);
  CHECK(j["confusion"][0][1] == 1);
  CHECK(j["confusion_normalized"][1].is_null());
  CHECK(j["class_names"][1] == "b");
}
