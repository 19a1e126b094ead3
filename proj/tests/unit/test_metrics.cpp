#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "mrp/error.hpp"
#include "mrp/metrics.hpp"

using namespace mrp;
using namespace mrp::metrics;

namespace {

// Classes named exactly after the sample features, so with zero prompts each
// sample's image embedding coincides with its own class's text embedding.
struct Aligned {
  encoder::FrozenModel model;
  Tensor x;
  std::vector<ClassId> labels;
  std::vector<ClassId> candidates;
};

Aligned aligned_instance(std::uint64_t seed, std::size_t n = 10) {
  const encoder::Dims dims{6, 4, 2, 5};
  auto w = encoder::EncoderWeights::generate(dims, seed);
  Rng rng = make_stream(seed, "aligned");
  Tensor x = testing::random_tensor(6, n, rng);
  Tensor c = Tensor::zeros(4, n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 6; ++j) c(i, k) += w.concept_projection()(i, j) * x(j, k);
    }
  }
  std::vector<ClassId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return {{std::move(w), encoder::ClassSet(c), encoder::ReferencePrompt::zeros(2), encoder::kDefaultTau},
          std::move(x), ids, ids};
}

double norm2(const std::vector<double>& v) { return std::inner_product(v.begin(), v.end(), v.begin(), 0.0); }

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("accuracy") {
  auto a = aligned_instance(1);
  const auto zero = encoder::PromptSet::zeros(2);
  CHECK(accuracy(a.model, zero, a.x, a.labels, a.candidates) == 100.0);

  std::vector<ClassId> shifted(a.labels.size());
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] = (a.labels[i] + 1) % shifted.size();
  CHECK(accuracy(a.model, zero, a.x, shifted, a.candidates) == 0.0);

  Rng rng = make_stream(2, "p");
  const auto p = encoder::PromptSet::random(2, 1.0, rng);
  const double at_default = accuracy(a.model, p, a.x, shifted, a.candidates);
  for (double tau : {0.01, 1.0, 30.0}) {
    a.model.tau = tau;
    CHECK(accuracy(a.model, p, a.x, shifted, a.candidates) == at_default);
  }

  const std::vector<ClassId> outside{0, 1, 2, 3, 4, 5, 6, 7, 8, 99};
  CHECK_THROWS_AS(accuracy(a.model, zero, a.x, outside, a.candidates), Error);
  CHECK_THROWS_AS(accuracy(a.model, zero, Tensor::zeros(6, 0), std::vector<ClassId>{}, a.candidates), Error);
}

TEST_CASE("harmonic mean") {
  CHECK(std::abs(harmonic_mean(82.51, 73.36) - 77.66) <= 0.01);
  CHECK(std::abs(harmonic_mean(84.39, 76.93) - 80.49) <= 0.01);
  for (double x : {0.5, 33.3, 100.0}) CHECK(harmonic_mean(x, x) == x);
  CHECK(harmonic_mean(40, 90) == harmonic_mean(90, 40));
  CHECK(harmonic_mean(40, 90) < 65.0);
  CHECK(harmonic_mean(40, 90) > 40.0);
  CHECK_THROWS_AS(harmonic_mean(0.0, 50.0), Error);
  CHECK_THROWS_AS(harmonic_mean(50.0, -1.0), Error);
}

TEST_CASE("task overfitting score") {
  struct Row {
    const char* name;
    double base_pr, new_pr, base_ref, new_ref, want;
  };
  const Row rows[] = {
      {"EuroSAT", 92.64, 63.33, 56.48, 64.05, 36.88},    {"DTD", 80.67, 55.31, 53.24, 59.90, 32.02},
      {"Flowers", 96.17, 73.64, 72.08, 77.80, 28.25},    {"Food101", 90.53, 91.66, 90.10, 91.22, -0.01},
      {"Caltech101", 98.28, 93.65, 96.84, 94.00, 1.79}, {"ImageNet", 77.39, 70.04, 72.43, 68.14, 3.06},
  };
  for (const auto& r : rows) {
    INFO(r.name);
    CHECK(std::abs(task_overfitting_score(r.base_pr, r.new_pr, r.base_ref, r.new_ref) - r.want) <= 0.01);
  }
  CHECK(task_overfitting_score(70, 60, 70, 60) == 0.0);
  // Only the base gain is clamped.
  CHECK(task_overfitting_score(50, 50, 60, 60) == 10.0);
  CHECK(task_overfitting_score(70, 50, 60, 60) == 20.0);
}

TEST_CASE("Taylor residual") {
  const auto inst = testing::small_instance(0);
  const auto b = inst.batch.as_batch(inst.candidates);
  const std::vector<double> d{0.5, -0.5, 0.5, 0.5};
  CHECK(taylor_gap(inst.model, inst.theta, d, 0.0, b) == 0.0);

  SUBCASE("halving the step quarters the residual") {
    for (double alpha : {1e-2, 5e-3}) {
      Rng rng = make_stream(1, "directions");
      const auto t = taylor_halving_test(inst.model, inst.theta, b, 20, alpha, rng);
      CHECK(t.ratios.size() == 20);
      CHECK(t.mean_ratio >= 3.5);
      CHECK(t.mean_ratio <= 4.5);
    }
  }
  SUBCASE("linear functions have no residual") {
    const std::vector<double> a{1.5, -2.0, 0.25, 3.0};
    const ScalarFunction f = [&](std::span<const double> x) {
      return 7.0 + std::inner_product(a.begin(), a.end(), x.begin(), 0.0);
    };
    const std::vector<double> x{0.3, 0.1, -4.0, 2.0};
    for (double alpha : {1e-3, 1.0, 100.0}) CHECK(taylor_gap(f, x, a, d, alpha) <= 1e-10);
  }
}

TEST_CASE("alignment decomposition") {
  const auto inst = testing::small_instance(3);
  trainer::Episode same;
  same.train.resize(inst.batch.size());
  std::iota(same.train.begin(), same.train.end(), 0);
  same.val = same.train;
  same.train_classes = same.val_classes = inst.candidates;

  SUBCASE("identical splits without the regularizer give the squared gradient norm") {
    trainer::InnerOptions o;
    o.alpha = 0.01;
    o.use_regularizer = false;
    const auto a = alignment_terms(inst.model, inst.theta, inst.phi, inst.batch, same, inst.candidates, o);
    const auto pair = trainer::inner_gradients(inst.model, inst.theta, inst.batch, inst.candidates, inst.candidates);
    CHECK(a.term_g_align == doctest::Approx(norm2(pair.g)).epsilon(1e-12));
    CHECK(a.term_g_align >= 0.0);
    CHECK(a.term_reg_align == 0.0);
  }

  Rng split = make_stream(3, "split");
  const auto ep = trainer::split_episode(inst.batch.labels, split);
  SUBCASE("a closed gate removes the regularizer term") {
    trainer::InnerOptions o;
    o.gate_override = 0.0;
    const auto a = alignment_terms(inst.model, inst.theta, inst.phi, inst.batch, ep, inst.candidates, o);
    CHECK(a.term_reg_align == 0.0);
    CHECK(std::isfinite(a.term_g_align));
  }
  SUBCASE("regularizer term obeys the Cauchy-Schwarz bound") {
    const auto val = inst.batch.subset(ep.val);
    const auto gv = trainer::inner_gradients(inst.model, inst.theta, val, inst.candidates, ep.val_classes);
    const auto gt = trainer::inner_gradients(inst.model, inst.theta, inst.batch.subset(ep.train), inst.candidates,
                                             ep.train_classes);
    for (std::uint64_t s = 0; s < 5; ++s) {
      Rng rng = make_stream(s, "phi");
      const auto phi = metareg::ModulatorParams::random(4, 4, 2.0, rng);
      const auto a = alignment_terms(inst.model, inst.theta, phi, inst.batch, ep, inst.candidates, {});
      CHECK(std::abs(a.term_reg_align) <= std::sqrt(norm2(gv.g) * norm2(gt.g_reg)) * (1 + 1e-12));
    }
  }
  SUBCASE("prediction residual is second order in the step") {
    std::vector<trainer::Episode> eps;
    for (std::uint64_t s = 0; s < 5; ++s) {
      Rng rng = make_stream(s, "split");
      eps.push_back(trainer::split_episode(inst.batch.labels, rng));
    }
    trainer::InnerOptions o;
    for (double alpha : {1e-2, 5e-3}) {
      o.alpha = alpha;
      const double r = alignment_halving_ratio(inst.model, inst.theta, inst.phi, inst.batch, eps, inst.candidates, o);
      CHECK(r >= 3.5);
      CHECK(r <= 4.5);
    }
  }
}

TEST_CASE("meta-gradient check names the worst coordinate") {
  const auto inst = testing::small_instance(0);
  Rng split = make_stream(0, "split");
  const auto ep = trainer::split_episode(inst.batch.labels, split);
  Rng mix = make_stream(0, "mixup");
  const auto plan = trainer::draw_mixup(ep, 1.0, 1.0, mix);
  trainer::InnerOptions o;
  o.alpha = 0.1;
  const auto c = check_meta_gradients(inst.model, inst.theta, inst.phi, inst.batch, ep, plan, inst.candidates, o);
  CHECK(c.coordinates == 4 + inst.phi.count());
  CHECK(c.comparison.within(1e-4, 1e-8));
  CHECK((c.worst_coordinate.rfind("theta.", 0) == 0 || c.worst_coordinate.rfind("phi.", 0) == 0));
  CHECK(std::isfinite(c.outer_loss));
}

TEST_CASE("reports") {
  MetricsReport rep;
  auto run = [](std::string regime, std::uint64_t seed, double b, double n) {
    RunMetrics r;
    r.regime = std::move(regime);
    r.seed = seed;
    r.base_acc = b;
    r.new_acc = n;
    r.hm = harmonic_mean(b, n);
    r.ref_base_acc = 50;
    r.ref_new_acc = 60;
    r.tos = task_overfitting_score(b, n, 50, 60);
    return r;
  };
  rep.runs = {run("plain", 1, 80, 60), run("prometar", 0, 81.5, 66.25), run("plain", 0, 70, 62)};

  SUBCASE("runs are ordered by regime, shift and seed") {
    const auto s = rep.sorted_runs();
    CHECK(s[0].regime == "plain");
    CHECK(s[0].seed == 0);
    CHECK(s[1].seed == 1);
    CHECK(s[2].regime == "prometar");
  }
  SUBCASE("JSON round-trips exactly") {
    const auto back = MetricsReport::from_json(rep.to_json());
    CHECK(back.runs == rep.sorted_runs());
    CHECK(back.to_json() == rep.to_json());
    CHECK_THROWS_AS(MetricsReport::from_json("{\"version\": 2}"), Error);
    CHECK_THROWS_AS(MetricsReport::from_json("[1,"), Error);
  }
  SUBCASE("summaries") {
    const auto s = rep.summaries();
    REQUIRE(s.size() == 2);
    CHECK(s[0].count == 2);
    CHECK(s[0].mean.base_acc == 75.0);
    CHECK(s[0].stddev.base_acc == doctest::Approx(std::sqrt(50.0)).epsilon(1e-14));
    CHECK(s[0].mean.hm == harmonic_mean(75.0, 61.0));
    CHECK(s[1].stddev.new_acc == 0.0);
  }
  SUBCASE("CSV layout") {
    const std::string csv = rep.to_csv();
    CHECK(csv.rfind("regime,seed,shift,base_acc,new_acc,hm,ref_base_acc,ref_new_acc,tos\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    const std::string summary = rep.to_summary_csv();
    // 3 runs, 2 mean rows, 1 std row.
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 7);
    CHECK(summary.find("plain,std,none,") != std::string::npos);
    CHECK(summary.find("prometar,std,") == std::string::npos);
  }
}

TEST_CASE("reference prompts reproduce the zero-shot accuracies") {
  tasks::TaskSpec spec;
  spec.num_classes = 6;
  spec.feature_dim = 6;
  spec.shots = 2;
  spec.test_per_class = 10;
  const auto data = tasks::generate(spec);
  trainer::ModelConfig mc;
  const auto model = trainer::build_model(data, mc);
  const auto r = evaluate_run(model, model.reference.as_prompts(), data, "plain", 0);
  CHECK(r.base_acc == r.ref_base_acc);
  CHECK(r.new_acc == r.ref_new_acc);
  CHECK(r.tos == 0.0);
  CHECK(r.shift == "none");
  for (double v : {r.base_acc, r.new_acc}) {
    CHECK(v >= 0.0);
    CHECK(v <= 100.0);
  }
}

}  // TEST_SUITE
