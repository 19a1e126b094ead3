#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mrp/error.hpp"
#include "mrp/finite_diff.hpp"
#include "mrp/graph.hpp"
#include "mrp/metareg.hpp"

using namespace mrp;
using namespace mrp::metareg;

namespace {

// sigmoid(W2 tanh(W1 [g; g_reg] + b1) + b2) inputs, scalar loops.
std::vector<double> modulator_ref(const ModulatorParams& phi, const std::vector<double>& g,
                                  const std::vector<double>& r) {
  std::vector<double> in(g);
  in.insert(in.end(), r.begin(), r.end());
  std::vector<double> h(phi.hidden());
  for (std::size_t i = 0; i < h.size(); ++i) {
    double s = phi.b1[i];
    for (std::size_t j = 0; j < in.size(); ++j) s += phi.w1(i, j) * in[j];
    h[i] = std::tanh(s);
  }
  std::vector<double> m(phi.prompt_params());
  for (std::size_t i = 0; i < m.size(); ++i) {
    double s = phi.b2[i];
    for (std::size_t j = 0; j < h.size(); ++j) s += phi.w2(i, j) * h[j];
    m[i] = s;
  }
  return m;
}

}  // namespace

TEST_SUITE("meta regularizer") {

TEST_CASE("regularizer vanishes at the reference prompts") {
  const auto inst = testing::small_instance(0);
  const auto ref = inst.model.reference.as_prompts();
  const double r = regularizer(inst.model, ref, inst.batch.features, inst.candidates);
  const double n = static_cast<double>(inst.batch.size() + inst.candidates.size());
  CHECK(r >= 0.0);
  CHECK(r <= n * 4.0 * std::sqrt(ad::kSmoothAbsEps) * (1.0 + 1e-12));
}

TEST_CASE("smooth absolute value of a difference vector is its L1 norm") {
  ad::Graph g;
  ad::NodeId d = g.constant(Tensor::column({1.0, -2.0}));
  ad::NodeId s = g.sum(g.smooth_abs(d));
  CHECK(ad::forward(g, {}).scalar(s) == doctest::Approx(3.0).epsilon(1e-8));
}

TEST_CASE("regularizer grows along a ray away from the reference") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = testing::small_instance(seed);
    Rng rng = make_stream(seed, "ray");
    const auto dir = encoder::PromptSet::random(2, 1.0, rng);
    double prev = -1.0;
    for (double t : {0.0, 0.05, 0.1, 0.2, 0.4, 0.8}) {
      encoder::PromptSet p = dir;
      for (double& v : p.vis.data()) v *= t;
      for (double& v : p.txt.data()) v *= t;
      const double r = regularizer(inst.model, p, inst.batch.features, inst.candidates);
      CHECK(r > prev);
      prev = r;
    }
  }
}

TEST_CASE("regularizer matches a scalar smooth-L1 computation") {
  const auto inst = testing::small_instance(4);
  const auto& w = inst.model.weights;
  double want = 0;
  for (std::size_t n = 0; n < inst.batch.size(); ++n) {
    const auto x = testing::column(inst.batch.features, n);
    const auto a = testing::encode_ref(w.image_weight(), w.image_bias(), inst.theta.vis.values(), x);
    const auto b = testing::encode_ref(w.image_weight(), w.image_bias(), {0, 0}, x);
    for (std::size_t k = 0; k < a.size(); ++k) want += std::sqrt((a[k] - b[k]) * (a[k] - b[k]) + ad::kSmoothAbsEps);
  }
  const std::vector<std::size_t> classes{1, 3};
  for (auto c : classes) {
    const auto d = testing::column(inst.model.classes.embeddings(), c);
    const auto a = testing::encode_ref(w.text_weight(), w.text_bias(), inst.theta.txt.values(), d);
    const auto b = testing::encode_ref(w.text_weight(), w.text_bias(), {0, 0}, d);
    for (std::size_t k = 0; k < a.size(); ++k) want += std::sqrt((a[k] - b[k]) * (a[k] - b[k]) + ad::kSmoothAbsEps);
  }
  const double got = regularizer(inst.model, inst.theta, inst.batch.features, classes);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("modulation network") {
  const GradientPair pair{{0.5, -1.0, 2.0, 0.1}, {1.0, 0.0, -3.0, 0.2}};
  SUBCASE("zero parameters give a zero modulation") {
    const auto m = modulation_vector(pair, ModulatorParams::zeros(4, 8));
    for (double v : m) CHECK(v == 0.0);
  }
  SUBCASE("zero second layer leaves the bias") {
    Rng rng = make_stream(1, "phi");
    auto phi = ModulatorParams::random(4, 8, 0.5, rng);
    for (double& v : phi.w2.data()) v = 0.0;
    const auto m = modulation_vector(pair, phi);
    for (std::size_t i = 0; i < 4; ++i) CHECK(m[i] == phi.b2[i]);
  }
  SUBCASE("matches an independent two-layer forward pass") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng = make_stream(seed, "phi");
      const auto phi = ModulatorParams::random(4, 6, 0.7, rng);
      const auto m = modulation_vector(pair, phi);
      const auto want = modulator_ref(phi, pair.g, pair.g_reg);
      for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(m[i] - want[i]) <= 1e-12);
    }
  }
  SUBCASE("mismatched layouts are rejected") {
    CHECK_THROWS_AS(modulation_vector(pair, ModulatorParams::zeros(3, 8)), Error);
  }
}

TEST_CASE("flat parameter layout round-trips") {
  Rng rng = make_stream(2, "phi");
  const auto phi = ModulatorParams::random(4, 3, 1.0, rng);
  CHECK(phi.count() == 4 * 3 * 2 + 3 + 4 * 3 + 4);
  ModulatorParams back = ModulatorParams::zeros(4, 3);
  back.assign_flat(phi.flat());
  CHECK(back == phi);
  CHECK(phi.flat()[0] == phi.w1[0]);
  CHECK(phi.flat()[phi.w1.size()] == phi.b1[0]);
  const std::vector<double> wrong(5);
  CHECK_THROWS_AS(back.assign_flat(wrong), Error);
}

TEST_CASE("gated regularizer gradient") {
  const std::vector<double> r{2.0, -4.0, 0.0, 1e-3};
  SUBCASE("zero modulation halves the gradient") {
    const auto out = modulate(r, std::vector<double>(4, 0.0));
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == 0.5 * r[i]);
  }
  SUBCASE("large modulation passes the gradient through") {
    const auto out = modulate(r, std::vector<double>(4, 40.0));
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(r[i]).epsilon(1e-15));
  }
  SUBCASE("zero regularizer gradient stays zero") {
    const auto out = modulate(std::vector<double>(4, 0.0), std::vector<double>{-5, 0, 3, 100});
    for (double v : out) CHECK(v == 0.0);
  }
  SUBCASE("gate is bounded and preserves signs") {
    Rng rng = make_stream(3, "gate");
    for (int t = 0; t < 200; ++t) {
      std::vector<double> g(6), m(6);
      for (std::size_t i = 0; i < 6; ++i) {
        g[i] = sample_normal(rng, 0.0, 10.0);
        m[i] = sample_normal(rng, 0.0, 5.0);
      }
      const auto out = modulate(g, m);
      for (std::size_t i = 0; i < 6; ++i) {
        CHECK(std::abs(out[i]) <= std::abs(g[i]));
        CHECK(out[i] * g[i] >= 0.0);
      }
    }
  }
}

TEST_CASE("modulator output is differentiable in its parameters") {
  Rng rng = make_stream(4, "phi");
  const auto phi = ModulatorParams::random(4, 5, 0.5, rng);
  const GradientPair pair{{0.3, -0.2, 0.9, 1.1}, {-0.4, 0.8, 0.05, -1.5}};
  ad::Graph g;
  const auto nodes = modulator_inputs(g, 4, 5);
  const ad::NodeId m = modulation_vector_expr(g, nodes, g.constant(Tensor::column(pair.g)),
                                              g.constant(Tensor::column(pair.g_reg)));
  const ad::NodeId s = g.sum(g.sigmoid(m));
  const auto grads = ad::gradient(g, s, {nodes.w1, nodes.b1, nodes.w2, nodes.b2});
  ad::Bindings b;
  bind_modulator(b, nodes, phi);
  const auto v = ad::forward(g, b);
  std::vector<double> analytic;
  for (auto id : {nodes.w1, nodes.b1, nodes.w2, nodes.b2}) {
    const auto& t = v[grads.at(id)].values();
    analytic.insert(analytic.end(), t.begin(), t.end());
  }
  const auto f = [&](const Tensor& x) {
    ModulatorParams p = phi;
    p.assign_flat(x.values());
    double sum = 0;
    for (double mi : modulation_vector(pair, p)) sum += 1.0 / (1.0 + std::exp(-mi));
    return sum;
  };
  const Tensor fd = ad::fd_gradient(f, Tensor::column(phi.flat()));
  CHECK(ad::compare_gradients(analytic, fd.values(), 1e-8).within(1e-6, 1e-8));
}

}  // TEST_SUITE
