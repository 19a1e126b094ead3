#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mrp/encoder.hpp"
#include "mrp/error.hpp"
#include "mrp/graph.hpp"
#include "mrp/util.hpp"

using namespace mrp;
using namespace mrp::encoder;

TEST_SUITE("dual encoder") {

TEST_CASE("golden image embedding for seed 1") {
  const auto w = EncoderWeights::generate(Dims{4, 3, 2, 3}, 1);
  const Tensor x = Tensor::column({1, 0, 0, 0});
  const Tensor z = encode_image(x, Tensor::column({0, 0}), w);
  // Pinned from the seeded construction.
  const std::vector<double> golden{0.76245794837174974, -0.680670184792601, 0.11999187582853243};
  REQUIRE(z.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(z[i] == doctest::Approx(golden[i]).epsilon(1e-14));
  // Independent matrix-vector evaluation of the same weights.
  const auto ref = testing::encode_ref(w.image_weight(), w.image_bias(), {0, 0}, {1, 0, 0, 0});
  for (std::size_t i = 0; i < 3; ++i) CHECK(z[i] == doctest::Approx(ref[i]).epsilon(1e-15));
}

TEST_CASE("weights are a pure function of dims and seed") {
  const Dims d{6, 4, 3, 5};
  CHECK(EncoderWeights::generate(d, 7) == EncoderWeights::generate(d, 7));
  CHECK_FALSE(EncoderWeights::generate(d, 7) == EncoderWeights::generate(d, 8));
  const auto w = EncoderWeights::generate(d, 7);
  CHECK(w.image_weight().shape() == std::vector<std::size_t>{5, 9});
  CHECK(w.text_weight().shape() == std::vector<std::size_t>{5, 7});
  CHECK(w.concept_projection().shape() == std::vector<std::size_t>{4, 6});
}

TEST_CASE("image data block routes features through the class space") {
  // W_img[:, data] = W_txt[:, class] * P, so a feature x and the descriptor
  // P x give the same embedding when prompts and biases agree.
  const Dims d{6, 4, 3, 5};
  const auto w = EncoderWeights::generate(d, 3);
  Rng rng = make_stream(1, "x");
  const Tensor x = testing::random_tensor(6, 1, rng);
  // Column 0 is the descriptor of x; column 1 is an unrelated class.
  Tensor c = Tensor::zeros(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) c(i, 0) += w.concept_projection()(i, j) * x[j];
    c(i, 1) = 1.0 + static_cast<double>(i);
  }
  const Tensor zero = Tensor::zeros(3, 1);
  const Tensor zi = encode_image(x, zero, w);
  const ClassSet classes(c);
  const Tensor zt = encode_text(0, zero, w, classes);
  for (std::size_t i = 0; i < 5; ++i) CHECK(zi[i] == doctest::Approx(zt[i]).epsilon(1e-12));
}

TEST_CASE("reference prompts reproduce the reference embeddings") {
  const Dims d{4, 3, 2, 4};
  const auto w = EncoderWeights::generate(d, 2);
  Rng rng = make_stream(2, "c");
  const auto classes = ClassSet::random(3, 3, rng);
  const auto ref = ReferencePrompt::zeros(2);
  const Tensor x = Tensor::column({0.3, -0.1, 0.5, 2.0});
  CHECK(encode_image(x, ref.vis, w) == reference_image_embedding(x, w, ref));
  CHECK(encode_text(1, ref.txt, w, classes) == reference_text_embedding(1, w, classes, ref));
  CHECK(reference_image_embedding(x, w, ref) == reference_image_embedding(x, w, ref));
}

TEST_CASE("zero weights give the zero embedding") {
  const EncoderWeights w(Tensor::zeros(3, 6), Tensor::zeros(3, 1), Tensor::zeros(3, 5), Tensor::zeros(3, 1),
                         Tensor::zeros(3, 4), 2);
  const Tensor z = encode_image(Tensor::column({1, 2, 3, 4}), Tensor::column({5, 6}), w);
  CHECK(z == Tensor::zeros(3, 1));
}

TEST_CASE("distinct classes get distinct text embeddings") {
  int degenerate = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = EncoderWeights::generate(Dims{8, 6, 3, 6}, seed);
    Rng rng = make_stream(seed, "classes");
    const auto classes = ClassSet::random(5, 6, rng);
    Rng prng = make_stream(seed, "p");
    const auto p = PromptSet::random(3, 0.5, prng);
    for (ClassId a = 0; a < 5; ++a) {
      for (ClassId b = a + 1; b < 5; ++b) {
        const Tensor ta = encode_text(a, p.txt, w, classes);
        const Tensor tb = encode_text(b, p.txt, w, classes);
        double d2 = 0;
        for (std::size_t i = 0; i < ta.size(); ++i) d2 += (ta[i] - tb[i]) * (ta[i] - tb[i]);
        if (d2 < 1e-12) ++degenerate;
      }
    }
  }
  CHECK(degenerate == 0);
  CHECK_THROWS_AS(ClassSet(Tensor::zeros(3, 2)), Error);
}

TEST_CASE("prediction probabilities") {
  SUBCASE("equal similarities give the uniform distribution") {
    const Tensor z = Tensor::column({1, 0});
    const std::vector<Tensor> text{Tensor::column({0, 1}), Tensor::column({0, -1}), Tensor::column({0, 2})};
    const auto p = predict_probs(z, text, 0.07);
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }
  SUBCASE("two classes at tau 1") {
    const Tensor z = Tensor::column({1, 0});
    const std::vector<Tensor> text{Tensor::column({2, 0}), Tensor::column({0, 3})};
    const auto p = predict_probs(z, text, 1.0);
    CHECK(p[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-14));
    CHECK(p[0] == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(p[1] == doctest::Approx(0.26894).epsilon(1e-4));
  }
  SUBCASE("large temperature approaches uniform") {
    Rng rng = make_stream(5, "t");
    const Tensor z = testing::random_tensor(4, 1, rng);
    std::vector<Tensor> text;
    for (int i = 0; i < 6; ++i) text.push_back(testing::random_tensor(4, 1, rng));
    const auto p = predict_probs(z, text, 100.0);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    CHECK(*hi - *lo <= 0.01);
  }
  SUBCASE("zero-norm embeddings are a domain error") {
    const std::vector<Tensor> text{Tensor::column({1, 0})};
    try {
      predict_probs(Tensor::column({0, 0}), text, 1.0);
      FAIL("expected domain error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::domain);
    }
  }
}

TEST_CASE("soft cross-entropy") {
  SUBCASE("confident correct prediction has zero loss") {
    ad::Graph h;
    ad::NodeId logits = h.constant(Tensor::column({0.0, -800.0}));
    ad::NodeId loss = soft_cross_entropy(h, h.log_softmax(logits), Tensor::column({1.0, 0.0}));
    CHECK(ad::forward(h, {}).scalar(loss) == 0.0);
  }
  SUBCASE("uniform label on uniform prediction gives ln N") {
    ad::Graph g;
    ad::NodeId logits = g.constant(Tensor::column({0.4, 0.4, 0.4, 0.4, 0.4}));
    ad::NodeId loss = soft_cross_entropy(g, g.log_softmax(logits), Tensor::filled(5, 1, 0.2));
    CHECK(ad::forward(g, {}).scalar(loss) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  }
  SUBCASE("uniform label is the mean negative log probability") {
    ad::Graph g;
    ad::NodeId logits = g.constant(Tensor::column({0.1, 2.0, -1.0}));
    ad::NodeId loss = soft_cross_entropy(g, g.log_softmax(logits), Tensor::filled(3, 1, 1.0 / 3.0));
    const auto p = testing::softmax_ref({0.1, 2.0, -1.0});
    const double want = -(std::log(p[0]) + std::log(p[1]) + std::log(p[2])) / 3.0;
    CHECK(ad::forward(g, {}).scalar(loss) == doctest::Approx(want).epsilon(1e-14));
  }
  SUBCASE("invalid targets are rejected") {
    CHECK_THROWS_AS(validate_targets(Tensor::column({0.5, 0.6})), Error);
    CHECK_THROWS_AS(validate_targets(Tensor::column({1.5, -0.5})), Error);
  }
}

TEST_CASE("contrastive loss matches a hand-rolled softmax cross-entropy") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = testing::small_instance(seed, 3, 1);
    const std::vector<std::size_t> labels{2, 0};
    Tensor x = Tensor::zeros(4, 2);
    for (std::size_t r = 0; r < 4; ++r) {
      x(r, 0) = inst.batch.features(r, 0);
      x(r, 1) = inst.batch.features(r, 1);
    }
    const Batch b = make_batch(x, labels, inst.candidates);
    const double got = contrastive_loss(inst.model, inst.theta, b);
    const double want = testing::contrastive_ref(inst.model, inst.theta, x, labels, inst.candidates);
    CHECK(got == doctest::Approx(want).epsilon(1e-13));
  }
}

TEST_CASE("gradients reach only the prompts") {
  const auto inst = testing::small_instance(1);
  ad::Graph g;
  const auto p = prompt_inputs(g, 2);
  const Batch b = inst.batch.as_batch(inst.candidates);
  const ad::NodeId loss = contrastive_loss_expr(g, inst.model, p, b);
  const auto grads = ad::gradient(g, loss, {p.vis, p.txt});
  CHECK(grads.size() == 2);
  // The frozen weights enter as constants, which are not differentiable
  // inputs of the graph.
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& n = g.node(ad::NodeId{static_cast<std::uint32_t>(i)});
    if (n.op == ad::Op::input) CHECK((n.name == "theta_vis" || n.name == "theta_txt"));
  }
  const auto before = sha256_hex(inst.model.weights.image_weight().values());
  ad::forward(g, bind_prompts(p, inst.theta));
  CHECK(sha256_hex(inst.model.weights.image_weight().values()) == before);
}

TEST_CASE("loss through reference embeddings has zero prompt gradient") {
  const auto inst = testing::small_instance(2);
  ad::Graph g;
  const auto p = prompt_inputs(g, 2);
  const ad::NodeId z = reference_image_embeddings(g, inst.model.weights, inst.model.reference, inst.batch.features);
  const ad::NodeId zp = image_embeddings(g, inst.model.weights, p.vis, inst.batch.features);
  const ad::NodeId loss = g.sum(g.hadamard(g.add(z, g.scale(zp, 0.0)), z));
  const ad::NodeId d = ad::gradient(g, loss, {p.vis}).at(p.vis);
  CHECK(ad::forward(g, bind_prompts(p, inst.theta))[d] == Tensor::zeros(2, 1));
}

TEST_CASE("batches and shapes are validated") {
  const auto inst = testing::small_instance(3);
  const std::vector<std::size_t> bad{9};
  CHECK_THROWS_AS(make_batch(Tensor::zeros(4, 1), bad, inst.candidates), Error);
  CHECK_THROWS_AS(encode_image(Tensor::column({1, 2, 3}), Tensor::zeros(2, 1), inst.model.weights), Error);
  CHECK_THROWS_AS(encode_image(Tensor::column({1, 2, 3, 4}), Tensor::zeros(3, 1), inst.model.weights), Error);
}

}  // TEST_SUITE
