#ifndef MRP_TEST_HELPERS_HPP
#define MRP_TEST_HELPERS_HPP

// Independent scalar reimplementations used as oracles, and small fixtures.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mrp/encoder.hpp"
#include "mrp/metareg.hpp"
#include "mrp/rng.hpp"
#include "mrp/tensor.hpp"
#include "mrp/trainer.hpp"

namespace testing {

using Vec = std::vector<double>;

// tanh(W [prompt; x] + b), written with plain loops.
inline Vec encode_ref(const mrp::Tensor& w, const mrp::Tensor& b, const Vec& prompt, const Vec& x) {
  Vec in(prompt);
  in.insert(in.end(), x.begin(), x.end());
  Vec out(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = b[r];
    for (std::size_t c = 0; c < w.cols(); ++c) s += w(r, c) * in[c];
    out[r] = std::tanh(s);
  }
  return out;
}

inline double cosine_ref(const Vec& a, const Vec& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

inline Vec softmax_ref(const Vec& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  Vec p(logits.size());
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= z;
  return p;
}

inline Vec column(const mrp::Tensor& t, std::size_t c) {
  Vec out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out[r] = t(r, c);
  return out;
}

inline mrp::Tensor random_tensor(std::size_t rows, std::size_t cols, mrp::Rng& rng, double sd = 1.0) {
  mrp::Tensor t = mrp::Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = mrp::sample_normal(rng, 0.0, sd);
  return t;
}

// Contrastive loss with hard labels, scalar loops only.
inline double contrastive_ref(const mrp::encoder::FrozenModel& m, const mrp::encoder::PromptSet& p,
                              const mrp::Tensor& x, const std::vector<std::size_t>& labels,
                              const std::vector<std::size_t>& candidates) {
  const auto& w = m.weights;
  std::vector<Vec> text;
  for (auto c : candidates) {
    text.push_back(encode_ref(w.text_weight(), w.text_bias(), p.txt.values(), column(m.classes.embeddings(), c)));
  }
  double loss = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const Vec z = encode_ref(w.image_weight(), w.image_bias(), p.vis.values(), column(x, n));
    Vec logits;
    for (const auto& t : text) logits.push_back(cosine_ref(z, t) / m.tau);
    const Vec prob = softmax_ref(logits);
    std::size_t k = 0;
    while (candidates[k] != labels[n]) ++k;
    loss -= std::log(prob[k]);
  }
  return loss / static_cast<double>(labels.size());
}

struct SmallInstance {
  mrp::encoder::FrozenModel model;
  mrp::encoder::PromptSet theta;
  mrp::metareg::ModulatorParams phi;
  mrp::trainer::LabeledSet batch;
  std::vector<std::size_t> candidates;
};

// N_c classes with `per_class` samples each; d_x=4, d_c=3, d_p=2, d_e=4.
inline SmallInstance small_instance(std::uint64_t seed, std::size_t num_classes = 4, std::size_t per_class = 2,
                                    std::size_t hidden = 4, double theta_sd = 1.0, double phi_sd = 0.1) {
  const mrp::encoder::Dims dims{4, 3, 2, 4};
  mrp::Rng rng = mrp::make_stream(seed, "test-instance");
  mrp::encoder::FrozenModel model{mrp::encoder::EncoderWeights::generate(dims, seed),
                                  mrp::encoder::ClassSet::random(num_classes, dims.class_dim, rng),
                                  mrp::encoder::ReferencePrompt::zeros(dims.prompt), mrp::encoder::kDefaultTau};
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) labels.push_back(c);
  }
  mrp::Tensor x = random_tensor(dims.feature, labels.size(), rng);
  std::vector<std::size_t> candidates(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) candidates[c] = c;
  return {std::move(model), mrp::encoder::PromptSet::random(dims.prompt, theta_sd, rng),
          mrp::metareg::ModulatorParams::random(2 * dims.prompt, hidden, phi_sd, rng),
          {std::move(x), labels}, candidates};
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  static std::mt19937_64 gen(std::random_device{}());
  auto p = std::filesystem::temp_directory_path() / ("mrp-test-" + name + "-" + std::to_string(gen()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing

#endif  // MRP_TEST_HELPERS_HPP
