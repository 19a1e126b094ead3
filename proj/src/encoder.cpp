#include "mrp/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrp/error.hpp"

namespace mrp::encoder {

namespace {

void expect_shape(const Tensor& t, std::size_t rows, std::size_t cols, const char* what) {
  if (t.rows() != rows || t.cols() != cols) {
    throw Error(ErrorCode::shape_mismatch,
                std::string(what) + ": expected [" + std::to_string(rows) + "," +
                    std::to_string(cols) + "], got [" + std::to_string(t.rows()) + "," +
                    std::to_string(t.cols()) + "]");
  }
}

Tensor as_matrix(const Tensor& t) {
  return Tensor({t.rows(), t.cols()}, std::vector<double>(t.values()));
}

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = sample_normal(rng, 0.0, stddev);
  return t;
}

double min_pairwise_distance(const Tensor& columns) {
  double best = INFINITY;
  for (std::size_t i = 0; i < columns.cols(); ++i) {
    for (std::size_t j = i + 1; j < columns.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < columns.rows(); ++r) {
        const double d = columns(r, i) - columns(r, j);
        s += d * d;
      }
      best = std::min(best, std::sqrt(s));
    }
  }
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------

EncoderWeights::EncoderWeights(Tensor image_weight, Tensor image_bias, Tensor text_weight,
                               Tensor text_bias, Tensor concept_projection,
                               std::size_t prompt_dim)
    : image_weight_(as_matrix(image_weight)),
      image_bias_(as_matrix(image_bias)),
      text_weight_(as_matrix(text_weight)),
      text_bias_(as_matrix(text_bias)),
      concept_projection_(as_matrix(concept_projection)) {
  dims_.prompt = prompt_dim;
  dims_.embed = image_weight_.rows();
  if (dims_.embed < 2) throw Error(ErrorCode::invalid_argument, "embedding dim must be >= 2");
  if (prompt_dim == 0 || image_weight_.cols() <= prompt_dim || text_weight_.cols() <= prompt_dim) {
    throw Error(ErrorCode::shape_mismatch, "encoder weights too narrow for the prompt width");
  }
  dims_.feature = image_weight_.cols() - prompt_dim;
  dims_.class_dim = text_weight_.cols() - prompt_dim;
  expect_shape(image_bias_, dims_.embed, 1, "image bias");
  expect_shape(text_weight_, dims_.embed, prompt_dim + dims_.class_dim, "text weight");
  expect_shape(text_bias_, dims_.embed, 1, "text bias");
  expect_shape(concept_projection_, dims_.class_dim, dims_.feature, "concept projection");
  for (const Tensor* t : {&image_weight_, &image_bias_, &text_weight_, &text_bias_,
                          &concept_projection_}) {
    if (!t->all_finite()) throw Error(ErrorCode::non_finite, "encoder weights must be finite");
  }
}

EncoderWeights EncoderWeights::generate(const Dims& dims, std::uint64_t seed) {
  Rng rng = make_stream(seed, "encoder");
  const auto sd = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  Tensor class_cols = random_matrix(dims.embed, dims.class_dim, sd(dims.class_dim), rng);
  Tensor projection = random_matrix(dims.class_dim, dims.feature, sd(dims.feature), rng);
  Tensor img_prompt = random_matrix(dims.embed, dims.prompt, sd(dims.prompt), rng);
  Tensor txt_prompt = random_matrix(dims.embed, dims.prompt, sd(dims.prompt), rng);
  Tensor bias = random_matrix(dims.embed, 1, 0.1, rng);

  Tensor image_w = Tensor::zeros(dims.embed, dims.prompt + dims.feature);
  Tensor text_w = Tensor::zeros(dims.embed, dims.prompt + dims.class_dim);
  for (std::size_t r = 0; r < dims.embed; ++r) {
    for (std::size_t p = 0; p < dims.prompt; ++p) {
      image_w(r, p) = img_prompt(r, p);
      text_w(r, p) = txt_prompt(r, p);
    }
    for (std::size_t c = 0; c < dims.class_dim; ++c) text_w(r, dims.prompt + c) = class_cols(r, c);
    for (std::size_t x = 0; x < dims.feature; ++x) {
      double s = 0.0;
      for (std::size_t c = 0; c < dims.class_dim; ++c) s += class_cols(r, c) * projection(c, x);
      image_w(r, dims.prompt + x) = s;
    }
  }
  return EncoderWeights(std::move(image_w), bias, std::move(text_w), bias, std::move(projection),
                        dims.prompt);
}

// ---------------------------------------------------------------------------

PromptSet PromptSet::zeros(std::size_t prompt_dim) {
  return PromptSet{Tensor::zeros(prompt_dim, 1), Tensor::zeros(prompt_dim, 1)};
}

PromptSet PromptSet::random(std::size_t prompt_dim, double stddev, Rng& rng) {
  PromptSet p = zeros(prompt_dim);
  for (double& v : p.vis.data()) v = sample_normal(rng, 0.0, stddev);
  for (double& v : p.txt.data()) v = sample_normal(rng, 0.0, stddev);
  return p;
}

std::vector<double> PromptSet::flat() const {
  std::vector<double> out(vis.values());
  out.insert(out.end(), txt.values().begin(), txt.values().end());
  return out;
}

PromptSet PromptSet::from_flat(std::span<const double> flat) {
  if (flat.size() % 2 != 0 || flat.empty()) {
    throw Error(ErrorCode::shape_mismatch, "prompt vector length must be even and positive");
  }
  const std::size_t d = flat.size() / 2;
  return PromptSet{Tensor::column({flat.begin(), flat.begin() + d}),
                   Tensor::column({flat.begin() + d, flat.end()})};
}

ReferencePrompt ReferencePrompt::zeros(std::size_t prompt_dim) {
  return ReferencePrompt{Tensor::zeros(prompt_dim, 1), Tensor::zeros(prompt_dim, 1)};
}

// ---------------------------------------------------------------------------

ClassSet::ClassSet(Tensor embeddings) : embeddings_(as_matrix(embeddings)) {
  if (embeddings_.cols() < 2) throw Error(ErrorCode::invalid_argument, "class set needs >= 2 classes");
  if (!embeddings_.all_finite()) throw Error(ErrorCode::non_finite, "class embeddings must be finite");
  if (min_pairwise_distance(embeddings_) < kMinClassDistance) {
    throw Error(ErrorCode::invalid_argument, "class embeddings are not pairwise distinct");
  }
}

ClassSet ClassSet::random(std::size_t num_classes, std::size_t class_dim, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Tensor e = random_matrix(class_dim, num_classes, 1.0, rng);
    if (min_pairwise_distance(e) >= kMinClassDistance) return ClassSet(std::move(e));
  }
  throw Error(ErrorCode::invalid_argument, "could not draw distinct class embeddings");
}

ClassSet ClassSet::from_prototypes(const EncoderWeights& weights, const Tensor& prototypes,
                                   double naming_noise, Rng& rng) {
  const Tensor& proj = weights.concept_projection();
  if (prototypes.rows() != proj.cols()) {
    throw Error(ErrorCode::shape_mismatch,
                "prototype dim " + std::to_string(prototypes.rows()) +
                    " does not match encoder feature dim " + std::to_string(proj.cols()));
  }
  for (int attempt = 0; attempt < 100; ++attempt) {
    Tensor e = Tensor::zeros(proj.rows(), prototypes.cols());
    for (std::size_t c = 0; c < prototypes.cols(); ++c) {
      for (std::size_t r = 0; r < proj.rows(); ++r) {
        double s = 0.0;
        for (std::size_t x = 0; x < proj.cols(); ++x) s += proj(r, x) * prototypes(x, c);
        e(r, c) = s + (naming_noise > 0.0 ? sample_normal(rng, 0.0, naming_noise) : 0.0);
      }
    }
    if (min_pairwise_distance(e) >= kMinClassDistance) return ClassSet(std::move(e));
  }
  throw Error(ErrorCode::invalid_argument, "could not name classes distinctly");
}

Tensor ClassSet::embedding(ClassId id) const {
  if (id >= size()) {
    throw Error(ErrorCode::invalid_argument, "unknown class " + std::to_string(id) +
                                                 " (class set has " + std::to_string(size()) + ")");
  }
  return embeddings_.col(id);
}

Tensor ClassSet::select(std::span<const ClassId> ids) const {
  if (ids.empty()) throw Error(ErrorCode::invalid_argument, "empty class selection");
  Tensor out = Tensor::zeros(dim(), ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= size()) {
      throw Error(ErrorCode::invalid_argument, "unknown class " + std::to_string(ids[k]));
    }
    for (std::size_t r = 0; r < dim(); ++r) out(r, k) = embeddings_(r, ids[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------

Batch make_batch(const Tensor& features, std::span<const ClassId> labels,
                 std::span<const ClassId> candidates) {
  if (features.cols() != labels.size()) {
    throw Error(ErrorCode::shape_mismatch, "make_batch: feature columns and labels differ");
  }
  if (labels.empty()) throw Error(ErrorCode::invalid_argument, "make_batch: empty batch");
  Batch b{as_matrix(features), Tensor::zeros(candidates.size(), labels.size()),
          {candidates.begin(), candidates.end()}};
  for (std::size_t n = 0; n < labels.size(); ++n) {
    auto it = std::find(candidates.begin(), candidates.end(), labels[n]);
    if (it == candidates.end()) {
      throw Error(ErrorCode::invalid_argument,
                  "make_batch: label " + std::to_string(labels[n]) + " is not a candidate class");
    }
    b.targets(static_cast<std::size_t>(it - candidates.begin()), n) = 1.0;
  }
  return b;
}

void validate_targets(const Tensor& targets) {
  for (std::size_t n = 0; n < targets.cols(); ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < targets.rows(); ++k) {
      const double v = targets(k, n);
      if (!(v >= 0.0)) {
        throw Error(ErrorCode::invalid_argument,
                    "label distribution of sample " + std::to_string(n) + " has a negative entry");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw Error(ErrorCode::invalid_argument, "label distribution of sample " +
                                                   std::to_string(n) + " sums to " +
                                                   std::to_string(s));
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

ad::NodeId encode_columns(ad::Graph& g, const Tensor& weight, const Tensor& bias,
                          std::size_t prompt_dim, ad::NodeId prompt, const Tensor& inputs,
                          const char* tower) {
  const std::size_t input_dim = weight.cols() - prompt_dim;
  if (inputs.rows() != input_dim) {
    throw Error(ErrorCode::shape_mismatch, std::string(tower) + " input has dimension " +
                                               std::to_string(inputs.rows()) + ", expected " +
                                               std::to_string(input_dim));
  }
  if (g.shape(prompt) != ad::Shape{prompt_dim, 1}) {
    throw Error(ErrorCode::shape_mismatch, std::string(tower) + " prompt has shape " +
                                               ad::to_string(g.shape(prompt)));
  }
  const std::size_t n = inputs.cols();
  ad::NodeId tiled = g.matmul(prompt, g.ones({1, n}));
  ad::NodeId stacked = g.concat(tiled, g.constant(inputs));
  ad::NodeId pre = g.matmul(g.constant(weight), stacked);
  ad::NodeId bias_tiled = g.matmul(g.constant(bias), g.ones({1, n}));
  return g.tanh(g.add(pre, bias_tiled));
}

}  // namespace

ad::NodeId image_embeddings(ad::Graph& g, const EncoderWeights& w, ad::NodeId prompt_vis,
                            const Tensor& features) {
  return encode_columns(g, w.image_weight(), w.image_bias(), w.dims().prompt, prompt_vis,
                        features, "image");
}

ad::NodeId text_embeddings(ad::Graph& g, const EncoderWeights& w, ad::NodeId prompt_txt,
                           const Tensor& descriptors) {
  return encode_columns(g, w.text_weight(), w.text_bias(), w.dims().prompt, prompt_txt,
                        descriptors, "text");
}

ad::NodeId reference_image_embeddings(ad::Graph& g, const EncoderWeights& w,
                                      const ReferencePrompt& ref, const Tensor& features) {
  return g.detach(image_embeddings(g, w, g.constant(ref.vis), features));
}

ad::NodeId reference_text_embeddings(ad::Graph& g, const EncoderWeights& w,
                                     const ReferencePrompt& ref, const Tensor& descriptors) {
  return g.detach(text_embeddings(g, w, g.constant(ref.txt), descriptors));
}

ad::NodeId class_log_probs(ad::Graph& g, ad::NodeId images, ad::NodeId texts, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be positive");
  return g.log_softmax(g.scale(g.cosine_similarity(texts, images), 1.0 / tau));
}

ad::NodeId soft_cross_entropy(ad::Graph& g, ad::NodeId log_probs, const Tensor& targets) {
  validate_targets(targets);
  ad::NodeId t = g.constant(targets);
  const double n = static_cast<double>(targets.cols());
  return g.scale(g.sum(g.hadamard(t, log_probs)), -1.0 / n);
}

PromptNodes prompt_inputs(ad::Graph& g, std::size_t prompt_dim) {
  return PromptNodes{g.input({prompt_dim, 1}, "theta_vis"), g.input({prompt_dim, 1}, "theta_txt")};
}

ad::Bindings bind_prompts(const PromptNodes& nodes, const PromptSet& prompts) {
  ad::Bindings b;
  b.emplace(nodes.vis, prompts.vis);
  b.emplace(nodes.txt, prompts.txt);
  return b;
}

ad::NodeId contrastive_loss_expr(ad::Graph& g, const FrozenModel& model, const PromptNodes& p,
                                 const Batch& batch) {
  if (batch.size() == 0) throw Error(ErrorCode::invalid_argument, "contrastive loss of empty batch");
  ad::NodeId z = image_embeddings(g, model.weights, p.vis, batch.features);
  ad::NodeId w = text_embeddings(g, model.weights, p.txt, model.classes.select(batch.candidates));
  return soft_cross_entropy(g, class_log_probs(g, z, w, model.tau), batch.targets);
}

// ---------------------------------------------------------------------------

Tensor encode_image(const Tensor& x, const Tensor& prompt, const EncoderWeights& w) {
  ad::Graph g;
  ad::NodeId p = g.constant(prompt);
  ad::NodeId z = image_embeddings(g, w, p, Tensor({x.size(), 1}, std::vector<double>(x.values())));
  return ad::forward(g, {})[z];
}

Tensor encode_images(const Tensor& features, const Tensor& prompt, const EncoderWeights& w) {
  ad::Graph g;
  ad::NodeId p = g.constant(prompt);
  ad::NodeId z = image_embeddings(g, w, p, features);
  return ad::forward(g, {})[z];
}

Tensor encode_text(ClassId id, const Tensor& prompt, const EncoderWeights& w,
                   const ClassSet& classes) {
  ad::Graph g;
  ad::NodeId p = g.constant(prompt);
  ad::NodeId t = text_embeddings(g, w, p, classes.embedding(id));
  return ad::forward(g, {})[t];
}

Tensor reference_image_embedding(const Tensor& x, const EncoderWeights& w,
                                 const ReferencePrompt& ref) {
  return encode_image(x, ref.vis, w);
}

Tensor reference_text_embedding(ClassId id, const EncoderWeights& w, const ClassSet& classes,
                                const ReferencePrompt& ref) {
  return encode_text(id, ref.txt, w, classes);
}

std::vector<double> predict_probs(const Tensor& z, std::span<const Tensor> text, double tau) {
  if (text.empty()) throw Error(ErrorCode::invalid_argument, "predict_probs: no classes");
  ad::Graph g;
  ad::NodeId zi = g.constant(Tensor({z.size(), 1}, std::vector<double>(z.values())));
  ad::NodeId wi = g.constant(hstack(text));
  ad::NodeId lp = class_log_probs(g, zi, wi, tau);
  const Tensor logp = ad::forward(g, {})[lp];
  std::vector<double> out(logp.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::exp(logp[k]);
  return out;
}

double contrastive_loss(const FrozenModel& model, const PromptSet& prompts, const Batch& batch) {
  ad::Graph g;
  PromptNodes p = prompt_inputs(g, prompts.prompt_dim());
  ad::NodeId loss = contrastive_loss_expr(g, model, p, batch);
  return ad::forward(g, bind_prompts(p, prompts)).scalar(loss);
}

Tensor class_probabilities(const FrozenModel& model, const PromptSet& prompts,
                           const Tensor& features, std::span<const ClassId> candidates) {
  ad::Graph g;
  ad::NodeId pv = g.constant(prompts.vis);
  ad::NodeId pt = g.constant(prompts.txt);
  ad::NodeId z = image_embeddings(g, model.weights, pv, features);
  ad::NodeId w = text_embeddings(g, model.weights, pt, model.classes.select(candidates));
  ad::NodeId lp = class_log_probs(g, z, w, model.tau);
  Tensor probs = ad::forward(g, {})[lp];
  for (double& v : probs.data()) v = std::exp(v);
  return probs;
}

}  // namespace mrp::encoder
