#ifndef MRP_ENCODER_HPP
#define MRP_ENCODER_HPP

// Frozen toy dual encoder. Both towers are a single affine map followed by
// tanh; the learnable prompt vector is concatenated in front of the input:
//
//   image:  z = tanh(W_img [prompt_vis; x]   + b_img)
//   text:   w = tanh(W_txt [prompt_txt; c_y] + b_txt)
//
// Class probabilities are a softmax of cosine similarities over tau.
//
// The towers share a "pretrained" alignment: the class descriptor of a class
// is the concept projection of its visual prototype (c_y ~ P mu_y), and the
// data columns of W_img equal W_txt's class columns times P. With the zero
// reference prompt a noiseless image of class y and the descriptor of y map
// to the same pre-activation, which gives the reference model its zero-shot
// ability.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mrp/graph.hpp"
#include "mrp/rng.hpp"
#include "mrp/tensor.hpp"

namespace mrp::encoder {

using ClassId = std::size_t;

inline constexpr double kDefaultTau = 0.07;

struct Dims {
  std::size_t feature = 16;
  std::size_t class_dim = 8;
  std::size_t prompt = 4;
  std::size_t embed = 8;
  bool operator==(const Dims&) const = default;
};

class EncoderWeights {
 public:
  /// image_weight [d_e, d_p + d_x], image_bias [d_e, 1], text_weight
  /// [d_e, d_p + d_c], text_bias [d_e, 1], concept_projection [d_c, d_x].
  EncoderWeights(Tensor image_weight, Tensor image_bias, Tensor text_weight, Tensor text_bias,
                 Tensor concept_projection, std::size_t prompt_dim);

  static EncoderWeights generate(const Dims& dims, std::uint64_t seed);

  const Tensor& image_weight() const noexcept { return image_weight_; }
  const Tensor& image_bias() const noexcept { return image_bias_; }
  const Tensor& text_weight() const noexcept { return text_weight_; }
  const Tensor& text_bias() const noexcept { return text_bias_; }
  const Tensor& concept_projection() const noexcept { return concept_projection_; }
  const Dims& dims() const noexcept { return dims_; }

  bool operator==(const EncoderWeights&) const = default;

 private:
  Tensor image_weight_;
  Tensor image_bias_;
  Tensor text_weight_;
  Tensor text_bias_;
  Tensor concept_projection_;
  Dims dims_;
};

/// Learnable prompts; both blocks are [d_p, 1] column vectors.
struct PromptSet {
  Tensor vis;
  Tensor txt;

  static PromptSet zeros(std::size_t prompt_dim);
  static PromptSet random(std::size_t prompt_dim, double stddev, Rng& rng);

  std::size_t prompt_dim() const noexcept { return vis.size(); }
  /// Flattening order used everywhere: theta_vis, then theta_txt.
  std::vector<double> flat() const;
  static PromptSet from_flat(std::span<const double> flat);

  bool operator==(const PromptSet&) const = default;
};

/// Frozen anchor prompts; zero vectors.
struct ReferencePrompt {
  Tensor vis;
  Tensor txt;
  static ReferencePrompt zeros(std::size_t prompt_dim);
  PromptSet as_prompts() const { return PromptSet{vis, txt}; }
};

class ClassSet {
 public:
  /// Columns of `embeddings` ([d_c, N_c]) are the class descriptors.
  explicit ClassSet(Tensor embeddings);

  /// Unit-variance random descriptors, redrawn until pairwise distinct.
  static ClassSet random(std::size_t num_classes, std::size_t class_dim, Rng& rng);
  /// Descriptors named from visual prototypes ([d_x, N_c]):
  /// c_y = P mu_y + naming_noise * N(0, I).
  static ClassSet from_prototypes(const EncoderWeights& weights, const Tensor& prototypes,
                                  double naming_noise, Rng& rng);

  std::size_t size() const noexcept { return embeddings_.cols(); }
  std::size_t dim() const noexcept { return embeddings_.rows(); }
  const Tensor& embeddings() const noexcept { return embeddings_; }
  Tensor embedding(ClassId id) const;
  /// Descriptor columns of the given classes, [d_c, K].
  Tensor select(std::span<const ClassId> ids) const;

  bool operator==(const ClassSet&) const = default;

 private:
  Tensor embeddings_;
};

inline constexpr double kMinClassDistance = 1e-3;

struct FrozenModel {
  EncoderWeights weights;
  ClassSet classes;
  ReferencePrompt reference;
  double tau = kDefaultTau;
};

/// Features with soft targets over a list of candidate classes.
struct Batch {
  Tensor features;                  // [d_x, N]
  Tensor targets;                   // [K, N], columns are distributions
  std::vector<ClassId> candidates;  // K class ids
  std::size_t size() const noexcept { return features.cols(); }
};

/// One-hot targets; every label must appear in `candidates`.
Batch make_batch(const Tensor& features, std::span<const ClassId> labels,
                 std::span<const ClassId> candidates);

/// Throws Error(invalid_argument) unless every column is a distribution
/// (entries >= 0, sum 1 within 1e-9).
void validate_targets(const Tensor& targets);

// -- graph builders ---------------------------------------------------------

/// [d_e, N] prompted image embeddings of the feature columns.
ad::NodeId image_embeddings(ad::Graph& g, const EncoderWeights& w, ad::NodeId prompt_vis,
                            const Tensor& features);
/// [d_e, K] prompted text embeddings of the descriptor columns.
ad::NodeId text_embeddings(ad::Graph& g, const EncoderWeights& w, ad::NodeId prompt_txt,
                           const Tensor& descriptors);
/// Reference embeddings behind a detach boundary.
ad::NodeId reference_image_embeddings(ad::Graph& g, const EncoderWeights& w,
                                      const ReferencePrompt& ref, const Tensor& features);
ad::NodeId reference_text_embeddings(ad::Graph& g, const EncoderWeights& w,
                                     const ReferencePrompt& ref, const Tensor& descriptors);
/// [K, N] log p(class k | sample n) from cosine similarity over tau.
ad::NodeId class_log_probs(ad::Graph& g, ad::NodeId images, ad::NodeId texts, double tau);
/// Mean over samples of -sum_k target_k log p_k.
ad::NodeId soft_cross_entropy(ad::Graph& g, ad::NodeId log_probs, const Tensor& targets);

struct PromptNodes {
  ad::NodeId vis;
  ad::NodeId txt;
};

PromptNodes prompt_inputs(ad::Graph& g, std::size_t prompt_dim);
ad::Bindings bind_prompts(const PromptNodes& nodes, const PromptSet& prompts);

/// Contrastive loss of a batch as a graph expression of the prompt nodes.
ad::NodeId contrastive_loss_expr(ad::Graph& g, const FrozenModel& model, const PromptNodes& p,
                                 const Batch& batch);

// -- numeric conveniences ---------------------------------------------------

Tensor encode_image(const Tensor& x, const Tensor& prompt, const EncoderWeights& w);
/// Image embeddings [d_e, N] of every feature column.
Tensor encode_images(const Tensor& features, const Tensor& prompt, const EncoderWeights& w);
Tensor encode_text(ClassId id, const Tensor& prompt, const EncoderWeights& w,
                   const ClassSet& classes);
Tensor reference_image_embedding(const Tensor& x, const EncoderWeights& w,
                                 const ReferencePrompt& ref);
Tensor reference_text_embedding(ClassId id, const EncoderWeights& w, const ClassSet& classes,
                                const ReferencePrompt& ref);

/// softmax_y(cos(z, w_y) / tau). Throws Error(domain) for zero-norm inputs.
std::vector<double> predict_probs(const Tensor& z, std::span<const Tensor> text, double tau);

double contrastive_loss(const FrozenModel& model, const PromptSet& prompts, const Batch& batch);

/// [K, N] class probabilities of every column of `features`.
Tensor class_probabilities(const FrozenModel& model, const PromptSet& prompts,
                           const Tensor& features, std::span<const ClassId> candidates);

}  // namespace mrp::encoder

#endif  // MRP_ENCODER_HPP
