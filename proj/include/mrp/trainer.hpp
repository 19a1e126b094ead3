#ifndef MRP_TRAINER_HPP
#define MRP_TRAINER_HPP

// Prompt tuning regimes over a frozen model:
//
//   plain     Theta -= lr_conv * grad L(Theta; B)
//   loss-reg  Theta -= lr_conv * grad (L + lambda R)(Theta; B)
//   prometar  the plain step, then on the same batch a class-disjoint
//             episode split, one modulated inner step
//               Theta^ = Theta - alpha (g + sigmoid(m_phi) * g_reg)
//             on the episode-train part, and an outer step of size beta on
//             Theta and phi against the mixup-augmented episode-val part,
//             differentiated through Theta^.
//
// Every random choice comes from a named stream of TrainConfig::seed: "init"
// (prompt init), "batch" (shuffles), "split" (episodes), "mixup" (partners
// and ratios). Regimes therefore share batch orders for equal seeds.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrp/encoder.hpp"
#include "mrp/graph.hpp"
#include "mrp/metareg.hpp"
#include "mrp/rng.hpp"
#include "mrp/tasks.hpp"

namespace mrp::trainer {

using encoder::ClassId;
using encoder::FrozenModel;
using encoder::PromptSet;
using metareg::ModulatorParams;

enum class Regime { plain, loss_reg, prometar };
std::string_view regime_name(Regime r);  // "plain", "loss-reg", "prometar"
Regime parse_regime(std::string_view name);

enum class MetaGradientMode { exact, first_order };
std::string_view mode_name(MetaGradientMode m);  // "exact", "first-order"
MetaGradientMode parse_mode(std::string_view name);

/// Frozen-model construction from a dataset (see build_model).
struct ModelConfig {
  std::size_t class_dim = 8;
  std::size_t prompt_dim = 4;
  std::size_t embed_dim = 8;
  double tau = encoder::kDefaultTau;
  /// Stddev of the noise added when naming classes from their prototypes.
  double naming_noise = 0.1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Encoder weights from the dataset seed's "encoder" stream, class
/// descriptors named from the dataset prototypes ("naming" stream).
FrozenModel build_model(const tasks::Dataset& dataset, const ModelConfig& config);

struct TrainConfig {
  Regime regime = Regime::prometar;
  double alpha = 0.0025;
  double beta = 0.0025;
  double lr_conv = 0.0025;
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  double mixup_mu = 1.0;
  double mixup_nu = 1.0;
  double lambda = 0.1;
  MetaGradientMode meta_gradient_mode = MetaGradientMode::exact;
  std::size_t modulator_hidden = metareg::kDefaultHidden;
  double prompt_init_std = 0.02;
  /// Let the modulator see through g and g_reg (ablation; off by default).
  bool modulator_grad_inputs = false;
  /// Replaces sigmoid(m_phi) by this constant in every inner step.
  std::optional<double> gate_override;
  /// Alignment diagnostics are logged every `align_every` steps (0 = never).
  std::size_t align_every = 1;
  std::uint64_t seed = 0;

  /// Throws Error(config_error). Step sizes may be 0 (reduction checks).
  void validate() const;
};

/// Features with hard labels.
struct LabeledSet {
  Tensor features;  // [d_x, n]
  std::vector<ClassId> labels;
  std::size_t size() const noexcept { return labels.size(); }
  LabeledSet subset(std::span<const std::size_t> positions) const;
  /// Distinct labels in first-appearance order.
  std::vector<ClassId> classes() const;
  encoder::Batch as_batch(std::span<const ClassId> candidates) const;
};

LabeledSet labeled_split(const tasks::Dataset& dataset, tasks::Split split);

/// Class-disjoint partition of a batch; positions index into the batch.
struct Episode {
  std::vector<ClassId> train_classes;
  std::vector<ClassId> val_classes;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Random ceil(C/2) / floor(C/2) partition of the batch's C classes.
/// Throws Error(invalid_argument) for a single-class batch.
Episode split_episode(std::span<const ClassId> labels, Rng& rng);

/// For validation sample i: partner[i] is a position in Episode::train, and
/// the mixed sample is rho[i] * val_i + (1 - rho[i]) * train_partner.
struct MixupPlan {
  std::vector<std::size_t> partner;
  std::vector<double> rho;
};

MixupPlan draw_mixup(const Episode& episode, double mu, double nu, Rng& rng);

struct AugmentedSample {
  std::vector<double> feature;  // mixed final image embedding, d_e
  std::vector<double> label;    // distribution over all N_c classes
  double rho = 1.0;
};

/// Mixed embeddings at the given prompts.
std::vector<AugmentedSample> task_augment(const FrozenModel& model, const PromptSet& prompts,
                                          const LabeledSet& batch, const Episode& episode,
                                          const MixupPlan& plan);
std::vector<AugmentedSample> task_augment(const FrozenModel& model, const PromptSet& prompts,
                                          const LabeledSet& batch, const Episode& episode,
                                          double mu, double nu, Rng& rng);

struct InnerOptions {
  double alpha = 0.0025;
  bool use_regularizer = true;
  MetaGradientMode mode = MetaGradientMode::exact;
  bool modulator_grad_inputs = false;
  std::optional<double> gate_override;
  /// Fixed modulator inputs in place of the live g, g_reg. With detached
  /// inputs this is the same function of (Theta, phi) as seen by autodiff,
  /// which lets finite differences hold the blocked path constant.
  std::optional<metareg::GradientPair> frozen_modulator_inputs;
};

/// Graph nodes of one inner step. g, g_reg, gate and modulated are flat
/// [2 d_p, 1] columns (theta_vis first); the last three are absent when the
/// regularizer is disabled.
struct InnerExpr {
  ad::NodeId vis;
  ad::NodeId txt;
  ad::NodeId loss;
  ad::NodeId g;
  std::optional<ad::NodeId> reg;
  std::optional<ad::NodeId> g_reg;
  std::optional<ad::NodeId> gate;
  std::optional<ad::NodeId> modulated;
};

/// `candidates` are the softmax classes of the loss; the regularizer's text
/// part covers `reg_classes`.
InnerExpr inner_adapt_expr(ad::Graph& g, const FrozenModel& model,
                           const encoder::PromptNodes& theta, const metareg::ModulatorNodes& phi,
                           const LabeledSet& train, std::span<const ClassId> candidates,
                           std::span<const ClassId> reg_classes, const InnerOptions& options);

/// g and g_reg of the inner step at Theta, numerically.
metareg::GradientPair inner_gradients(const FrozenModel& model, const PromptSet& theta,
                                      const LabeledSet& train, std::span<const ClassId> candidates,
                                      std::span<const ClassId> reg_classes);

PromptSet inner_adapt(const FrozenModel& model, const PromptSet& theta, const ModulatorParams& phi,
                      const LabeledSet& train, std::span<const ClassId> candidates,
                      const InnerOptions& options);

/// Outer loss L(Theta^; Aug(D_val)) as a graph expression.
ad::NodeId outer_loss_expr(ad::Graph& g, const FrozenModel& model, const InnerExpr& inner,
                           const LabeledSet& batch, const Episode& episode, const MixupPlan& plan,
                           std::span<const ClassId> candidates);

/// Value of the outer loss alone.
double outer_loss(const FrozenModel& model, const PromptSet& theta, const ModulatorParams& phi,
                  const LabeledSet& batch, const Episode& episode, const MixupPlan& plan,
                  std::span<const ClassId> candidates, const InnerOptions& inner);

struct OuterResult {
  PromptSet theta;
  ModulatorParams phi;
  double outer_loss = 0.0;
  std::vector<double> grad_theta;  // flat, theta_vis first
  std::vector<double> grad_phi;    // ModulatorParams::flat order
  std::vector<double> gate;        // sigmoid(m_phi) per prompt coordinate
};

/// Evaluates the outer loss and its gradients for a fixed episode and plan,
/// then applies Theta -= beta grad_Theta, phi -= beta grad_phi. Throws
/// Error(non_finite) naming the offending quantity.
OuterResult outer_update(const FrozenModel& model, const PromptSet& theta,
                         const ModulatorParams& phi, const LabeledSet& batch,
                         const Episode& episode, const MixupPlan& plan,
                         std::span<const ClassId> candidates, const InnerOptions& inner,
                         double beta);

/// Theta - lr * grad L(Theta; batch), contrastive loss only.
PromptSet conventional_step(const FrozenModel& model, const PromptSet& theta,
                            const encoder::Batch& batch, double lr);
/// Theta - lr * grad (L + lambda R)(Theta; batch), R over the batch's classes.
PromptSet loss_reg_step(const FrozenModel& model, const PromptSet& theta, const LabeledSet& batch,
                        std::span<const ClassId> candidates, double lambda, double lr);

/// One TrainLog line; absent values serialize as null.
struct StepRecord {
  std::size_t step = 0;
  Regime regime = Regime::plain;
  double loss = 0.0;
  double reg = 0.0;
  std::optional<double> outer_loss;
  std::optional<double> gate_mean;
  std::optional<double> gate_min;
  std::optional<double> gate_max;
  std::optional<double> align_g;
  std::optional<double> align_greg;
};

std::string to_json_line(const StepRecord& r);

struct TrainResult {
  PromptSet initial;
  ModulatorParams initial_modulator;
  PromptSet prompts;
  ModulatorParams modulator;
  std::vector<StepRecord> log;
};

/// Called after every step with the updated parameters.
using StepObserver = std::function<void(std::size_t step, const PromptSet&, const ModulatorParams&)>;

TrainResult train(const FrozenModel& model, const tasks::Dataset& dataset, const TrainConfig& config,
                  const StepObserver& observer = {});

}  // namespace mrp::trainer

#endif  // MRP_TRAINER_HPP
