#ifndef MRP_METRICS_HPP
#define MRP_METRICS_HPP

// Accuracy, harmonic mean, task overfitting score, and the one-step
// diagnostics: the first-order Taylor residual of the loss and the
// decomposition of the one-step outer loss into
//   L(Theta; D_val) - alpha (<grad L_val, g> + <grad L_val, gate * g_reg>).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrp/encoder.hpp"
#include "mrp/finite_diff.hpp"
#include "mrp/metareg.hpp"
#include "mrp/rng.hpp"
#include "mrp/tasks.hpp"
#include "mrp/trainer.hpp"

namespace mrp::metrics {

using encoder::ClassId;

/// Top-1 accuracy in percent among `candidates`. Throws Error(invalid_argument)
/// for an empty set or a label outside the candidates.
double accuracy(const encoder::FrozenModel& model, const encoder::PromptSet& prompts,
                const Tensor& features, std::span<const ClassId> labels,
                std::span<const ClassId> candidates);

/// 2 b n / (b + n). Throws Error(invalid_argument) unless both are > 0.
double harmonic_mean(double base_acc, double new_acc);

/// max(0, base_pr - base_ref) - (new_pr - new_ref). Only the base gain is
/// clamped.
double task_overfitting_score(double base_pr, double new_pr, double base_ref, double new_ref);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// |f(x - alpha d) - (f(x) - alpha <grad, d>)|.
double taylor_gap(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> grad, std::span<const double> direction, double alpha);

/// Taylor residual of the contrastive loss on `eval` around the prompts.
double taylor_gap(const encoder::FrozenModel& model, const encoder::PromptSet& theta,
                  std::span<const double> direction, double alpha, const encoder::Batch& eval);

struct HalvingTest {
  std::vector<double> ratios;  // residual(alpha) / residual(alpha / 2), one per direction
  double mean_ratio = 0.0;
};

/// Ratios over `directions` random unit directions drawn from `rng`.
HalvingTest taylor_halving_test(const encoder::FrozenModel& model, const encoder::PromptSet& theta,
                                const encoder::Batch& eval, std::size_t directions, double alpha,
                                Rng& rng);

struct AlignmentDiagnostics {
  double val_loss = 0.0;        // L(Theta; D_val)
  double term_g_align = 0.0;    // <grad L(Theta; D_val), g>
  double term_reg_align = 0.0;  // <grad L(Theta; D_val), gate * g_reg>
  double alpha = 0.0;
  double predicted = 0.0;       // val_loss - alpha (term_g_align + term_reg_align)
  double actual = 0.0;          // L(Theta^; D_val) after the inner step
  double residual() const { return actual - predicted; }
};

/// g, g_reg and the gate come from the episode-train part of `batch`; losses
/// use the un-augmented episode-val part.
AlignmentDiagnostics alignment_terms(const encoder::FrozenModel& model,
                                     const encoder::PromptSet& theta,
                                     const metareg::ModulatorParams& phi,
                                     const trainer::LabeledSet& batch,
                                     const trainer::Episode& episode,
                                     std::span<const ClassId> candidates,
                                     const trainer::InnerOptions& options);

/// Mean of residual(alpha) / residual(alpha / 2) of the alignment prediction
/// over the given episodes.
double alignment_halving_ratio(const encoder::FrozenModel& model, const encoder::PromptSet& theta,
                               const metareg::ModulatorParams& phi, const trainer::LabeledSet& batch,
                               std::span<const trainer::Episode> episodes,
                               std::span<const ClassId> candidates, trainer::InnerOptions options);

struct MetaGradientCheck {
  ad::GradientComparison comparison;  // over theta (vis, txt) then phi
  std::string worst_coordinate;       // e.g. "phi.w1[12]"
  std::size_t coordinates = 0;
  double outer_loss = 0.0;
};

/// Autodiff gradients of the outer loss with respect to every coordinate of
/// Theta and phi against central differences of step h. Coordinates whose
/// difference quotient is below abs_floor are compared absolutely. When the
/// modulator inputs are detached, the oracle keeps them fixed at Theta.
MetaGradientCheck check_meta_gradients(const encoder::FrozenModel& model,
                                       const encoder::PromptSet& theta,
                                       const metareg::ModulatorParams& phi,
                                       const trainer::LabeledSet& batch,
                                       const trainer::Episode& episode,
                                       const trainer::MixupPlan& plan,
                                       std::span<const ClassId> candidates,
                                       const trainer::InnerOptions& options, double h = 1e-5,
                                       double abs_floor = 1e-8);

// -- reports ------------------------------------------------------------------

/// One evaluated checkpoint. The reference model is the frozen model with the
/// zero prompts.
struct RunMetrics {
  std::string regime;
  std::uint64_t seed = 0;
  std::string shift = "none";
  double base_acc = 0.0;
  double new_acc = 0.0;
  double hm = 0.0;  // 0 when either accuracy is 0
  double ref_base_acc = 0.0;
  double ref_new_acc = 0.0;
  double tos = 0.0;
  bool operator==(const RunMetrics&) const = default;
};

RunMetrics evaluate_run(const encoder::FrozenModel& model, const encoder::PromptSet& prompts,
                        const tasks::Dataset& dataset, std::string regime, std::uint64_t seed);

struct Summary {
  std::string regime;
  std::string shift;
  std::size_t count = 0;
  RunMetrics mean;
  RunMetrics stddev;  // sample standard deviation; 0 for a single run
};

struct MetricsReport {
  std::vector<RunMetrics> runs;

  /// Runs sorted by (regime, shift, seed).
  std::vector<RunMetrics> sorted_runs() const;
  /// One entry per (regime, shift), in sorted order.
  std::vector<Summary> summaries() const;

  std::string to_json() const;
  static MetricsReport from_json(std::string_view text, std::string_view source = "report");
  /// One row per run.
  std::string to_csv() const;
  /// Sorted runs followed by a mean row per (regime, shift), and a std row
  /// where the group has more than one run.
  std::string to_summary_csv() const;
};

}  // namespace mrp::metrics

#endif  // MRP_METRICS_HPP
