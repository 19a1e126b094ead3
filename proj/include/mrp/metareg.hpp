#ifndef MRP_METAREG_HPP
#define MRP_METAREG_HPP

// Embedding-anchoring regularizer and the learned gradient modulation.
//
// R = sum_i sum_k |z~_i - z_i|_k + sum_j sum_k |w~_j - w_j|_k with the
// smooth absolute value, z / w the detached reference embeddings.
//
// The modulator is a two-layer tanh network m = W2 tanh(W1 [g ; g_reg] + b1) + b2
// over the flattened prompt gradients (theta_vis first, then theta_txt); the
// regularizer gradient is gated per coordinate: sigmoid(m) * g_reg.

#include <span>
#include <vector>

#include "mrp/encoder.hpp"
#include "mrp/graph.hpp"
#include "mrp/rng.hpp"
#include "mrp/tensor.hpp"

namespace mrp::metareg {

inline constexpr std::size_t kDefaultHidden = 32;

struct ModulatorParams {
  Tensor w1;  // [H, 2P]
  Tensor b1;  // [H, 1]
  Tensor w2;  // [P, H]
  Tensor b2;  // [P, 1]

  static ModulatorParams zeros(std::size_t prompt_params, std::size_t hidden = kDefaultHidden);
  static ModulatorParams random(std::size_t prompt_params, std::size_t hidden, double stddev,
                                Rng& rng);

  std::size_t prompt_params() const noexcept { return b2.size(); }
  std::size_t hidden() const noexcept { return b1.size(); }
  std::size_t count() const noexcept { return w1.size() + b1.size() + w2.size() + b2.size(); }
  /// w1, b1, w2, b2, each row-major.
  std::vector<double> flat() const;
  void assign_flat(std::span<const double> flat);

  bool operator==(const ModulatorParams&) const = default;
};

/// g = grad of the contrastive loss, g_reg = grad of R, both flattened
/// theta_vis then theta_txt.
struct GradientPair {
  std::vector<double> g;
  std::vector<double> g_reg;
};

struct ModulatorNodes {
  ad::NodeId w1, b1, w2, b2;
};

ModulatorNodes modulator_inputs(ad::Graph& g, std::size_t prompt_params, std::size_t hidden);
void bind_modulator(ad::Bindings& b, const ModulatorNodes& nodes, const ModulatorParams& phi);

/// R over the feature columns and the given (episode) classes.
ad::NodeId regularizer_expr(ad::Graph& g, const encoder::FrozenModel& model,
                            const encoder::PromptNodes& p, const Tensor& features,
                            std::span<const encoder::ClassId> classes);

/// m^phi for [P, 1] gradient columns. Callers detach the inputs when the
/// modulator should not see through them.
ad::NodeId modulation_vector_expr(ad::Graph& g, const ModulatorNodes& phi, ad::NodeId grad,
                                  ad::NodeId grad_reg);
ad::NodeId modulate_expr(ad::Graph& g, ad::NodeId grad_reg, ad::NodeId m);

double regularizer(const encoder::FrozenModel& model, const encoder::PromptSet& prompts,
                   const Tensor& features, std::span<const encoder::ClassId> classes);
std::vector<double> modulation_vector(const GradientPair& pair, const ModulatorParams& phi);
std::vector<double> modulate(std::span<const double> grad_reg, std::span<const double> m);

}  // namespace mrp::metareg

#endif  // MRP_METAREG_HPP
