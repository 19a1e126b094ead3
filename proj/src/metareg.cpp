#include "mrp/metareg.hpp"

#include <string>

#include "mrp/error.hpp"

namespace mrp::metareg {

ModulatorParams ModulatorParams::zeros(std::size_t prompt_params, std::size_t hidden) {
  if (prompt_params == 0 || hidden == 0) {
    throw Error(ErrorCode::invalid_argument, "modulator extents must be positive");
  }
  return ModulatorParams{Tensor::zeros(hidden, 2 * prompt_params), Tensor::zeros(hidden, 1),
                         Tensor::zeros(prompt_params, hidden), Tensor::zeros(prompt_params, 1)};
}

ModulatorParams ModulatorParams::random(std::size_t prompt_params, std::size_t hidden,
                                        double stddev, Rng& rng) {
  ModulatorParams p = zeros(prompt_params, hidden);
  for (Tensor* t : {&p.w1, &p.b1, &p.w2, &p.b2}) {
    for (double& v : t->data()) v = sample_normal(rng, 0.0, stddev);
  }
  return p;
}

std::vector<double> ModulatorParams::flat() const {
  std::vector<double> out;
  out.reserve(count());
  for (const Tensor* t : {&w1, &b1, &w2, &b2}) {
    out.insert(out.end(), t->values().begin(), t->values().end());
  }
  return out;
}

void ModulatorParams::assign_flat(std::span<const double> flat) {
  if (flat.size() != count()) {
    throw Error(ErrorCode::shape_mismatch, "modulator vector has length " +
                                               std::to_string(flat.size()) + ", expected " +
                                               std::to_string(count()));
  }
  std::size_t off = 0;
  for (Tensor* t : {&w1, &b1, &w2, &b2}) {
    for (double& v : t->data()) v = flat[off++];
  }
}

ModulatorNodes modulator_inputs(ad::Graph& g, std::size_t prompt_params, std::size_t hidden) {
  return ModulatorNodes{g.input({hidden, 2 * prompt_params}, "phi_w1"),
                        g.input({hidden, 1}, "phi_b1"),
                        g.input({prompt_params, hidden}, "phi_w2"),
                        g.input({prompt_params, 1}, "phi_b2")};
}

void bind_modulator(ad::Bindings& b, const ModulatorNodes& nodes, const ModulatorParams& phi) {
  b.insert_or_assign(nodes.w1, phi.w1);
  b.insert_or_assign(nodes.b1, phi.b1);
  b.insert_or_assign(nodes.w2, phi.w2);
  b.insert_or_assign(nodes.b2, phi.b2);
}

ad::NodeId regularizer_expr(ad::Graph& g, const encoder::FrozenModel& model,
                            const encoder::PromptNodes& p, const Tensor& features,
                            std::span<const encoder::ClassId> classes) {
  const Tensor descriptors = model.classes.select(classes);
  ad::NodeId z = encoder::image_embeddings(g, model.weights, p.vis, features);
  ad::NodeId z_ref = encoder::reference_image_embeddings(g, model.weights, model.reference, features);
  ad::NodeId w = encoder::text_embeddings(g, model.weights, p.txt, descriptors);
  ad::NodeId w_ref =
      encoder::reference_text_embeddings(g, model.weights, model.reference, descriptors);
  ad::NodeId r_vis = g.sum(g.smooth_abs(g.subtract(z, z_ref)));
  ad::NodeId r_txt = g.sum(g.smooth_abs(g.subtract(w, w_ref)));
  return g.add(r_vis, r_txt);
}

ad::NodeId modulation_vector_expr(ad::Graph& g, const ModulatorNodes& phi, ad::NodeId grad,
                                  ad::NodeId grad_reg) {
  const ad::Shape gs = g.shape(grad);
  if (gs != g.shape(grad_reg) || gs.cols != 1 || g.shape(phi.w1).cols != 2 * gs.rows ||
      g.shape(phi.w2).rows != gs.rows) {
    throw Error(ErrorCode::shape_mismatch,
                "modulator expects [P,1] gradients with P = " +
                    std::to_string(g.shape(phi.w2).rows) + ", got " + ad::to_string(gs) +
                    " and " + ad::to_string(g.shape(grad_reg)));
  }
  ad::NodeId in = g.concat(grad, grad_reg);
  ad::NodeId hidden = g.tanh(g.add(g.matmul(phi.w1, in), phi.b1));
  return g.add(g.matmul(phi.w2, hidden), phi.b2);
}

ad::NodeId modulate_expr(ad::Graph& g, ad::NodeId grad_reg, ad::NodeId m) {
  return g.hadamard(g.sigmoid(m), grad_reg);
}

double regularizer(const encoder::FrozenModel& model, const encoder::PromptSet& prompts,
                   const Tensor& features, std::span<const encoder::ClassId> classes) {
  ad::Graph g;
  encoder::PromptNodes p = encoder::prompt_inputs(g, prompts.prompt_dim());
  ad::NodeId r = regularizer_expr(g, model, p, features, classes);
  return ad::forward(g, encoder::bind_prompts(p, prompts)).scalar(r);
}

std::vector<double> modulation_vector(const GradientPair& pair, const ModulatorParams& phi) {
  if (pair.g.size() != pair.g_reg.size() || pair.g.size() != phi.prompt_params()) {
    throw Error(ErrorCode::shape_mismatch, "gradient pair does not match the modulator layout");
  }
  ad::Graph g;
  ModulatorNodes nodes = modulator_inputs(g, phi.prompt_params(), phi.hidden());
  ad::NodeId gn = g.constant(Tensor::column(pair.g));
  ad::NodeId rn = g.constant(Tensor::column(pair.g_reg));
  ad::NodeId m = modulation_vector_expr(g, nodes, gn, rn);
  ad::Bindings b;
  bind_modulator(b, nodes, phi);
  return ad::forward(g, b)[m].values();
}

std::vector<double> modulate(std::span<const double> grad_reg, std::span<const double> m) {
  if (grad_reg.size() != m.size()) {
    throw Error(ErrorCode::shape_mismatch, "modulate: length mismatch");
  }
  ad::Graph g;
  ad::NodeId r = g.constant(Tensor::column({grad_reg.begin(), grad_reg.end()}));
  ad::NodeId mm = g.constant(Tensor::column({m.begin(), m.end()}));
  ad::NodeId out = modulate_expr(g, r, mm);
  return ad::forward(g, {})[out].values();
}

}  // namespace mrp::metareg
