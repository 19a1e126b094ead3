#include "mrp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "mrp/error.hpp"
#include "mrp/metrics.hpp"

namespace mrp::trainer {

namespace {

[[noreturn]] void config_fail(const std::string& m) { throw Error(ErrorCode::config_error, m); }

void require_finite_nonneg(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0) config_fail(std::string(name) + " must be finite and >= 0");
}

/// [d_p, 2 d_p] matrix picking block `which` (0 = vis, 1 = txt) of a flat column.
Tensor block_selector(std::size_t dp, std::size_t which) {
  Tensor s = Tensor::zeros(dp, 2 * dp);
  for (std::size_t i = 0; i < dp; ++i) s(i, which * dp + i) = 1.0;
  return s;
}

std::vector<double> flat_of(const ad::Values& v, ad::NodeId a, ad::NodeId b) {
  std::vector<double> out(v[a].values());
  out.insert(out.end(), v[b].values().begin(), v[b].values().end());
  return out;
}

PromptSet descend(const PromptSet& theta, std::span<const double> grad, double lr) {
  std::vector<double> flat = theta.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= lr * grad[i];
  return PromptSet::from_flat(flat);
}

struct StepEval {
  PromptSet next;
  double loss = 0.0;
  double reg = 0.0;
};

StepEval plain_eval(const FrozenModel& model, const PromptSet& theta, const encoder::Batch& batch,
                    double lr) {
  ad::Graph g;
  const auto p = encoder::prompt_inputs(g, theta.prompt_dim());
  const ad::NodeId loss = encoder::contrastive_loss_expr(g, model, p, batch);
  const auto grads = ad::gradient(g, loss, {p.vis, p.txt});
  const ad::Values v = ad::forward(g, encoder::bind_prompts(p, theta));
  return StepEval{descend(theta, flat_of(v, grads.at(p.vis), grads.at(p.txt)), lr), v.scalar(loss), 0.0};
}

StepEval loss_reg_eval(const FrozenModel& model, const PromptSet& theta, const LabeledSet& batch,
                       std::span<const ClassId> candidates, double lambda, double lr) {
  ad::Graph g;
  const auto p = encoder::prompt_inputs(g, theta.prompt_dim());
  const ad::NodeId loss = encoder::contrastive_loss_expr(g, model, p, batch.as_batch(candidates));
  const auto classes = batch.classes();
  const ad::NodeId reg = metareg::regularizer_expr(g, model, p, batch.features, classes);
  const ad::NodeId total = g.add(loss, g.scale(reg, lambda));
  const auto grads = ad::gradient(g, total, {p.vis, p.txt});
  const ad::Values v = ad::forward(g, encoder::bind_prompts(p, theta));
  return StepEval{descend(theta, flat_of(v, grads.at(p.vis), grads.at(p.txt)), lr), v.scalar(loss),
                  v.scalar(reg)};
}

void check_mixup(const Episode& episode, const MixupPlan& plan) {
  if (plan.partner.size() != episode.val.size() || plan.rho.size() != episode.val.size()) {
    throw Error(ErrorCode::invalid_argument, "mixup plan does not cover the validation subset");
  }
  for (std::size_t i = 0; i < plan.partner.size(); ++i) {
    if (plan.partner[i] >= episode.train.size()) {
      throw Error(ErrorCode::invalid_argument, "mixup partner out of range");
    }
    if (!(plan.rho[i] >= 0.0 && plan.rho[i] <= 1.0)) {
      throw Error(ErrorCode::invalid_argument, "mixup ratio outside [0, 1]");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::plain: return "plain";
    case Regime::loss_reg: return "loss-reg";
    case Regime::prometar: return "prometar";
  }
  return "plain";
}

Regime parse_regime(std::string_view name) {
  for (Regime r : {Regime::plain, Regime::loss_reg, Regime::prometar}) {
    if (regime_name(r) == name) return r;
  }
  config_fail("unknown regime '" + std::string(name) + "' (plain, loss-reg, prometar)");
}

std::string_view mode_name(MetaGradientMode m) {
  return m == MetaGradientMode::exact ? "exact" : "first-order";
}

MetaGradientMode parse_mode(std::string_view name) {
  if (name == "exact") return MetaGradientMode::exact;
  if (name == "first-order") return MetaGradientMode::first_order;
  config_fail("unknown meta_gradient_mode '" + std::string(name) + "' (exact, first-order)");
}

void ModelConfig::validate() const {
  if (class_dim < 1 || prompt_dim < 1) config_fail("class_dim and prompt_dim must be >= 1");
  if (embed_dim < 2) config_fail("embed_dim must be >= 2");
  if (!(tau > 0.0) || !std::isfinite(tau)) config_fail("tau must be positive");
  require_finite_nonneg(naming_noise, "naming_noise");
}

FrozenModel build_model(const tasks::Dataset& dataset, const ModelConfig& config) {
  config.validate();
  const encoder::Dims dims{dataset.feature_dim(), config.class_dim, config.prompt_dim, config.embed_dim};
  auto weights = encoder::EncoderWeights::generate(dims, dataset.spec.seed);
  Rng naming = make_stream(dataset.spec.seed, "naming");
  auto classes = encoder::ClassSet::from_prototypes(weights, dataset.prototypes, config.naming_noise, naming);
  return FrozenModel{std::move(weights), std::move(classes),
                     encoder::ReferencePrompt::zeros(config.prompt_dim), config.tau};
}

void TrainConfig::validate() const {
  require_finite_nonneg(alpha, "alpha");
  require_finite_nonneg(beta, "beta");
  require_finite_nonneg(lr_conv, "lr_conv");
  require_finite_nonneg(lambda, "lambda");
  require_finite_nonneg(prompt_init_std, "prompt_init_std");
  if (!(mixup_mu > 0.0) || !(mixup_nu > 0.0) || !std::isfinite(mixup_mu) || !std::isfinite(mixup_nu)) {
    config_fail("mixup_mu and mixup_nu must be positive");
  }
  if (batch_size < 2) config_fail("batch_size must be >= 2");
  if (modulator_hidden < 1) config_fail("modulator_hidden must be >= 1");
  if (gate_override && !(*gate_override >= 0.0 && *gate_override <= 1.0)) {
    config_fail("gate_override must lie in [0, 1]");
  }
}

// ---------------------------------------------------------------------------

LabeledSet LabeledSet::subset(std::span<const std::size_t> positions) const {
  LabeledSet out{Tensor::zeros(features.rows(), positions.size()), {}};
  out.labels.reserve(positions.size());
  for (std::size_t n = 0; n < positions.size(); ++n) {
    const std::size_t p = positions[n];
    if (p >= size()) throw Error(ErrorCode::invalid_argument, "subset position out of range");
    for (std::size_t r = 0; r < features.rows(); ++r) out.features(r, n) = features(r, p);
    out.labels.push_back(labels[p]);
  }
  return out;
}

std::vector<ClassId> LabeledSet::classes() const {
  std::vector<ClassId> out;
  for (ClassId c : labels) {
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  return out;
}

encoder::Batch LabeledSet::as_batch(std::span<const ClassId> candidates) const {
  return encoder::make_batch(features, labels, candidates);
}

LabeledSet labeled_split(const tasks::Dataset& dataset, tasks::Split split) {
  const auto idx = dataset.indices(split);
  return LabeledSet{dataset.features(idx), dataset.labels(idx)};
}

// ---------------------------------------------------------------------------

Episode split_episode(std::span<const ClassId> labels, Rng& rng) {
  std::vector<ClassId> classes;
  for (ClassId c : labels) {
    if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
  }
  if (classes.size() < 2) {
    throw Error(ErrorCode::invalid_argument, "episode split needs >= 2 classes in the batch, got " +
                                                 std::to_string(classes.size()));
  }
  std::sort(classes.begin(), classes.end());
  for (std::size_t i = classes.size() - 1; i > 0; --i) {
    std::swap(classes[i], classes[sample_index(rng, i + 1)]);
  }
  const std::size_t n_train = (classes.size() + 1) / 2;
  Episode ep;
  ep.train_classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_train));
  ep.val_classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(n_train), classes.end());
  std::sort(ep.train_classes.begin(), ep.train_classes.end());
  std::sort(ep.val_classes.begin(), ep.val_classes.end());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool in_train = std::binary_search(ep.train_classes.begin(), ep.train_classes.end(), labels[i]);
    (in_train ? ep.train : ep.val).push_back(i);
  }
  return ep;
}

MixupPlan draw_mixup(const Episode& episode, double mu, double nu, Rng& rng) {
  if (episode.train.empty()) throw Error(ErrorCode::invalid_argument, "mixup needs a nonempty train subset");
  MixupPlan plan;
  for (std::size_t i = 0; i < episode.val.size(); ++i) {
    plan.partner.push_back(sample_index(rng, episode.train.size()));
    plan.rho.push_back(sample_beta(rng, mu, nu));
  }
  return plan;
}

std::vector<AugmentedSample> task_augment(const FrozenModel& model, const PromptSet& prompts,
                                          const LabeledSet& batch, const Episode& episode,
                                          const MixupPlan& plan) {
  check_mixup(episode, plan);
  const Tensor z_val = encoder::encode_images(batch.subset(episode.val).features, prompts.vis, model.weights);
  const Tensor z_tr = encoder::encode_images(batch.subset(episode.train).features, prompts.vis, model.weights);
  const std::size_t de = z_val.rows();
  const std::size_t nc = model.classes.size();
  std::vector<AugmentedSample> out;
  for (std::size_t i = 0; i < episode.val.size(); ++i) {
    const std::size_t j = plan.partner[i];
    const double rho = plan.rho[i];
    AugmentedSample s{std::vector<double>(de), std::vector<double>(nc, 0.0), rho};
    for (std::size_t r = 0; r < de; ++r) s.feature[r] = rho * z_val(r, i) + (1.0 - rho) * z_tr(r, j);
    s.label.at(batch.labels[episode.val[i]]) += rho;
    s.label.at(batch.labels[episode.train[j]]) += 1.0 - rho;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<AugmentedSample> task_augment(const FrozenModel& model, const PromptSet& prompts,
                                          const LabeledSet& batch, const Episode& episode,
                                          double mu, double nu, Rng& rng) {
  return task_augment(model, prompts, batch, episode, draw_mixup(episode, mu, nu, rng));
}

// ---------------------------------------------------------------------------

InnerExpr inner_adapt_expr(ad::Graph& g, const FrozenModel& model,
                           const encoder::PromptNodes& theta, const metareg::ModulatorNodes& phi,
                           const LabeledSet& train, std::span<const ClassId> candidates,
                           std::span<const ClassId> reg_classes, const InnerOptions& options) {
  if (train.size() == 0) throw Error(ErrorCode::invalid_argument, "inner step on an empty train subset");
  const std::size_t dp = g.shape(theta.vis).rows;
  const bool first_order = options.mode == MetaGradientMode::first_order;

  InnerExpr e{};
  e.loss = encoder::contrastive_loss_expr(g, model, theta, train.as_batch(candidates));
  const auto lg = ad::gradient(g, e.loss, {theta.vis, theta.txt});
  e.g = g.concat(lg.at(theta.vis), lg.at(theta.txt));
  ad::NodeId step = first_order ? g.detach(e.g) : e.g;

  if (options.use_regularizer) {
    e.reg = metareg::regularizer_expr(g, model, theta, train.features, reg_classes);
    const auto rg = ad::gradient(g, *e.reg, {theta.vis, theta.txt});
    e.g_reg = g.concat(rg.at(theta.vis), rg.at(theta.txt));
    if (options.gate_override) {
      e.gate = g.constant(Tensor::filled(2 * dp, 1, *options.gate_override));
    } else if (options.frozen_modulator_inputs) {
      const auto& fixed = *options.frozen_modulator_inputs;
      if (fixed.g.size() != 2 * dp || fixed.g_reg.size() != 2 * dp) {
        throw Error(ErrorCode::shape_mismatch, "frozen modulator inputs must have 2 d_p entries each");
      }
      const ad::NodeId in_g = g.constant(Tensor::column(fixed.g));
      const ad::NodeId in_r = g.constant(Tensor::column(fixed.g_reg));
      e.gate = g.sigmoid(metareg::modulation_vector_expr(g, phi, in_g, in_r));
    } else {
      const ad::NodeId in_g = options.modulator_grad_inputs ? e.g : g.detach(e.g);
      const ad::NodeId in_r = options.modulator_grad_inputs ? *e.g_reg : g.detach(*e.g_reg);
      e.gate = g.sigmoid(metareg::modulation_vector_expr(g, phi, in_g, in_r));
    }
    e.modulated = g.hadamard(*e.gate, first_order ? g.detach(*e.g_reg) : *e.g_reg);
    step = g.add(step, *e.modulated);
  }

  const ad::NodeId sv = g.constant(block_selector(dp, 0));
  const ad::NodeId st = g.constant(block_selector(dp, 1));
  e.vis = g.subtract(theta.vis, g.scale(g.matmul(sv, step), options.alpha));
  e.txt = g.subtract(theta.txt, g.scale(g.matmul(st, step), options.alpha));
  return e;
}

metareg::GradientPair inner_gradients(const FrozenModel& model, const PromptSet& theta,
                                      const LabeledSet& train, std::span<const ClassId> candidates,
                                      std::span<const ClassId> reg_classes) {
  ad::Graph g;
  const auto p = encoder::prompt_inputs(g, theta.prompt_dim());
  const auto m = metareg::modulator_inputs(g, 2 * theta.prompt_dim(), 1);
  InnerOptions opts;
  opts.gate_override = 0.0;
  const InnerExpr e = inner_adapt_expr(g, model, p, m, train, candidates, reg_classes, opts);
  ad::Bindings b = encoder::bind_prompts(p, theta);
  metareg::bind_modulator(b, m, ModulatorParams::zeros(2 * theta.prompt_dim(), 1));
  const ad::Values v = ad::forward(g, b);
  return {v[e.g].values(), v[*e.g_reg].values()};
}

PromptSet inner_adapt(const FrozenModel& model, const PromptSet& theta, const ModulatorParams& phi,
                      const LabeledSet& train, std::span<const ClassId> candidates,
                      const InnerOptions& options) {
  ad::Graph g;
  const auto p = encoder::prompt_inputs(g, theta.prompt_dim());
  const auto m = metareg::modulator_inputs(g, phi.prompt_params(), phi.hidden());
  const auto classes = train.classes();
  const InnerExpr e = inner_adapt_expr(g, model, p, m, train, candidates, classes, options);
  ad::Bindings b = encoder::bind_prompts(p, theta);
  metareg::bind_modulator(b, m, phi);
  const ad::Values v = ad::forward(g, b);
  return PromptSet{v[e.vis], v[e.txt]};
}

ad::NodeId outer_loss_expr(ad::Graph& g, const FrozenModel& model, const InnerExpr& inner,
                           const LabeledSet& batch, const Episode& episode, const MixupPlan& plan,
                           std::span<const ClassId> candidates) {
  check_mixup(episode, plan);
  const std::size_t nv = episode.val.size();
  const std::size_t nt = episode.train.size();
  if (nv == 0) throw Error(ErrorCode::invalid_argument, "outer loss on an empty validation subset");

  std::vector<std::size_t> all(episode.val);
  all.insert(all.end(), episode.train.begin(), episode.train.end());
  const LabeledSet sources = batch.subset(all);

  Tensor mix = Tensor::zeros(nv + nt, nv);
  Tensor targets = Tensor::zeros(candidates.size(), nv);
  auto row_of = [&](ClassId c) {
    const auto it = std::find(candidates.begin(), candidates.end(), c);
    if (it == candidates.end()) {
      throw Error(ErrorCode::invalid_argument, "class " + std::to_string(c) + " is not a candidate");
    }
    return static_cast<std::size_t>(it - candidates.begin());
  };
  for (std::size_t i = 0; i < nv; ++i) {
    const double rho = plan.rho[i];
    const std::size_t j = plan.partner[i];
    mix(i, i) = rho;
    mix(nv + j, i) += 1.0 - rho;
    targets(row_of(batch.labels[episode.val[i]]), i) += rho;
    targets(row_of(batch.labels[episode.train[j]]), i) += 1.0 - rho;
  }

  const ad::NodeId z = encoder::image_embeddings(g, model.weights, inner.vis, sources.features);
  const ad::NodeId h = g.matmul(z, g.constant(std::move(mix)));
  const ad::NodeId w = encoder::text_embeddings(g, model.weights, inner.txt, model.classes.select(candidates));
  return encoder::soft_cross_entropy(g, encoder::class_log_probs(g, h, w, model.tau), targets);
}

double outer_loss(const FrozenModel& model, const PromptSet& theta, const ModulatorParams& phi,
                  const LabeledSet& batch, const Episode& episode, const MixupPlan& plan,
                  std::span<const ClassId> candidates, const InnerOptions& inner) {
  ad::Graph g;
  const auto p = encoder::prompt_inputs(g, theta.prompt_dim());
  const auto m = metareg::modulator_inputs(g, phi.prompt_params(), phi.hidden());
  const LabeledSet train = batch.subset(episode.train);
  const InnerExpr e = inner_adapt_expr(g, model, p, m, train, candidates, episode.train_classes, inner);
  const ad::NodeId outer = outer_loss_expr(g, model, e, batch, episode, plan, candidates);
  ad::Bindings b = encoder::bind_prompts(p, theta);
  metareg::bind_modulator(b, m, phi);
  return ad::forward(g, b).scalar(outer);
}

OuterResult outer_update(const FrozenModel& model, const PromptSet& theta,
                         const ModulatorParams& phi, const LabeledSet& batch,
                         const Episode& episode, const MixupPlan& plan,
                         std::span<const ClassId> candidates, const InnerOptions& inner,
                         double beta) {
  ad::Graph g;
  const auto p = encoder::prompt_inputs(g, theta.prompt_dim());
  const auto m = metareg::modulator_inputs(g, phi.prompt_params(), phi.hidden());
  const LabeledSet train = batch.subset(episode.train);
  const InnerExpr e = inner_adapt_expr(g, model, p, m, train, candidates, episode.train_classes, inner);
  const ad::NodeId outer = outer_loss_expr(g, model, e, batch, episode, plan, candidates);
  const auto grads = ad::gradient(g, outer, {p.vis, p.txt, m.w1, m.b1, m.w2, m.b2});

  ad::Bindings b = encoder::bind_prompts(p, theta);
  metareg::bind_modulator(b, m, phi);
  ad::Values v = [&] {
    try {
      return ad::forward(g, b);
    } catch (const Error& err) {
      throw Error(err.code(), std::string("outer update aborted: ") + err.what());
    }
  }();

  OuterResult r{theta, phi, v.scalar(outer), {}, {}, {}};
  r.grad_theta = flat_of(v, grads.at(p.vis), grads.at(p.txt));
  for (ad::NodeId n : {m.w1, m.b1, m.w2, m.b2}) {
    const auto& t = v[grads.at(n)].values();
    r.grad_phi.insert(r.grad_phi.end(), t.begin(), t.end());
  }
  if (e.gate) r.gate = v[*e.gate].values();

  r.theta = descend(theta, r.grad_theta, beta);
  std::vector<double> phi_flat = phi.flat();
  for (std::size_t i = 0; i < phi_flat.size(); ++i) phi_flat[i] -= beta * r.grad_phi[i];
  r.phi.assign_flat(phi_flat);
  return r;
}

PromptSet conventional_step(const FrozenModel& model, const PromptSet& theta,
                            const encoder::Batch& batch, double lr) {
  return plain_eval(model, theta, batch, lr).next;
}

PromptSet loss_reg_step(const FrozenModel& model, const PromptSet& theta, const LabeledSet& batch,
                        std::span<const ClassId> candidates, double lambda, double lr) {
  return loss_reg_eval(model, theta, batch, candidates, lambda, lr).next;
}

// ---------------------------------------------------------------------------

std::string to_json_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  j["step"] = r.step;
  j["regime"] = std::string(regime_name(r.regime));
  j["loss"] = r.loss;
  j["reg"] = r.reg;
  j["outer_loss"] = opt(r.outer_loss);
  j["gate_mean"] = opt(r.gate_mean);
  j["gate_min"] = opt(r.gate_min);
  j["gate_max"] = opt(r.gate_max);
  j["align_g"] = opt(r.align_g);
  j["align_greg"] = opt(r.align_greg);
  return j.dump();
}

TrainResult train(const FrozenModel& model, const tasks::Dataset& dataset, const TrainConfig& config,
                  const StepObserver& observer) {
  config.validate();
  if (dataset.base_classes.size() < 2) {
    throw Error(ErrorCode::config_error, "training needs >= 2 base classes");
  }
  if (dataset.feature_dim() != model.weights.dims().feature) {
    throw Error(ErrorCode::shape_mismatch,
                "dataset feature dim " + std::to_string(dataset.feature_dim()) +
                    " does not match encoder feature dim " + std::to_string(model.weights.dims().feature));
  }
  const std::size_t dp = model.weights.dims().prompt;
  Rng init_rng = make_stream(config.seed, "init");
  Rng batch_rng = make_stream(config.seed, "batch");
  Rng split_rng = make_stream(config.seed, "split");
  Rng mixup_rng = make_stream(config.seed, "mixup");

  TrainResult result;
  result.initial = PromptSet::random(dp, config.prompt_init_std, init_rng);
  result.initial_modulator = ModulatorParams::zeros(2 * dp, config.modulator_hidden);
  result.prompts = result.initial;
  result.modulator = result.initial_modulator;

  const LabeledSet pool = labeled_split(dataset, tasks::Split::base_train);
  const std::vector<ClassId>& candidates = dataset.base_classes;
  const InnerOptions inner{config.alpha, true, config.meta_gradient_mode, config.modulator_grad_inputs,
                           config.gate_override};

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[sample_index(batch_rng, i + 1)]);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::vector<std::size_t> pos(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
      const LabeledSet batch = pool.subset(pos);
      StepRecord rec;
      rec.step = step;
      rec.regime = config.regime;

      PromptSet& theta = result.prompts;
      if (config.regime == Regime::loss_reg) {
        StepEval s = loss_reg_eval(model, theta, batch, candidates, config.lambda, config.lr_conv);
        rec.loss = s.loss;
        rec.reg = s.reg;
        theta = std::move(s.next);
      } else {
        rec.reg = metareg::regularizer(model, theta, batch.features, batch.classes());
        StepEval s = plain_eval(model, theta, batch.as_batch(candidates), config.lr_conv);
        rec.loss = s.loss;
        theta = std::move(s.next);
      }

      if (config.regime == Regime::prometar && batch.classes().size() >= 2) {
        const Episode ep = split_episode(batch.labels, split_rng);
        const MixupPlan plan = draw_mixup(ep, config.mixup_mu, config.mixup_nu, mixup_rng);
        if (config.align_every > 0 && step % config.align_every == 0) {
          const auto a = metrics::alignment_terms(model, theta, result.modulator, batch, ep, candidates, inner);
          rec.align_g = a.term_g_align;
          rec.align_greg = a.term_reg_align;
        }
        OuterResult o = outer_update(model, theta, result.modulator, batch, ep, plan, candidates, inner,
                                     config.beta);
        rec.outer_loss = o.outer_loss;
        if (!o.gate.empty()) {
          const auto [lo, hi] = std::minmax_element(o.gate.begin(), o.gate.end());
          rec.gate_min = *lo;
          rec.gate_max = *hi;
          rec.gate_mean = std::accumulate(o.gate.begin(), o.gate.end(), 0.0) / static_cast<double>(o.gate.size());
        }
        theta = std::move(o.theta);
        result.modulator = std::move(o.phi);
      }
      if (observer) observer(step, theta, result.modulator);
      result.log.push_back(rec);
      ++step;
    }
  }
  return result;
}

}  // namespace mrp::trainer
