#include "mrp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

#include <json.hpp>

#include "mrp/error.hpp"
#include "mrp/util.hpp"

namespace mrp::metrics {

namespace {

using json = nlohmann::ordered_json;

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::shape_mismatch, "dot: length mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> flat_pair(const ad::Values& v, ad::NodeId a, ad::NodeId b) {
  std::vector<double> out(v[a].values());
  out.insert(out.end(), v[b].values().begin(), v[b].values().end());
  return out;
}

}  // namespace

double accuracy(const encoder::FrozenModel& model, const encoder::PromptSet& prompts,
                const Tensor& features, std::span<const ClassId> labels,
                std::span<const ClassId> candidates) {
  if (labels.empty()) throw Error(ErrorCode::invalid_argument, "accuracy of an empty set");
  if (features.cols() != labels.size()) {
    throw Error(ErrorCode::shape_mismatch, "accuracy: feature columns and labels differ");
  }
  for (ClassId y : labels) {
    if (std::find(candidates.begin(), candidates.end(), y) == candidates.end()) {
      throw Error(ErrorCode::invalid_argument,
                  "accuracy: label " + std::to_string(y) + " is not among the evaluated classes");
    }
  }
  const Tensor probs = encoder::class_probabilities(model, prompts, features, candidates);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < candidates.size(); ++k) {
      if (probs(k, n) > probs(best, n)) best = k;
    }
    if (candidates[best] == labels[n]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

double harmonic_mean(double base_acc, double new_acc) {
  if (!(base_acc > 0.0) || !(new_acc > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "harmonic_mean needs positive accuracies");
  }
  return 2.0 * base_acc * new_acc / (base_acc + new_acc);
}

double task_overfitting_score(double base_pr, double new_pr, double base_ref, double new_ref) {
  return std::max(0.0, base_pr - base_ref) - (new_pr - new_ref);
}

double taylor_gap(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> grad, std::span<const double> direction, double alpha) {
  if (point.size() != grad.size() || point.size() != direction.size()) {
    throw Error(ErrorCode::shape_mismatch, "taylor_gap: point, gradient and direction differ in length");
  }
  if (alpha == 0.0) return 0.0;
  std::vector<double> moved(point.begin(), point.end());
  for (std::size_t i = 0; i < moved.size(); ++i) moved[i] -= alpha * direction[i];
  const double linear = f(point) - alpha * dot(grad, direction);
  return std::abs(f(moved) - linear);
}

double taylor_gap(const encoder::FrozenModel& model, const encoder::PromptSet& theta,
                  std::span<const double> direction, double alpha, const encoder::Batch& eval) {
  ad::Graph g;
  const auto p = encoder::prompt_inputs(g, theta.prompt_dim());
  const ad::NodeId loss = encoder::contrastive_loss_expr(g, model, p, eval);
  const auto grads = ad::gradient(g, loss, {p.vis, p.txt});
  const ad::Values v = ad::forward(g, encoder::bind_prompts(p, theta));
  const std::vector<double> grad = flat_pair(v, grads.at(p.vis), grads.at(p.txt));
  const ScalarFunction f = [&](std::span<const double> x) {
    return encoder::contrastive_loss(model, encoder::PromptSet::from_flat(x), eval);
  };
  const std::vector<double> point = theta.flat();
  return taylor_gap(f, point, grad, direction, alpha);
}

HalvingTest taylor_halving_test(const encoder::FrozenModel& model, const encoder::PromptSet& theta,
                                const encoder::Batch& eval, std::size_t directions, double alpha,
                                Rng& rng) {
  if (directions == 0 || !(alpha > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "halving test needs directions > 0 and alpha > 0");
  }
  HalvingTest out;
  const std::size_t n = 2 * theta.prompt_dim();
  for (std::size_t k = 0; k < directions; ++k) {
    std::vector<double> d(n);
    for (double& x : d) x = sample_normal(rng);
    const double norm = std::sqrt(dot(d, d));
    for (double& x : d) x /= norm;
    const double full = taylor_gap(model, theta, d, alpha, eval);
    const double half = taylor_gap(model, theta, d, alpha / 2.0, eval);
    out.ratios.push_back(full / half);
  }
  out.mean_ratio = std::accumulate(out.ratios.begin(), out.ratios.end(), 0.0) /
                   static_cast<double>(out.ratios.size());
  return out;
}

AlignmentDiagnostics alignment_terms(const encoder::FrozenModel& model,
                                     const encoder::PromptSet& theta,
                                     const metareg::ModulatorParams& phi,
                                     const trainer::LabeledSet& batch,
                                     const trainer::Episode& episode,
                                     std::span<const ClassId> candidates,
                                     const trainer::InnerOptions& options) {
  ad::Graph g;
  const auto p = encoder::prompt_inputs(g, theta.prompt_dim());
  const auto m = metareg::modulator_inputs(g, phi.prompt_params(), phi.hidden());
  const trainer::LabeledSet train = batch.subset(episode.train);
  const trainer::LabeledSet val = batch.subset(episode.val);
  const auto inner = trainer::inner_adapt_expr(g, model, p, m, train, candidates,
                                               episode.train_classes, options);
  const encoder::Batch val_batch = val.as_batch(candidates);
  const ad::NodeId val_loss = encoder::contrastive_loss_expr(g, model, p, val_batch);
  const auto gv = ad::gradient(g, val_loss, {p.vis, p.txt});
  const ad::NodeId adapted = encoder::contrastive_loss_expr(g, model, {inner.vis, inner.txt}, val_batch);

  ad::Bindings b = encoder::bind_prompts(p, theta);
  metareg::bind_modulator(b, m, phi);
  const ad::Values v = ad::forward(g, b);
  const std::vector<double> grad_val = flat_pair(v, gv.at(p.vis), gv.at(p.txt));

  AlignmentDiagnostics d;
  d.alpha = options.alpha;
  d.val_loss = v.scalar(val_loss);
  d.term_g_align = dot(grad_val, v[inner.g].values());
  d.term_reg_align = inner.modulated ? dot(grad_val, v[*inner.modulated].values()) : 0.0;
  d.predicted = d.val_loss - options.alpha * (d.term_g_align + d.term_reg_align);
  d.actual = v.scalar(adapted);
  return d;
}

double alignment_halving_ratio(const encoder::FrozenModel& model, const encoder::PromptSet& theta,
                               const metareg::ModulatorParams& phi, const trainer::LabeledSet& batch,
                               std::span<const trainer::Episode> episodes,
                               std::span<const ClassId> candidates, trainer::InnerOptions options) {
  if (episodes.empty()) throw Error(ErrorCode::invalid_argument, "no episodes");
  const double alpha = options.alpha;
  double total = 0.0;
  for (const auto& ep : episodes) {
    options.alpha = alpha;
    const double full = std::abs(alignment_terms(model, theta, phi, batch, ep, candidates, options).residual());
    options.alpha = alpha / 2.0;
    const double half = std::abs(alignment_terms(model, theta, phi, batch, ep, candidates, options).residual());
    total += full / half;
  }
  return total / static_cast<double>(episodes.size());
}

MetaGradientCheck check_meta_gradients(const encoder::FrozenModel& model,
                                       const encoder::PromptSet& theta,
                                       const metareg::ModulatorParams& phi,
                                       const trainer::LabeledSet& batch,
                                       const trainer::Episode& episode,
                                       const trainer::MixupPlan& plan,
                                       std::span<const ClassId> candidates,
                                       const trainer::InnerOptions& options, double h,
                                       double abs_floor) {
  const auto exact = trainer::outer_update(model, theta, phi, batch, episode, plan, candidates, options, 0.0);
  std::vector<double> analytic = exact.grad_theta;
  analytic.insert(analytic.end(), exact.grad_phi.begin(), exact.grad_phi.end());

  std::vector<double> point = theta.flat();
  const std::size_t n_theta = point.size();
  const std::vector<double> phi_flat = phi.flat();
  point.insert(point.end(), phi_flat.begin(), phi_flat.end());

  // Detached modulator inputs are constants to autodiff, so the oracle holds
  // them at their values at the base point.
  trainer::InnerOptions fd_options = options;
  if (!options.modulator_grad_inputs && !options.gate_override && !options.frozen_modulator_inputs) {
    fd_options.frozen_modulator_inputs = trainer::inner_gradients(
        model, theta, batch.subset(episode.train), candidates, episode.train_classes);
  }
  const ad::ScalarFunction f = [&](const Tensor& x) {
    const auto all = x.data();
    const auto th = encoder::PromptSet::from_flat(all.first(n_theta));
    metareg::ModulatorParams ph = phi;
    ph.assign_flat(all.subspan(n_theta));
    return trainer::outer_loss(model, th, ph, batch, episode, plan, candidates, fd_options);
  };
  const Tensor numeric = ad::fd_gradient(f, Tensor::column(point), h);

  MetaGradientCheck out;
  out.comparison = ad::compare_gradients(analytic, numeric.data(), abs_floor);
  out.coordinates = analytic.size();
  out.outer_loss = exact.outer_loss;
  const std::size_t i = out.comparison.worst_index;
  const std::size_t dp = theta.prompt_dim();
  if (i < n_theta) {
    out.worst_coordinate = (i < dp ? "theta.vis[" + std::to_string(i) : "theta.txt[" + std::to_string(i - dp)) + "]";
  } else {
    std::size_t j = i - n_theta;
    const char* names[] = {"w1", "b1", "w2", "b2"};
    const Tensor* blocks[] = {&phi.w1, &phi.b1, &phi.w2, &phi.b2};
    for (std::size_t b = 0; b < 4; ++b) {
      if (j < blocks[b]->size()) {
        out.worst_coordinate = std::string("phi.") + names[b] + "[" + std::to_string(j) + "]";
        break;
      }
      j -= blocks[b]->size();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

RunMetrics evaluate_run(const encoder::FrozenModel& model, const encoder::PromptSet& prompts,
                        const tasks::Dataset& dataset, std::string regime, std::uint64_t seed) {
  RunMetrics r;
  r.regime = std::move(regime);
  r.seed = seed;
  r.shift = dataset.spec.shift.to_string();
  const auto base = trainer::labeled_split(dataset, tasks::Split::base_test);
  const auto novel = trainer::labeled_split(dataset, tasks::Split::new_test);
  const auto reference = model.reference.as_prompts();
  r.base_acc = accuracy(model, prompts, base.features, base.labels, dataset.base_classes);
  r.new_acc = accuracy(model, prompts, novel.features, novel.labels, dataset.new_classes);
  r.ref_base_acc = accuracy(model, reference, base.features, base.labels, dataset.base_classes);
  r.ref_new_acc = accuracy(model, reference, novel.features, novel.labels, dataset.new_classes);
  r.hm = (r.base_acc > 0.0 && r.new_acc > 0.0) ? harmonic_mean(r.base_acc, r.new_acc) : 0.0;
  r.tos = task_overfitting_score(r.base_acc, r.new_acc, r.ref_base_acc, r.ref_new_acc);
  return r;
}

namespace {

constexpr const char* kColumns[] = {"base_acc", "new_acc", "hm", "ref_base_acc", "ref_new_acc", "tos"};

double* field(RunMetrics& r, std::size_t i) {
  double* fields[] = {&r.base_acc, &r.new_acc, &r.hm, &r.ref_base_acc, &r.ref_new_acc, &r.tos};
  return fields[i];
}

double get(const RunMetrics& r, std::size_t i) { return *field(const_cast<RunMetrics&>(r), i); }

json run_json(const RunMetrics& r) {
  json j{{"regime", r.regime}, {"seed", r.seed}, {"shift", r.shift}};
  for (std::size_t i = 0; i < std::size(kColumns); ++i) j[kColumns[i]] = get(r, i);
  return j;
}

json values_json(const RunMetrics& r) {
  json j = json::object();
  for (std::size_t i = 0; i < std::size(kColumns); ++i) j[kColumns[i]] = get(r, i);
  return j;
}

std::string csv_row(const std::string& regime, const std::string& seed, const std::string& shift,
                    const RunMetrics& r) {
  std::string row = regime + "," + seed + "," + shift;
  for (std::size_t i = 0; i < std::size(kColumns); ++i) row += "," + format_double(get(r, i));
  return row + "\n";
}

std::string csv_header() {
  std::string h = "regime,seed,shift";
  for (const char* c : kColumns) h += std::string(",") + c;
  return h + "\n";
}

}  // namespace

std::vector<RunMetrics> MetricsReport::sorted_runs() const {
  std::vector<RunMetrics> out = runs;
  std::stable_sort(out.begin(), out.end(), [](const RunMetrics& a, const RunMetrics& b) {
    return std::tie(a.regime, a.shift, a.seed) < std::tie(b.regime, b.shift, b.seed);
  });
  return out;
}

std::vector<Summary> MetricsReport::summaries() const {
  std::map<std::pair<std::string, std::string>, std::vector<RunMetrics>> groups;
  for (const auto& r : sorted_runs()) groups[{r.regime, r.shift}].push_back(r);
  std::vector<Summary> out;
  for (const auto& [key, rs] : groups) {
    Summary s;
    s.regime = key.first;
    s.shift = key.second;
    s.count = rs.size();
    s.mean.regime = s.stddev.regime = s.regime;
    s.mean.shift = s.stddev.shift = s.shift;
    const double n = static_cast<double>(rs.size());
    for (std::size_t i = 0; i < std::size(kColumns); ++i) {
      double mean = 0.0;
      for (const auto& r : rs) mean += get(r, i);
      mean /= n;
      double var = 0.0;
      for (const auto& r : rs) var += (get(r, i) - mean) * (get(r, i) - mean);
      *field(s.mean, i) = mean;
      *field(s.stddev, i) = rs.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    }
    // Harmonic mean of the mean accuracies, so the row is self-consistent.
    s.mean.hm = (s.mean.base_acc > 0.0 && s.mean.new_acc > 0.0)
                    ? harmonic_mean(s.mean.base_acc, s.mean.new_acc)
                    : 0.0;
    out.push_back(std::move(s));
  }
  return out;
}

std::string MetricsReport::to_json() const {
  json doc;
  doc["version"] = 1;
  doc["reference"] = "zero prompt";
  doc["runs"] = json::array();
  for (const auto& r : sorted_runs()) doc["runs"].push_back(run_json(r));
  doc["summaries"] = json::array();
  for (const auto& s : summaries()) {
    doc["summaries"].push_back(json{{"regime", s.regime},
                                    {"shift", s.shift},
                                    {"count", s.count},
                                    {"mean", values_json(s.mean)},
                                    {"std", values_json(s.stddev)}});
  }
  return doc.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(std::string_view text, std::string_view source) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::parse_error, std::string(source) + ": " + what);
  };
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(e.what());
  }
  if (!doc.is_object() || doc.value("version", 0) != 1 || !doc.contains("runs") || !doc["runs"].is_array()) {
    fail("not a version 1 metrics report");
  }
  MetricsReport rep;
  try {
    for (const auto& j : doc["runs"]) {
      RunMetrics r;
      r.regime = j.at("regime").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.shift = j.at("shift").get<std::string>();
      for (std::size_t i = 0; i < std::size(kColumns); ++i) *field(r, i) = j.at(kColumns[i]).get<double>();
      rep.runs.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    fail(e.what());
  }
  return rep;
}

std::string MetricsReport::to_csv() const {
  std::string out = csv_header();
  for (const auto& r : sorted_runs()) out += csv_row(r.regime, std::to_string(r.seed), r.shift, r);
  return out;
}

std::string MetricsReport::to_summary_csv() const {
  std::string out = to_csv();
  for (const auto& s : summaries()) {
    out += csv_row(s.regime, "mean", s.shift, s.mean);
    if (s.count > 1) out += csv_row(s.regime, "std", s.shift, s.stddev);
  }
  return out;
}

}  // namespace mrp::metrics
