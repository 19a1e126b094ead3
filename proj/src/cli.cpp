#include "mrp/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrp/config.hpp"
#include "mrp/encoder.hpp"
#include "mrp/error.hpp"
#include "mrp/metareg.hpp"
#include "mrp/metrics.hpp"
#include "mrp/serialize.hpp"
#include "mrp/tasks.hpp"
#include "mrp/trainer.hpp"
#include "mrp/util.hpp"

namespace mrp::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using config::KeyGroup;

// Raised for anything that should exit with kUsageError.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string_view group_name(KeyGroup g) {
  switch (g) {
    case KeyGroup::task: return "task";
    case KeyGroup::model: return "model";
    case KeyGroup::train: return "train";
    case KeyGroup::run: return "run";
  }
  return "?";
}

// One --kebab-case flag per config key of the given groups.
struct KeyFlags {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void add(CLI::App& app, std::initializer_list<KeyGroup> groups, std::initializer_list<std::string_view> skip = {}) {
    for (const auto& k : config::keys()) {
      if (std::find(groups.begin(), groups.end(), k.group) == groups.end()) continue;
      if (std::find(skip.begin(), skip.end(), k.name) != skip.end()) continue;
      CLI::Option* opt = app.add_option(config::flag_name(k.name), values[k.name], k.help + " [" + k.type + "]");
      opt->group(std::string(group_name(k.group)) + " keys");
      options.emplace_back(k.name, opt);
    }
  }

  void apply(config::RunConfig& cfg) const {
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) cfg.set(key, values.at(key));
    }
  }
};

void require_groups(const config::RunConfig& cfg, std::initializer_list<KeyGroup> allowed,
                    std::string_view command, std::string_view source) {
  for (const auto& key : cfg.explicit_keys) {
    for (const auto& k : config::keys()) {
      if (k.name != key) continue;
      if (std::find(allowed.begin(), allowed.end(), k.group) == allowed.end()) {
        throw UsageError(std::string(source) + ": key '" + key + "' is a " + std::string(group_name(k.group)) +
                         " key and does not apply to " + std::string(command));
      }
    }
  }
}

void merge_config_file(config::RunConfig& cfg, const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  cfg.merge_json(text, path);
}

std::size_t worker_limit(std::size_t jobs) {
  const char* env = std::getenv("MRP_THREADS");
  if (env == nullptr || *env == '\0') return std::max<std::size_t>(1, jobs);
  std::size_t n = 0;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::string_view(env).size()) throw std::invalid_argument("trailing");
    n = static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw UsageError(std::string("MRP_THREADS must be a positive integer, got '") + env + "'");
  }
  if (n == 0) throw UsageError("MRP_THREADS must be a positive integer, got '0'");
  return std::min(n, std::max<std::size_t>(1, jobs));
}

// Runs job(i) for i < n on up to `workers` threads. The first exception (by
// index) is rethrown after every job finished.
template <class Job>
void fan_out(std::size_t n, std::size_t workers, const Job& job) {
  std::vector<std::exception_ptr> errors(n);
  std::size_t next = 0;
  std::mutex m;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(m);
        if (next >= n) return;
        i = next++;
      }
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(workers, n); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_dimensions(const encoder::FrozenModel& model, const tasks::Dataset& data,
                      const std::string& checkpoint, const std::string& data_dir) {
  const std::size_t want_dx = model.weights.dims().feature;
  const std::size_t want_nc = model.classes.size();
  if (want_dx != data.feature_dim() || want_nc != data.num_classes()) {
    throw Error(ErrorCode::shape_mismatch,
                "dimension mismatch: checkpoint " + checkpoint + " has feature_dim=" + std::to_string(want_dx) +
                    ", num_classes=" + std::to_string(want_nc) + "; dataset " + data_dir +
                    " has feature_dim=" + std::to_string(data.feature_dim()) +
                    ", num_classes=" + std::to_string(data.num_classes()));
  }
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// -- gen-data -----------------------------------------------------------------

struct GenDataArgs {
  std::string spec;
  std::string out;
  KeyFlags flags;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  config::RunConfig cfg;
  try {
    if (!a.spec.empty()) merge_config_file(cfg, a.spec);
    require_groups(cfg, {KeyGroup::task}, "gen-data", a.spec.empty() ? "flags" : a.spec);
    a.flags.apply(cfg);
    cfg.task.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const tasks::Dataset data = tasks::generate(cfg.task);
  tasks::save(data, a.out);
  out << "digest " << tasks::digest(data) << "\n";
  return kOk;
}

// -- train --------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string regime;
  std::vector<std::uint64_t> seeds;
  std::string out;
  KeyFlags flags;
};

int train(const TrainArgs& a, std::ostream& out) {
  config::RunConfig cfg;
  try {
    if (!a.config.empty()) merge_config_file(cfg, a.config);
    require_groups(cfg, {KeyGroup::model, KeyGroup::train, KeyGroup::run}, "train",
                   a.config.empty() ? "flags" : a.config);
    a.flags.apply(cfg);
    if (!a.regime.empty()) cfg.set("regime", a.regime);
    if (!a.seeds.empty()) cfg.set("seeds", json(a.seeds).dump());
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const std::size_t workers = worker_limit(cfg.seeds.size());

  const tasks::Dataset data = tasks::load(a.data);
  const encoder::FrozenModel model = trainer::build_model(data, cfg.model);
  const fs::path root(a.out);
  write_file(root / "config.json", cfg.to_json({KeyGroup::model, KeyGroup::train, KeyGroup::run}));

  const std::string regime(trainer::regime_name(cfg.train.regime));
  std::vector<std::string> digests(cfg.seeds.size());
  std::vector<fs::path> dirs(cfg.seeds.size());
  fan_out(cfg.seeds.size(), workers, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    dirs[i] = cfg.seeds.size() == 1 ? root : root / ("seed-" + std::to_string(seed));
    trainer::TrainConfig tc = cfg.train;
    tc.seed = seed;
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    const trainer::TrainResult r = trainer::train(model, data, tc);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::string checkpoint = io::write_checkpoint({regime, seed, model, r.prompts, r.modulator});
    const std::string init = io::write_checkpoint({regime, seed, model, r.initial, r.initial_modulator});
    std::string log;
    for (const auto& rec : r.log) log += trainer::to_json_line(rec) + "\n";
    write_file(dirs[i] / "checkpoint.json", checkpoint);
    write_file(dirs[i] / "init.json", init);
    write_file(dirs[i] / "train_log.jsonl", log);
    write_file(dirs[i] / "timing.json",
               json{{"started", started}, {"seconds", seconds}, {"steps", r.log.size()}}.dump(2) + "\n");
    digests[i] = sha256_hex(checkpoint);
  });
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    out << "seed " << cfg.seeds[i] << " checkpoint " << digests[i] << " " << (dirs[i] / "checkpoint.json").string()
        << "\n";
  }
  return kOk;
}

// -- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string data;
  std::vector<std::string> shifts{"none"};
  std::string out;
};

int eval(const EvalArgs& a, std::ostream& out) {
  std::vector<tasks::DomainShift> shifts;
  try {
    for (const auto& s : a.shifts) shifts.push_back(tasks::DomainShift::parse(s));
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const tasks::Dataset data = tasks::load(a.data);
  if (!data.spec.shift.is_identity()) {
    for (const auto& s : shifts) {
      if (!s.is_identity()) {
        throw UsageError("dataset " + a.data + " is already shifted (" + data.spec.shift.to_string() +
                         "); --shift " + s.to_string() + " would compound it");
      }
    }
  }

  std::vector<io::Checkpoint> cps;
  for (const auto& path : a.checkpoints) {
    cps.push_back(io::load_checkpoint(path));
    check_dimensions(cps.back().model, data, path, a.data);
  }
  metrics::MetricsReport report;
  for (const auto& shift : shifts) {
    tasks::Dataset shifted = tasks::domain_shift(data, shift);
    if (!shift.is_identity()) shifted.spec.shift = shift;
    for (const auto& cp : cps) {
      report.runs.push_back(metrics::evaluate_run(cp.model, cp.prompts, shifted, cp.regime, cp.seed));
    }
  }
  const fs::path path(a.out);
  write_file(path, report.to_json());
  fs::path csv = path;
  csv.replace_extension(".csv");
  write_file(csv, report.to_csv());
  for (const auto& r : report.sorted_runs()) {
    out << r.regime << " seed " << r.seed << " shift " << r.shift << ": base " << format_double(r.base_acc)
        << " new " << format_double(r.new_acc) << " hm " << format_double(r.hm) << " tos "
        << format_double(r.tos) << "\n";
  }
  return kOk;
}

// -- diagnose -----------------------------------------------------------------

struct DiagnoseArgs {
  std::string mode;
  std::string checkpoint;
  std::string data;
  std::string out;
  std::optional<double> alpha;  // 0.1 for gradcheck, 0.01 otherwise
  double threshold = 1e-4;
  std::optional<double> gate_override;
  std::uint64_t seed = 0;
  std::size_t batch = 8;
  std::size_t directions = 20;
};

struct DiagnosticInstance {
  encoder::FrozenModel model;
  encoder::PromptSet theta;
  metareg::ModulatorParams phi;
  trainer::LabeledSet batch;
  std::vector<encoder::ClassId> candidates;
  std::string source;
};

// Four classes, two prompt coordinates per side, four hidden units and two
// samples per class: 4 prompt and 56 modulator parameters. The prompts sit
// well away from the reference, where the smoothed absolute value is nearly
// linear, and the modulator weights are small enough that tanh does not
// saturate; both keep central differences well conditioned.
DiagnosticInstance small_instance(std::uint64_t seed) {
  const encoder::Dims dims{4, 3, 2, 4};
  Rng rng = make_stream(seed, "diagnose");
  encoder::FrozenModel model{encoder::EncoderWeights::generate(dims, seed),
                             encoder::ClassSet::random(4, dims.class_dim, rng),
                             encoder::ReferencePrompt::zeros(dims.prompt), encoder::kDefaultTau};
  Tensor x = Tensor::zeros(dims.feature, 8);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = sample_normal(rng);
  DiagnosticInstance d{std::move(model),
                       encoder::PromptSet::random(dims.prompt, 1.0, rng),
                       metareg::ModulatorParams::random(2 * dims.prompt, 4, 0.1, rng),
                       {std::move(x), {0, 0, 1, 1, 2, 2, 3, 3}},
                       {0, 1, 2, 3},
                       "small instance"};
  return d;
}

DiagnosticInstance instance_from(const DiagnoseArgs& a) {
  io::Checkpoint cp = io::load_checkpoint(a.checkpoint);
  const tasks::Dataset data = tasks::load(a.data);
  check_dimensions(cp.model, data, a.checkpoint, a.data);
  const trainer::LabeledSet pool = trainer::labeled_split(data, tasks::Split::base_train);
  if (pool.size() < a.batch) {
    throw Error(ErrorCode::invalid_argument, "base-train has " + std::to_string(pool.size()) +
                                                 " samples, fewer than --batch " + std::to_string(a.batch));
  }
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = make_stream(a.seed, "diagnose");
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[sample_index(rng, i + 1)]);
  order.resize(a.batch);
  trainer::LabeledSet batch = pool.subset(order);
  if (batch.classes().size() < 2) {
    throw Error(ErrorCode::invalid_argument, "diagnostic batch covers a single class; use a larger --batch");
  }
  return {std::move(cp.model), std::move(cp.prompts), std::move(cp.modulator), std::move(batch),
          data.base_classes, a.checkpoint};
}

int diagnose(const DiagnoseArgs& a, std::ostream& out, std::ostream& err) {
  if (a.checkpoint.empty() != a.data.empty()) {
    throw UsageError("--checkpoint and --data go together; omit both for the built-in small instance");
  }
  if (a.gate_override && !(*a.gate_override >= 0.0 && *a.gate_override <= 1.0)) {
    throw UsageError("--gate-override must lie in [0, 1]");
  }
  const double alpha = a.alpha.value_or(a.mode == "gradcheck" ? 0.1 : 0.01);
  if (!(alpha > 0.0)) throw UsageError("--alpha must be positive");
  const DiagnosticInstance inst = a.checkpoint.empty() ? small_instance(a.seed) : instance_from(a);

  Rng split_rng = make_stream(a.seed, "split");
  Rng mixup_rng = make_stream(a.seed, "mixup");
  const trainer::Episode episode = trainer::split_episode(inst.batch.labels, split_rng);
  const trainer::MixupPlan plan = trainer::draw_mixup(episode, 1.0, 1.0, mixup_rng);
  trainer::InnerOptions opts;
  opts.alpha = alpha;
  opts.gate_override = a.gate_override;

  json doc{{"mode", a.mode}, {"source", inst.source}, {"alpha", alpha}};
  int code = kOk;
  if (a.mode == "gradcheck") {
    const auto c = metrics::check_meta_gradients(inst.model, inst.theta, inst.phi, inst.batch, episode, plan,
                                                 inst.candidates, opts);
    const bool ok = c.comparison.within(a.threshold, 1e-8);
    doc["coordinates"] = c.coordinates;
    doc["outer_loss"] = c.outer_loss;
    doc["max_rel_error"] = c.comparison.max_rel_error;
    doc["max_abs_error"] = c.comparison.max_abs_error;
    doc["worst_coordinate"] = c.worst_coordinate;
    doc["worst_analytic"] = c.comparison.worst_analytic;
    doc["worst_numeric"] = c.comparison.worst_numeric;
    doc["threshold"] = a.threshold;
    doc["passed"] = ok;
    out << "gradcheck over " << c.coordinates << " coordinates: max rel error "
        << format_double(c.comparison.max_rel_error) << ", max abs error "
        << format_double(c.comparison.max_abs_error) << ", worst " << c.worst_coordinate << "\n";
    if (!ok) {
      err << "gradcheck failed: worst coordinate " << c.worst_coordinate << " (autodiff "
          << format_double(c.comparison.worst_analytic) << ", finite difference "
          << format_double(c.comparison.worst_numeric) << ") exceeds threshold " << format_double(a.threshold)
          << "\n";
      code = kRuntimeError;
    }
  } else if (a.mode == "taylor") {
    const encoder::Batch eval = inst.batch.as_batch(inst.candidates);
    Rng dir_rng = make_stream(a.seed, "directions");
    json steps = json::array();
    for (double step : {alpha, alpha / 2.0}) {
      const auto h = metrics::taylor_halving_test(inst.model, inst.theta, eval, a.directions, step, dir_rng);
      steps.push_back(json{{"alpha", step}, {"mean_ratio", h.mean_ratio}, {"ratios", h.ratios}});
      out << "alpha " << format_double(step) << " -> " << format_double(step / 2.0) << ": mean ratio "
          << format_double(h.mean_ratio) << "\n";
    }
    doc["directions"] = a.directions;
    doc["loss_halving"] = steps;
    json align = json::array();
    for (double step : {alpha, alpha / 2.0}) {
      opts.alpha = step;
      const trainer::Episode eps[] = {episode};
      const double ratio =
          metrics::alignment_halving_ratio(inst.model, inst.theta, inst.phi, inst.batch, eps, inst.candidates, opts);
      align.push_back(json{{"alpha", step}, {"ratio", ratio}});
      out << "alignment alpha " << format_double(step) << ": ratio " << format_double(ratio) << "\n";
    }
    doc["alignment_halving"] = align;
  } else {
    const auto d = metrics::alignment_terms(inst.model, inst.theta, inst.phi, inst.batch, episode,
                                            inst.candidates, opts);
    doc["gate_override"] = a.gate_override ? json(*a.gate_override) : json(nullptr);
    doc["val_loss"] = d.val_loss;
    doc["term_g_align"] = d.term_g_align;
    doc["term_reg_align"] = d.term_reg_align;
    doc["predicted"] = d.predicted;
    doc["actual"] = d.actual;
    doc["residual"] = d.residual();
    out << "val_loss " << format_double(d.val_loss) << " term_g_align " << format_double(d.term_g_align)
        << " term_reg_align " << format_double(d.term_reg_align) << " residual " << format_double(d.residual())
        << "\n";
  }
  if (!a.out.empty()) write_file(a.out, doc.dump(2) + "\n");
  return code;
}

// -- report -------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

int report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  metrics::MetricsReport merged;
  std::vector<std::string> bad;
  for (const auto& run : a.runs) {
    const fs::path path = fs::is_directory(run) ? fs::path(run) / "report.json" : fs::path(run);
    try {
      const auto rep = metrics::MetricsReport::from_json(read_file(path), path.string());
      merged.runs.insert(merged.runs.end(), rep.runs.begin(), rep.runs.end());
    } catch (const Error& e) {
      bad.push_back(path.string());
      err << "invalid report " << path.string() << ": " << e.what() << "\n";
    }
  }
  if (!bad.empty()) {
    err << "report: " << bad.size() << " bad path(s):";
    for (const auto& b : bad) err << " " << b;
    err << "\n";
    return kRuntimeError;
  }
  write_file(a.out, merged.to_summary_csv());
  for (const auto& s : merged.summaries()) {
    out << s.regime << " shift " << s.shift << " (" << s.count << " runs): base " << format_double(s.mean.base_acc)
        << " new " << format_double(s.mean.new_acc) << " hm " << format_double(s.mean.hm) << "\n";
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt tuning with a meta-learned regularizer on a toy dual encoder", "mrp"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mrp 1.0");

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic task suite");
  gen->add_option("--spec", gd.spec, "JSON file with task keys")->check(CLI::ExistingFile);
  gen->add_option("--out", gd.out, "output directory")->required();
  gd.flags.add(*gen, {KeyGroup::task});

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "tune prompts on base-train");
  trn->add_option("--config", tr.config, "JSON file with model, train and run keys")->check(CLI::ExistingFile);
  trn->add_option("--data", tr.data, "dataset directory")->required();
  trn->add_option("--regime", tr.regime, "plain, loss-reg or prometar");
  trn->add_option("--seed", tr.seeds, "training seed; repeat for several runs");
  trn->add_option("--out", tr.out, "output directory")->required();
  tr.flags.add(*trn, {KeyGroup::model, KeyGroup::train}, {"regime"});

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "evaluate checkpoints on base-test and new-test");
  evl->add_option("--checkpoint", ev.checkpoints, "checkpoint file; repeatable")->required()->check(CLI::ExistingFile);
  evl->add_option("--data", ev.data, "dataset directory")->required();
  evl->add_option("--shift", ev.shifts, "test-time shift: none, noise:<sigma>, rotation:<radians>; repeatable")
      ->capture_default_str();
  evl->add_option("--out", ev.out, "report JSON; the CSV is written next to it")->required();

  DiagnoseArgs dg;
  auto* dia = app.add_subcommand("diagnose", "meta-gradient check and one-step diagnostics");
  dia->add_option("--mode", dg.mode, "gradcheck, taylor or alignment")
      ->required()
      ->check(CLI::IsMember({"gradcheck", "taylor", "alignment"}));
  dia->add_option("--checkpoint", dg.checkpoint, "checkpoint file (default: built-in small instance)")
      ->check(CLI::ExistingFile);
  dia->add_option("--data", dg.data, "dataset directory, required with --checkpoint");
  dia->add_option("--out", dg.out, "diagnostics JSON");
  dia->add_option("--alpha", dg.alpha, "inner step size (default 0.1 for gradcheck, 0.01 otherwise)");
  dia->add_option("--threshold", dg.threshold, "gradcheck relative error limit")->capture_default_str();
  dia->add_option("--gate-override", dg.gate_override, "constant gate in [0, 1]");
  dia->add_option("--seed", dg.seed, "seed of the batch, episode and mixup draws")->capture_default_str();
  dia->add_option("--batch", dg.batch, "samples drawn from base-train with --checkpoint")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  dia->add_option("--directions", dg.directions, "random directions for the taylor mode")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  ReportArgs rp;
  auto* rep = app.add_subcommand("report", "merge eval reports into a summary CSV");
  rep->add_option("--runs", rp.runs, "report.json files or directories containing one")->required();
  rep->add_option("--out", rp.out, "summary CSV")->required();

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*gen) return gen_data(gd, out);
    if (*trn) return train(tr, out);
    if (*evl) return eval(ev, out);
    if (*dia) return diagnose(dg, out, err);
    return report(rp, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const Error& e) {
    err << "error (" << error_code_name(e.code()) << "): " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace mrp::cli
