#include "mrp/config.hpp"

#include <algorithm>
#include <functional>
#include <limits>

#include <json.hpp>

#include "mrp/error.hpp"

namespace mrp::config {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& m) { throw Error(ErrorCode::config_error, m); }

std::uint64_t as_uint(const json& j, const std::string& key) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return j.get<std::uint64_t>();
  fail(key + " must be a non-negative integer");
}

double as_number(const json& j, const std::string& key) {
  if (!j.is_number()) fail(key + " must be a number");
  return j.get<double>();
}

std::string as_string(const json& j, const std::string& key) {
  if (!j.is_string()) fail(key + " must be a string");
  return j.get<std::string>();
}

bool as_bool(const json& j, const std::string& key) {
  if (!j.is_boolean()) fail(key + " must be true or false");
  return j.get<bool>();
}

struct Entry {
  KeyInfo info;
  std::function<void(RunConfig&, const json&)> set;
  std::function<ojson(const RunConfig&)> get;
};

#define MRP_UINT(group, field, key, help)                                                   \
  Entry{{key, KeyGroup::group, "uint", help},                                               \
        [](RunConfig& c, const json& j) { c.field = static_cast<std::size_t>(as_uint(j, key)); }, \
        [](const RunConfig& c) { return ojson(c.field); }}
#define MRP_NUMBER(group, field, key, help)                                                 \
  Entry{{key, KeyGroup::group, "number", help},                                             \
        [](RunConfig& c, const json& j) { c.field = as_number(j, key); },                   \
        [](const RunConfig& c) { return ojson(c.field); }}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      MRP_UINT(task, task.num_classes, "num_classes", "number of classes N_c (>= 4)"),
      MRP_UINT(task, task.feature_dim, "feature_dim", "feature dimension d_x"),
      MRP_UINT(task, task.shots, "shots", "training samples per base class"),
      MRP_UINT(task, task.test_per_class, "test_per_class", "test samples per class"),
      MRP_NUMBER(task, task.prototype_scale, "prototype_scale", "stddev of prototype coordinates"),
      MRP_NUMBER(task, task.noise_scale, "noise_scale", "noise norm as a fraction of the minimum prototype distance"),
      MRP_NUMBER(task, task.base_fraction, "base_fraction", "fraction of classes used as base classes"),
      MRP_NUMBER(task, task.domain_offset, "domain_offset", "stddev of the task-wide feature offset"),
      Entry{{"shift", KeyGroup::task, "string", "test-time shift: none, noise:<sigma>, rotation:<radians>"},
            [](RunConfig& c, const json& j) { c.task.shift = tasks::DomainShift::parse(as_string(j, "shift")); },
            [](const RunConfig& c) { return ojson(c.task.shift.to_string()); }},
      Entry{{"seed", KeyGroup::task, "uint", "dataset seed"},
            [](RunConfig& c, const json& j) { c.task.seed = as_uint(j, "seed"); },
            [](const RunConfig& c) { return ojson(c.task.seed); }},

      MRP_UINT(model, model.class_dim, "class_dim", "class descriptor dimension d_c"),
      MRP_UINT(model, model.prompt_dim, "prompt_dim", "width d_p of each prompt vector"),
      MRP_UINT(model, model.embed_dim, "embed_dim", "embedding dimension d_e (>= 2)"),
      MRP_NUMBER(model, model.tau, "tau", "softmax temperature"),
      MRP_NUMBER(model, model.naming_noise, "naming_noise", "noise on class descriptors"),

      Entry{{"regime", KeyGroup::train, "string", "plain, loss-reg or prometar"},
            [](RunConfig& c, const json& j) { c.train.regime = trainer::parse_regime(as_string(j, "regime")); },
            [](const RunConfig& c) { return ojson(std::string(trainer::regime_name(c.train.regime))); }},
      MRP_NUMBER(train, train.alpha, "alpha", "inner step size (prometar)"),
      MRP_NUMBER(train, train.beta, "beta", "outer step size (prometar)"),
      MRP_NUMBER(train, train.lr_conv, "lr_conv", "conventional step size"),
      MRP_UINT(train, train.epochs, "epochs", "passes over base-train"),
      MRP_UINT(train, train.batch_size, "batch_size", "mini-batch size"),
      MRP_NUMBER(train, train.mixup_mu, "mixup_mu", "first Beta parameter of the mixup ratio (prometar)"),
      MRP_NUMBER(train, train.mixup_nu, "mixup_nu", "second Beta parameter of the mixup ratio (prometar)"),
      MRP_NUMBER(train, train.lambda, "lambda", "regularization strength (loss-reg)"),
      Entry{{"meta_gradient_mode", KeyGroup::train, "string", "exact or first-order (prometar)"},
            [](RunConfig& c, const json& j) {
              c.train.meta_gradient_mode = trainer::parse_mode(as_string(j, "meta_gradient_mode"));
            },
            [](const RunConfig& c) { return ojson(std::string(trainer::mode_name(c.train.meta_gradient_mode))); }},
      MRP_UINT(train, train.modulator_hidden, "modulator_hidden", "hidden width of the modulator (prometar)"),
      MRP_NUMBER(train, train.prompt_init_std, "prompt_init_std", "stddev of the initial prompts"),
      Entry{{"modulator_grad_inputs", KeyGroup::train, "bool", "let the modulator see through its inputs (prometar)"},
            [](RunConfig& c, const json& j) { c.train.modulator_grad_inputs = as_bool(j, "modulator_grad_inputs"); },
            [](const RunConfig& c) { return ojson(c.train.modulator_grad_inputs); }},
      Entry{{"gate_override", KeyGroup::train, "number", "constant gate in [0, 1] or null (prometar)"},
            [](RunConfig& c, const json& j) {
              if (j.is_null()) {
                c.train.gate_override.reset();
              } else {
                c.train.gate_override = as_number(j, "gate_override");
              }
            },
            [](const RunConfig& c) {
              return c.train.gate_override ? ojson(*c.train.gate_override) : ojson(nullptr);
            }},
      MRP_UINT(train, train.align_every, "align_every", "log alignment terms every N steps, 0 = never (prometar)"),

      Entry{{"seeds", KeyGroup::run, "uint list", "training seeds; one run per seed"},
            [](RunConfig& c, const json& j) {
              std::vector<std::uint64_t> seeds;
              if (j.is_array()) {
                for (const auto& s : j) seeds.push_back(as_uint(s, "seeds"));
              } else {
                seeds.push_back(as_uint(j, "seeds"));
              }
              if (seeds.empty()) fail("seeds must not be empty");
              auto sorted = seeds;
              std::sort(sorted.begin(), sorted.end());
              if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) fail("seeds contain duplicates");
              c.seeds = std::move(seeds);
            },
            [](const RunConfig& c) { return ojson(c.seeds); }},
  };
  return table;
}

#undef MRP_UINT
#undef MRP_NUMBER

const Entry& find(std::string_view key) {
  for (const auto& e : entries()) {
    if (e.info.name == key) return e;
  }
  fail("unknown config key '" + std::string(key) + "'");
}

constexpr const char* kPrometarOnly[] = {"alpha",           "beta",         "mixup_mu",
                                         "mixup_nu",        "meta_gradient_mode", "modulator_hidden",
                                         "modulator_grad_inputs", "gate_override", "align_every"};

}  // namespace

const std::vector<KeyInfo>& keys() {
  static const std::vector<KeyInfo> infos = [] {
    std::vector<KeyInfo> out;
    for (const auto& e : entries()) out.push_back(e.info);
    return out;
  }();
  return infos;
}

std::string flag_name(std::string_view key) {
  std::string out = "--";
  for (char c : key) out.push_back(c == '_' ? '-' : c);
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value_text) {
  const Entry& e = find(key);
  json value;
  try {
    value = json::parse(value_text);
  } catch (const json::parse_error&) {
    if (e.info.type != "string") {
      fail(std::string(key) + ": cannot parse '" + std::string(value_text) + "' as " + e.info.type);
    }
    value = std::string(value_text);
  }
  if (e.info.type == "string" && !value.is_string()) value = std::string(value_text);
  e.set(*this, value);
  explicit_keys.insert(std::string(key));
}

void RunConfig::merge_json(std::string_view text, std::string_view source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, std::string(source) + ": " + e.what());
  }
  if (!doc.is_object()) fail(std::string(source) + ": config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    try {
      find(key).set(*this, value);
    } catch (const Error& err) {
      fail(std::string(source) + ": " + err.what());
    }
    explicit_keys.insert(key);
  }
}

void RunConfig::validate() const {
  task.validate();
  model.validate();
  train.validate();
  if (train.regime != trainer::Regime::loss_reg && explicit_keys.count("lambda")) {
    fail("lambda only applies to the loss-reg regime (regime is " +
         std::string(trainer::regime_name(train.regime)) + ")");
  }
  if (train.regime != trainer::Regime::prometar) {
    for (const char* k : kPrometarOnly) {
      if (explicit_keys.count(k)) {
        fail(std::string(k) + " only applies to the prometar regime (regime is " +
             std::string(trainer::regime_name(train.regime)) + ")");
      }
    }
  }
}

std::string RunConfig::to_json(std::initializer_list<KeyGroup> groups) const {
  ojson doc = ojson::object();
  for (const auto& e : entries()) {
    if (std::find(groups.begin(), groups.end(), e.info.group) != groups.end()) {
      doc[e.info.name] = e.get(*this);
    }
  }
  return doc.dump(2) + "\n";
}

}  // namespace mrp::config
