#include "mrp/tasks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mrp/error.hpp"
#include "mrp/rng.hpp"
#include "mrp/util.hpp"

namespace mrp::tasks {

namespace {

using json = nlohmann::ordered_json;

constexpr int kManifestVersion = 1;
constexpr int kMaxPrototypeDraws = 100;

double min_column_distance(const Tensor& cols) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cols.cols(); ++i) {
    for (std::size_t j = i + 1; j < cols.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < cols.rows(); ++r) {
        const double d = cols(r, i) - cols(r, j);
        s += d * d;
      }
      best = std::min(best, std::sqrt(s));
    }
  }
  return best;
}

std::string_view kind_name(DomainShift::Kind k) {
  switch (k) {
    case DomainShift::Kind::none: return "none";
    case DomainShift::Kind::noise: return "noise";
    case DomainShift::Kind::rotation: return "rotation";
  }
  return "none";
}

[[noreturn]] void parse_fail(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::parse_error, where + ": " + what);
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::base_train: return "base_train";
    case Split::base_test: return "base_test";
    case Split::new_test: return "new_test";
  }
  return "base_train";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::base_train, Split::base_test, Split::new_test}) {
    if (split_name(s) == name) return s;
  }
  throw Error(ErrorCode::parse_error, "unknown split '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

DomainShift DomainShift::parse(std::string_view text) {
  if (text == "none") return {};
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::config_error, "shift must be none, noise:<sigma> or rotation:<radians>, got '" +
                                             std::string(text) + "'");
  }
  const std::string_view kind = text.substr(0, colon);
  DomainShift s;
  if (kind == "noise") {
    s.kind = Kind::noise;
  } else if (kind == "rotation") {
    s.kind = Kind::rotation;
  } else {
    throw Error(ErrorCode::config_error, "unknown shift kind '" + std::string(kind) + "'");
  }
  try {
    s.amount = parse_double(text.substr(colon + 1), "shift amount");
  } catch (const Error& e) {
    throw Error(ErrorCode::config_error, e.what());
  }
  if (!std::isfinite(s.amount)) throw Error(ErrorCode::config_error, "shift amount must be finite");
  if (s.kind == Kind::noise && s.amount < 0.0) {
    throw Error(ErrorCode::config_error, "noise shift sigma must be >= 0");
  }
  if (s.amount == 0.0) return {};
  return s;
}

std::string DomainShift::to_string() const {
  if (kind == Kind::none) return "none";
  return std::string(kind_name(kind)) + ":" + format_double(amount);
}

// ---------------------------------------------------------------------------

void TaskSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::config_error, m); };
  if (num_classes < 4) fail("num_classes must be >= 4");
  if (feature_dim < 2) fail("feature_dim must be >= 2");
  if (shots < 1) fail("shots must be >= 1");
  if (test_per_class < 1) fail("test_per_class must be >= 1");
  if (!(base_fraction > 0.0 && base_fraction < 1.0)) fail("base_fraction must lie in (0, 1)");
  if (!(prototype_scale > 0.0) || !std::isfinite(prototype_scale)) {
    fail("prototype_scale must be positive");
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) fail("noise_scale must be >= 0");
  if (!(domain_offset >= 0.0) || !std::isfinite(domain_offset)) fail("domain_offset must be >= 0");
  const std::size_t nb = num_base();
  if (nb < 2 || num_classes - nb < 2) {
    fail("base_fraction leaves " + std::to_string(nb) + " base and " +
         std::to_string(num_classes - nb) + " new classes; both need >= 2");
  }
}

std::size_t TaskSpec::num_base() const {
  return static_cast<std::size_t>(std::ceil(base_fraction * static_cast<double>(num_classes) - 1e-12));
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

const std::vector<ClassId>& Dataset::candidates(Split split) const {
  return split == Split::new_test ? new_classes : base_classes;
}

Tensor Dataset::features(std::span<const std::size_t> idx) const {
  const std::size_t d = feature_dim();
  Tensor out = Tensor::zeros(d, idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const Sample& s = samples.at(idx[n]);
    for (std::size_t r = 0; r < d; ++r) out(r, n) = s.features[r];
  }
  return out;
}

std::vector<ClassId> Dataset::labels(std::span<const std::size_t> idx) const {
  std::vector<ClassId> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(samples.at(i).label);
  return out;
}

encoder::Batch Dataset::batch(Split split) const {
  const auto idx = indices(split);
  if (idx.empty()) {
    throw Error(ErrorCode::invalid_argument, "split " + std::string(split_name(split)) + " is empty");
  }
  const auto lab = labels(idx);
  return encoder::make_batch(features(idx), lab, candidates(split));
}

// ---------------------------------------------------------------------------

Dataset generate(const TaskSpec& spec) {
  spec.validate();
  Rng rng = make_stream(spec.seed, "data");
  const std::size_t d = spec.feature_dim;
  const std::size_t nc = spec.num_classes;
  const double min_sep = 0.5 * spec.prototype_scale * std::sqrt(2.0 * static_cast<double>(d));

  Dataset ds;
  ds.spec = spec;
  bool separated = false;
  for (int attempt = 0; attempt < kMaxPrototypeDraws && !separated; ++attempt) {
    ds.prototypes = Tensor::zeros(d, nc);
    for (double& v : ds.prototypes.data()) v = sample_normal(rng, 0.0, spec.prototype_scale);
    separated = min_column_distance(ds.prototypes) >= min_sep;
  }
  if (!separated) {
    throw Error(ErrorCode::invalid_argument,
                "could not draw " + std::to_string(nc) + " separated prototypes in " +
                    std::to_string(d) + " dimensions after " + std::to_string(kMaxPrototypeDraws) +
                    " draws; use a larger feature_dim");
  }
  // noise_scale sets the expected norm of the noise vector, so the per-coordinate
  // stddev divides by sqrt(d_x).
  ds.noise_sigma = spec.noise_scale * min_column_distance(ds.prototypes) / std::sqrt(static_cast<double>(d));
  ds.offset = Tensor::zeros(d, 1);
  for (double& v : ds.offset.data()) v = spec.domain_offset * sample_normal(rng);

  const std::size_t nb = spec.num_base();
  for (ClassId c = 0; c < nc; ++c) (c < nb ? ds.base_classes : ds.new_classes).push_back(c);

  std::uint64_t next_id = 0;
  auto emit = [&](Split split, ClassId c, std::size_t count) {
    for (std::size_t k = 0; k < count; ++k) {
      Sample s{next_id++, split, c, std::vector<double>(d)};
      for (std::size_t r = 0; r < d; ++r) {
        s.features[r] = ds.prototypes(r, c) + ds.offset[r] + ds.noise_sigma * sample_normal(rng);
      }
      ds.samples.push_back(std::move(s));
    }
  };
  for (ClassId c : ds.base_classes) emit(Split::base_train, c, spec.shots);
  for (ClassId c : ds.base_classes) emit(Split::base_test, c, spec.test_per_class);
  for (ClassId c : ds.new_classes) emit(Split::new_test, c, spec.test_per_class);

  if (!spec.shift.is_identity()) {
    Dataset shifted = domain_shift(ds, spec.shift);
    shifted.spec.shift = spec.shift;
    return shifted;
  }
  return ds;
}

Dataset domain_shift(const Dataset& dataset, const DomainShift& shift) {
  if (shift.is_identity()) return dataset;
  Dataset out = dataset;
  Rng rng = make_stream(dataset.spec.seed, "shift");
  const std::size_t d = dataset.feature_dim();

  if (shift.kind == DomainShift::Kind::noise) {
    // The unit draws depend only on the dataset seed, so shifts of different
    // strength reuse the same directions.
    for (Sample& s : out.samples) {
      if (s.split == Split::base_train) continue;
      for (double& v : s.features) v += shift.amount * sample_normal(rng);
    }
    return out;
  }

  // Rotation by `amount` radians in the plane spanned by orthonormal u, v.
  std::vector<double> u(d), v(d);
  for (double& x : u) x = sample_normal(rng);
  for (double& x : v) x = sample_normal(rng);
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
  };
  const double nu = std::sqrt(dot(u, u));
  for (double& x : u) x /= nu;
  const double proj = dot(u, v);
  for (std::size_t i = 0; i < d; ++i) v[i] -= proj * u[i];
  const double nv = std::sqrt(dot(v, v));
  for (double& x : v) x /= nv;

  const double c = std::cos(shift.amount);
  const double sn = std::sin(shift.amount);
  for (Sample& s : out.samples) {
    if (s.split == Split::base_train) continue;
    const double a = dot(u, s.features);
    const double b = dot(v, s.features);
    const double da = (c * a - sn * b) - a;
    const double db = (sn * a + c * b) - b;
    for (std::size_t i = 0; i < d; ++i) s.features[i] += da * u[i] + db * v[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

json spec_json(const TaskSpec& s) {
  return json{{"num_classes", s.num_classes},       {"feature_dim", s.feature_dim},
              {"shots", s.shots},                   {"test_per_class", s.test_per_class},
              {"prototype_scale", s.prototype_scale}, {"noise_scale", s.noise_scale},
              {"base_fraction", s.base_fraction},   {"domain_offset", s.domain_offset},
              {"shift", s.shift.to_string()},       {"seed", s.seed}};
}

json decimal_array(std::span<const double> values) {
  json a = json::array();
  for (double v : values) a.push_back(format_double(v));
  return a;
}

std::vector<double> parse_decimal_array(const json& a, std::size_t expected, const std::string& what) {
  if (!a.is_array() || a.size() != expected) {
    parse_fail("manifest.json", what + " must be an array of " + std::to_string(expected) + " decimal strings");
  }
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& v : a) {
    if (!v.is_string()) parse_fail("manifest.json", what + " entries must be decimal strings");
    out.push_back(parse_double(v.get<std::string>(), what));
  }
  return out;
}

std::vector<std::vector<std::size_t>> class_counts(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> counts(3, std::vector<std::size_t>(ds.num_classes(), 0));
  for (const Sample& s : ds.samples) ++counts[static_cast<std::size_t>(s.split)][s.label];
  return counts;
}

}  // namespace

std::string manifest_text(const Dataset& ds) {
  json m;
  m["version"] = kManifestVersion;
  m["spec"] = spec_json(ds.spec);
  m["noise_sigma"] = format_double(ds.noise_sigma);
  m["prototypes"] = json{{"shape", {ds.feature_dim(), ds.num_classes()}},
                         {"data", decimal_array(ds.prototypes.data())}};
  m["offset"] = decimal_array(ds.offset.data());
  m["classes"] = json{{"base_train", ds.base_classes},
                      {"base_test", ds.base_classes},
                      {"new_test", ds.new_classes}};
  const auto counts = class_counts(ds);
  json c;
  for (Split s : {Split::base_train, Split::base_test, Split::new_test}) {
    c[std::string(split_name(s))] = counts[static_cast<std::size_t>(s)];
  }
  m["counts"] = c;
  return m.dump(2) + "\n";
}

std::string samples_text(const Dataset& ds) {
  std::string out = "id,split,class";
  for (std::size_t r = 0; r < ds.feature_dim(); ++r) out += ",f" + std::to_string(r);
  out += '\n';
  for (const Sample& s : ds.samples) {
    out += std::to_string(s.id);
    out += ',';
    out += split_name(s.split);
    out += ',';
    out += std::to_string(s.label);
    for (double v : s.features) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

void save(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "manifest.json", manifest_text(dataset));
  write_file(dir / "samples.csv", samples_text(dataset));
}

namespace {

std::uint64_t parse_uint(std::string_view text, const std::string& where) {
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    parse_fail(where, "expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

TaskSpec parse_spec(const json& j) {
  TaskSpec s;
  try {
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.feature_dim = j.at("feature_dim").get<std::size_t>();
    s.shots = j.at("shots").get<std::size_t>();
    s.test_per_class = j.at("test_per_class").get<std::size_t>();
    s.prototype_scale = j.at("prototype_scale").get<double>();
    s.noise_scale = j.at("noise_scale").get<double>();
    s.base_fraction = j.at("base_fraction").get<double>();
    s.domain_offset = j.at("domain_offset").get<double>();
    s.shift = DomainShift::parse(j.at("shift").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    parse_fail("manifest.json", std::string("spec: ") + e.what());
  }
  return s;
}

std::vector<ClassId> parse_class_list(const json& j, const std::string& what) {
  try {
    return j.get<std::vector<ClassId>>();
  } catch (const json::exception&) {
    parse_fail("manifest.json", what + " must be an array of class ids");
  }
}

}  // namespace

Dataset load(const std::filesystem::path& dir) {
  const std::string manifest_path = (dir / "manifest.json").string();
  const std::string samples_path = (dir / "samples.csv").string();

  json m;
  try {
    m = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    parse_fail(manifest_path, e.what());
  }
  if (!m.is_object() || !m.contains("version") || m["version"] != kManifestVersion) {
    parse_fail(manifest_path, "unsupported or missing version");
  }
  Dataset ds;
  try {
    ds.spec = parse_spec(m.at("spec"));
    const auto& shape = m.at("prototypes").at("shape");
    const std::size_t d = shape.at(0).get<std::size_t>();
    const std::size_t nc = shape.at(1).get<std::size_t>();
    if (d == 0 || nc == 0) parse_fail(manifest_path, "prototype shape must be positive");
    ds.prototypes = Tensor({d, nc}, parse_decimal_array(m.at("prototypes").at("data"), d * nc, "prototypes"));
    ds.offset = Tensor({d, 1}, parse_decimal_array(m.at("offset"), d, "offset"));
    ds.noise_sigma = parse_double(m.at("noise_sigma").get<std::string>(), "noise_sigma");
    ds.base_classes = parse_class_list(m.at("classes").at("base_train"), "classes.base_train");
    ds.new_classes = parse_class_list(m.at("classes").at("new_test"), "classes.new_test");
    if (parse_class_list(m.at("classes").at("base_test"), "classes.base_test") != ds.base_classes) {
      parse_fail(manifest_path, "base_test classes differ from base_train classes");
    }
  } catch (const json::exception& e) {
    parse_fail(manifest_path, e.what());
  }
  const std::size_t d = ds.feature_dim();
  const std::size_t nc = ds.num_classes();
  if (d != ds.spec.feature_dim || nc != ds.spec.num_classes) {
    parse_fail(manifest_path, "prototype shape disagrees with the spec");
  }
  {
    std::set<ClassId> seen;
    for (ClassId c : ds.base_classes) {
      if (c >= nc || !seen.insert(c).second) parse_fail(manifest_path, "bad base class " + std::to_string(c));
    }
    for (ClassId c : ds.new_classes) {
      if (c >= nc || !seen.insert(c).second) parse_fail(manifest_path, "bad or overlapping new class " + std::to_string(c));
    }
  }

  const std::string text = read_file(dir / "samples.csv");
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::uint64_t> ids;
  const std::size_t expected_cols = 3 + d;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = samples_path + ":" + std::to_string(line_no);
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cells.size() != expected_cols) {
      parse_fail(where, "expected " + std::to_string(expected_cols) + " columns, found " +
                            std::to_string(cells.size()));
    }
    if (line_no == 1) {
      if (cells[0] != "id" || cells[1] != "split" || cells[2] != "class") {
        parse_fail(where, "header must start with id,split,class");
      }
      continue;
    }
    Sample s;
    s.id = parse_uint(cells[0], where);
    if (!ids.insert(s.id).second) parse_fail(where, "duplicate sample id " + std::to_string(s.id));
    try {
      s.split = parse_split(cells[1]);
    } catch (const Error& e) {
      parse_fail(where, e.what());
    }
    s.label = parse_uint(cells[2], where);
    const auto& allowed = ds.candidates(s.split);
    if (std::find(allowed.begin(), allowed.end(), s.label) == allowed.end()) {
      parse_fail(where, "class " + std::to_string(s.label) + " is not allowed in split " +
                            std::string(split_name(s.split)));
    }
    s.features.reserve(d);
    for (std::size_t r = 0; r < d; ++r) {
      try {
        s.features.push_back(parse_double(cells[3 + r], "feature"));
      } catch (const Error& e) {
        parse_fail(where, e.what());
      }
    }
    ds.samples.push_back(std::move(s));
  }
  if (line_no == 0) parse_fail(samples_path, "empty file");

  const auto counts = class_counts(ds);
  for (Split s : {Split::base_train, Split::base_test, Split::new_test}) {
    const std::string key(split_name(s));
    std::vector<std::size_t> declared;
    try {
      declared = m.at("counts").at(key).get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
      parse_fail(manifest_path, "counts." + key + ": " + e.what());
    }
    if (declared != counts[static_cast<std::size_t>(s)]) {
      parse_fail(manifest_path, "counts." + key + " do not match " + samples_path);
    }
  }
  return ds;
}

std::string digest(const Dataset& dataset) {
  return sha256_hex(manifest_text(dataset) + samples_text(dataset));
}

double nearest_prototype_accuracy(const Dataset& dataset, Split split) {
  const auto idx = dataset.indices(split);
  if (idx.empty()) throw Error(ErrorCode::invalid_argument, "nearest_prototype_accuracy: empty split");
  const auto& cands = dataset.candidates(split);
  const std::size_t d = dataset.feature_dim();
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    const Sample& s = dataset.samples[i];
    ClassId best = cands.front();
    double best_dist = std::numeric_limits<double>::infinity();
    for (ClassId c : cands) {
      double dist = 0.0;
      for (std::size_t r = 0; r < d; ++r) {
        const double diff = s.features[r] - dataset.prototypes(r, c) - dataset.offset[r];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    if (best == s.label) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace mrp::tasks
