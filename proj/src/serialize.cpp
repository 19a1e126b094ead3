#include "mrp/serialize.hpp"

#include <utility>
#include <vector>

#include <json.hpp>

#include "mrp/error.hpp"
#include "mrp/util.hpp"

namespace mrp::io {

namespace {

using json = nlohmann::ordered_json;
using Block = std::pair<const char*, const Tensor*>;

json write_blocks(std::initializer_list<Block> blocks) {
  json doc;
  doc["version"] = kFormatVersion;
  json shapes = json::object();
  json data = json::object();
  for (const auto& [name, t] : blocks) {
    shapes[name] = {t->rows(), t->cols()};
    json values = json::array();
    for (double v : t->data()) values.push_back(format_double(v));
    data[name] = std::move(values);
  }
  doc["shapes"] = std::move(shapes);
  doc["data"] = std::move(data);
  return doc;
}

[[noreturn]] void fail(std::string_view source, const std::string& what) {
  throw Error(ErrorCode::parse_error, std::string(source) + ": " + what);
}

Tensor read_block(const json& doc, const char* name, std::string_view source) {
  try {
    if (!doc.is_object() || doc.value("version", 0) != kFormatVersion) {
      fail(source, "missing or unsupported version");
    }
    const json& shape = doc.at("shapes").at(name);
    const json& data = doc.at("data").at(name);
    if (!shape.is_array() || shape.size() != 2) fail(source, std::string(name) + ": shape must be [rows, cols]");
    const auto rows = shape[0].get<std::size_t>();
    const auto cols = shape[1].get<std::size_t>();
    if (!data.is_array() || data.size() != rows * cols) {
      fail(source, std::string(name) + ": expected " + std::to_string(rows * cols) + " values");
    }
    std::vector<double> values;
    values.reserve(data.size());
    for (const json& v : data) {
      if (!v.is_string()) fail(source, std::string(name) + ": values must be decimal strings");
      values.push_back(parse_double(v.get<std::string>(), std::string(source) + " " + name));
    }
    return Tensor({rows, cols}, std::move(values));
  } catch (const json::exception& e) {
    fail(source, std::string(name) + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::parse_error) throw;
    fail(source, e.what());
  }
}

json parse(std::string_view text, std::string_view source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(source, e.what());
  }
}

json prompts_doc(const encoder::PromptSet& p) { return write_blocks({{"vis", &p.vis}, {"txt", &p.txt}}); }

encoder::PromptSet prompts_from(const json& doc, std::string_view source) {
  encoder::PromptSet p{read_block(doc, "vis", source), read_block(doc, "txt", source)};
  if (p.vis.cols() != 1 || p.txt.cols() != 1 || p.vis.rows() != p.txt.rows()) {
    fail(source, "prompt blocks must be equal-length column vectors");
  }
  return p;
}

json modulator_doc(const metareg::ModulatorParams& phi) {
  return write_blocks({{"w1", &phi.w1}, {"b1", &phi.b1}, {"w2", &phi.w2}, {"b2", &phi.b2}});
}

metareg::ModulatorParams modulator_from(const json& doc, std::string_view source) {
  metareg::ModulatorParams phi{read_block(doc, "w1", source), read_block(doc, "b1", source),
                               read_block(doc, "w2", source), read_block(doc, "b2", source)};
  const std::size_t h = phi.b1.rows();
  const std::size_t p = phi.b2.rows();
  if (phi.b1.cols() != 1 || phi.b2.cols() != 1 || phi.w1.rows() != h || phi.w1.cols() != 2 * p ||
      phi.w2.rows() != p || phi.w2.cols() != h) {
    fail(source, "inconsistent modulator shapes");
  }
  return phi;
}

json encoder_doc(const encoder::EncoderWeights& w) {
  json doc = write_blocks({{"image_weight", &w.image_weight()},
                           {"image_bias", &w.image_bias()},
                           {"text_weight", &w.text_weight()},
                           {"text_bias", &w.text_bias()},
                           {"concept_projection", &w.concept_projection()}});
  doc["prompt_dim"] = w.dims().prompt;
  return doc;
}

encoder::EncoderWeights encoder_from(const json& doc, std::string_view source) {
  std::size_t prompt_dim = 0;
  try {
    prompt_dim = doc.at("prompt_dim").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(source, std::string("prompt_dim: ") + e.what());
  }
  try {
    return encoder::EncoderWeights(read_block(doc, "image_weight", source),
                                   read_block(doc, "image_bias", source),
                                   read_block(doc, "text_weight", source),
                                   read_block(doc, "text_bias", source),
                                   read_block(doc, "concept_projection", source), prompt_dim);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::parse_error) throw;
    fail(source, e.what());
  }
}

json classes_doc(const encoder::ClassSet& c) { return write_blocks({{"embeddings", &c.embeddings()}}); }

encoder::ClassSet classes_from(const json& doc, std::string_view source) {
  try {
    return encoder::ClassSet(read_block(doc, "embeddings", source));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::parse_error) throw;
    fail(source, e.what());
  }
}

}  // namespace

std::string write_prompts(const encoder::PromptSet& p) { return prompts_doc(p).dump(2) + "\n"; }
encoder::PromptSet read_prompts(std::string_view text) {
  return prompts_from(parse(text, "prompts"), "prompts");
}

std::string write_modulator(const metareg::ModulatorParams& phi) {
  return modulator_doc(phi).dump(2) + "\n";
}
metareg::ModulatorParams read_modulator(std::string_view text) {
  return modulator_from(parse(text, "modulator"), "modulator");
}

std::string write_encoder(const encoder::EncoderWeights& w) { return encoder_doc(w).dump(2) + "\n"; }
encoder::EncoderWeights read_encoder(std::string_view text) {
  return encoder_from(parse(text, "encoder"), "encoder");
}

std::string write_classes(const encoder::ClassSet& c) { return classes_doc(c).dump(2) + "\n"; }
encoder::ClassSet read_classes(std::string_view text) {
  return classes_from(parse(text, "classes"), "classes");
}

std::string write_checkpoint(const Checkpoint& c) {
  json doc;
  doc["version"] = kFormatVersion;
  doc["regime"] = c.regime;
  doc["seed"] = c.seed;
  doc["tau"] = format_double(c.model.tau);
  doc["prompts"] = prompts_doc(c.prompts);
  doc["modulator"] = modulator_doc(c.modulator);
  doc["encoder"] = encoder_doc(c.model.weights);
  doc["classes"] = classes_doc(c.model.classes);
  return doc.dump(2) + "\n";
}

Checkpoint read_checkpoint(std::string_view text, std::string_view source) {
  const json doc = parse(text, source);
  if (!doc.is_object() || doc.value("version", 0) != kFormatVersion) {
    fail(source, "missing or unsupported version");
  }
  std::string regime;
  std::uint64_t seed = 0;
  double tau = 0.0;
  try {
    regime = doc.at("regime").get<std::string>();
    seed = doc.at("seed").get<std::uint64_t>();
    tau = parse_double(doc.at("tau").get<std::string>(), "tau");
  } catch (const json::exception& e) {
    fail(source, e.what());
  }
  if (!(tau > 0.0)) fail(source, "tau must be positive");
  encoder::PromptSet prompts = prompts_from(doc.value("prompts", json()), source);
  encoder::EncoderWeights weights = encoder_from(doc.value("encoder", json()), source);
  encoder::ClassSet classes = classes_from(doc.value("classes", json()), source);
  metareg::ModulatorParams phi = modulator_from(doc.value("modulator", json()), source);
  if (prompts.prompt_dim() != weights.dims().prompt) {
    fail(source, "prompt width " + std::to_string(prompts.prompt_dim()) +
                     " does not match encoder prompt width " + std::to_string(weights.dims().prompt));
  }
  if (classes.dim() != weights.dims().class_dim) fail(source, "class descriptor width mismatch");
  if (phi.prompt_params() != 2 * prompts.prompt_dim()) fail(source, "modulator width mismatch");
  const auto dp = weights.dims().prompt;
  return Checkpoint{std::move(regime), seed,
                    encoder::FrozenModel{std::move(weights), std::move(classes),
                                         encoder::ReferencePrompt::zeros(dp), tau},
                    std::move(prompts), std::move(phi)};
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file(path, write_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return read_checkpoint(read_file(path), path.string());
}

}  // namespace mrp::io
