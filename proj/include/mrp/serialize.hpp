#ifndef MRP_SERIALIZE_HPP
#define MRP_SERIALIZE_HPP

// Versioned JSON documents for parameters and checkpoints. Every tensor is a
// named block with a shape and its row-major entries as shortest round-trip
// decimal strings, so parse(write(x)) == x bit for bit:
//
//   {"version": 1, "shapes": {"vis": [4, 1], ...}, "data": {"vis": ["0.01", ...], ...}}

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "mrp/encoder.hpp"
#include "mrp/metareg.hpp"

namespace mrp::io {

inline constexpr int kFormatVersion = 1;

std::string write_prompts(const encoder::PromptSet& p);
encoder::PromptSet read_prompts(std::string_view text);

std::string write_modulator(const metareg::ModulatorParams& phi);
metareg::ModulatorParams read_modulator(std::string_view text);

std::string write_encoder(const encoder::EncoderWeights& w);
encoder::EncoderWeights read_encoder(std::string_view text);

std::string write_classes(const encoder::ClassSet& c);
encoder::ClassSet read_classes(std::string_view text);

/// Everything needed to evaluate a trained run without the training config.
struct Checkpoint {
  std::string regime;
  std::uint64_t seed = 0;
  encoder::FrozenModel model;
  encoder::PromptSet prompts;
  metareg::ModulatorParams modulator;
};

std::string write_checkpoint(const Checkpoint& c);
/// Throws Error(parse_error) naming `source` on malformed input.
Checkpoint read_checkpoint(std::string_view text, std::string_view source = "checkpoint");

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mrp::io

#endif  // MRP_SERIALIZE_HPP
