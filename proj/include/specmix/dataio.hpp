#pragma once

// On-disk formats (documented byte-for-byte in docs/FORMATS.md):
//   cube       <stem>.json header + <stem>.f32 little-endian float32 payload, BIP
//   abundance  the cube container with K "bands" named after the materials
//   endmembers CSV, header row of K names, then D rows of K values
//   checkpoint single JSON document, tensors as base64 little-endian float32

#include <cstdint>
#include <string>
#include <vector>

#include "specmix/model.hpp"
#include "specmix/synth.hpp"
#include "specmix/trainer.hpp"
#include "specmix/types.hpp"

namespace specmix {

inline constexpr int kFormatVersion = 1;

/// Strips a trailing ".json" or ".f32" so that either file, or the bare stem, names a container.
std::string container_stem(const std::string& path);

void write_cube(const std::string& path, const HyperspectralCube& cube);
HyperspectralCube read_cube(const std::string& path);

/// Payload byte length of a cube container.
inline std::size_t cube_payload_bytes(std::size_t height, std::size_t width, std::size_t bands) {
  return height * width * bands * sizeof(float);
}

void write_abundance(const std::string& path, const AbundanceField& field);
/// Rows whose sum is within 0.01 of one are renormalised; others raise DataError.
AbundanceField read_abundance(const std::string& path);

void write_endmembers(const std::string& path, const EndmemberMatrix& e);
EndmemberMatrix read_endmembers(const std::string& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

std::string checkpoint_json(const ModelParams<float>& model);
ModelParams<float> checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::string& path, const ModelParams<float>& model);
ModelParams<float> load_checkpoint(const std::string& path);

/// Config documents use the struct field names; absent keys keep the values of `base`.
std::string train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});
std::string scene_config_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const std::string& text, SceneConfig base = {});

/// Wall times are left out unless requested, so the document is reproducible.
std::string history_json(const TrainHistory& history, bool include_timing = false);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace specmix
