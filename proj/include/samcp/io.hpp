#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "samcp/autodiff.hpp"
#include "samcp/config.hpp"
#include "samcp/inference.hpp"
#include "samcp/metrics.hpp"
#include "samcp/synth.hpp"

namespace samcp {

inline constexpr std::uint8_t kCorpusVersion = 1;
inline constexpr std::uint8_t kCheckpointVersion = 1;

// Binary files are little-endian; readers throw DataError on a bad magic,
// an unknown version or a truncated stream.
std::string encode_corpus(const Corpus& corpus);
Corpus decode_corpus(const std::string& bytes);

struct Checkpoint {
  RunConfig config;
  ad::ParameterStore params;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file then renames it into place.
void write_file(const std::filesystem::path& path, const std::string& bytes);

std::string report_to_json(const MetricReport& report);
std::string diagnostics_to_json(const ProposalDiagnostics& plain, const ProposalDiagnostics& merged);

/// Binary PPM (P6) of an (H*W) x 3 image in [0, 1].
std::string encode_ppm(const ImageGrid& rgb, int width, int height);

/// Panoptic overlay: segment colors blended over the image, patch boundaries
/// drawn in white.
ImageGrid panoptic_overlay(const Scene& scene, const PanopticMap& map, const ClassTable& classes);

/// Semantic map colored by class base color, unlabeled pixels black.
ImageGrid semantic_overlay(const SemanticMap& map, const ClassTable& classes);

}  // namespace samcp
