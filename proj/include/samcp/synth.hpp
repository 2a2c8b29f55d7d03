#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "samcp/mask.hpp"

namespace samcp {

/// Per-pixel values stored row-major: row y*width + x holds the channels.
template <typename Scalar>
using PixelGrid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ImageGrid = PixelGrid<float>;

struct ClassEntry {
  int id = 0;
  std::string name;
  bool is_thing = true;
  Eigen::VectorXd embedding;  // unit norm
};

struct ClassTable {
  std::vector<ClassEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }
  int embed_dim() const { return entries.empty() ? 0 : static_cast<int>(entries.front().embedding.size()); }
  const ClassEntry& operator[](int id) const { return entries.at(static_cast<std::size_t>(id)); }
  /// Rows are the embeddings of `ids`, in order.
  Eigen::MatrixXd embeddings(const std::vector<int>& ids) const;
  std::vector<int> all_ids() const;
};

struct GtInstance {
  BinaryMask mask;
  int class_id = 0;
  bool is_thing = true;
};

enum class Split : std::uint8_t { kTrain = 0, kEval = 1 };

struct Scene {
  int width = 0;
  int height = 0;
  ImageGrid image;  // (H*W) x 3
  std::vector<BinaryMask> patches;
  std::vector<GtInstance> gt;
  ImageGrid clip_field;  // (H*W) x D_txt, or empty when not generated
  std::uint64_t seed = 0;
  Split split = Split::kTrain;

  bool has_clip_field() const { return clip_field.size() != 0; }
};

struct CorruptionConfig {
  double drop_rate = 0.0;
  std::vector<int> drop_classes;  // empty: every class
  double merge_rate = 0.0;
  double jitter_rate = 0.0;

  bool active() const { return drop_rate > 0.0 || merge_rate > 0.0 || jitter_rate > 0.0; }
};

struct CorpusConfig {
  int height = 64;
  int width = 64;
  int num_thing_classes = 4;
  int num_stuff_classes = 2;
  int embed_dim = 32;
  int instances_min = 1;
  int instances_max = 4;
  int size_min = 10;
  int size_max = 22;
  int min_gap = 1;
  int overseg_min = 1;
  int overseg_max = 3;
  int stuff_overseg_min = 2;
  int stuff_overseg_max = 4;
  double color_noise = 0.03;
  double instance_tint = 0.08;
  double clip_noise = 0.0;
  double clip_instance_noise = 0.0;
  int num_train = 500;
  int num_eval = 100;
  std::vector<int> held_out_classes;
  bool clip_field_for_train = false;
  int max_placement_retries = 200;
  CorruptionConfig corruption;
};

struct Corpus {
  CorpusConfig config;
  std::uint64_t seed = 0;
  ClassTable classes;
  std::vector<Scene> scenes;

  std::vector<const Scene*> split(Split s) const;
};

/// Generator seeded from (seed, index, tag) through std::seed_seq.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t tag);

/// Throws ConfigError on inconsistent values.
void validate_corpus_config(const CorpusConfig& config);

/// Seeded unit-norm class embeddings; class ids are dense, things first.
ClassTable make_class_table(const CorpusConfig& config, std::uint64_t seed);

/// RGB base color of a class.
Eigen::Vector3d class_base_color(int class_id, int num_classes);

/// Deterministic in (config, seed); scene i draws from its own sub-seed.
Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed, int threads = 1);

Scene generate_scene(const CorpusConfig& config, const ClassTable& classes, std::uint64_t corpus_seed, int index);

/// Voronoi partition of `instance` around k seed pixels drawn inside it.
std::vector<BinaryMask> oversegment(const BinaryMask& instance, int k, std::uint64_t seed);

Scene corrupt_patches(const Scene& scene, const CorruptionConfig& config, std::uint64_t seed);

}  // namespace samcp
