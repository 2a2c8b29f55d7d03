#include "samcp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "samcp/error.hpp"
#include "samcp/parallel.hpp"

namespace samcp {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

namespace {

using Rng = std::mt19937_64;
using Dense = std::vector<std::uint8_t>;

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

enum class Shape { kRect, kEllipse, kL };

// Shape footprint inside a w x h box, row-major.
Dense shape_footprint(Shape shape, int w, int h, Rng& rng) {
  Dense out(static_cast<std::size_t>(w * h), 0);
  switch (shape) {
    case Shape::kRect:
      std::fill(out.begin(), out.end(), std::uint8_t{1});
      break;
    case Shape::kEllipse: {
      const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
      const double rx = w / 2.0, ry = h / 2.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double dx = (x - cx) / rx, dy = (y - cy) / ry;
          out[static_cast<std::size_t>(y * w + x)] = dx * dx + dy * dy <= 1.0;
        }
      break;
    }
    case Shape::kL: {
      std::fill(out.begin(), out.end(), std::uint8_t{1});
      const int cw = w / 2, ch = h / 2;
      const int corner = uniform_int(rng, 0, 3);
      const int x0 = (corner & 1) ? w - cw : 0;
      const int y0 = (corner & 2) ? h - ch : 0;
      for (int y = y0; y < y0 + ch; ++y)
        for (int x = x0; x < x0 + cw; ++x) out[static_cast<std::size_t>(y * w + x)] = 0;
      break;
    }
  }
  return out;
}

Dense dilate(const Dense& m, int width, int height, int radius, bool four_connected) {
  if (radius <= 0) return m;
  Dense out(m.size(), 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!m[static_cast<std::size_t>(y * width + x)]) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          if (four_connected && std::abs(dx) + std::abs(dy) > radius) continue;
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < width && ny < height) out[static_cast<std::size_t>(ny * width + nx)] = 1;
        }
    }
  return out;
}

Dense erode4(const Dense& m, int width, int height) {
  Dense out(m.size(), 0);
  auto at = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < width && y < height && m[static_cast<std::size_t>(y * width + x)];
  };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out[static_cast<std::size_t>(y * width + x)] = at(x, y) && at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1);
  return out;
}

Eigen::Vector3d hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

int dominant_gt(const BinaryMask& patch, const std::vector<GtInstance>& gt) {
  int best = -1;
  long best_area = 0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const long a = intersection_area(patch, gt[k].mask);
    if (a > best_area) {
      best_area = a;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace

void validate_corpus_config(const CorpusConfig& c) {
  if (c.width <= 0 || c.height <= 0) throw ConfigError("corpus: image size must be positive");
  if (c.num_thing_classes < 1 || c.num_stuff_classes < 1)
    throw ConfigError("corpus: need at least one thing and one stuff class");
  if (c.embed_dim < 1) throw ConfigError("corpus: embed_dim must be positive");
  if (c.instances_min < 0 || c.instances_max < c.instances_min) throw ConfigError("corpus: bad instance range");
  if (c.size_min < 2 || c.size_max < c.size_min) throw ConfigError("corpus: bad size range");
  if (c.overseg_min < 1 || c.overseg_max < c.overseg_min) throw ConfigError("corpus: bad over-segmentation range");
  if (c.stuff_overseg_min < 1 || c.stuff_overseg_max < c.stuff_overseg_min)
    throw ConfigError("corpus: bad stuff over-segmentation range");
  if (c.num_train < 0 || c.num_eval < 0) throw ConfigError("corpus: negative scene count");
  const int total = c.num_thing_classes + c.num_stuff_classes;
  for (int id : c.held_out_classes) {
    if (id < 0 || id >= total) throw ConfigError("corpus: held-out class id out of range");
  }
  auto in_range = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!in_range(c.corruption.drop_rate) || !in_range(c.corruption.merge_rate) || !in_range(c.corruption.jitter_rate))
    throw ConfigError("corpus: corruption rates must lie in [0, 1]");
}

Eigen::MatrixXd ClassTable::embeddings(const std::vector<int>& ids) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), embed_dim());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = (*this)[ids[i]].embedding.transpose();
  return out;
}

std::vector<int> ClassTable::all_ids() const {
  std::vector<int> ids(entries.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<const Scene*> Corpus::split(Split s) const {
  std::vector<const Scene*> out;
  for (const Scene& scene : scenes)
    if (scene.split == s) out.push_back(&scene);
  return out;
}

ClassTable make_class_table(const CorpusConfig& config, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0, 0xC1A55);
  std::normal_distribution<double> normal(0.0, 1.0);
  ClassTable table;
  const int total = config.num_thing_classes + config.num_stuff_classes;
  for (int id = 0; id < total; ++id) {
    ClassEntry e;
    e.id = id;
    e.is_thing = id < config.num_thing_classes;
    e.name = e.is_thing ? "thing_" + std::to_string(id) : "stuff_" + std::to_string(id - config.num_thing_classes);
    e.embedding.resize(config.embed_dim);
    for (int d = 0; d < config.embed_dim; ++d) e.embedding(d) = normal(rng);
    e.embedding.normalize();
    table.entries.push_back(std::move(e));
  }
  return table;
}

Eigen::Vector3d class_base_color(int class_id, int num_classes) {
  const double hue = static_cast<double>(class_id) / static_cast<double>(std::max(1, num_classes));
  const double value = class_id % 2 == 0 ? 0.95 : 0.6;
  return hsv_to_rgb(hue, 0.85, value);
}

std::vector<BinaryMask> oversegment(const BinaryMask& instance, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("oversegment: k must be at least 1");
  const long area = instance.area();
  if (k > area) throw std::invalid_argument("oversegment: k exceeds instance area");
  if (k == 1) return {instance};

  std::vector<std::uint32_t> pixels;
  pixels.reserve(static_cast<std::size_t>(area));
  for (const Run& r : instance.runs())
    for (std::uint32_t i = r.start; i < r.end(); ++i) pixels.push_back(i);

  Rng rng = make_rng(seed, static_cast<std::uint64_t>(k), 0x5EED);
  for (int i = 0; i < k; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(static_cast<std::size_t>(i), pixels.size() - 1)(rng);
    std::swap(pixels[static_cast<std::size_t>(i)], pixels[j]);
  }
  const int w = instance.width();
  std::vector<std::array<int, 2>> seeds;
  for (int i = 0; i < k; ++i) {
    const auto p = static_cast<int>(pixels[static_cast<std::size_t>(i)]);
    seeds.push_back({p % w, p / w});
  }
  std::sort(pixels.begin(), pixels.end());

  std::vector<std::vector<Run>> parts(static_cast<std::size_t>(k));
  for (std::uint32_t p : pixels) {
    const int x = static_cast<int>(p) % w, y = static_cast<int>(p) / w;
    int best = 0;
    long best_d = -1;
    for (int s = 0; s < k; ++s) {
      const long dx = x - seeds[static_cast<std::size_t>(s)][0];
      const long dy = y - seeds[static_cast<std::size_t>(s)][1];
      const long d = dx * dx + dy * dy;
      if (best_d < 0 || d < best_d) {
        best_d = d;
        best = s;
      }
    }
    parts[static_cast<std::size_t>(best)].push_back({p, 1});
  }
  std::vector<BinaryMask> out;
  out.reserve(parts.size());
  for (auto& runs : parts) out.emplace_back(instance.width(), instance.height(), std::move(runs));
  return out;
}

Scene generate_scene(const CorpusConfig& config, const ClassTable& classes, std::uint64_t corpus_seed, int index) {
  const int W = config.width, H = config.height;
  Scene scene;
  scene.width = W;
  scene.height = H;
  scene.seed = make_rng(corpus_seed, static_cast<std::uint64_t>(index), 1)();
  scene.split = index < config.num_train ? Split::kTrain : Split::kEval;
  Rng rng = make_rng(corpus_seed, static_cast<std::uint64_t>(index), 0x5CE2E);

  auto held_out = [&](int id) {
    return std::find(config.held_out_classes.begin(), config.held_out_classes.end(), id) != config.held_out_classes.end();
  };
  std::vector<int> thing_ids, stuff_ids;
  for (const ClassEntry& e : classes.entries) {
    if (scene.split == Split::kTrain && held_out(e.id)) continue;
    (e.is_thing ? thing_ids : stuff_ids).push_back(e.id);
  }
  if (thing_ids.empty() && config.instances_max > 0) throw ConfigError("corpus: no thing class available");
  if (stuff_ids.empty()) throw ConfigError("corpus: no stuff class available");

  // Things.
  Dense blocked(static_cast<std::size_t>(W * H), 0);
  Dense covered(static_cast<std::size_t>(W * H), 0);
  const int count = uniform_int(rng, config.instances_min, config.instances_max);
  for (int i = 0; i < count; ++i) {
    const int class_id = thing_ids[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(thing_ids.size()) - 1))];
    bool placed = false;
    for (int attempt = 0; attempt < config.max_placement_retries && !placed; ++attempt) {
      const auto shape = static_cast<Shape>(uniform_int(rng, 0, 2));
      const int w = std::min(W, uniform_int(rng, config.size_min, config.size_max));
      const int h = std::min(H, uniform_int(rng, config.size_min, config.size_max));
      const int x0 = uniform_int(rng, 0, W - w), y0 = uniform_int(rng, 0, H - h);
      const Dense foot = shape_footprint(shape, w, h, rng);
      bool clash = false;
      for (int y = 0; y < h && !clash; ++y)
        for (int x = 0; x < w && !clash; ++x)
          clash = foot[static_cast<std::size_t>(y * w + x)] && blocked[static_cast<std::size_t>((y0 + y) * W + x0 + x)];
      if (clash) continue;
      Dense dense(static_cast<std::size_t>(W * H), 0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (foot[static_cast<std::size_t>(y * w + x)]) dense[static_cast<std::size_t>((y0 + y) * W + x0 + x)] = 1;
      const Dense grown = dilate(dense, W, H, config.min_gap, false);
      for (std::size_t p = 0; p < dense.size(); ++p) {
        blocked[p] = blocked[p] | grown[p];
        covered[p] = covered[p] | dense[p];
      }
      scene.gt.push_back({BinaryMask::from_dense(W, H, dense), class_id, true});
      placed = true;
    }
    if (!placed) throw DataError("infeasible layout: could not place instance " + std::to_string(i) + " of scene " +
                                 std::to_string(index));
  }

  // Stuff fills the background, optionally split in two by a straight cut.
  std::shuffle(stuff_ids.begin(), stuff_ids.end(), rng);
  const bool two = stuff_ids.size() >= 2 && uniform01(rng) < 0.5;
  const bool vertical = uniform01(rng) < 0.5;
  const int cut = uniform_int(rng, (vertical ? W : H) / 4, 3 * (vertical ? W : H) / 4);
  std::array<Dense, 2> regions{Dense(covered.size(), 0), Dense(covered.size(), 0)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const auto p = static_cast<std::size_t>(y * W + x);
      if (covered[p]) continue;
      const int side = two ? ((vertical ? x : y) < cut ? 0 : 1) : 0;
      regions[static_cast<std::size_t>(side)][p] = 1;
    }
  for (int s = 0; s < (two ? 2 : 1); ++s) {
    BinaryMask m = BinaryMask::from_dense(W, H, regions[static_cast<std::size_t>(s)]);
    if (!m.empty()) scene.gt.push_back({std::move(m), stuff_ids[static_cast<std::size_t>(s)], false});
  }

  // Patches: every gt region split into Voronoi parts, then shuffled.
  for (const GtInstance& g : scene.gt) {
    const int lo = g.is_thing ? config.overseg_min : config.stuff_overseg_min;
    const int hi = g.is_thing ? config.overseg_max : config.stuff_overseg_max;
    const int k = static_cast<int>(std::min<long>(uniform_int(rng, lo, hi), g.mask.area()));
    for (BinaryMask& part : oversegment(g.mask, k, rng())) scene.patches.push_back(std::move(part));
  }
  std::shuffle(scene.patches.begin(), scene.patches.end(), rng);

  // Paint the image and the CLIP stand-in field.
  std::vector<int> owner(static_cast<std::size_t>(W * H), -1);
  for (std::size_t k = 0; k < scene.gt.size(); ++k)
    for (const Run& r : scene.gt[k].mask.runs())
      for (std::uint32_t p = r.start; p < r.end(); ++p) owner[p] = static_cast<int>(k);

  std::uniform_real_distribution<double> tint(-config.instance_tint, config.instance_tint);
  std::vector<Eigen::Vector3d> colors;
  for (const GtInstance& g : scene.gt) {
    Eigen::Vector3d c = class_base_color(g.class_id, classes.size());
    for (int ch = 0; ch < 3; ++ch) c(ch) += config.instance_tint > 0 ? tint(rng) : 0.0;
    colors.push_back(c);
  }
  std::normal_distribution<double> color_noise(0.0, 1.0);
  scene.image.resize(W * H, 3);
  for (int p = 0; p < W * H; ++p) {
    const int k = owner[static_cast<std::size_t>(p)];
    for (int ch = 0; ch < 3; ++ch) {
      double v = k >= 0 ? colors[static_cast<std::size_t>(k)](ch) : 0.0;
      if (config.color_noise > 0) v += config.color_noise * color_noise(rng);
      scene.image(p, ch) = static_cast<float>(v);
    }
  }

  if (scene.split == Split::kEval || config.clip_field_for_train) {
    const int D = classes.embed_dim();
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Eigen::VectorXd> offsets;
    for (const GtInstance& g : scene.gt) {
      Eigen::VectorXd e = classes[g.class_id].embedding;
      if (config.clip_instance_noise > 0)
        for (int d = 0; d < D; ++d) e(d) += config.clip_instance_noise * normal(rng);
      offsets.push_back(std::move(e));
    }
    scene.clip_field.resize(W * H, D);
    for (int p = 0; p < W * H; ++p) {
      const int k = owner[static_cast<std::size_t>(p)];
      for (int d = 0; d < D; ++d) {
        double v = k >= 0 ? offsets[static_cast<std::size_t>(k)](d) : 0.0;
        if (config.clip_noise > 0) v += config.clip_noise * normal(rng);
        scene.clip_field(p, d) = static_cast<float>(v);
      }
    }
  }

  if (config.corruption.active()) scene = corrupt_patches(scene, config.corruption, rng());
  return scene;
}

Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed, int threads) {
  validate_corpus_config(config);
  Corpus corpus;
  corpus.config = config;
  corpus.seed = seed;
  corpus.classes = make_class_table(config, seed);
  const int total = config.num_train + config.num_eval;
  corpus.scenes.resize(static_cast<std::size_t>(total));
  parallel_for(static_cast<std::size_t>(total), threads, [&](std::size_t i) {
    corpus.scenes[i] = generate_scene(config, corpus.classes, seed, static_cast<int>(i));
  });
  return corpus;
}

Scene corrupt_patches(const Scene& scene, const CorruptionConfig& config, std::uint64_t seed) {
  if (!config.active()) return scene;
  Rng rng = make_rng(seed, 0, 0xC0228);
  const int W = scene.width, H = scene.height;
  Scene out = scene;

  std::vector<BinaryMask> patches;
  std::vector<int> owners;
  for (const BinaryMask& p : scene.patches) {
    const int k = dominant_gt(p, scene.gt);
    const bool eligible = config.drop_classes.empty() ||
                          (k >= 0 && std::find(config.drop_classes.begin(), config.drop_classes.end(),
                                               scene.gt[static_cast<std::size_t>(k)].class_id) != config.drop_classes.end());
    const bool drop = eligible && uniform01(rng) < config.drop_rate;
    if (!drop) {
      patches.push_back(p);
      owners.push_back(k);
    }
  }
  if (patches.empty()) {
    patches.push_back(scene.patches.front());
    owners.push_back(dominant_gt(patches.front(), scene.gt));
  }

  if (config.merge_rate > 0) {
    std::vector<bool> merged(patches.size(), false);
    std::vector<BinaryMask> result;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      if (merged[i]) continue;
      merged[i] = true;
      BinaryMask current = patches[i];
      if (uniform01(rng) < config.merge_rate) {
        const Dense grown = dilate(current.to_dense(), W, H, 1, true);
        const BinaryMask halo = BinaryMask::from_dense(W, H, grown);
        for (std::size_t j = i + 1; j < patches.size(); ++j) {
          if (merged[j] || owners[j] == owners[i]) continue;
          if (intersection_area(halo, patches[j]) > 0) {
            current = unite(current, patches[j]);
            merged[j] = true;
            break;
          }
        }
      }
      result.push_back(std::move(current));
    }
    patches = std::move(result);
  }

  if (config.jitter_rate > 0) {
    for (BinaryMask& p : patches) {
      if (uniform01(rng) >= config.jitter_rate) continue;
      const Dense dense = p.to_dense();
      const bool grow = uniform01(rng) < 0.5;
      const Dense changed = grow ? dilate(dense, W, H, 1, true) : erode4(dense, W, H);
      BinaryMask m = BinaryMask::from_dense(W, H, changed);
      if (!m.empty()) p = std::move(m);
    }
  }
  out.patches = std::move(patches);
  return out;
}

}  // namespace samcp
