#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "samcp/error.hpp"
#include "samcp/io.hpp"
#include "samcp/synth.hpp"

using namespace samcp;

namespace {

CorpusConfig small() {
  CorpusConfig c;
  c.num_train = 12;
  c.num_eval = 6;
  return c;
}

}  // namespace

TEST_CASE("patches partition the ground truth of every scene") {
  const Corpus corpus = generate_corpus(small(), 17);
  for (const Scene& s : corpus.scenes) {
    const long pixels = static_cast<long>(s.width) * s.height;
    std::vector<int> patch_owner(static_cast<std::size_t>(pixels), -1), gt_owner(static_cast<std::size_t>(pixels), -1);
    long patch_area = 0, gt_area = 0;
    for (std::size_t k = 0; k < s.patches.size(); ++k) {
      REQUIRE_FALSE(s.patches[k].empty());
      patch_area += s.patches[k].area();
      for (const Run& r : s.patches[k].runs())
        for (std::uint32_t p = r.start; p < r.end(); ++p) patch_owner[p] = static_cast<int>(k);
    }
    for (std::size_t k = 0; k < s.gt.size(); ++k) {
      gt_area += s.gt[k].mask.area();
      for (const Run& r : s.gt[k].mask.runs())
        for (std::uint32_t p = r.start; p < r.end(); ++p) gt_owner[p] = static_cast<int>(k);
    }
    // Disjoint and covering the image.
    CHECK(patch_area == pixels);
    CHECK(gt_area == pixels);
    // Every patch lies inside a single gt region.
    for (const BinaryMask& p : s.patches) {
      bool inside = false;
      for (const GtInstance& g : s.gt) inside = inside || iop_mask(p, g.mask) == 1.0;
      CHECK(inside);
    }
  }
}

TEST_CASE("thing instances keep a gap and stuff fills the rest") {
  const Corpus corpus = generate_corpus(small(), 3);
  for (const Scene& s : corpus.scenes) {
    std::vector<const GtInstance*> things;
    int stuff = 0;
    for (const GtInstance& g : s.gt) {
      CHECK(g.is_thing == corpus.classes[g.class_id].is_thing);
      if (g.is_thing)
        things.push_back(&g);
      else
        ++stuff;
    }
    CHECK(stuff >= 1);
    CHECK(stuff <= 2);
    for (std::size_t a = 0; a < things.size(); ++a)
      for (std::size_t b = a + 1; b < things.size(); ++b) {
        const auto da = things[a]->mask.to_dense(), db = things[b]->mask.to_dense();
        for (int y = 0; y < s.height; ++y)
          for (int x = 0; x < s.width; ++x) {
            if (!da[static_cast<std::size_t>(y * s.width + x)]) continue;
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int xx = x + dx, yy = y + dy;
                if (xx < 0 || yy < 0 || xx >= s.width || yy >= s.height) continue;
                CHECK_FALSE(db[static_cast<std::size_t>(yy * s.width + xx)]);
              }
          }
      }
  }
}

TEST_CASE("generation is deterministic and independent of the thread count") {
  const CorpusConfig c = small();
  const std::string a = encode_corpus(generate_corpus(c, 42, 1));
  const std::string b = encode_corpus(generate_corpus(c, 42, 3));
  const std::string d = encode_corpus(generate_corpus(c, 43, 1));
  CHECK(a == b);
  CHECK(a != d);
}

TEST_CASE("held-out classes never appear in training scenes") {
  CorpusConfig c = small();
  c.held_out_classes = {1, 3};
  const Corpus corpus = generate_corpus(c, 8);
  for (const Scene* s : corpus.split(Split::kTrain)) {
    CHECK_FALSE(s->has_clip_field());
    for (const GtInstance& g : s->gt) CHECK((g.class_id != 1 && g.class_id != 3));
  }
  for (const Scene* s : corpus.split(Split::kEval)) CHECK(s->has_clip_field());
}

TEST_CASE("noiseless clip field carries the class embedding") {
  const Corpus corpus = generate_corpus(small(), 9);
  const Scene& s = *corpus.split(Split::kEval).front();
  for (const GtInstance& g : s.gt) {
    const Run& r = g.mask.runs().front();
    CHECK(s.clip_field.row(r.start).cast<double>().transpose().isApprox(corpus.classes[g.class_id].embedding, 1e-6));
  }
}

TEST_CASE("class table") {
  const ClassTable t = make_class_table(CorpusConfig{}, 1);
  REQUIRE(t.size() == 6);
  for (int id = 0; id < t.size(); ++id) {
    CHECK(t[id].id == id);
    CHECK(t[id].is_thing == (id < 4));
    CHECK(t[id].embedding.norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("over-segmentation splits an instance into k parts") {
  const BinaryMask m = BinaryMask::from_box(20, 20, {2, 2, 14, 12});
  for (int k = 1; k <= 4; ++k) {
    const auto parts = oversegment(m, k, 7);
    CHECK(parts.size() == static_cast<std::size_t>(k));
    long total = 0;
    for (const auto& p : parts) total += p.area();
    CHECK(total == m.area());
    CHECK(union_of(parts) == m);
  }
  CHECK_THROWS(oversegment(BinaryMask::from_box(4, 4, {0, 0, 1, 2}), 3, 1));
}

TEST_CASE("corruption keeps masks valid and changes the pool") {
  CorpusConfig c = small();
  c.corruption.drop_rate = 0.3;
  c.corruption.merge_rate = 0.3;
  c.corruption.jitter_rate = 0.3;
  const Corpus clean = generate_corpus(small(), 5), dirty = generate_corpus(c, 5);
  int changed = 0;
  for (std::size_t i = 0; i < clean.scenes.size(); ++i) {
    CHECK_FALSE(dirty.scenes[i].patches.empty());
    for (const BinaryMask& p : dirty.scenes[i].patches) CHECK_FALSE(p.empty());
    changed += dirty.scenes[i].patches != clean.scenes[i].patches;
  }
  CHECK(changed > 0);
}

TEST_CASE("invalid configurations are rejected") {
  CorpusConfig c = small();
  c.size_min = 30;
  c.size_max = 10;
  CHECK_THROWS_AS(generate_corpus(c, 1), ConfigError);
  CorpusConfig crowded = small();
  crowded.width = crowded.height = 16;
  crowded.size_min = crowded.size_max = 14;
  crowded.instances_min = crowded.instances_max = 4;
  crowded.max_placement_retries = 20;
  CHECK_THROWS_AS(generate_corpus(crowded, 1), DataError);
}
