#include "samcp/io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "samcp/error.hpp"

namespace samcp {

namespace {

constexpr char kCorpusMagic[8] = {'S', 'A', 'M', 'C', 'P', 'C', 'O', 'R'};
constexpr char kCheckpointMagic[8] = {'S', 'A', 'M', 'C', 'P', 'C', 'K', 'P'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }

  template <typename T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      put(std::bit_cast<U>(v));
    } else {
      using U = std::make_unsigned_t<T>;
      auto u = static_cast<U>(v);
      for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
    }
  }

  void string(const std::string& s) {
    put<std::uint64_t>(s.size());
    out_ += s;
  }

  void mask(const BinaryMask& m) {
    put<std::uint32_t>(static_cast<std::uint32_t>(m.runs().size()));
    for (const Run& r : m.runs()) {
      put(r.start);
      put(r.length);
    }
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  void bytes(void* data, std::size_t n) {
    need(n);
    std::memcpy(data, in_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T get() {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      return std::bit_cast<T>(get<U>());
    } else {
      using U = std::make_unsigned_t<T>;
      need(sizeof(T));
      U u = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i)
        u |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i));
      pos_ += sizeof(T);
      return static_cast<T>(u);
    }
  }

  std::string string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  BinaryMask mask(int width, int height) {
    const auto n = get<std::uint32_t>();
    need(static_cast<std::size_t>(n) * 8);
    std::vector<Run> runs(n);
    for (Run& r : runs) {
      r.start = get<std::uint32_t>();
      r.length = get<std::uint32_t>();
    }
    try {
      return BinaryMask(width, height, std::move(runs));
    } catch (const std::invalid_argument& e) {
      throw DataError(std::string("corrupt mask: ") + e.what());
    }
  }

  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_) throw DataError("unexpected end of file");
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

void check_header(Reader& r, const char (&magic)[8], std::uint8_t version, const char* what) {
  char m[8];
  r.bytes(m, 8);
  if (std::memcmp(m, magic, 8) != 0) throw DataError(std::string("not a ") + what + " file");
  const auto v = r.get<std::uint8_t>();
  if (v != version) throw DataError(std::string("unsupported ") + what + " version " + std::to_string(v));
}

template <typename Matrix>
void put_matrix(Writer& w, const Matrix& m) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.put(m(i, j));
}

template <typename Matrix>
Matrix get_matrix(Reader& r) {
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<typename Matrix::Scalar>();
  return m;
}

}  // namespace

std::string encode_corpus(const Corpus& corpus) {
  Writer w;
  w.bytes(kCorpusMagic, 8);
  w.put(kCorpusVersion);
  w.string(corpus_config_to_json(corpus.config));
  w.put(corpus.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(corpus.classes.size()));
  for (const ClassEntry& e : corpus.classes.entries) {
    w.put<std::int32_t>(e.id);
    w.string(e.name);
    w.put<std::uint8_t>(e.is_thing);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.embedding.size()));
    for (Eigen::Index d = 0; d < e.embedding.size(); ++d) w.put(e.embedding(d));
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(corpus.scenes.size()));
  for (const Scene& s : corpus.scenes) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.width));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.height));
    w.put(s.seed);
    w.put(static_cast<std::uint8_t>(s.split));
    put_matrix(w, s.image);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.patches.size()));
    for (const BinaryMask& p : s.patches) w.mask(p);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.gt.size()));
    for (const GtInstance& g : s.gt) {
      w.put<std::int32_t>(g.class_id);
      w.put<std::uint8_t>(g.is_thing);
      w.mask(g.mask);
    }
    w.put<std::uint8_t>(s.has_clip_field());
    if (s.has_clip_field()) put_matrix(w, s.clip_field);
  }
  return w.take();
}

Corpus decode_corpus(const std::string& bytes) {
  Reader r(bytes);
  check_header(r, kCorpusMagic, kCorpusVersion, "corpus");
  Corpus corpus;
  try {
    corpus.config = corpus_config_from_json(r.string());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  corpus.seed = r.get<std::uint64_t>();
  const auto num_classes = r.get<std::uint32_t>();
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    ClassEntry e;
    e.id = r.get<std::int32_t>();
    if (e.id != static_cast<int>(c)) throw DataError("class ids must be dense");
    e.name = r.string();
    e.is_thing = r.get<std::uint8_t>() != 0;
    const auto dim = r.get<std::uint32_t>();
    e.embedding.resize(dim);
    for (std::uint32_t d = 0; d < dim; ++d) e.embedding(d) = r.get<double>();
    corpus.classes.entries.push_back(std::move(e));
  }
  const auto num_scenes = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < num_scenes; ++i) {
    Scene s;
    s.width = static_cast<int>(r.get<std::uint32_t>());
    s.height = static_cast<int>(r.get<std::uint32_t>());
    s.seed = r.get<std::uint64_t>();
    const auto split = r.get<std::uint8_t>();
    if (split > 1) throw DataError("bad split tag");
    s.split = static_cast<Split>(split);
    s.image = get_matrix<ImageGrid>(r);
    if (s.image.rows() != static_cast<Eigen::Index>(s.width) * s.height || s.image.cols() != 3)
      throw DataError("image shape mismatch");
    const auto num_patches = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < num_patches; ++k) s.patches.push_back(r.mask(s.width, s.height));
    const auto num_gt = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < num_gt; ++k) {
      GtInstance g;
      g.class_id = r.get<std::int32_t>();
      if (g.class_id < 0 || g.class_id >= static_cast<int>(num_classes)) throw DataError("gt class out of range");
      g.is_thing = r.get<std::uint8_t>() != 0;
      g.mask = r.mask(s.width, s.height);
      s.gt.push_back(std::move(g));
    }
    if (r.get<std::uint8_t>() != 0) s.clip_field = get_matrix<ImageGrid>(r);
    corpus.scenes.push_back(std::move(s));
  }
  if (!r.done()) throw DataError("trailing bytes after corpus");
  return corpus;
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.put(kCheckpointVersion);
  w.string(config_to_json(checkpoint.config));
  w.put<std::int64_t>(checkpoint.params.step());
  const auto& entries = checkpoint.params.entries();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, e] : entries) {
    w.string(name);
    put_matrix(w, e.value);
    put_matrix(w, e.first_moment);
    put_matrix(w, e.second_moment);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  check_header(r, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  Checkpoint ck;
  try {
    ck.config = config_from_json(r.string());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  const auto step = r.get<std::int64_t>();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.string();
    auto value = get_matrix<ad::Matrix>(r);
    auto m1 = get_matrix<ad::Matrix>(r);
    auto m2 = get_matrix<ad::Matrix>(r);
    if (m1.rows() != value.rows() || m1.cols() != value.cols() || m2.rows() != value.rows() || m2.cols() != value.cols())
      throw DataError("moment shape mismatch for " + name);
    ck.params.add(name, std::move(value));
    auto& e = ck.params.entries().at(name);
    e.first_moment = std::move(m1);
    e.second_moment = std::move(m2);
  }
  ck.params.set_step(step);
  if (!r.done()) throw DataError("trailing bytes after checkpoint");
  return ck;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

nlohmann::json counts_json(const PqCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"iou_sum", c.iou_sum}};
}

nlohmann::json diag_json(const ProposalDiagnostics& d) {
  return {{"instances", d.instances}, {"miou", d.miou},   {"miou_above_0.5", d.miou_above},
          {"mr_0.25", d.mr_25},       {"mr_0.5", d.mr_50}, {"mr_0.75", d.mr_75}};
}

}  // namespace

std::string report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["scenes"] = report.scenes;
  j["pq"] = report.pq;
  j["sq"] = report.sq;
  j["rq"] = report.rq;
  j["pq_things"] = report.pq_things;
  j["pq_stuff"] = report.pq_stuff;
  j["ap"] = report.ap;
  j["miou"] = report.miou;
  nlohmann::json classes = nlohmann::json::array();
  for (const ClassMetrics& m : report.per_class) {
    nlohmann::json c{{"id", m.class_id}, {"name", m.name}, {"is_thing", m.is_thing}, {"pq", m.pq},
                     {"sq", m.sq},       {"rq", m.rq},     {"counts", counts_json(m.counts)}};
    c["ap"] = m.ap ? nlohmann::json(*m.ap) : nlohmann::json(nullptr);
    c["iou"] = m.iou ? nlohmann::json(*m.iou) : nlohmann::json(nullptr);
    classes.push_back(std::move(c));
  }
  j["per_class"] = std::move(classes);
  return j.dump(2) + "\n";
}

std::string diagnostics_to_json(const ProposalDiagnostics& plain, const ProposalDiagnostics& merged) {
  nlohmann::json j{{"best_patch", diag_json(plain)}, {"merge_oracle", diag_json(merged)}};
  return j.dump(2) + "\n";
}

std::string encode_ppm(const ImageGrid& rgb, int width, int height) {
  if (rgb.rows() != static_cast<Eigen::Index>(width) * height || rgb.cols() != 3)
    throw std::invalid_argument("encode_ppm: shape mismatch");
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (Eigen::Index p = 0; p < rgb.rows(); ++p)
    for (int ch = 0; ch < 3; ++ch) {
      const float v = std::clamp(rgb(p, ch), 0.0f, 1.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  return out;
}

namespace {

Eigen::Vector3f instance_color(int index) {
  // Golden-angle hue walk keeps neighbouring ids apart.
  const double h = std::fmod(0.61803398875 * (index + 1), 1.0) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i;
  const float v = 0.95f, s = 0.75f;
  const float p = v * (1 - s), q = static_cast<float>(v * (1 - s * f)), t = static_cast<float>(v * (1 - s * (1 - f)));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

ImageGrid semantic_overlay(const SemanticMap& map, const ClassTable& classes) {
  ImageGrid out = ImageGrid::Zero(static_cast<Eigen::Index>(map.labels.size()), 3);
  for (std::size_t p = 0; p < map.labels.size(); ++p)
    if (map.labels[p] >= 0)
      out.row(static_cast<Eigen::Index>(p)) =
          class_base_color(map.labels[p], classes.size()).cast<float>().transpose();
  return out;
}

ImageGrid panoptic_overlay(const Scene& scene, const PanopticMap& map, const ClassTable& classes) {
  const int W = scene.width, H = scene.height;
  ImageGrid out = scene.image.cwiseMax(0.0f).cwiseMin(1.0f);
  for (int p = 0; p < W * H; ++p) {
    const int s = map.segment_of_pixel[static_cast<std::size_t>(p)];
    if (s < 0) continue;
    const PanopticSegment& seg = map.segments[static_cast<std::size_t>(s)];
    const Eigen::Vector3f c = seg.is_thing ? instance_color(seg.id)
                                           : class_base_color(seg.class_id, classes.size()).cast<float>();
    out.row(p) = 0.4f * out.row(p) + 0.6f * c.transpose();
  }
  std::vector<int> owner(static_cast<std::size_t>(W * H), -1);
  for (std::size_t k = 0; k < scene.patches.size(); ++k)
    for (const Run& r : scene.patches[k].runs())
      for (std::uint32_t p = r.start; p < r.end(); ++p) owner[p] = static_cast<int>(k);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int o = owner[static_cast<std::size_t>(y * W + x)];
      const bool edge = (x + 1 < W && owner[static_cast<std::size_t>(y * W + x + 1)] != o) ||
                        (y + 1 < H && owner[static_cast<std::size_t>((y + 1) * W + x)] != o);
      if (edge) out.row(y * W + x).setOnes();
    }
  return out;
}

}  // namespace samcp
