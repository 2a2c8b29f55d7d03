// Command-line driver: gen | train | eval | infer | diagnose | config init.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "samcp/error.hpp"
#include "samcp/io.hpp"
#include "samcp/pipeline.hpp"

namespace fs = std::filesystem;
using namespace samcp;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

RunConfig load_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.validate();
    return c;
  }
  return config_from_json(read_file(path));
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_file(out, text);
}

EvalMode parse_mode(const std::string& mode) {
  if (mode == "closed") return EvalMode::kClosed;
  if (mode == "open") return EvalMode::kOpen;
  throw ConfigError("unknown mode '" + mode + "' (expected closed or open)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Composable-prompt segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, corpus_path, checkpoint_path, out, mode = "closed", log_path;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  int scene_index = 0;

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  gen->add_option("--config", config_path, "run config (JSON)");
  gen->add_option("--seed", seed, "override the config seed");
  gen->add_option("--threads", threads)->check(CLI::PositiveNumber);
  gen->add_option("--out", out, "corpus file")->required();

  auto* tr = app.add_subcommand("train", "train a model on the train split");
  tr->add_option("--config", config_path, "run config (JSON)");
  tr->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  tr->add_option("--seed", seed, "override the config seed");
  tr->add_option("--threads", threads)->check(CLI::PositiveNumber);
  tr->add_option("--out", out, "checkpoint file")->required();
  tr->add_option("--log", log_path, "loss log (JSON lines, appended)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
  ev->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--config", config_path, "replaces the inference settings of the checkpoint");
  ev->add_option("--mode", mode, "closed or open");
  ev->add_option("--threads", threads)->check(CLI::PositiveNumber);
  ev->add_option("--out", out, "report file (default stdout)");

  auto* inf = app.add_subcommand("infer", "write overlays and a report for one eval scene");
  inf->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  inf->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  inf->add_option("--config", config_path, "replaces the inference settings of the checkpoint");
  inf->add_option("--scene", scene_index, "index within the eval split")->check(CLI::NonNegativeNumber);
  inf->add_option("--mode", mode, "closed or open");
  inf->add_option("--out", out, "output directory")->required();

  auto* dg = app.add_subcommand("diagnose", "proposal diagnostics of the eval split");
  dg->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  dg->add_option("--config", config_path, "run config (tau)");
  dg->add_option("--out", out, "report file (default stdout)");

  auto* cfg = app.add_subcommand("config", "configuration utilities");
  auto* cfg_init = cfg->add_subcommand("init", "print the default config");
  cfg_init->add_option("--out", out, "config file (default stdout)");
  cfg->require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*cfg_init) {
      emit(out, config_to_json(RunConfig{}) + "\n");
    } else if (*gen) {
      RunConfig c = load_config(config_path);
      if (seed) c.seed = *seed;
      write_file(out, encode_corpus(generate_corpus(c.corpus, c.seed, threads)));
    } else if (*tr) {
      RunConfig c = load_config(config_path);
      if (seed) c.seed = *seed;
      const Corpus corpus = decode_corpus(read_file(corpus_path));
      std::optional<std::ofstream> log;
      if (!log_path.empty()) {
        log.emplace(log_path, std::ios::app);
        if (!*log) throw DataError("cannot open " + log_path);
      }
      TrainHooks hooks;
      hooks.on_epoch = [&](const EpochRecord& r) {
        const nlohmann::json j{{"epoch", r.epoch}, {"lr", r.lr},     {"cls", r.cls},
                               {"mfl", r.mfl},     {"dice", r.dice}, {"all", r.all}};
        std::cerr << j.dump() << "\n";
        if (log) *log << j.dump() << "\n" << std::flush;
      };
      Checkpoint ck{c, train(c, corpus, threads, hooks)};
      write_file(out, encode_checkpoint(ck));
    } else if (*ev) {
      Checkpoint ck = decode_checkpoint(read_file(checkpoint_path));
      if (!config_path.empty()) ck.config.inference = load_config(config_path).inference;
      const Corpus corpus = decode_corpus(read_file(corpus_path));
      const MetricReport report = evaluate(ck.params, ck.config, corpus, parse_mode(mode), threads);
      emit(out, report_to_json(report));
    } else if (*inf) {
      Checkpoint ck = decode_checkpoint(read_file(checkpoint_path));
      if (!config_path.empty()) ck.config.inference = load_config(config_path).inference;
      const Corpus corpus = decode_corpus(read_file(corpus_path));
      const auto scenes = corpus.split(Split::kEval);
      if (scene_index >= static_cast<int>(scenes.size())) throw ConfigError("scene index out of range");
      const Scene& scene = *scenes[static_cast<std::size_t>(scene_index)];
      const InferenceResult r =
          predict(ck.params, ck.config, scene, corpus.classes, corpus.classes.all_ids(), parse_mode(mode));
      fs::create_directories(out);
      const fs::path dir(out);
      write_file(dir / "image.ppm", encode_ppm(scene.image.cwiseMax(0.0f).cwiseMin(1.0f), scene.width, scene.height));
      write_file(dir / "semantic.ppm", encode_ppm(semantic_overlay(r.semantic, corpus.classes), scene.width,
                                                  scene.height));
      write_file(dir / "panoptic.ppm", encode_ppm(panoptic_overlay(scene, r.panoptic, corpus.classes), scene.width,
                                                  scene.height));
      const SceneEvaluation e = evaluate_scene(r, scene, corpus.classes);
      const MetricReport report = summarize(std::span(&e, 1), corpus.classes);
      nlohmann::json j = nlohmann::json::parse(report_to_json(report));
      nlohmann::json segments = nlohmann::json::array();
      for (const PanopticSegment& s : r.panoptic.segments)
        segments.push_back({{"id", s.id},
                            {"class", corpus.classes[s.class_id].name},
                            {"is_thing", s.is_thing},
                            {"score", s.score},
                            {"area", s.mask.area()}});
      j["segments"] = std::move(segments);
      write_file(dir / "report.json", j.dump(2) + "\n");
    } else if (*dg) {
      const RunConfig c = load_config(config_path);
      const Corpus corpus = decode_corpus(read_file(corpus_path));
      const auto [plain, merged] = diagnose(corpus, c.loss.tau);
      emit(out, diagnostics_to_json(plain, merged));
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
