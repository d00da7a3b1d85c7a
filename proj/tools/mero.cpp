// mero: command-line front end for corpus preparation, training, generation,
// evaluation and the editing service.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "mero/core/dataset.hpp"
#include "mero/core/png_io.hpp"
#include "mero/core/procedural.hpp"
#include "mero/error.hpp"
#include "mero/eval/evaluate.hpp"
#include "mero/service/http.hpp"
#include "mero/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace mero;

namespace {

service::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(core::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

service::PartListTable load_part_lists(const fs::path& models, const core::Schema& schema) {
  const auto path = models / "part_lists.json";
  if (!fs::exists(path)) {
    spdlog::warn("{} not found; sessions without a part list will use every part", path.string());
    return {};
  }
  return service::part_lists_from_json(read_json(path), schema);
}

service::Pipeline load_pipeline(const fs::path& models) {
  chain::ModelBundle bundle = chain::load_models(models);
  if (!bundle.schema) throw NotFoundError("no schema.json in " + models.string());
  const core::Schema schema = *bundle.schema;
  return service::Pipeline(std::move(bundle), load_part_lists(models, schema));
}

// boxes.json, label_map.png + label_map.json, sprite.png
void write_outputs(const fs::path& dir, const service::EditSession& s, const core::Schema& schema) {
  fs::create_directories(dir);
  const nlohmann::json snap = service::snapshot(s, schema);
  const nlohmann::json boxes = {{"category", snap["category"]},
                                {"seed", snap["seed"]},
                                {"part_list", snap["part_list"]},
                                {"parts", snap["layout"]["parts"]},
                                {"edges", snap["layout"]["edges"]}};
  core::write_file(dir / "boxes.json", boxes.dump(2) + "\n");
  mask::write_label_map(dir / "label_map.png", s.label_map);
  if (const auto png = service::image_png(s)) core::write_file(dir / "sprite.png", *png);
}

core::ProceduralSpec desk_spec() {
  core::ProceduralSpec spec;
  spec.categories = {{"owl", 5, core::Topology::star, 4}, {"eel", 4, core::Topology::chain, 4}};
  return spec;
}

int cmd_make_corpus(const fs::path& out, const std::string& preset, const std::string& categories,
                    std::uint64_t seed, double drop, int mask_resolution, int canvas) {
  core::ProceduralSpec spec = desk_spec();
  if (preset != "desk") throw ValidationError("unknown preset '" + preset + "' (expected desk)");
  if (!categories.empty()) {
    // name:parts:topology:count
    spec.categories.clear();
    for (const auto& item : split_list(categories)) {
      std::vector<std::string> f;
      std::stringstream ss(item);
      for (std::string x; std::getline(ss, x, ':');) f.push_back(x);
      if (f.size() != 4) throw ValidationError("category '" + item + "' is not name:parts:topology:count");
      spec.categories.push_back({f[0], std::stoi(f[1]), core::parse_topology(f[2]), std::stoi(f[3])});
    }
  }
  spec.drop_probability = drop;
  spec.mask_resolution = mask_resolution;
  spec.canvas = canvas;
  nn::Rng rng(seed);
  const auto corpus = core::make_procedural_corpus(spec, rng);
  core::write_dataset(out, corpus.schema, corpus.samples);
  core::save_schema(out / "schema.json", corpus.schema);
  spdlog::info("wrote {} samples over {} categories to {}", corpus.samples.size(), corpus.schema.category_count(),
               out.string());
  return 0;
}

fs::path schema_path_for(const fs::path& data, const std::string& schema) {
  return schema.empty() ? data / "schema.json" : fs::path(schema);
}

int cmd_train(const std::string& stage, const fs::path& config_path, const fs::path& data_root,
              const std::string& schema, const fs::path& out, int mask_resolution) {
  train::TrainingConfig config = config_path.empty() ? train::TrainingConfig::defaults(train::parse_stage(stage))
                                                     : train::load_training_config(config_path);
  if (train::stage_name(config.stage) != stage)
    throw ValidationError("config " + config_path.string() + " is for stage " + train::stage_name(config.stage));
  for (auto& up : config.upstream)
    if (fs::path(up).is_relative()) up = (out / up).string();
  const core::Dataset dataset = core::load_dataset(data_root, schema_path_for(data_root, schema), mask_resolution);
  const train::StageData data = train::prepare_stage_data(dataset, config);

  fs::create_directories(out);
  core::save_schema(out / "schema.json", dataset.schema);
  core::write_file(out / "part_lists.json",
                   service::part_lists_to_json(service::part_lists_of(data.train), dataset.schema).dump(2) + "\n");
  const auto result = train::train_stage(config, data, out / stage);
  spdlog::info("{}: {} steps, best validation {:.6g}, checkpoints in {}", stage, result.steps, result.best_val,
               (out / stage).string());
  return 0;
}

int cmd_generate(const fs::path& models, const std::string& category, const std::string& parts,
                 std::optional<std::uint64_t> seed, const fs::path& out) {
  const service::Pipeline pipeline = load_pipeline(models);
  service::CreateRequest req;
  req.category = category;
  if (!parts.empty()) req.parts = split_list(parts);
  req.seed = seed ? *seed : 0;
  const service::EditSession s = pipeline.create(req, "generate");
  write_outputs(out, s, pipeline.schema());
  std::cout << (out / "boxes.json").string() << "\n"
            << (out / "label_map.png").string() << "\n"
            << (out / "sprite.png").string() << "\n";
  return 0;
}

int cmd_replay(const fs::path& models, const fs::path& commands, const fs::path& out) {
  const service::Pipeline pipeline = load_pipeline(models);
  const nlohmann::json j = read_json(commands);
  service::EditSession s;
  try {
    s = pipeline.create(service::CreateRequest::from_json(j.at("create")), j.value("session_id", "replay"));
    for (const auto& e : j.value("edits", nlohmann::json::array()))
      s = pipeline.apply(s, service::EditCommand::from_json(e));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(commands.string() + ": " + e.what());
  }
  write_outputs(out, s, pipeline.schema());
  core::write_file(out / "snapshot.json", service::snapshot(s, pipeline.schema()).dump() + "\n");
  std::cout << (out / "snapshot.json").string() << "\n";
  return 0;
}

int cmd_evaluate(const fs::path& models_dir, const fs::path& data_root, const std::string& schema,
                 const std::string& split, std::uint64_t split_seed, int n, std::uint64_t seed,
                 const std::string& extractor_arg, const std::string& categories, const fs::path& out,
                 int mask_resolution) {
  const chain::ModelBundle models = chain::load_models(models_dir);
  const core::Dataset dataset = core::load_dataset(data_root, schema_path_for(data_root, schema), mask_resolution);
  std::vector<core::ObjectSample> test;
  if (split == "all")
    test = dataset.samples;
  else if (split == "test")
    test = train::holdout_split(dataset, split_seed).test;
  else
    throw ValidationError("unknown split '" + split + "' (expected test or all)");
  if (test.empty()) throw ValidationError("the " + split + " split is empty; try --split all");

  std::unique_ptr<eval::FeatureExtractor> extractor =
      extractor_arg == "test" ? eval::make_test_extractor() : eval::load_extractor(extractor_arg);
  eval::EvalConfig cfg;
  cfg.n_per_category = n;
  cfg.seed = seed;
  for (const auto& name : split_list(categories)) {
    const auto id = dataset.schema.find_category(name);
    if (!id) throw ValidationError("unknown category '" + name + "'");
    cfg.categories.push_back(*id);
  }
  const eval::EvalReport report = eval::evaluate(models, test, dataset.schema, *extractor, cfg);
  eval::write_report(out, report);
  std::cout << report.to_csv();
  return 0;
}

int cmd_serve(const fs::path& models, const fs::path& store, const std::string& host, int port) {
  const service::Pipeline pipeline = load_pipeline(models);
  service::SessionService sessions(pipeline, store);
  service::HttpServer server(sessions, {host, port, service::checkpoint_hashes(models)});
  server.bind();
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.run();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part-based object generation: layouts, label maps and sprites"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  std::string out, data, schema, config, models, stage, category, parts, preset = "desk", cats, store,
                                                                    host = "127.0.0.1", split = "test",
                                                                    extractor = "test", commands;
  std::uint64_t seed = 1, split_seed = 0, gen_seed = 0;
  double drop = 0.0;
  int mask_resolution = core::kDefaultMaskResolution, canvas = core::kCanvasSize, port = 8080, n = 100;

  auto* corpus = app.add_subcommand("make-corpus", "Write a procedural sprite corpus in dataset layout");
  corpus->add_option("--out", out, "Dataset root")->required();
  corpus->add_option("--preset", preset, "Category preset")->capture_default_str();
  corpus->add_option("--categories", cats, "name:parts:topology:count,... (overrides the preset)");
  corpus->add_option("--seed", seed)->capture_default_str();
  corpus->add_option("--drop-probability", drop, "Chance a non-root part is absent")->capture_default_str();
  corpus->add_option("--mask-resolution", mask_resolution)->capture_default_str();
  corpus->add_option("--canvas", canvas)->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train one stage");
  train_cmd->add_option("--stage", stage)->required()->check(CLI::IsMember({"box", "labelmap", "label2obj"}));
  train_cmd->add_option("--config", config, "Training config (JSON); stage defaults when omitted");
  train_cmd->add_option("--data", data, "Dataset root")->required();
  train_cmd->add_option("--schema", schema, "Schema file (default <data>/schema.json)");
  train_cmd->add_option("--out", out, "Model directory; the stage writes <out>/<stage>/")->required();
  train_cmd->add_option("--mask-resolution", mask_resolution)->capture_default_str();

  auto* gen = app.add_subcommand("generate", "Generate one object: boxes, label map, sprite");
  gen->add_option("--checkpoints,--models", models, "Model directory")->required();
  gen->add_option("--category", category)->required();
  gen->add_option("--parts", parts, "Comma-separated part names; sampled from training part lists when omitted");
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("evaluate", "Per-category FID of generated sprites against real images");
  ev->add_option("--checkpoints,--models", models, "Model directory")->required();
  ev->add_option("--data", data, "Dataset root")->required();
  ev->add_option("--schema", schema, "Schema file (default <data>/schema.json)");
  ev->add_option("--split", split, "test (held-out split) or all")->capture_default_str();
  ev->add_option("--split-seed", split_seed, "Training seed that produced the split")->capture_default_str();
  ev->add_option("--n", n, "Generated images per category")->capture_default_str();
  ev->add_option("--seed", seed)->capture_default_str();
  ev->add_option("--extractor", extractor, "Feature extractor checkpoint, or 'test'")->capture_default_str();
  ev->add_option("--categories", cats, "Comma-separated subset");
  ev->add_option("--out", out, "Report stem; writes <out>.json and <out>.csv")->required();
  ev->add_option("--mask-resolution", mask_resolution)->capture_default_str();

  auto* serve = app.add_subcommand("serve", "Run the HTTP editing service");
  serve->add_option("--checkpoints,--models", models, "Model directory")->required();
  serve->add_option("--store", store, "Session store directory")->required();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();

  auto* replay = app.add_subcommand("replay", "Re-run an exported create + edit command list");
  replay->add_option("--checkpoints,--models", models, "Model directory")->required();
  replay->add_option("--commands", commands, "JSON: {create, edits, session_id?}")->required();
  replay->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    if (*corpus) return cmd_make_corpus(out, preset, cats, seed, drop, mask_resolution, canvas);
    if (*train_cmd) return cmd_train(stage, config, data, schema, out, mask_resolution);
    if (*gen) return cmd_generate(models, category, parts, gen_seed, out);
    if (*ev)
      return cmd_evaluate(models, data, schema, split, split_seed, n, seed, extractor, cats, out, mask_resolution);
    if (*serve) return cmd_serve(models, store, host, port);
    if (*replay) return cmd_replay(models, commands, out);
  } catch (const ConflictError& e) {
    spdlog::error("{}", e.what());
    return 4;
  } catch (const NotFoundError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
