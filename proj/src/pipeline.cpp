/*
 * Copyright 2026 The segdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "segdiff/pipeline.hpp"

#include <chrono>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "segdiff/image_io.hpp"
#include "segdiff/report.hpp"

namespace segdiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMarker = "DONE";

const std::vector<std::pair<Stage, std::string_view>> kStageNames = {
    {Stage::kPretrain, "pretrain"}, {Stage::kFinetune, "finetune"}, {Stage::kGenerate, "generate"},
    {Stage::kTrainSeg, "train-seg"}, {Stage::kEvalSeg, "eval-seg"}, {Stage::kEvalGen, "eval-gen"}};

std::uint64_t segmentation_seed(const RunConfig& c) { return derive_seed(c.seed, "segmentation"); }

// Artifact whose presence, together with a matching marker, means the stage is complete.
fs::path key_artifact(const RunConfig& c, Stage s) {
  switch (s) {
    case Stage::kPretrain:
    case Stage::kFinetune:
      return stage_dir(c, s) / "denoiser.ckpt";
    case Stage::kGenerate:
      return stage_dir(c, s) / "cache" / "cache.json";
    case Stage::kTrainSeg:
    case Stage::kEvalSeg:
      return stage_dir(c, s) / "methods.json";
    case Stage::kEvalGen:
      return stage_dir(c, s) / "cases.csv";
  }
  return {};
}

json stage_settings(const RunConfig& c, Stage s) {
  const json all = to_json(c);
  switch (s) {
    case Stage::kPretrain:
      return {{"schedule", all["schedule"]},
              {"vocabulary", hex64(c.load_vocabulary().hash())},
              {"denoiser", all["denoiser"]},
              {"edges", all["edges"]},
              {"pretrain", all["pretrain"]},
              {"corpus", all["corpus"]}};
    case Stage::kFinetune:
      return {{"finetune", all["finetune"]}, {"task", all["task"]}};
    case Stage::kGenerate:
      return {{"cache", all["cache"]}};
    case Stage::kTrainSeg:
      return {{"segmentation", all["segmentation"]}};
    case Stage::kEvalSeg:
      return json::object();
    case Stage::kEvalGen:
      return {{"generation_eval", all["generation_eval"]}};
  }
  return {};
}

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  CsvTable t{{"step", "loss"}, {}};
  for (std::size_t i = 0; i < losses.size(); ++i) t.rows.push_back({std::to_string(i + 1), format_double(losses[i])});
  write_csv(path, t);
}

ProgressFn step_logger(std::string_view stage) {
  return [stage = std::string(stage)](long long step, double loss) {
    if (step % 100 == 0) spdlog::info("{}: step {} loss {:.5f}", stage, step, loss);
  };
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

Checkpoint load_denoiser_stage(const RunConfig& c, Stage s, const Vocabulary& vocab) {
  return load_checkpoint(stage_dir(c, s) / "denoiser.ckpt", vocab.hash());
}

std::map<std::string, const SampleRecord*> index_by_id(const std::vector<SampleRecord>& records) {
  std::map<std::string, const SampleRecord*> out;
  for (const auto& r : records) out[r.case_id] = &r;
  return out;
}

// ---------------------------------------------------------------- stage bodies

void run_pretrain(const RunConfig& c, const fs::path& dir) {
  const Vocabulary vocab = c.load_vocabulary();
  CorpusSpec spec = c.corpus;
  spec.seed = derive_seed(c.seed, "corpus");
  const DatasetManifest corpus = synth_corpus(spec, vocab);
  save_manifest(corpus, dir / "corpus");
  DiffusionTrainConfig tc = c.pretrain;
  tc.seed = derive_seed(c.seed, "pretrain");
  const auto result =
      train_diffusion(corpus.split(Split::kTrain), c.denoiser, vocab, c.schedule.build(), tc, nullptr, step_logger("pretrain"));
  save_checkpoint(result.checkpoint, dir / "denoiser.ckpt");
  write_loss_csv(dir / "loss.csv", result.loss_history);
}

void run_finetune(const RunConfig& c, const fs::path& dir) {
  const Vocabulary vocab = c.load_vocabulary();
  const Checkpoint init = load_denoiser_stage(c, Stage::kPretrain, vocab);
  DiffusionTrainConfig tc = c.finetune;
  tc.seed = derive_seed(c.seed, "finetune");
  const auto records = load_task_records(c, vocab);
  const auto result = train_diffusion(records, c.denoiser, vocab, c.schedule.build(), tc, &init, step_logger("finetune"));
  save_checkpoint(result.checkpoint, dir / "denoiser.ckpt");
  write_loss_csv(dir / "loss.csv", result.loss_history);
}

void run_generate(const RunConfig& c, const fs::path& dir) {
  const Vocabulary vocab = c.load_vocabulary();
  const Checkpoint ckpt = load_denoiser_stage(c, Stage::kFinetune, vocab);
  CacheBuildOptions opts = c.cache;
  opts.seed = derive_seed(c.seed, "cache");
  const auto cache = build_augmentation_cache(load_task_records(c, vocab), ckpt, vocab, opts);
  save_cache(cache, dir / "cache");
}

void run_train_seg(const RunConfig& c, const fs::path& dir) {
  const Vocabulary vocab = c.load_vocabulary();
  const auto records = load_task_records(c, vocab);
  const auto methods = segmentation_methods(c);
  std::optional<AugmentationCache> cache;
  if (std::any_of(methods.begin(), methods.end(), [](const SegMethod& m) { return m.train.use_diffboost; })) {
    cache = load_cache(stage_dir(c, Stage::kGenerate) / "cache");
  }
  const std::uint64_t base = segmentation_seed(c);
  const auto folds = partition_folds(records, c.segmentation.train.folds, base);
  json folds_json = json::array();
  for (const auto& f : folds) {
    json ids = json::array();
    for (auto i : f) ids.push_back(records[i].case_id);
    folds_json.push_back(ids);
  }
  write_text(dir / "folds.json", folds_json.dump(2));

  json methods_json = json::array();
  for (const auto& m : methods) {
    methods_json.push_back({{"label", m.label}, {"key", m.key}, {"train", to_json(m.train)}});
    for (int s = 0; s < c.segmentation.seeds; ++s) {
      SegTrainConfig cfg = m.train;
      cfg.seed = derive_seed(base, static_cast<std::uint64_t>(s));
      for (std::size_t k = 0; k < folds.size(); ++k) {
        std::vector<SampleRecord> train;
        for (std::size_t j = 0; j < folds.size(); ++j) {
          if (j == k) continue;
          for (auto i : folds[j]) train.push_back(records[i]);
        }
        const auto result = train_segmentation(train, cache ? &*cache : nullptr, c.segmentation.backbone, cfg);
        const std::string stem = fmt::format("seed{}_fold{}", s, k);
        save_checkpoint(result.checkpoint, dir / m.key / (stem + ".ckpt"));
        write_loss_csv(dir / m.key / (stem + "_loss.csv"), result.loss_history);
        spdlog::info("train-seg: {} seed {} fold {} final loss {:.4f}", m.label, s, k, result.loss_history.back());
      }
    }
  }
  write_text(dir / "methods.json", json{{"seeds", c.segmentation.seeds}, {"methods", methods_json}}.dump(2));
}

void run_eval_seg(const RunConfig& c, const fs::path& dir) {
  const Vocabulary vocab = c.load_vocabulary();
  const auto records = load_task_records(c, vocab);
  const auto by_id = index_by_id(records);
  const fs::path train_dir = stage_dir(c, Stage::kTrainSeg);
  const json folds = read_json(train_dir / "folds.json");
  const json methods = read_json(train_dir / "methods.json");
  const int seeds = methods.at("seeds").get<int>();
  for (const auto& m : methods.at("methods")) {
    const std::string key = m.at("key").get<std::string>();
    MetricsReport report(MetricSet::kSegmentation, records.front().spacing);
    for (int s = 0; s < seeds; ++s) {
      for (std::size_t k = 0; k < folds.size(); ++k) {
        const auto model =
            segmentation_from_checkpoint(load_checkpoint(train_dir / key / fmt::format("seed{}_fold{}.ckpt", s, k)));
        for (const auto& id : folds[k]) {
          const auto it = by_id.find(id.get<std::string>());
          if (it == by_id.end()) throw ValidationError("fold lists unknown case " + id.get<std::string>());
          const SampleRecord& r = *it->second;
          CaseMetrics row = segmentation_case(r.case_id, predict(*model, r.image), *r.mask, r.spacing);
          row.fold = static_cast<int>(k);
          row.seed_index = s;
          report.add(std::move(row));
        }
      }
    }
    report.write_csv(dir / key / "cases.csv");
    write_text(dir / key / "summary.json", report.summary_json().dump(2));
    spdlog::info("eval-seg: {} dice {:.4f} hd95 {:.3f}", m.at("label").get<std::string>(), report.summary("dice").mean,
                 report.summary("hd95").mean);
  }
  write_text(dir / "methods.json", methods.dump(2));
}

void run_eval_gen(const RunConfig& c, const fs::path& dir) {
  const Vocabulary vocab = c.load_vocabulary();
  const Checkpoint ckpt = load_denoiser_stage(c, Stage::kFinetune, vocab);
  const auto model = denoiser_from_checkpoint(ckpt, vocab);
  const auto records = heldout_generation_records(c, vocab);
  const std::uint64_t gen_seed = derive_seed(c.seed, "eval-gen");
  std::vector<GenerationRequest> requests;
  for (std::size_t i = 0; i < records.size(); ++i) {
    PromptTriplet prompt = records[i].triplet;
    prompt.aug_texts.clear();
    requests.push_back({prompt, record_edge(records[i]), derive_seed(gen_seed, i)});
  }
  const auto generated = generate_images(model, *ckpt.schedule, requests, c.generation_eval.batch_size);

  MetricsReport report(MetricSet::kGeneration, records.front().spacing);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Image sample = dequantize(quantize(generated[i]));
    save_image(dir / "samples" / (records[i].case_id + "_generated.png"), sample);
    save_image(dir / "samples" / (records[i].case_id + "_original.png"), records[i].image);
    report.add(generation_case(records[i].case_id, sample, records[i].image));
  }
  report.write_csv(dir / "cases.csv");

  // Edge-fidelity check: each sample against its own original and against a random other one.
  Rng rng(derive_seed(c.seed, "pairing"));
  const std::size_t n = records.size();
  const std::size_t shift = 1 + rng.index(n - 1);
  CsvTable pairing{{"case_id", "random_partner", "paired_mae", "random_mae"}, {}};
  double paired_sum = 0.0, random_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + shift) % n;
    const Image sample = dequantize(quantize(generated[i]));
    const double paired = pixel_metrics(sample, records[i].image).mae;
    const double random = pixel_metrics(sample, records[j].image).mae;
    paired_sum += paired;
    random_sum += random;
    pairing.rows.push_back({records[i].case_id, records[j].case_id, format_double(paired), format_double(random)});
  }
  write_csv(dir / "pairing.csv", pairing);
  write_text(dir / "summary.json",
             json{{"metrics", report.summary_json()},
                  {"paired_mae", paired_sum / n},
                  {"random_pair_mae", random_sum / n},
                  {"cases", n}}
                 .dump(2));
  spdlog::info("eval-gen: paired MAE {:.4f}, random-pair MAE {:.4f}", paired_sum / n, random_sum / n);
}

void execute(const RunConfig& c, Stage s, const fs::path& dir) {
  switch (s) {
    case Stage::kPretrain:
      return run_pretrain(c, dir);
    case Stage::kFinetune:
      return run_finetune(c, dir);
    case Stage::kGenerate:
      return run_generate(c, dir);
    case Stage::kTrainSeg:
      return run_train_seg(c, dir);
    case Stage::kEvalSeg:
      return run_eval_seg(c, dir);
    case Stage::kEvalGen:
      return run_eval_gen(c, dir);
  }
}

std::string value_label(const std::string& parameter, const json& v) {
  if (parameter == "backbone") {
    if (!v.is_string()) throw ConfigError("backbone sweep values must be names");
    return std::string(backbone_name(parse_backbone(v.get<std::string>())));
  }
  if (parameter == "alpha") {
    if (!v.is_number()) throw ConfigError("alpha sweep values must be numbers");
    return format_double(v.get<double>());
  }
  if (!v.is_number_integer()) throw ConfigError(parameter + " sweep values must be integers");
  return std::to_string(v.get<long long>());
}

}  // namespace

std::string_view stage_name(Stage s) {
  for (const auto& [stage, name] : kStageNames) {
    if (stage == s) return name;
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (const auto& [stage, n] : kStageNames) {
    if (n == name) return stage;
  }
  throw ArgumentError("unknown stage '" + std::string(name) + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> v = {Stage::kPretrain, Stage::kFinetune, Stage::kGenerate,
                                       Stage::kTrainSeg, Stage::kEvalSeg,  Stage::kEvalGen};
  return v;
}

const std::vector<Stage>& stage_dependencies(Stage s) {
  static const std::vector<Stage> none, pre{Stage::kPretrain}, fine{Stage::kFinetune}, gen{Stage::kGenerate},
      train{Stage::kTrainSeg};
  switch (s) {
    case Stage::kPretrain:
      return none;
    case Stage::kFinetune:
      return pre;
    case Stage::kGenerate:
    case Stage::kEvalGen:
      return fine;
    case Stage::kTrainSeg:
      return gen;
    case Stage::kEvalSeg:
      return train;
  }
  return none;
}

std::string stage_hash(const RunConfig& c, Stage s) {
  json deps = json::object();
  for (Stage d : stage_dependencies(s)) deps[std::string(stage_name(d))] = stage_hash(c, d);
  const json j{{"stage", stage_name(s)}, {"seed", c.seed}, {"settings", stage_settings(c, s)}, {"deps", deps}};
  return hex64(fnv1a64(j.dump()));
}

fs::path stage_dir(const RunConfig& c, Stage s) { return c.run_dir / std::string(stage_name(s)); }

bool stage_complete(const RunConfig& c, Stage s) {
  const fs::path marker = stage_dir(c, s) / kMarker;
  if (!fs::exists(marker) || !fs::exists(key_artifact(c, s))) return false;
  try {
    return json::parse(read_text(marker)).at("hash").get<std::string>() == stage_hash(c, s);
  } catch (const json::exception&) {
    return false;
  }
}

std::optional<double> recorded_stage_seconds(const RunConfig& config, Stage s) {
  if (!stage_complete(config, s)) return std::nullopt;
  const json marker = json::parse(read_text(stage_dir(config, s) / kMarker));
  if (!marker.contains("seconds")) return std::nullopt;
  return marker.at("seconds").get<double>();
}

std::vector<StageOutcome> run_pipeline(const RunConfig& config) {
  std::vector<Stage> stages;
  for (const auto& name : config.stages) stages.push_back(parse_stage(name));
  return run_pipeline(config, stages);
}

std::vector<StageOutcome> run_pipeline(const RunConfig& config, const std::vector<Stage>& stages) {
  config.validate();
  const std::set<Stage> selected(stages.begin(), stages.end());
  for (Stage s : all_stages()) {
    if (!selected.count(s)) continue;
    for (Stage d : stage_dependencies(s)) {
      if (!selected.count(d) && !stage_complete(config, d)) {
        throw DependencyError(fmt::format("stage '{}' needs the output of '{}' for this config; run '{}' first",
                                          stage_name(s), stage_name(d), stage_name(d)));
      }
    }
  }
  fs::create_directories(config.run_dir);
  save_run_config(config, config.run_dir / "config.yaml");

  std::vector<StageOutcome> outcomes;
  std::set<Stage> ran;
  for (Stage s : all_stages()) {
    if (!selected.count(s)) continue;
    const auto& deps = stage_dependencies(s);
    const bool upstream_ran = std::any_of(deps.begin(), deps.end(), [&](Stage d) { return ran.count(d) > 0; });
    if (config.resume && !upstream_ran && stage_complete(config, s)) {
      spdlog::info("{}: complete, skipping", stage_name(s));
      outcomes.push_back({s, false, 0.0});
      continue;
    }
    const fs::path dir = stage_dir(config, s);
    fs::remove_all(dir);
    fs::create_directories(dir);
    spdlog::info("{}: running", stage_name(s));
    const auto t0 = std::chrono::steady_clock::now();
    execute(config, s, dir);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(dir / kMarker, json{{"stage", stage_name(s)},
                                   {"hash", stage_hash(config, s)},
                                   {"seed", config.seed},
                                   {"seconds", seconds}}
                                  .dump(2));
    spdlog::info("{}: done in {:.1f} s", stage_name(s), seconds);
    ran.insert(s);
    outcomes.push_back({s, true, seconds});
  }
  return outcomes;
}

std::vector<SegMethod> segmentation_methods(const RunConfig& config) {
  std::vector<SegMethod> out;
  SegTrainConfig base = config.segmentation.train;
  base.classic.reset();
  base.use_diffboost = false;
  out.push_back({"Baseline", "baseline", base});
  for (ClassicKind k : config.segmentation.classic_baselines) {
    SegTrainConfig t = base;
    t.classic = k;
    std::string label(classic_kind_name(k));
    label[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(label[0])));
    out.push_back({label, "classic-" + std::string(classic_kind_name(k)), t});
  }
  SegTrainConfig db = base;
  db.use_diffboost = true;
  out.push_back({"DiffBoost", "diffboost", db});
  return out;
}

std::vector<SampleRecord> load_task_records(const RunConfig& config, const Vocabulary& vocab) {
  if (config.task.source == "ingest") {
    auto manifest = ingest_external(config.task.ingest_dir, config.task.layout);
    if (manifest.records.empty()) throw ValidationError("no records ingested from " + config.task.ingest_dir.string());
    return manifest.records;
  }
  SegTaskSpec spec = config.task.synthetic;
  spec.seed = derive_seed(config.seed, "task");
  return synth_seg_task(spec, vocab).records;
}

std::vector<SampleRecord> heldout_generation_records(const RunConfig& config, const Vocabulary& vocab) {
  if (config.task.source == "ingest") {
    auto records = load_task_records(config, vocab);
    std::vector<SampleRecord> held;
    for (const auto& r : records) {
      if (r.split != Split::kTrain) held.push_back(r);
    }
    if (held.size() < 2) {
      spdlog::warn("eval-gen: no held-out split in the ingested data; evaluating on all records");
      held = records;
    }
    return held;
  }
  SegTaskSpec spec = config.task.synthetic;
  spec.count = config.generation_eval.count;
  spec.seed = derive_seed(config.seed, "heldout");
  auto records = synth_seg_task(spec, vocab).records;
  for (auto& r : records) r.case_id = "heldout_" + r.case_id;
  return records;
}

// ---------------------------------------------------------------- ablation

std::vector<AblationRow> ablation_rows_from_cases(const fs::path& sweep_dir, const std::string& parameter,
                                                  const std::vector<std::string>& values) {
  std::vector<AblationRow> rows;
  for (const auto& v : values) {
    const auto report = MetricsReport::read_csv(sweep_dir / v / "cases.csv");
    AblationRow row{v, report.summary("dice"), report.summary("hd95"), report.summary("assd"), false};
    row.plateau_candidate = parameter == "n" && std::stoll(v) >= 10;
    rows.push_back(row);
  }
  return rows;
}

AblationResult run_ablation(const RunConfig& config, const std::string& parameter, const std::vector<json>& values) {
  if (parameter != "n" && parameter != "alpha" && parameter != "patch_size" && parameter != "backbone") {
    throw ConfigError("unknown sweep parameter '" + parameter + "'; expected n, alpha, patch_size or backbone");
  }
  if (values.empty()) throw ConfigError("sweep '" + parameter + "' has no values");
  config.validate();
  std::vector<std::string> labels;
  for (const auto& v : values) labels.push_back(value_label(parameter, v));
  if (std::set<std::string>(labels.begin(), labels.end()).size() != labels.size()) {
    throw ConfigError("sweep '" + parameter + "' repeats a value");
  }
  for (const auto& v : values) {
    if (parameter == "n" && (v.get<long long>() < 1 || v.get<long long>() > config.cache.n)) {
      throw ConfigError(fmt::format("n sweep value {} outside [1, cache.n = {}]", v.get<long long>(), config.cache.n));
    }
    if (parameter == "alpha" && (v.get<double>() < 0.0 || v.get<double>() > 1.0)) {
      throw ConfigError("alpha sweep values must lie in [0,1]");
    }
    if (parameter == "patch_size" && v.get<long long>() < 1) throw ConfigError("patch_size sweep values must be positive");
  }

  RunConfig upstream = config;
  upstream.resume = true;
  run_pipeline(upstream, {Stage::kPretrain, Stage::kFinetune, Stage::kGenerate});

  const fs::path dir = config.run_dir / "ablation" / parameter;
  const json hash_input{{"generate", stage_hash(config, Stage::kGenerate)},
                        {"segmentation", to_json(config)["segmentation"]},
                        {"ablation", {{"seeds", config.ablation.seeds}, {"epochs", config.ablation.epochs}}},
                        {"parameter", parameter},
                        {"values", labels}};
  const std::string hash = hex64(fnv1a64(hash_input.dump()));
  AblationResult result{parameter, {}, dir / "table.csv", dir / "plot.svg"};

  bool done = false;
  if (config.resume && fs::exists(dir / kMarker) && fs::exists(result.table_path)) {
    try {
      done = json::parse(read_text(dir / kMarker)).at("hash").get<std::string>() == hash;
    } catch (const json::exception&) {
    }
  }
  if (!done) {
    fs::remove_all(dir);
    const Vocabulary vocab = config.load_vocabulary();
    const auto records = load_task_records(config, vocab);
    const auto cache = load_cache(stage_dir(config, Stage::kGenerate) / "cache");
    for (std::size_t i = 0; i < values.size(); ++i) {
      SegTrainConfig cfg = config.segmentation.train;
      cfg.use_diffboost = true;
      cfg.classic.reset();
      cfg.seed = segmentation_seed(config);
      if (config.ablation.epochs > 0) cfg.epochs = config.ablation.epochs;
      SegBackboneSpec spec = config.segmentation.backbone;
      if (parameter == "n") cfg.n = values[i].get<int>();
      if (parameter == "alpha") cfg.alpha = values[i].get<double>();
      if (parameter == "patch_size") cfg.patch_size = values[i].get<int>();
      if (parameter == "backbone") spec.kind = parse_backbone(values[i].get<std::string>());
      const auto cv = cross_validate(records, &cache, spec, cfg, config.ablation.seeds);
      cv.report.write_csv(dir / labels[i] / "cases.csv");
      spdlog::info("ablation {}={}: dice {:.4f}", parameter, labels[i], cv.report.summary("dice").mean);
    }
  }

  result.rows = ablation_rows_from_cases(dir, parameter, labels);
  CsvTable table{{parameter, "dice_mean", "dice_std", "hd95_mean", "hd95_std", "assd_mean", "assd_std", "cases",
                  "plateau_candidate"},
                 {}};
  PlotSeries dice{"Dice", {}, {}};
  for (const auto& r : result.rows) {
    table.rows.push_back({r.value, format_double(r.dice.mean), format_double(r.dice.std), format_double(r.hd95.mean),
                          format_double(r.hd95.std), format_double(r.assd.mean), format_double(r.assd.std),
                          std::to_string(r.dice.count), r.plateau_candidate ? "true" : "false"});
    dice.y.push_back(r.dice.mean);
    dice.err.push_back(r.dice.std);
  }
  write_csv(result.table_path, table);
  write_text(result.plot_path, svg_line_plot("Dice vs " + parameter, labels, "Dice", {dice}));
  if (!done) write_text(dir / kMarker, json{{"parameter", parameter}, {"hash", hash}}.dump(2));
  return result;
}

}  // namespace segdiff
