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

#include "segdiff/config.hpp"

#include <charconv>
#include <set>

#include <yaml-cpp/yaml.h>

#include "segdiff/image_io.hpp"

namespace segdiff {

using nlohmann::json;

NoiseSchedule ScheduleConfig::build() const { return make_linear_schedule(steps, beta_start, beta_end); }

namespace {

// Reads one JSON object field by field and rejects keys nobody asked for.
class StrictReader {
 public:
  StrictReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a mapping");
  }

  template <class V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_unsigned_v<V>) {
      if (v.is_number_integer() && v.get<long long>() < 0) throw ConfigError(where(key) + " must be non-negative");
    }
    if constexpr (std::is_integral_v<V> && !std::is_same_v<V, bool>) {
      if (v.is_number_float()) throw ConfigError(where(key) + " must be an integer");
    }
    try {
      out = v.get<V>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type (" + std::string(v.type_name()) + ")");
    }
  }

  void get_path(const std::string& key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  template <class Fn>
  void section(const std::string& key, Fn&& fn) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    StrictReader sub(j_.at(key), where(key));
    fn(sub);
    sub.finish();
  }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + where(item.key()));
    }
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json train_to_json(const DiffusionTrainConfig& c) {
  json j{{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
         {"epochs", c.epochs},           {"max_iterations", c.max_iterations}, {"grad_clip", c.grad_clip},
         {"freeze_main", c.freeze_main}};
  if (c.stage == TrainingStage::kFinetune) j["keep_aug_tokens"] = c.keep_aug_tokens;
  return j;
}

void read_train(StrictReader& r, DiffusionTrainConfig& c) {
  r.get("learning_rate", c.learning_rate);
  r.get("weight_decay", c.weight_decay);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("max_iterations", c.max_iterations);
  r.get("grad_clip", c.grad_clip);
  r.get("freeze_main", c.freeze_main);
  if (c.stage == TrainingStage::kFinetune) r.get("keep_aug_tokens", c.keep_aug_tokens);
}

void validate_train(const DiffusionTrainConfig& c, const std::string& name) {
  if (!(c.learning_rate > 0.0) || c.weight_decay < 0.0 || c.batch_size < 1 || c.epochs < 0 || c.max_iterations < 0 ||
      c.grad_clip < 0.0) {
    throw ConfigError(name + ": learning_rate > 0, weight_decay >= 0, batch_size >= 1, epochs >= 0, "
                             "max_iterations >= 0 and grad_clip >= 0 are required");
  }
}

const std::set<std::string> kSweepParameters = {"n", "alpha", "patch_size", "backbone"};

json scalar_from_yaml(const YAML::Node& node) {
  const std::string& s = node.Scalar();
  if (node.Tag() == "!") return s;  // quoted
  if (s.empty() || s == "~" || s == "null" || s == "Null" || s == "NULL") return nullptr;
  if (s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "false" || s == "False" || s == "FALSE") return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const char* num = (*first == '+') ? first + 1 : first;
  if (*num == '-') {
    long long v = 0;
    auto [p, ec] = std::from_chars(num, last, v);
    if (ec == std::errc() && p == last) return v;
  } else {
    unsigned long long v = 0;
    auto [p, ec] = std::from_chars(num, last, v);
    if (ec == std::errc() && p == last) return v;
  }
  double d = 0.0;
  auto [p, ec] = std::from_chars(num, last, d);
  if (ec == std::errc() && p == last && s.find_first_of("0123456789") != std::string::npos) return d;
  return s;
}

json node_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_from_yaml(node);
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& item : node) a.push_back(node_to_json(item));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : node) o[kv.first.as<std::string>()] = node_to_json(kv.second);
      return o;
    }
  }
  return nullptr;
}

void emit(YAML::Emitter& out, const json& j) {
  switch (j.type()) {
    case json::value_t::object:
      out << YAML::BeginMap;
      for (const auto& item : j.items()) {
        out << YAML::Key << item.key() << YAML::Value;
        emit(out, item.value());
      }
      out << YAML::EndMap;
      break;
    case json::value_t::array: {
      const bool flat = std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_primitive(); });
      if (flat) out << YAML::Flow;
      out << YAML::BeginSeq;
      for (const auto& v : j) emit(out, v);
      out << YAML::EndSeq;
      break;
    }
    case json::value_t::string: {
      const auto& s = j.get_ref<const std::string&>();
      YAML::Node probe = YAML::Load(s.empty() ? "''" : s);
      const bool plain_ok = probe.IsScalar() && scalar_from_yaml(probe) == json(s) && s.find(':') == std::string::npos &&
                            s.find('#') == std::string::npos;
      if (plain_ok) {
        out << s;
      } else {
        out << YAML::DoubleQuoted << s;
      }
      break;
    }
    case json::value_t::boolean:
      out << (j.get<bool>() ? "true" : "false");
      break;
    case json::value_t::number_integer:
      out << std::to_string(j.get<long long>());
      break;
    case json::value_t::number_unsigned:
      out << std::to_string(j.get<unsigned long long>());
      break;
    case json::value_t::number_float:
      out << format_double(j.get<double>());
      break;
    default:
      out << YAML::Null;
  }
}

}  // namespace

json yaml_to_json(std::string_view text) {
  try {
    return node_to_json(YAML::Load(std::string(text)));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed YAML: ") + e.what());
  }
}

std::string json_to_yaml(const json& j) {
  YAML::Emitter out;
  emit(out, j);
  return std::string(out.c_str()) + "\n";
}

void RunConfig::validate() const {
  if (run_dir.empty()) throw ConfigError("run_dir must not be empty");
  if (schedule.steps < 1 || !(schedule.beta_start > 0.0) || schedule.beta_end < schedule.beta_start ||
      !(schedule.beta_end < 1.0)) {
    throw ConfigError("schedule: steps >= 1 and 0 < beta_start <= beta_end < 1 are required");
  }
  denoiser.validate();
  if (edges.blur_passes.empty()) throw ConfigError("edges.blur_passes must not be empty");
  validate_train(pretrain, "pretrain");
  validate_train(finetune, "finetune");
  if (corpus.count < 1 || corpus.size < 1) throw ConfigError("corpus: count and size must be positive");
  if (task.source != "synthetic" && task.source != "ingest") {
    throw ConfigError("task.source must be 'synthetic' or 'ingest', got '" + task.source + "'");
  }
  if (task.source == "ingest" && task.ingest_dir.empty()) throw ConfigError("task.ingest_dir is required for ingest");
  if (task.synthetic.count < 1 || task.synthetic.size < 1) throw ConfigError("task: count and size must be positive");
  if (cache.n < 1 || cache.batch_size < 1 || cache.aug_texts.empty()) {
    throw ConfigError("cache: n >= 1, batch_size >= 1 and at least one aug text are required");
  }
  segmentation.backbone.validate();
  segmentation.train.validate();
  if (segmentation.seeds < 1) throw ConfigError("segmentation.seeds must be at least 1");
  if (segmentation.train.n > cache.n) {
    throw ConfigError("segmentation.train.n (" + std::to_string(segmentation.train.n) + ") exceeds cache.n (" +
                      std::to_string(cache.n) + ")");
  }
  if (generation_eval.count < 2 || generation_eval.batch_size < 1) {
    throw ConfigError("generation_eval: count >= 2 and batch_size >= 1 are required");
  }
  if (ablation.seeds < 1 || ablation.epochs < 0) throw ConfigError("ablation: seeds >= 1 and epochs >= 0 are required");
  for (const auto& [name, values] : ablation.sweeps) {
    if (!kSweepParameters.count(name)) {
      throw ConfigError("unknown sweep parameter '" + name + "'; expected n, alpha, patch_size or backbone");
    }
    if (values.empty()) throw ConfigError("sweep '" + name + "' has no values");
  }
}

Vocabulary RunConfig::load_vocabulary() const {
  return vocabulary.empty() ? Vocabulary::default_vocabulary() : Vocabulary::load(vocabulary);
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["run_dir"] = c.run_dir.string();
  j["resume"] = c.resume;
  j["stages"] = c.stages;
  j["schedule"] = {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}};
  j["vocabulary"] = c.vocabulary.string();
  j["denoiser"] = to_json(c.denoiser);
  j["edges"] = {{"blur_passes", c.edges.blur_passes}};
  j["pretrain"] = train_to_json(c.pretrain);
  j["finetune"] = train_to_json(c.finetune);
  j["corpus"] = {{"count", c.corpus.count},
                 {"size", c.corpus.size},
                 {"train_fraction", c.corpus.train_fraction},
                 {"val_fraction", c.corpus.val_fraction},
                 {"aug_fraction", c.corpus.aug_fraction}};
  const auto& t = c.task.synthetic;
  const auto& l = c.task.layout;
  j["task"] = {{"source", c.task.source},
               {"count", t.count},
               {"size", t.size},
               {"modality", t.modality},
               {"organ", t.organ},
               {"category", t.category},
               {"min_foreground", t.min_foreground},
               {"max_foreground", t.max_foreground},
               {"min_contrast", t.min_contrast},
               {"max_contrast", t.max_contrast},
               {"max_noise", t.max_noise},
               {"max_distractors", t.max_distractors},
               {"ingest_dir", c.task.ingest_dir.string()},
               {"ingest",
                {{"images_dir", l.images_dir},
                 {"masks_dir", l.masks_dir},
                 {"slice_separator", l.slice_separator},
                 {"spacing_file", l.spacing_file},
                 {"binarize_threshold", l.binarize_threshold ? json(*l.binarize_threshold) : json(nullptr)},
                 {"foreground_slices_only", l.foreground_slices_only},
                 {"triplet", {l.triplet.modality, l.triplet.organ, l.triplet.category}}}}};
  j["cache"] = {{"n", c.cache.n}, {"aug_texts", c.cache.aug_texts}, {"batch_size", c.cache.batch_size}};
  json train = to_json(c.segmentation.train);
  for (const char* k : {"seed", "classic", "classic_with_diffboost", "use_diffboost"}) train.erase(k);
  const auto& r = c.segmentation.train.classic_ranges;
  train["classic_ranges"] = {{"rotate_degrees", r.rotate_degrees}, {"scale_min", r.scale_min},
                             {"scale_max", r.scale_max},           {"contrast", r.contrast},
                             {"brightness", r.brightness},         {"gamma_min", r.gamma_min},
                             {"gamma_max", r.gamma_max},           {"noise_sigma_max", r.noise_sigma_max},
                             {"resolution_min", r.resolution_min}, {"resolution_max", r.resolution_max}};
  json classic = json::array();
  for (auto k : c.segmentation.classic_baselines) classic.push_back(std::string(classic_kind_name(k)));
  j["segmentation"] = {{"backbone", to_json(c.segmentation.backbone)},
                       {"train", train},
                       {"seeds", c.segmentation.seeds},
                       {"classic_baselines", classic}};
  j["generation_eval"] = {{"count", c.generation_eval.count}, {"batch_size", c.generation_eval.batch_size}};
  json sweeps = json::object();
  for (const auto& [name, values] : c.ablation.sweeps) sweeps[name] = values;
  j["ablation"] = {{"seeds", c.ablation.seeds}, {"epochs", c.ablation.epochs}, {"sweeps", sweeps}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  StrictReader root(j, "");
  root.get("seed", c.seed);
  root.get_path("run_dir", c.run_dir);
  root.get("resume", c.resume);
  root.get("stages", c.stages);
  root.section("schedule", [&](StrictReader& r) {
    r.get("steps", c.schedule.steps);
    r.get("beta_start", c.schedule.beta_start);
    r.get("beta_end", c.schedule.beta_end);
  });
  root.get_path("vocabulary", c.vocabulary);
  if (const json* d = root.raw("denoiser")) {
    StrictReader r(*d, "denoiser");
    r.get("base_channels", c.denoiser.base_channels);
    r.get("depth", c.denoiser.depth);
    r.get("time_embed_dim", c.denoiser.time_embed_dim);
    r.get("text_embed_dim", c.denoiser.text_embed_dim);
    r.get("edge_branch_channels", c.denoiser.edge_branch_channels);
    r.get("attention_at_bottleneck", c.denoiser.attention_at_bottleneck);
    r.get("head_channels", c.denoiser.head_channels);
    r.finish();
  }
  root.section("edges", [&](StrictReader& r) { r.get("blur_passes", c.edges.blur_passes); });
  root.section("pretrain", [&](StrictReader& r) { read_train(r, c.pretrain); });
  root.section("finetune", [&](StrictReader& r) { read_train(r, c.finetune); });
  root.section("corpus", [&](StrictReader& r) {
    r.get("count", c.corpus.count);
    r.get("size", c.corpus.size);
    r.get("train_fraction", c.corpus.train_fraction);
    r.get("val_fraction", c.corpus.val_fraction);
    r.get("aug_fraction", c.corpus.aug_fraction);
  });
  root.section("task", [&](StrictReader& r) {
    auto& t = c.task.synthetic;
    r.get("source", c.task.source);
    r.get("count", t.count);
    r.get("size", t.size);
    r.get("modality", t.modality);
    r.get("organ", t.organ);
    r.get("category", t.category);
    r.get("min_foreground", t.min_foreground);
    r.get("max_foreground", t.max_foreground);
    r.get("min_contrast", t.min_contrast);
    r.get("max_contrast", t.max_contrast);
    r.get("max_noise", t.max_noise);
    r.get("max_distractors", t.max_distractors);
    r.get_path("ingest_dir", c.task.ingest_dir);
    r.section("ingest", [&](StrictReader& s) {
      auto& l = c.task.layout;
      s.get("images_dir", l.images_dir);
      s.get("masks_dir", l.masks_dir);
      s.get("slice_separator", l.slice_separator);
      s.get("spacing_file", l.spacing_file);
      if (const json* bt = s.raw("binarize_threshold"); bt && !bt->is_null()) {
        if (!bt->is_number_integer()) throw ConfigError("task.ingest.binarize_threshold must be an integer");
        l.binarize_threshold = bt->get<int>();
      }
      s.get("foreground_slices_only", l.foreground_slices_only);
      std::vector<std::string> triplet{l.triplet.modality, l.triplet.organ, l.triplet.category};
      s.get("triplet", triplet);
      if (triplet.size() != 3) throw ConfigError("task.ingest.triplet must list modality, organ and category");
      l.triplet = {triplet[0], triplet[1], triplet[2], {}};
    });
  });
  root.section("cache", [&](StrictReader& r) {
    r.get("n", c.cache.n);
    r.get("aug_texts", c.cache.aug_texts);
    r.get("batch_size", c.cache.batch_size);
  });
  root.section("segmentation", [&](StrictReader& r) {
    auto& s = c.segmentation;
    if (const json* b = r.raw("backbone")) {
      try {
        s.backbone = backbone_spec_from_json(*b);
      } catch (const json::exception& e) {
        throw ConfigError(std::string("segmentation.backbone: ") + e.what());
      }
    }
    r.section("train", [&](StrictReader& t) {
      auto& tc = s.train;
      t.get("alpha", tc.alpha);
      t.get("patch_size", tc.patch_size);
      t.get("n", tc.n);
      t.get("epochs", tc.epochs);
      t.get("max_iterations", tc.max_iterations);
      t.get("batch_size", tc.batch_size);
      t.get("learning_rate", tc.learning_rate);
      t.get("weight_decay", tc.weight_decay);
      t.get("dice_weight", tc.dice_weight);
      t.get("bce_weight", tc.bce_weight);
      t.get("folds", tc.folds);
      t.get("classic_probability", tc.classic_probability);
      t.section("classic_ranges", [&](StrictReader& q) {
        auto& cr = tc.classic_ranges;
        q.get("rotate_degrees", cr.rotate_degrees);
        q.get("scale_min", cr.scale_min);
        q.get("scale_max", cr.scale_max);
        q.get("contrast", cr.contrast);
        q.get("brightness", cr.brightness);
        q.get("gamma_min", cr.gamma_min);
        q.get("gamma_max", cr.gamma_max);
        q.get("noise_sigma_max", cr.noise_sigma_max);
        q.get("resolution_min", cr.resolution_min);
        q.get("resolution_max", cr.resolution_max);
      });
    });
    r.get("seeds", s.seeds);
    std::vector<std::string> classic;
    r.get("classic_baselines", classic);
    for (const auto& name : classic) s.classic_baselines.push_back(parse_classic_kind(name));
  });
  root.section("generation_eval", [&](StrictReader& r) {
    r.get("count", c.generation_eval.count);
    r.get("batch_size", c.generation_eval.batch_size);
  });
  root.section("ablation", [&](StrictReader& r) {
    r.get("seeds", c.ablation.seeds);
    r.get("epochs", c.ablation.epochs);
    if (const json* sw = r.raw("sweeps"); sw && !sw->is_null()) {
      if (!sw->is_object()) throw ConfigError("ablation.sweeps must be a mapping");
      for (const auto& item : sw->items()) {
        if (!item.value().is_array()) throw ConfigError("ablation.sweeps." + item.key() + " must be a list");
        c.ablation.sweeps[item.key()] = item.value().get<std::vector<json>>();
      }
    }
  });
  root.finish();
  c.pretrain.edges = c.edges;
  c.finetune.edges = c.edges;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  const json j = yaml_to_json(read_text(path));
  return run_config_from_json(j.is_null() ? json::object() : j);
}

void save_run_config(const RunConfig& c, const std::filesystem::path& path) { write_text(path, json_to_yaml(to_json(c))); }

}  // namespace segdiff
