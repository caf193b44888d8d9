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

#include "segdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace segdiff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'S', 'E', 'G', 'D', 'C', 'K', 'P', 'T'};

nlohmann::json header_json(const Checkpoint& c) {
  nlohmann::json h;
  h["kind"] = c.kind;
  h["stage"] = c.stage;
  h["config"] = c.config;
  h["schedule"] = c.schedule ? schedule_to_json(*c.schedule) : nlohmann::json(nullptr);
  h["vocab_hash"] = hex64(c.vocab_hash);
  h["seed"] = c.seed;
  h["step"] = c.step;
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : c.params) {
    manifest.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
    offset += p.values.size();
  }
  h["params"] = manifest;
  return h;
}

template <class V>
void write_pod(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& in) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw CheckpointError("truncated checkpoint");
  return v;
}
}  // namespace

nlohmann::json schedule_to_json(const NoiseSchedule& s) {
  return {{"steps", s.steps()}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}, {"betas", s.betas}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  auto s = make_linear_schedule(j.at("steps").get<int>(), j.at("beta_start").get<double>(),
                                j.at("beta_end").get<double>());
  if (j.contains("betas") && j.at("betas").get<std::vector<double>>() != s.betas) {
    throw CheckpointError("stored betas disagree with the schedule they claim to come from");
  }
  return s;
}

std::string Checkpoint::fingerprint() const {
  std::uint64_t h = fnv1a64(header_json(*this).dump());
  for (const auto& p : params) {
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p.values.data()), p.values.size() * sizeof(float)), h);
  }
  return hex64(h);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string header = header_json(ckpt).dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : ckpt.params) {
    out.write(reinterpret_cast<const char*>(p.values.data()), static_cast<std::streamsize>(p.values.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(in);
  if (header_len > (1ULL << 30)) throw CheckpointError("corrupt checkpoint header length");
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) throw CheckpointError("truncated checkpoint header");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint c;
  try {
    c.kind = h.at("kind").get<std::string>();
    c.stage = h.at("stage").get<std::string>();
    c.config = h.at("config");
    if (!h.at("schedule").is_null()) c.schedule = schedule_from_json(h.at("schedule"));
    c.vocab_hash = std::stoull(h.at("vocab_hash").get<std::string>(), nullptr, 16);
    c.seed = h.at("seed").get<std::uint64_t>();
    c.step = h.at("step").get<std::int64_t>();
    for (const auto& p : h.at("params")) {
      ParameterBlock b{p.at("name").get<std::string>(), p.at("shape").get<std::vector<int>>(), {}};
      b.values.resize(nn::shape_numel(b.shape));
      c.params.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  for (auto& p : c.params) {
    if (!in.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(p.values.size() * sizeof(float)))) {
      throw CheckpointError("truncated parameter block " + p.name);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after parameter blocks");
  if (expected_vocab_hash && *expected_vocab_hash != c.vocab_hash) {
    throw CheckpointError("vocabulary hash mismatch: checkpoint " + hex64(c.vocab_hash) + ", expected " +
                          hex64(*expected_vocab_hash));
  }
  return c;
}

}  // namespace segdiff
