// Copyright 2026 The dprlhf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dprlhf/tinylm/checkpoint.h"

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dprlhf/common/error.h"

namespace dprlhf {
namespace {

constexpr char kMagic[8] = {'D', 'P', 'R', 'L', 'H', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void PutRaw(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T GetRaw(const std::string& in, std::size_t& pos) {
  Require(pos + sizeof(T) <= in.size(), ErrorCode::kCorruptCheckpoint,
          "checkpoint truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

uint32_t Crc(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

const char* ModeName(ParamMode mode) {
  return mode == ParamMode::kAdapter ? "adapter" : "full";
}

}  // namespace

std::string SerializeCheckpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["sets"] = nlohmann::json::array();
  for (const auto& [name, set] : ckpt.sets) {
    nlohmann::json s;
    s["name"] = name;
    s["mode"] = ModeName(set.mode());
    s["tensors"] = nlohmann::json::array();
    for (const ParamEntry& e : set.entries()) {
      s["tensors"].push_back({{"name", e.name}, {"shape", e.shape}});
    }
    header["sets"].push_back(std::move(s));
  }
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  PutRaw<uint32_t>(out, kVersion);
  PutRaw<uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, set] : ckpt.sets) {
    const auto flat = set.flat();
    out.append(reinterpret_cast<const char*>(flat.data()),
               flat.size() * sizeof(double));
  }
  PutRaw<uint32_t>(out, Crc(out.data(), out.size()));
  return out;
}

Checkpoint DeserializeCheckpoint(const std::string& bytes) {
  Require(bytes.size() >= sizeof(kMagic) + 16, ErrorCode::kCorruptCheckpoint,
          "checkpoint truncated");
  Require(std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0,
          ErrorCode::kCorruptCheckpoint, "bad checkpoint magic");
  std::size_t crc_pos = bytes.size() - sizeof(uint32_t);
  const uint32_t stored = GetRaw<uint32_t>(bytes, crc_pos);
  Require(stored == Crc(bytes.data(), bytes.size() - sizeof(uint32_t)),
          ErrorCode::kCorruptCheckpoint, "checkpoint CRC mismatch");
  std::size_t pos = sizeof(kMagic);
  Require(GetRaw<uint32_t>(bytes, pos) == kVersion,
          ErrorCode::kCorruptCheckpoint, "unsupported checkpoint version");
  const uint64_t header_len = GetRaw<uint64_t>(bytes, pos);
  Require(pos + header_len <= bytes.size() - sizeof(uint32_t),
          ErrorCode::kCorruptCheckpoint, "checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kCorruptCheckpoint, std::string("bad header: ") + e.what());
  }
  pos += header_len;
  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  const std::size_t payload_end = bytes.size() - sizeof(uint32_t);
  for (const auto& s : header.at("sets")) {
    ParamSet set(s.at("mode").get<std::string>() == "adapter"
                     ? ParamMode::kAdapter
                     : ParamMode::kFull);
    for (const auto& t : s.at("tensors")) {
      set.Add(t.at("name").get<std::string>(),
              t.at("shape").get<std::vector<std::size_t>>());
    }
    const std::size_t nbytes = set.size() * sizeof(double);
    Require(pos + nbytes <= payload_end, ErrorCode::kCorruptCheckpoint,
            "checkpoint truncated");
    std::memcpy(set.flat().data(), bytes.data() + pos, nbytes);
    pos += nbytes;
    ckpt.sets.emplace(s.at("name").get<std::string>(), std::move(set));
  }
  Require(pos == payload_end, ErrorCode::kCorruptCheckpoint,
          "trailing bytes in checkpoint");
  return ckpt;
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = SerializeCheckpoint(ckpt);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    Require(out.good(), ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    Require(out.good(), ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  Require(std::filesystem::exists(path), ErrorCode::kMissingPrerequisite,
          "missing checkpoint " + path.string());
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return DeserializeCheckpoint(ss.str());
}

nlohmann::json ConfigToJson(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},       {"d_model", c.d_model},
          {"n_layers", c.n_layers},           {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},                   {"max_seq_len", c.max_seq_len},
          {"adapter_rank", c.adapter_rank},   {"adapter_alpha", c.adapter_alpha},
          {"adapter_dropout", c.adapter_dropout},
          {"adapter_targets", c.adapter_targets}};
}

ModelConfig ConfigFromJson(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.adapter_rank = j.value("adapter_rank", c.adapter_rank);
  c.adapter_alpha = j.value("adapter_alpha", c.adapter_alpha);
  c.adapter_dropout = j.value("adapter_dropout", c.adapter_dropout);
  c.adapter_targets = j.value("adapter_targets", c.adapter_targets);
  return c;
}

void PutModel(Checkpoint& ckpt, const Model& model) {
  ckpt.meta["model"] = {{"config", ConfigToJson(model.config)},
                        {"head_kind", static_cast<int>(model.head_kind)}};
  ckpt.sets["base"] = model.base;
  ckpt.sets["adapters"] = model.adapters;
  ckpt.sets["head"] = model.head;
}

Model GetModel(const Checkpoint& ckpt) {
  Require(ckpt.meta.contains("model"), ErrorCode::kCorruptCheckpoint,
          "checkpoint has no model");
  Model model;
  model.config = ConfigFromJson(ckpt.meta["model"].at("config"));
  model.config.Validate();
  model.head_kind =
      static_cast<HeadKind>(ckpt.meta["model"].at("head_kind").get<int>());
  auto take = [&](const char* name, ParamSet& dst) {
    auto it = ckpt.sets.find(name);
    Require(it != ckpt.sets.end(), ErrorCode::kCorruptCheckpoint,
            std::string("checkpoint missing set ") + name);
    dst = it->second;
  };
  take("base", model.base);
  take("adapters", model.adapters);
  take("head", model.head);
  return model;
}

}  // namespace dprlhf
