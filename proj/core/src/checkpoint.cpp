// SPDX-License-Identifier: Apache-2.0
// Model checkpoint container: construction, partition access, deep cloning,
// and the versioned on-disk format (JSON header line + little-endian float64
// payloads in header order). Byte-identical across load/save round trips.
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "ctcadapt/error.hpp"
#include "ctcadapt/rng.hpp"
#include "ctcadapt/trainer.hpp"

namespace ctcadapt {

namespace {

using nlohmann::json;

json encoder_config_to_json(const EncoderConfig& c) {
  return json{{"input_dim", c.input_dim},   {"hidden_dim", c.hidden_dim},
              {"vocab_size", c.vocab_size}, {"blocks", c.blocks},
              {"heads", c.heads},           {"ffn_dim", c.ffn_dim}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.input_dim = j.at("input_dim").get<int64_t>();
  c.hidden_dim = j.at("hidden_dim").get<int64_t>();
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.blocks = j.at("blocks").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int64_t>();
  return c;
}

json adapter_config_to_json(const AdapterConfig& c) {
  return json{{"vocab_size", c.vocab_size},
              {"embed_dim", c.embed_dim},
              {"hidden_dim", c.hidden_dim},
              {"blocks", c.blocks}};
}

AdapterConfig adapter_config_from_json(const json& j) {
  AdapterConfig c;
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.embed_dim = j.at("embed_dim").get<int64_t>();
  c.hidden_dim = j.at("hidden_dim").get<int64_t>();
  c.blocks = j.at("blocks").get<int>();
  return c;
}

void append_f64_le(std::string& out, double d) {
  uint64_t bits = std::bit_cast<uint64_t>(d);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

double read_f64_le(const std::string& bytes, size_t pos) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

ModelCheckpoint ModelCheckpoint::fresh(const EncoderConfig& enc_cfg,
                                       const AdapterConfig& ada_cfg, uint64_t seed) {
  if (ada_cfg.hidden_dim != enc_cfg.hidden_dim) {
    throw ValueError("adapter hidden_dim " + std::to_string(ada_cfg.hidden_dim) +
                     " must match encoder hidden_dim " + std::to_string(enc_cfg.hidden_dim));
  }
  ModelCheckpoint ckpt;
  ckpt.encoder_config = enc_cfg;
  ckpt.adapter_config = ada_cfg;
  Rng rng(seed);
  ckpt.encoder = Encoder::init(enc_cfg, rng);
  ckpt.has_adapters = false;
  ckpt.freeze = {{"encoder", false}};
  return ckpt;
}

void ModelCheckpoint::add_adapters(uint64_t seed) {
  if (has_adapters) throw ValueError("checkpoint already has an adapter partition");
  if (adapter_config.blocks != encoder_config.blocks) {
    throw ValueError("adapter blocks must match encoder blocks");
  }
  Rng rng(seed);
  adapters = Adapters::init(adapter_config, rng);
  has_adapters = true;
  freeze["adapters"] = false;
}

ParamMap ModelCheckpoint::params() const {
  ParamMap out;
  encoder.collect("encoder", out);
  if (has_adapters) adapters.collect("adapters", out);
  return out;
}

ParamMap ModelCheckpoint::partition(const std::string& name) const {
  ParamMap out;
  if (name == "encoder") {
    encoder.collect("encoder", out);
  } else if (name == "adapters") {
    if (!has_adapters) throw ValueError("checkpoint has no adapter partition");
    adapters.collect("adapters", out);
  } else {
    throw ValueError("unknown partition '" + name + "' (expected encoder or adapters)");
  }
  return out;
}

ModelCheckpoint ModelCheckpoint::clone() const {
  return deserialize_checkpoint(serialize_checkpoint(*this));
}

std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  ParamMap params = ckpt.params();

  json header;
  header["version"] = 1;
  header["encoder_config"] = encoder_config_to_json(ckpt.encoder_config);
  header["adapter_config"] = adapter_config_to_json(ckpt.adapter_config);
  header["has_adapters"] = ckpt.has_adapters;
  header["freeze"] = json::object();
  for (const auto& [name, frozen] : ckpt.freeze) header["freeze"][name] = frozen;
  header["provenance"] = json::object();
  for (const auto& [key, value] : ckpt.provenance) header["provenance"][key] = value;
  json tensors = json::array();
  for (const auto& [name, t] : params) {
    json shape = json::array();
    for (int64_t d : t.shape()) shape.push_back(d);
    tensors.push_back(json{{"name", name}, {"shape", shape}});
  }
  header["tensors"] = std::move(tensors);

  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& [name, t] : params) {
    for (double d : t.values()) append_f64_le(out, d);
  }
  return out;
}

ModelCheckpoint deserialize_checkpoint(const std::string& bytes) {
  size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw IoError("checkpoint: missing header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  }

  static const std::set<std::string> kKeys = {"version",      "encoder_config",
                                              "adapter_config", "has_adapters",
                                              "freeze",       "provenance",
                                              "tensors"};
  for (const auto& [key, value] : header.items()) {
    (void)value;
    if (!kKeys.count(key)) throw IoError("checkpoint: unknown header key '" + key + "'");
  }
  for (const auto& key : kKeys) {
    if (!header.contains(key)) throw IoError("checkpoint: missing header key '" + key + "'");
  }
  if (header.at("version").get<int64_t>() != 1) {
    throw IoError("checkpoint: unsupported version " + header.at("version").dump());
  }

  ModelCheckpoint ckpt;
  try {
    ckpt.encoder_config = encoder_config_from_json(header.at("encoder_config"));
    ckpt.adapter_config = adapter_config_from_json(header.at("adapter_config"));
    for (const auto& [name, frozen] : header.at("freeze").items()) {
      ckpt.freeze[name] = frozen.get<bool>();
    }
    for (const auto& [key, value] : header.at("provenance").items()) {
      ckpt.provenance[key] = value.get<std::string>();
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header field: ") + e.what());
  }

  Rng rng(0);
  ckpt.encoder = Encoder::init(ckpt.encoder_config, rng);
  if (header.at("has_adapters").get<bool>()) {
    ckpt.adapters = Adapters::init(ckpt.adapter_config, rng);
    ckpt.has_adapters = true;
  }

  ParamMap params = ckpt.params();
  const json& tensors = header.at("tensors");
  if (tensors.size() != params.size()) {
    throw IoError("checkpoint: partition mismatch: header lists " +
                  std::to_string(tensors.size()) + " tensors, model has " +
                  std::to_string(params.size()));
  }
  size_t pos = nl + 1;
  auto it = params.begin();
  for (const auto& entry : tensors) {
    const std::string name = entry.at("name").get<std::string>();
    if (name != it->first) {
      throw IoError("checkpoint: partition mismatch: header tensor '" + name +
                    "' vs model tensor '" + it->first + "'");
    }
    Tensor& t = it->second;
    std::vector<int64_t> shape;
    for (const auto& d : entry.at("shape")) shape.push_back(d.get<int64_t>());
    if (shape != std::vector<int64_t>(t.shape().begin(), t.shape().end())) {
      throw IoError("checkpoint: shape mismatch for tensor '" + name + "'");
    }
    auto dst = t.values_mut();
    if (pos + 8 * dst.size() > bytes.size()) {
      throw IoError("checkpoint: payload truncated at tensor '" + name + "'");
    }
    for (size_t i = 0; i < dst.size(); ++i, pos += 8) dst[i] = read_f64_le(bytes, pos);
    ++it;
  }
  if (pos != bytes.size()) throw IoError("checkpoint: trailing bytes after payload");
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
  std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint file: " + path);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

std::string checkpoint_hash(const ModelCheckpoint& ckpt) {
  uint64_t h = hash_str(serialize_checkpoint(ckpt));
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace ctcadapt
