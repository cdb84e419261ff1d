// Copyright 2026 The ITS-Desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "its/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <utility>

#include <json.hpp>

namespace its {

namespace {

using nlohmann::json;

// The payload is raw IEEE 754 doubles in little-endian byte order. Treating
// memcpy as serialization is only valid on a little-endian host; fail the
// build loudly elsewhere instead of writing byte-swapped files.
static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

json parse_or_io_error(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(what + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json, const ParamStore& params) {
  json config = parse_or_io_error(config_json, "checkpoint config");
  ITS_CHECK_IO(config.is_object(), "checkpoint config must be a JSON object");

  json table = json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.tensor(i);
    table.push_back({{"name", params.name(i)},
                     {"rows", t.rows()},
                     {"cols", t.cols()},
                     {"offset", offset}});
    offset += static_cast<std::size_t>(t.numel()) * sizeof(double);
  }

  // json objects keep sorted keys, so the header line (and with it the whole
  // file) is byte-stable for a given model.
  json header = {{"format_version", 1}, {"kind", kind}, {"config", config}, {"tensors", table}};

  std::string out = header.dump();
  out.push_back('\n');
  const std::size_t payload_start = out.size();
  out.resize(payload_start + offset);
  for (std::size_t i = 0, at = payload_start; i < params.size(); ++i) {
    const Tensor& t = params.tensor(i);
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
    std::memcpy(out.data() + at, t.data(), bytes);
    at += bytes;
  }
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string raw = read_file(path);
  const std::size_t nl = raw.find('\n');
  ITS_CHECK_IO(nl != std::string::npos, "checkpoint has no header line: " + path);
  json header = parse_or_io_error(raw.substr(0, nl), "checkpoint header in " + path);

  Checkpoint ck;
  try {
    ck.format_version = header.at("format_version").get<int>();
    ck.kind = header.at("kind").get<std::string>();
    ck.config_json = header.at("config").dump();
    ITS_CHECK_IO(ck.format_version == 1,
                 "unsupported checkpoint format version in " + path);

    const std::size_t payload = raw.size() - nl - 1;
    std::size_t expect = 0;
    for (const json& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<Index>();
      const auto cols = entry.at("cols").get<Index>();
      const auto offset = entry.at("offset").get<std::size_t>();
      ITS_CHECK_IO(rows >= 0 && cols >= 0, "negative tensor shape in " + path);
      ITS_CHECK_IO(offset == expect, "tensor table offsets are not contiguous in " + path);
      Tensor t(rows, cols);
      const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
      ITS_CHECK_IO(offset + bytes <= payload, "checkpoint payload truncated: " + path);
      std::memcpy(t.data(), raw.data() + nl + 1 + offset, bytes);
      ck.params.add(name, std::move(t));
      expect = offset + bytes;
    }
    ITS_CHECK_IO(expect == payload, "checkpoint payload length mismatch: " + path);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint header in " + path + ": " + e.what());
  } catch (const ConfigError& e) {
    // ParamStore::add rejects duplicate names; in a file that is corruption.
    throw IoError("malformed checkpoint in " + path + ": " + e.what());
  }
  return ck;
}

std::string encoder_config_to_json(const EncoderConfig& cfg) {
  json j = {{"img_h", cfg.img_h},       {"img_w", cfg.img_w},
            {"patch", cfg.patch},       {"layer_dims", cfg.layer_dims},
            {"heads", cfg.heads},       {"mlp_ratio", cfg.mlp_ratio},
            {"n_classes", cfg.n_classes}, {"max_seq", cfg.max_seq}};
  return j.dump();
}

EncoderConfig encoder_config_from_json(const std::string& text) {
  json j = parse_or_io_error(text, "encoder config");
  EncoderConfig cfg;
  try {
    cfg.img_h = j.at("img_h").get<Index>();
    cfg.img_w = j.at("img_w").get<Index>();
    cfg.patch = j.at("patch").get<Index>();
    cfg.layer_dims = j.at("layer_dims").get<std::vector<Index>>();
    cfg.heads = j.at("heads").get<Index>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<Index>();
    cfg.n_classes = j.at("n_classes").get<Index>();
    cfg.max_seq = j.at("max_seq").get<Index>();
  } catch (const json::exception& e) {
    throw IoError(std::string("encoder config is missing fields: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_encoder_checkpoint(const std::string& path, const EncoderModel& model) {
  save_checkpoint(path, "encoder", encoder_config_to_json(model.cfg), model.params);
}

EncoderModel load_encoder_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  ITS_CHECK_IO(ck.kind == "encoder",
               "expected an encoder checkpoint, found kind '" + ck.kind + "' in " + path);
  EncoderModel model;
  model.cfg = encoder_config_from_json(ck.config_json);
  model.params = std::move(ck.params);
  ITS_CHECK_IO(model.params.total_elements() == count_params(model.cfg),
               "checkpoint byte length disagrees with count_params: " + path);
  validate_encoder_params(model.cfg, model.params);
  return model;
}

}  // namespace its
