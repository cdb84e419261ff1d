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

#ifndef ITS_CHECKPOINT_HPP
#define ITS_CHECKPOINT_HPP

#include <string>

#include "its/encoder.hpp"
#include "its/params.hpp"

namespace its {

// On-disk model container: one UTF-8 JSON header line holding the format
// version, a model kind tag, the module's config object, and a tensor table
// (name, rows, cols, byte offset into the payload); then a single '\n'; then
// the tensors' raw little-endian doubles concatenated in table order.
//
// The header is emitted with sorted keys and no float formatting ambiguity,
// so identical models produce byte-identical files.
struct Checkpoint {
  int format_version = 1;
  std::string kind;         // "encoder", "tts", "its"
  std::string config_json;  // module-owned config, serialized JSON object
  ParamStore params;
};

void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json, const ParamStore& params);

// Validates the version, the table (offsets contiguous and in order), and
// that the payload length equals the table total. Throws IoError on any
// malformed or truncated file.
Checkpoint load_checkpoint(const std::string& path);

std::string encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const std::string& text);

// Encoder wrappers. Loading re-validates the config, checks the tensor names
// against the canonical parameter layout, and checks the payload length
// against count_params(config).
void save_encoder_checkpoint(const std::string& path, const EncoderModel& model);
EncoderModel load_encoder_checkpoint(const std::string& path);

}  // namespace its

#endif  // ITS_CHECKPOINT_HPP
