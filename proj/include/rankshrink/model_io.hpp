// Copyright 2026 The rankshrink Authors
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

#ifndef RANKSHRINK_MODEL_IO_HPP
#define RANKSHRINK_MODEL_IO_HPP

// Model files are JSON text:
//
//   {"format_version": 1, "spec": {...}, "seed": N,
//    "layers": [{"name": "TD1", "tensors": {"affine.in_map": {"rows": r,
//                "cols": c, "data": "<base64 of little-endian f64>"}, ...}}],
//    "training_metadata": {...}}
//
// Tensors are stored row-major; loading reproduces every bit.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "rankshrink/nnet.hpp"

namespace rankshrink {

using Json = nlohmann::ordered_json;

struct Model {
  nnet::NetworkSpec spec;
  nnet::Params params;
  std::uint64_t seed = 0;
  Json training_metadata = Json::object();
};

inline constexpr int kModelFormatVersion = 1;

Json spec_to_json(const nnet::NetworkSpec& spec);
nnet::NetworkSpec spec_from_json(const Json& j);

std::string serialize_model(const Model& model);
Model deserialize_model(std::string_view text);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace rankshrink

#endif  // RANKSHRINK_MODEL_IO_HPP
