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

#include "rankshrink/model_io.hpp"

#include "rankshrink/util.hpp"

namespace rankshrink {

using nnet::LayerKind;
using nnet::LayerSpec;
using nnet::NetworkSpec;

Json spec_to_json(const NetworkSpec& spec) {
  Json layers = Json::array();
  for (const LayerSpec& l : spec.layers) {
    Json j;
    j["kind"] = std::string(nnet::to_string(l.kind));
    j["name"] = l.name;
    j["input_dim"] = l.input_dim;
    j["output_dim"] = l.output_dim;
    if (l.kind == LayerKind::TdnnAffine || l.kind == LayerKind::FactorizedAffine) {
      j["splice"] = l.splice.offsets;
      if (l.splice.zero_optional) j["splice_zero_optional"] = true;
    }
    if (l.kind == LayerKind::Lstmp) {
      j["cell_dim"] = l.cell_dim;
      j["rec_proj_dim"] = l.rec_proj_dim;
      j["nonrec_proj_dim"] = l.nonrec_proj_dim;
      j["gate_bottleneck_dim"] = l.gate_bottleneck_dim;
      j["projection_bottleneck_dim"] = l.projection_bottleneck_dim;
    }
    if (l.kind == LayerKind::FactorizedAffine || l.kind == LayerKind::Output) j["bottleneck_dim"] = l.bottleneck_dim;
    layers.push_back(std::move(j));
  }
  Json out;
  out["feature_dim"] = spec.feature_dim;
  out["num_targets"] = spec.num_targets;
  out["layers"] = std::move(layers);
  return out;
}

NetworkSpec spec_from_json(const Json& j) {
  try {
    NetworkSpec spec;
    spec.feature_dim = j.at("feature_dim").get<int>();
    spec.num_targets = j.at("num_targets").get<int>();
    for (const Json& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = nnet::layer_kind_from_string(lj.at("kind").get<std::string>());
      l.name = lj.value("name", std::string());
      l.input_dim = lj.at("input_dim").get<int>();
      l.output_dim = lj.at("output_dim").get<int>();
      if (lj.contains("splice")) l.splice.offsets = lj.at("splice").get<std::vector<int>>();
      l.splice.zero_optional = lj.value("splice_zero_optional", false);
      l.cell_dim = lj.value("cell_dim", 0);
      l.rec_proj_dim = lj.value("rec_proj_dim", 0);
      l.nonrec_proj_dim = lj.value("nonrec_proj_dim", 0);
      l.gate_bottleneck_dim = lj.value("gate_bottleneck_dim", 0);
      l.projection_bottleneck_dim = lj.value("projection_bottleneck_dim", 0);
      l.bottleneck_dim = lj.value("bottleneck_dim", 0);
      spec.layers.push_back(std::move(l));
    }
    spec.validate();
    return spec;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("malformed network spec: ") + e.what());
  }
}

namespace {

Json tensor_to_json(const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>& m) {
  Json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = util::base64_encode(util::pack_f64(std::span<const double>(m.data(), static_cast<std::size_t>(m.size()))));
  return j;
}

MatrixXd tensor_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const std::vector<double> values = util::unpack_f64(util::base64_decode(j.at("data").get<std::string>()));
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(values.size()) != rows * cols) {
    throw InvalidInput("tensor blob size does not match its shape");
  }
  MatrixXd m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

void put(Json& tensors, const char* key, const MatrixXd& m) {
  if (m.size() > 0) tensors[key] = tensor_to_json(m);
}

void put(Json& tensors, const char* key, const VectorXd& v) {
  if (v.size() > 0) tensors[key] = tensor_to_json(MatrixXd(v.transpose()));
}

void get(const Json& tensors, const char* key, MatrixXd& m) {
  if (tensors.contains(key)) m = tensor_from_json(tensors.at(key));
}

void get(const Json& tensors, const char* key, VectorXd& v) {
  if (tensors.contains(key)) v = tensor_from_json(tensors.at(key)).transpose();
}

}  // namespace

std::string serialize_model(const Model& model) {
  nnet::check_params(model.params, model.spec);
  Json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["spec"] = spec_to_json(model.spec);
  doc["seed"] = model.seed;
  Json layers = Json::array();
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const auto& p = model.params.layers[i];
    Json tensors = Json::object();
    put(tensors, "affine.in_map", p.affine.in_map);
    put(tensors, "affine.out_map", p.affine.out_map);
    put(tensors, "bias", p.bias);
    put(tensors, "gate.in_map", p.gate.in_map);
    put(tensors, "gate.out_map", p.gate.out_map);
    put(tensors, "gate_bias", p.gate_bias);
    put(tensors, "peephole", p.peephole);
    put(tensors, "projection.in_map", p.projection.in_map);
    put(tensors, "projection.out_map", p.projection.out_map);
    Json layer;
    layer["name"] = model.spec.layers[i].name;
    layer["tensors"] = std::move(tensors);
    layers.push_back(std::move(layer));
  }
  doc["layers"] = std::move(layers);
  doc["training_metadata"] = model.training_metadata;
  return doc.dump(1) + "\n";
}

Model deserialize_model(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidInput(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw InvalidInput("unsupported model format_version " + std::to_string(version));
    }
    Model model;
    model.spec = spec_from_json(doc.at("spec"));
    model.seed = doc.value("seed", std::uint64_t{0});
    const Json& layers = doc.at("layers");
    if (layers.size() != model.spec.layers.size()) throw InvalidInput("model has a different layer count than its spec");
    model.params.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Json& tensors = layers[i].at("tensors");
      auto& p = model.params.layers[i];
      get(tensors, "affine.in_map", p.affine.in_map);
      get(tensors, "affine.out_map", p.affine.out_map);
      get(tensors, "bias", p.bias);
      get(tensors, "gate.in_map", p.gate.in_map);
      get(tensors, "gate.out_map", p.gate.out_map);
      get(tensors, "gate_bias", p.gate_bias);
      get(tensors, "peephole", p.peephole);
      get(tensors, "projection.in_map", p.projection.in_map);
      get(tensors, "projection.out_map", p.projection.out_map);
    }
    model.training_metadata = doc.value("training_metadata", Json::object());
    nnet::check_params(model.params, model.spec);
    return model;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const Model& model) {
  util::write_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) { return deserialize_model(util::read_file(path)); }

}  // namespace rankshrink
