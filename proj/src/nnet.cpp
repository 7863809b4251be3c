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

#include "rankshrink/nnet.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

namespace rankshrink::nnet {

using Eigen::RowVectorXd;

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::TdnnAffine: return "tdnn-affine";
    case LayerKind::Relu: return "relu";
    case LayerKind::Lstmp: return "lstmp";
    case LayerKind::FactorizedAffine: return "factorized-affine";
    case LayerKind::Output: return "output";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind k : {LayerKind::TdnnAffine, LayerKind::Relu, LayerKind::Lstmp, LayerKind::FactorizedAffine,
                      LayerKind::Output}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidInput("unknown layer kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Specs

int SpliceSpec::left_context() const { return offsets.empty() ? 0 : std::max(0, -offsets.front()); }
int SpliceSpec::right_context() const { return offsets.empty() ? 0 : std::max(0, offsets.back()); }

void SpliceSpec::validate() const {
  if (offsets.empty()) throw InvalidInput("splice: offsets must be non-empty");
  for (std::size_t i = 1; i < offsets.size(); ++i) {
    if (offsets[i] <= offsets[i - 1]) throw InvalidInput("splice: offsets must be strictly increasing");
  }
  if (!zero_optional && std::find(offsets.begin(), offsets.end(), 0) == offsets.end()) {
    throw InvalidInput("splice: offsets must contain 0");
  }
}

namespace {

[[noreturn]] void bad_layer(const LayerSpec& layer, std::size_t index, const std::string& what) {
  std::ostringstream msg;
  msg << "layer " << index << " (" << (layer.name.empty() ? std::string(to_string(layer.kind)) : layer.name)
      << "): " << what;
  throw InvalidInput(msg.str());
}

}  // namespace

void NetworkSpec::validate() const {
  if (feature_dim <= 0) throw InvalidInput("network: feature_dim must be positive");
  if (num_targets <= 0) throw InvalidInput("network: num_targets must be positive");
  if (layers.empty()) throw InvalidInput("network: no layers");
  int width = feature_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.input_dim <= 0 || l.output_dim <= 0) bad_layer(l, i, "dimensions must be positive");
    const bool last = i + 1 == layers.size();
    if ((l.kind == LayerKind::Output) != last) bad_layer(l, i, "exactly the final layer must be the output layer");
    switch (l.kind) {
      case LayerKind::TdnnAffine:
      case LayerKind::FactorizedAffine: {
        l.splice.validate();
        if (l.input_dim != l.splice.size() * width) {
          bad_layer(l, i, "input_dim " + std::to_string(l.input_dim) + " != " + std::to_string(l.splice.size()) +
                              " offsets x producer width " + std::to_string(width));
        }
        if (l.kind == LayerKind::FactorizedAffine &&
            (l.bottleneck_dim <= 0 || l.bottleneck_dim > std::min(l.input_dim, l.output_dim))) {
          bad_layer(l, i, "bottleneck_dim must be in [1, min(input_dim, output_dim)]");
        }
        if (l.kind == LayerKind::TdnnAffine && l.bottleneck_dim != 0) bad_layer(l, i, "dense layer has a bottleneck");
        break;
      }
      case LayerKind::Relu:
        if (l.input_dim != width || l.output_dim != width) bad_layer(l, i, "relu width does not match producer");
        break;
      case LayerKind::Lstmp:
        if (l.input_dim != width) bad_layer(l, i, "input_dim does not match producer width");
        if (l.cell_dim <= 0 || l.rec_proj_dim <= 0 || l.nonrec_proj_dim <= 0) {
          bad_layer(l, i, "cell and projection dims must be positive");
        }
        if (l.output_dim != l.rec_proj_dim + l.nonrec_proj_dim) {
          bad_layer(l, i, "output_dim must equal rec_proj_dim + nonrec_proj_dim");
        }
        if (l.gate_bottleneck_dim < 0 || l.gate_bottleneck_dim > std::min(4 * l.cell_dim, l.gate_input_dim())) {
          bad_layer(l, i, "gate bottleneck out of range");
        }
        if (l.projection_bottleneck_dim < 0 || l.projection_bottleneck_dim > std::min(l.output_dim, l.cell_dim)) {
          bad_layer(l, i, "projection bottleneck out of range");
        }
        break;
      case LayerKind::Output:
        if (l.input_dim != width) bad_layer(l, i, "input_dim does not match producer width");
        if (l.output_dim != num_targets) bad_layer(l, i, "output_dim must equal num_targets");
        if (l.bottleneck_dim < 0 || l.bottleneck_dim > std::min(l.input_dim, l.output_dim)) {
          bad_layer(l, i, "bottleneck out of range");
        }
        break;
    }
    width = l.output_dim;
  }
}

int NetworkSpec::left_context() const {
  int total = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::TdnnAffine || l.kind == LayerKind::FactorizedAffine) total += l.splice.left_context();
  }
  return total;
}

int NetworkSpec::right_context() const {
  int total = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::TdnnAffine || l.kind == LayerKind::FactorizedAffine) total += l.splice.right_context();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Presets

namespace {

struct Stage {
  bool lstm;
  std::vector<int> splice;
};

const std::vector<int> kWide{-2, -1, 0, 1, 2};
const std::vector<int> kNarrow{-1, 0, 1};
const std::vector<int> kStride3{-3, 0, 3};
const std::vector<int> kCurrent{0};

// Ranks after energy pruning of the full-size baseline, in network order:
// TD1-TD3, LS1, TD4-TD5, LS2, TD6-TD7, LS3, TD8-TD9, LS4.
constexpr std::array<int, 13> kSvdRanks{127, 319, 317, 406, 183, 372, 404, 164, 385, 427, 173, 433, 501};

int scaled_rank(int full_rank, int full_width, int width, int cap) {
  const long scaled = std::lround(static_cast<double>(full_rank) * width / full_width);
  return static_cast<int>(std::clamp<long>(scaled, 1, cap));
}

}  // namespace

NetworkSpec build_preset(std::string_view name, int feature_dim, int num_targets, const PresetDims& dims) {
  std::vector<Stage> stages{
      {false, kWide},    {false, kNarrow},  {false, kNarrow},  {true, {}},
      {false, kStride3}, {false, kStride3}, {true, {}},        {false, kStride3},
      {false, kStride3}, {true, {}},        {false, kStride3}, {false, kStride3},
      {true, {}},
  };
  const bool factorize = name == "svd-default";
  if (name == "desk") {
    stages = {{false, kWide}, {false, kNarrow}, {true, {}}, {false, kStride3}, {false, kStride3}, {true, {}}};
  } else if (name == "lstm-tdnn-1") {
    stages[0].splice = kNarrow;
  } else if (name == "lstm-tdnn-2") {
    stages[10].splice = kCurrent;
    stages[11].splice = kCurrent;
  } else if (name != "baseline" && !factorize) {
    throw InvalidInput("unknown preset '" + std::string(name) + "'");
  }
  if (feature_dim <= 0 || num_targets <= 0) throw InvalidInput("preset: dimensions must be positive");

  NetworkSpec spec;
  spec.feature_dim = feature_dim;
  spec.num_targets = num_targets;
  const PresetDims full;
  int width = feature_dim;
  int tdnn_index = 0, lstm_index = 0;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const Stage& stage = stages[s];
    if (stage.lstm) {
      LayerSpec l;
      l.kind = LayerKind::Lstmp;
      l.name = "LS" + std::to_string(++lstm_index);
      l.input_dim = width;
      l.cell_dim = dims.cell_dim;
      l.rec_proj_dim = dims.rec_proj_dim;
      l.nonrec_proj_dim = dims.nonrec_proj_dim;
      l.output_dim = dims.rec_proj_dim + dims.nonrec_proj_dim;
      if (factorize) {
        l.projection_bottleneck_dim = scaled_rank(kSvdRanks[s], full.rec_proj_dim + full.nonrec_proj_dim, l.output_dim,
                                                  std::min(l.output_dim, l.cell_dim));
      }
      spec.layers.push_back(l);
      width = l.output_dim;
    } else {
      LayerSpec l;
      l.kind = factorize ? LayerKind::FactorizedAffine : LayerKind::TdnnAffine;
      l.name = "TD" + std::to_string(++tdnn_index);
      l.splice.offsets = stage.splice;
      l.input_dim = static_cast<int>(stage.splice.size()) * width;
      l.output_dim = dims.tdnn_dim;
      if (factorize) {
        l.bottleneck_dim =
            scaled_rank(kSvdRanks[s], full.tdnn_dim, dims.tdnn_dim, std::min(l.input_dim, l.output_dim));
      }
      spec.layers.push_back(l);
      LayerSpec relu;
      relu.kind = LayerKind::Relu;
      relu.name = l.name + ".relu";
      relu.input_dim = relu.output_dim = dims.tdnn_dim;
      spec.layers.push_back(relu);
      width = dims.tdnn_dim;
    }
  }
  LayerSpec out;
  out.kind = LayerKind::Output;
  out.name = "Out";
  out.input_dim = width;
  out.output_dim = num_targets;
  spec.layers.push_back(out);
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Linear maps

MatrixXd Linear::apply(const MatrixXd& x) const {
  MatrixXd hidden = x * in_map.transpose();
  if (!factorized()) return hidden;
  return hidden * out_map.transpose();
}

MatrixXd Linear::apply_transpose(const MatrixXd& dy) const {
  if (!factorized()) return dy * in_map;
  MatrixXd d_hidden = dy * out_map;
  return d_hidden * in_map;
}

void Linear::accumulate_gradient(const MatrixXd& x, const MatrixXd& dy, Linear& grad) const {
  if (!factorized()) {
    grad.in_map.noalias() += dy.transpose() * x;
    return;
  }
  const MatrixXd hidden = x * in_map.transpose();
  grad.out_map.noalias() += dy.transpose() * hidden;
  const MatrixXd d_hidden = dy * out_map;
  grad.in_map.noalias() += d_hidden.transpose() * x;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

MatrixXd glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear make_linear(int out, int in, int rank, std::mt19937_64& rng) {
  Linear lin;
  if (rank == 0) {
    lin.in_map = glorot(out, in, rng);
  } else {
    lin.in_map = glorot(rank, in, rng);
    lin.out_map = glorot(out, rank, rng);
  }
  return lin;
}

}  // namespace

Params init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Params params;
  params.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerParams& p = params.layers[i];
    switch (l.kind) {
      case LayerKind::TdnnAffine:
      case LayerKind::FactorizedAffine:
      case LayerKind::Output:
        p.affine = make_linear(l.output_dim, l.input_dim, l.bottleneck_dim, rng);
        p.bias = VectorXd::Zero(l.output_dim);
        break;
      case LayerKind::Lstmp:
        p.gate = make_linear(4 * l.cell_dim, l.gate_input_dim(), l.gate_bottleneck_dim, rng);
        p.gate_bias = VectorXd::Zero(4 * l.cell_dim);
        p.peephole = VectorXd::Zero(3 * l.cell_dim);
        p.projection = make_linear(l.output_dim, l.cell_dim, l.projection_bottleneck_dim, rng);
        break;
      case LayerKind::Relu:
        break;
    }
  }
  return params;
}

Params zeros_like(const Params& params) {
  Params z = params;
  for_each_tensor(z, [](std::span<double> t, bool) { std::fill(t.begin(), t.end(), 0.0); });
  return z;
}

namespace {

void expect_shape(const MatrixXd& m, Eigen::Index rows, Eigen::Index cols, const LayerSpec& l, std::size_t i,
                  const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream msg;
    msg << what << " is " << m.rows() << "x" << m.cols() << ", expected " << rows << "x" << cols;
    bad_layer(l, i, msg.str());
  }
  if (!all_finite(m)) bad_layer(l, i, std::string(what) + " has non-finite entries");
}

void expect_linear(const Linear& lin, int out, int in, int rank, const LayerSpec& l, std::size_t i,
                   const char* what) {
  if (rank == 0) {
    if (lin.factorized()) bad_layer(l, i, std::string(what) + " is factorized but the spec is dense");
    expect_shape(lin.in_map, out, in, l, i, what);
  } else {
    if (!lin.factorized()) bad_layer(l, i, std::string(what) + " is dense but the spec is factorized");
    expect_shape(lin.in_map, rank, in, l, i, what);
    expect_shape(lin.out_map, out, rank, l, i, what);
  }
}

void expect_vector(const VectorXd& v, Eigen::Index size, const LayerSpec& l, std::size_t i, const char* what) {
  expect_shape(MatrixXd(v), size, 1, l, i, what);
}

}  // namespace

void check_params(const Params& params, const NetworkSpec& spec) {
  spec.validate();
  if (params.layers.size() != spec.layers.size()) {
    throw InvalidInput("params have " + std::to_string(params.layers.size()) + " layers, spec has " +
                       std::to_string(spec.layers.size()));
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerParams& p = params.layers[i];
    switch (l.kind) {
      case LayerKind::TdnnAffine:
      case LayerKind::FactorizedAffine:
      case LayerKind::Output:
        expect_linear(p.affine, l.output_dim, l.input_dim, l.bottleneck_dim, l, i, "affine");
        expect_vector(p.bias, l.output_dim, l, i, "bias");
        break;
      case LayerKind::Lstmp:
        expect_linear(p.gate, 4 * l.cell_dim, l.gate_input_dim(), l.gate_bottleneck_dim, l, i, "gate");
        expect_vector(p.gate_bias, 4 * l.cell_dim, l, i, "gate bias");
        expect_vector(p.peephole, 3 * l.cell_dim, l, i, "peephole");
        expect_linear(p.projection, l.output_dim, l.cell_dim, l.projection_bottleneck_dim, l, i, "projection");
        break;
      case LayerKind::Relu:
        break;
    }
  }
}

// ---------------------------------------------------------------------------
// Counting

namespace {

std::size_t linear_size(std::size_t out, std::size_t in, std::size_t rank) {
  return rank == 0 ? out * in : rank * (out + in);
}

}  // namespace

std::size_t layer_param_count(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::TdnnAffine:
    case LayerKind::FactorizedAffine:
    case LayerKind::Output:
      return linear_size(l.output_dim, l.input_dim, l.bottleneck_dim) + l.output_dim;
    case LayerKind::Lstmp:
      return linear_size(4 * l.cell_dim, l.gate_input_dim(), l.gate_bottleneck_dim) + 4 * l.cell_dim +
             3 * l.cell_dim + linear_size(l.output_dim, l.cell_dim, l.projection_bottleneck_dim);
    case LayerKind::Relu:
      break;
  }
  return 0;
}

std::size_t layer_flop_count(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::TdnnAffine:
    case LayerKind::FactorizedAffine:
    case LayerKind::Output:
      return linear_size(l.output_dim, l.input_dim, l.bottleneck_dim);
    case LayerKind::Lstmp:
      return linear_size(4 * l.cell_dim, l.gate_input_dim(), l.gate_bottleneck_dim) +
             linear_size(l.output_dim, l.cell_dim, l.projection_bottleneck_dim) + 3 * l.cell_dim;
    case LayerKind::Relu:
      break;
  }
  return 0;
}

std::size_t param_count(const NetworkSpec& spec) {
  std::size_t total = 0;
  for (const auto& l : spec.layers) total += layer_param_count(l);
  return total;
}

std::size_t flop_count(const NetworkSpec& spec) {
  std::size_t total = 0;
  for (const auto& l : spec.layers) total += layer_flop_count(l);
  return total;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

MatrixXd splice_rows(const MatrixXd& x, const SpliceSpec& splice) {
  const Eigen::Index rows = x.rows() - splice.left_context() - splice.right_context();
  const Eigen::Index width = x.cols();
  MatrixXd out(rows, width * splice.size());
  for (int j = 0; j < splice.size(); ++j) {
    out.middleCols(j * width, width) = x.middleRows(splice.left_context() + splice.offsets[j], rows);
  }
  return out;
}

void unsplice_add(const MatrixXd& d_spliced, const SpliceSpec& splice, MatrixXd& dx) {
  const Eigen::Index rows = d_spliced.rows();
  const Eigen::Index width = dx.cols();
  for (int j = 0; j < splice.size(); ++j) {
    dx.middleRows(splice.left_context() + splice.offsets[j], rows) += d_spliced.middleCols(j * width, width);
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmCache {
  MatrixXd hidden;  // gate pre-activation before out_map (== z minus bias when dense)
  MatrixXd in_gate, forget_gate, cell_input, out_gate;
  MatrixXd cell, tanh_cell, cell_output;
  MatrixXd output;
};

struct LayerCache {
  MatrixXd input;  // spliced input for affine kinds, raw input otherwise
  MatrixXd output;
  LstmCache lstm;
};

MatrixXd lstm_forward(const LayerSpec& l, const LayerParams& p, const MatrixXd& x, LstmCache* cache) {
  const Eigen::Index steps = x.rows();
  const int c_dim = l.cell_dim, r_dim = l.rec_proj_dim, i_dim = l.input_dim;
  const Linear& gate = p.gate;
  const MatrixXd hidden_x = x * gate.in_map.leftCols(i_dim).transpose();
  const auto rec_map = gate.in_map.rightCols(r_dim);
  const RowVectorXd bias = p.gate_bias.transpose();
  const Eigen::ArrayXXd peep_i = p.peephole.segment(0, c_dim).transpose().array();
  const Eigen::ArrayXXd peep_f = p.peephole.segment(c_dim, c_dim).transpose().array();
  const Eigen::ArrayXXd peep_o = p.peephole.segment(2 * c_dim, c_dim).transpose().array();

  MatrixXd out(steps, l.output_dim);
  if (cache) {
    cache->hidden.resize(steps, gate.rank());
    for (MatrixXd* m : {&cache->in_gate, &cache->forget_gate, &cache->cell_input, &cache->out_gate, &cache->cell,
                        &cache->tanh_cell, &cache->cell_output}) {
      m->resize(steps, c_dim);
    }
  }
  RowVectorXd c_prev = RowVectorXd::Zero(c_dim);
  RowVectorXd r_prev = RowVectorXd::Zero(r_dim);
  for (Eigen::Index t = 0; t < steps; ++t) {
    RowVectorXd h = hidden_x.row(t);
    h.noalias() += r_prev * rec_map.transpose();
    RowVectorXd z = gate.factorized() ? RowVectorXd(h * gate.out_map.transpose()) : h;
    z += bias;
    Eigen::ArrayXXd ig = (z.segment(0, c_dim).array() + peep_i * c_prev.array()).unaryExpr(&sigmoid);
    Eigen::ArrayXXd fg = (z.segment(c_dim, c_dim).array() + peep_f * c_prev.array()).unaryExpr(&sigmoid);
    Eigen::ArrayXXd gg = z.segment(2 * c_dim, c_dim).array().tanh();
    RowVectorXd c = (fg * c_prev.array() + ig * gg).matrix();
    Eigen::ArrayXXd og = (z.segment(3 * c_dim, c_dim).array() + peep_o * c.array()).unaryExpr(&sigmoid);
    Eigen::ArrayXXd tc = c.array().tanh();
    RowVectorXd m = (og * tc).matrix();
    RowVectorXd proj = p.projection.apply(m);
    out.row(t) = proj;
    if (cache) {
      cache->hidden.row(t) = h;
      cache->in_gate.row(t) = ig.matrix();
      cache->forget_gate.row(t) = fg.matrix();
      cache->cell_input.row(t) = gg.matrix();
      cache->out_gate.row(t) = og.matrix();
      cache->cell.row(t) = c;
      cache->tanh_cell.row(t) = tc.matrix();
      cache->cell_output.row(t) = m;
    }
    r_prev = proj.head(r_dim);
    c_prev = std::move(c);
  }
  if (cache) cache->output = out;
  return out;
}

MatrixXd lstm_backward(const LayerSpec& l, const LayerParams& p, const MatrixXd& x, const LstmCache& cache,
                       const MatrixXd& d_out, LayerParams& g) {
  const Eigen::Index steps = x.rows();
  const int c_dim = l.cell_dim, r_dim = l.rec_proj_dim, i_dim = l.input_dim;
  const Linear& gate = p.gate;
  const auto rec_map = gate.in_map.rightCols(r_dim);
  const Eigen::ArrayXXd peep_i = p.peephole.segment(0, c_dim).transpose().array();
  const Eigen::ArrayXXd peep_f = p.peephole.segment(c_dim, c_dim).transpose().array();
  const Eigen::ArrayXXd peep_o = p.peephole.segment(2 * c_dim, c_dim).transpose().array();

  MatrixXd d_gates(steps, 4 * c_dim);
  MatrixXd d_hidden(steps, gate.rank());
  MatrixXd d_proj(steps, l.output_dim);
  RowVectorXd d_peep = RowVectorXd::Zero(3 * c_dim);
  RowVectorXd dr_next = RowVectorXd::Zero(r_dim);
  Eigen::ArrayXXd dc_next = Eigen::ArrayXXd::Zero(1, c_dim);
  const Eigen::ArrayXXd zero_cell = Eigen::ArrayXXd::Zero(1, c_dim);

  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    RowVectorXd dp = d_out.row(t);
    dp.head(r_dim) += dr_next;
    d_proj.row(t) = dp;
    const Eigen::ArrayXXd dm = p.projection.apply_transpose(dp).array();

    const Eigen::ArrayXXd ig = cache.in_gate.row(t).array();
    const Eigen::ArrayXXd fg = cache.forget_gate.row(t).array();
    const Eigen::ArrayXXd gg = cache.cell_input.row(t).array();
    const Eigen::ArrayXXd og = cache.out_gate.row(t).array();
    const Eigen::ArrayXXd c = cache.cell.row(t).array();
    const Eigen::ArrayXXd tc = cache.tanh_cell.row(t).array();
    const Eigen::ArrayXXd c_prev = t > 0 ? Eigen::ArrayXXd(cache.cell.row(t - 1).array()) : zero_cell;

    const Eigen::ArrayXXd dz_o = dm * tc * og * (1.0 - og);
    Eigen::ArrayXXd dc = dc_next + dm * og * (1.0 - tc * tc) + dz_o * peep_o;
    const Eigen::ArrayXXd dz_i = dc * gg * ig * (1.0 - ig);
    const Eigen::ArrayXXd dz_f = dc * c_prev * fg * (1.0 - fg);
    const Eigen::ArrayXXd dz_g = dc * ig * (1.0 - gg * gg);

    d_peep.segment(0, c_dim).array() += dz_i * c_prev;
    d_peep.segment(c_dim, c_dim).array() += dz_f * c_prev;
    d_peep.segment(2 * c_dim, c_dim).array() += dz_o * c;
    dc_next = dc * fg + dz_i * peep_i + dz_f * peep_f;

    RowVectorXd dz(4 * c_dim);
    dz << dz_i.matrix(), dz_f.matrix(), dz_g.matrix(), dz_o.matrix();
    d_gates.row(t) = dz;
    RowVectorXd dh = gate.factorized() ? RowVectorXd(dz * gate.out_map) : dz;
    d_hidden.row(t) = dh;
    dr_next = dh * rec_map;
  }

  g.gate_bias += d_gates.colwise().sum().transpose();
  g.peephole += d_peep.transpose();
  if (gate.factorized()) g.gate.out_map.noalias() += d_gates.transpose() * cache.hidden;
  MatrixXd gate_input(steps, l.gate_input_dim());
  gate_input.leftCols(i_dim) = x;
  gate_input.rightCols(r_dim).setZero();
  if (steps > 1) gate_input.bottomRightCorner(steps - 1, r_dim) = cache.output.topLeftCorner(steps - 1, r_dim);
  g.gate.in_map.noalias() += d_hidden.transpose() * gate_input;
  p.projection.accumulate_gradient(cache.cell_output, d_proj, g.projection);
  return d_hidden * gate.in_map.leftCols(i_dim);
}

MatrixXd log_softmax_rows(const MatrixXd& z) {
  MatrixXd out(z.rows(), z.cols());
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    const double peak = z.row(t).maxCoeff();
    const double lse = peak + std::log((z.row(t).array() - peak).exp().sum());
    out.row(t) = z.row(t).array() - lse;
  }
  return out;
}

void check_frames(const NetworkSpec& spec, const MatrixXd& frames) {
  if (frames.cols() != spec.feature_dim) {
    throw InvalidInput("forward: frames have " + std::to_string(frames.cols()) + " features, network expects " +
                       std::to_string(spec.feature_dim));
  }
  const int needed = spec.total_context() + 1;
  if (frames.rows() < needed) {
    std::ostringstream msg;
    msg << "forward: input has " << frames.rows() << " frames but the network needs at least " << needed
        << " (left context " << spec.left_context() << ", right context " << spec.right_context() << ")";
    throw InvalidInput(msg.str());
  }
  if (!all_finite(frames)) throw InvalidInput("forward: frames have non-finite entries");
}

MatrixXd run_forward(const Params& params, const NetworkSpec& spec, const MatrixXd& frames,
                     std::vector<LayerCache>* caches, std::size_t layer_count) {
  check_frames(spec, frames);
  if (params.layers.size() != spec.layers.size()) throw InvalidInput("forward: params do not match spec");
  if (caches) caches->assign(spec.layers.size(), {});
  MatrixXd act = frames;
  for (std::size_t i = 0; i < std::min(layer_count, spec.layers.size()); ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerParams& p = params.layers[i];
    LayerCache* cache = caches ? &(*caches)[i] : nullptr;
    MatrixXd next;
    switch (l.kind) {
      case LayerKind::TdnnAffine:
      case LayerKind::FactorizedAffine: {
        MatrixXd spliced = splice_rows(act, l.splice);
        next = p.affine.apply(spliced);
        next.rowwise() += p.bias.transpose();
        if (cache) cache->input = std::move(spliced);
        break;
      }
      case LayerKind::Relu:
        next = act.cwiseMax(0.0);
        if (cache) cache->input = act;
        break;
      case LayerKind::Lstmp:
        next = lstm_forward(l, p, act, cache ? &cache->lstm : nullptr);
        if (cache) cache->input = act;
        break;
      case LayerKind::Output: {
        MatrixXd logits = p.affine.apply(act);
        logits.rowwise() += p.bias.transpose();
        next = log_softmax_rows(logits);
        if (cache) cache->input = act;
        break;
      }
    }
    if (cache) cache->output = next;
    act = std::move(next);
  }
  return act;
}

void check_targets(const NetworkSpec& spec, Eigen::Index out_frames, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != out_frames) {
    throw InvalidInput("backward: " + std::to_string(targets.size()) + " targets for " + std::to_string(out_frames) +
                       " output frames");
  }
  for (int t : targets) {
    if (t < 0 || t >= spec.num_targets) {
      throw InvalidInput("backward: target index " + std::to_string(t) + " outside [0, " +
                         std::to_string(spec.num_targets) + ")");
    }
  }
}

// Adds scale * d(sum of frame losses) to grad; returns the summed loss.
double accumulate_sequence(const Params& params, const NetworkSpec& spec, const MatrixXd& frames,
                           std::span<const int> targets, double scale, Params& grad) {
  std::vector<LayerCache> caches;
  const MatrixXd logp = run_forward(params, spec, frames, &caches, spec.layers.size());
  check_targets(spec, logp.rows(), targets);

  double loss = 0.0;
  MatrixXd delta = logp.array().exp().matrix();
  for (Eigen::Index t = 0; t < logp.rows(); ++t) {
    loss -= logp(t, targets[static_cast<std::size_t>(t)]);
    delta(t, targets[static_cast<std::size_t>(t)]) -= 1.0;
  }
  delta *= scale;

  for (std::size_t ii = spec.layers.size(); ii-- > 0;) {
    const LayerSpec& l = spec.layers[ii];
    const LayerParams& p = params.layers[ii];
    LayerParams& g = grad.layers[ii];
    const LayerCache& cache = caches[ii];
    MatrixXd d_in;
    switch (l.kind) {
      case LayerKind::Output:
      case LayerKind::TdnnAffine:
      case LayerKind::FactorizedAffine: {
        g.bias += delta.colwise().sum().transpose();
        p.affine.accumulate_gradient(cache.input, delta, g.affine);
        if (ii == 0) return loss;
        MatrixXd d_spliced = p.affine.apply_transpose(delta);
        if (l.kind == LayerKind::Output) {
          d_in = std::move(d_spliced);
        } else {
          d_in = MatrixXd::Zero(d_spliced.rows() + l.splice.left_context() + l.splice.right_context(),
                                d_spliced.cols() / l.splice.size());
          unsplice_add(d_spliced, l.splice, d_in);
        }
        break;
      }
      case LayerKind::Relu:
        d_in = (cache.input.array() > 0.0).select(delta, 0.0);
        break;
      case LayerKind::Lstmp:
        d_in = lstm_backward(l, p, cache.input, cache.lstm, delta, g);
        break;
    }
    delta = std::move(d_in);
  }
  return loss;
}

}  // namespace

MatrixXd forward(const Params& params, const NetworkSpec& spec, const MatrixXd& frames) {
  return run_forward(params, spec, frames, nullptr, spec.layers.size());
}

MatrixXd forward_to(const Params& params, const NetworkSpec& spec, const MatrixXd& frames, std::size_t layer_count) {
  return run_forward(params, spec, frames, nullptr, layer_count);
}

double cross_entropy(const Params& params, const NetworkSpec& spec, const MatrixXd& frames,
                     std::span<const int> targets) {
  const MatrixXd logp = forward(params, spec, frames);
  check_targets(spec, logp.rows(), targets);
  double loss = 0.0;
  for (Eigen::Index t = 0; t < logp.rows(); ++t) loss -= logp(t, targets[static_cast<std::size_t>(t)]);
  return loss / static_cast<double>(logp.rows());
}

LossGradient backward(const Params& params, const NetworkSpec& spec, const MatrixXd& frames,
                      std::span<const int> targets) {
  const Sequence one{&frames, targets};
  return backward(params, spec, std::span<const Sequence>(&one, 1));
}

LossGradient backward(const Params& params, const NetworkSpec& spec, std::span<const Sequence> batch,
                      unsigned threads) {
  if (batch.empty()) throw InvalidInput("backward: empty batch");
  std::size_t total_frames = 0;
  for (const auto& s : batch) {
    if (s.frames == nullptr) throw InvalidInput("backward: null frames");
    check_frames(spec, *s.frames);
    total_frames += static_cast<std::size_t>(s.frames->rows() - spec.total_context());
  }
  LossGradient result;
  result.frames = total_frames;
  result.gradient = zeros_like(params);
  const double scale = 1.0 / static_cast<double>(total_frames);
  double loss = 0.0;
  if (batch.size() == 1) {
    loss = accumulate_sequence(params, spec, *batch[0].frames, batch[0].targets, scale, result.gradient);
  } else if (threads <= 1) {
    for (const auto& s : batch) {
      Params g = zeros_like(params);
      loss += accumulate_sequence(params, spec, *s.frames, s.targets, scale, g);
      axpy(1.0, g, result.gradient);
    }
  } else {
    const std::size_t n = batch.size();
    std::vector<Params> grads(n);
    std::vector<double> losses(n, 0.0);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          grads[i] = zeros_like(params);
          losses[i] = accumulate_sequence(params, spec, *batch[i].frames, batch[i].targets, scale, grads[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < n; ++i) {
      if (errors[i]) std::rethrow_exception(errors[i]);
      loss += losses[i];
      axpy(1.0, grads[i], result.gradient);
    }
  }
  result.loss = loss / static_cast<double>(total_frames);
  return result;
}

void axpy(double scale, const Params& b, Params& a) {
  std::vector<std::span<const double>> src;
  for_each_tensor(b, [&](std::span<const double> t, bool) { src.push_back(t); });
  std::size_t k = 0;
  for_each_tensor(a, [&](std::span<double> t, bool) {
    if (k >= src.size() || src[k].size() != t.size()) throw InvalidInput("axpy: parameter shapes differ");
    const auto& s = src[k++];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += scale * s[i];
  });
  if (k != src.size()) throw InvalidInput("axpy: parameter shapes differ");
}

double squared_norm(const Params& params) {
  double total = 0.0;
  for_each_tensor(params, [&](std::span<const double> t, bool) {
    for (double v : t) total += v * v;
  });
  return total;
}

}  // namespace rankshrink::nnet
