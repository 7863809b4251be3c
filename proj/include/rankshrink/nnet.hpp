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

#ifndef RANKSHRINK_NNET_HPP
#define RANKSHRINK_NNET_HPP

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rankshrink/linalg.hpp"

namespace rankshrink::nnet {

enum class LayerKind { TdnnAffine, Relu, Lstmp, FactorizedAffine, Output };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// Frame offsets concatenated to form a layer's input, e.g. (-3, 0, 3).
struct SpliceSpec {
  std::vector<int> offsets{0};
  // Offsets normally include 0; set this to allow e.g. (1, 2).
  bool zero_optional = false;

  int left_context() const;
  int right_context() const;
  int size() const { return static_cast<int>(offsets.size()); }
  void validate() const;

  friend bool operator==(const SpliceSpec&, const SpliceSpec&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::TdnnAffine;
  std::string name;
  // Affine kinds: spliced input width. Lstmp: per-frame input width, the
  // recurrent projection is appended on top. Relu: its width.
  int input_dim = 0;
  int output_dim = 0;
  SpliceSpec splice;  // TdnnAffine / FactorizedAffine only
  int cell_dim = 0;
  int rec_proj_dim = 0;
  int nonrec_proj_dim = 0;
  // Required for FactorizedAffine; optional (0 = dense) for Output.
  int bottleneck_dim = 0;
  // Lstmp low-rank variants, 0 = dense.
  int gate_bottleneck_dim = 0;
  int projection_bottleneck_dim = 0;

  int gate_input_dim() const { return input_dim + rec_proj_dim; }
  bool has_affine() const {
    return kind == LayerKind::TdnnAffine || kind == LayerKind::FactorizedAffine || kind == LayerKind::Output;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  int feature_dim = 0;
  std::vector<LayerSpec> layers;
  int num_targets = 0;

  /// Throws InvalidInput describing the first inconsistency found.
  void validate() const;
  int left_context() const;
  int right_context() const;
  int total_context() const { return left_context() + right_context(); }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Widths used by the named presets. Defaults are the full-size dimensions;
/// smaller values give desk-scale networks with the same topology.
struct PresetDims {
  int tdnn_dim = 1024;
  int cell_dim = 1024;
  int rec_proj_dim = 256;
  int nonrec_proj_dim = 256;
};

/// One of "baseline", "lstm-tdnn-1", "lstm-tdnn-2", "svd-default", "desk".
///
/// All presets stack TD1-TD3, LS1, TD4-TD5, LS2, TD6-TD7, LS3, TD8-TD9, LS4
/// and an output layer, with a ReLU after every TDNN affine. "svd-default"
/// uses the baseline splicing with factorized TDNN layers and low-rank LSTM
/// projections at the ranks observed after energy pruning of the full-size
/// model; with non-default dims those ranks are scaled proportionally.
/// "desk" keeps the interleaving at reduced depth (TD1-TD2, LS1, TD3-TD4,
/// LS2, output), which trains reliably in a few thousand steps.
NetworkSpec build_preset(std::string_view name, int feature_dim, int num_targets, const PresetDims& dims = {});

/// The dense (out x in) transform y = x W^T, or its low-rank form
/// y = (x B^T) A^T with B = in_map (k x in) and A = out_map (out x k).
struct Linear {
  MatrixXd in_map;
  MatrixXd out_map;  // empty when dense

  bool factorized() const { return out_map.size() != 0; }
  Eigen::Index rows() const { return factorized() ? out_map.rows() : in_map.rows(); }
  Eigen::Index cols() const { return in_map.cols(); }
  Eigen::Index rank() const { return in_map.rows(); }
  std::size_t param_count() const { return static_cast<std::size_t>(in_map.size() + out_map.size()); }

  MatrixXd dense() const { return factorized() ? MatrixXd(out_map * in_map) : in_map; }
  /// Rows of x are samples.
  MatrixXd apply(const MatrixXd& x) const;
  MatrixXd apply_transpose(const MatrixXd& dy) const;
  void accumulate_gradient(const MatrixXd& x, const MatrixXd& dy, Linear& grad) const;

  friend bool operator==(const Linear&, const Linear&) = default;
};

struct LayerParams {
  Linear affine;  // TdnnAffine, FactorizedAffine, Output
  VectorXd bias;
  Linear gate;  // Lstmp: 4C x (I + R), blocks ordered input, forget, cell, output
  VectorXd gate_bias;
  VectorXd peephole;  // 3C: input, forget, output
  Linear projection;  // (R + N) x C

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct Params {
  std::vector<LayerParams> layers;

  bool empty() const { return layers.empty(); }
  friend bool operator==(const Params&, const Params&) = default;
};

/// Calls f(std::span<double>, bool is_matrix) for every tensor, in a fixed order.
template <typename P, typename F>
  requires std::is_same_v<std::remove_const_t<P>, Params>
void for_each_tensor(P& params, F&& f) {
  auto visit = [&](auto& m, bool is_matrix) {
    if (m.size() > 0) f(std::span(m.data(), static_cast<std::size_t>(m.size())), is_matrix);
  };
  for (auto& layer : params.layers) {
    visit(layer.affine.in_map, true);
    visit(layer.affine.out_map, true);
    visit(layer.bias, false);
    visit(layer.gate.in_map, true);
    visit(layer.gate.out_map, true);
    visit(layer.gate_bias, false);
    visit(layer.peephole, false);
    visit(layer.projection.in_map, true);
    visit(layer.projection.out_map, true);
  }
}

/// Glorot-uniform matrices, zero biases and peepholes.
Params init_params(const NetworkSpec& spec, std::uint64_t seed);
Params zeros_like(const Params& params);
/// Throws InvalidInput if any tensor shape disagrees with the spec or any entry is non-finite.
void check_params(const Params& params, const NetworkSpec& spec);

std::size_t layer_param_count(const LayerSpec& layer);
/// Multiply-accumulates per frame: matrix products plus peephole products.
std::size_t layer_flop_count(const LayerSpec& layer);
std::size_t param_count(const NetworkSpec& spec);
/// Multiply-accumulates per output frame.
std::size_t flop_count(const NetworkSpec& spec);

/// Per-frame log-probabilities, (T - total_context) x num_targets.
MatrixXd forward(const Params& params, const NetworkSpec& spec, const MatrixXd& frames);
/// Activations after the first `layer_count` layers.
MatrixXd forward_to(const Params& params, const NetworkSpec& spec, const MatrixXd& frames, std::size_t layer_count);

struct Sequence {
  const MatrixXd* frames = nullptr;
  std::span<const int> targets;  // one per output frame
};

struct LossGradient {
  double loss = 0.0;        // mean cross-entropy per frame
  std::size_t frames = 0;
  Params gradient;
};

/// Mean frame cross-entropy and its gradient over one sequence.
LossGradient backward(const Params& params, const NetworkSpec& spec, const MatrixXd& frames,
                      std::span<const int> targets);
/// Same, with the mean taken over every output frame of the batch. With
/// threads > 1 sequences are processed concurrently; per-sequence gradients
/// are still summed in batch order, so the result does not depend on threads.
LossGradient backward(const Params& params, const NetworkSpec& spec, std::span<const Sequence> batch,
                      unsigned threads = 1);

/// Mean cross-entropy without gradients.
double cross_entropy(const Params& params, const NetworkSpec& spec, const MatrixXd& frames,
                     std::span<const int> targets);

/// Element-wise a += scale * b. Shapes must match.
void axpy(double scale, const Params& b, Params& a);
double squared_norm(const Params& params);

}  // namespace rankshrink::nnet

#endif  // RANKSHRINK_NNET_HPP
