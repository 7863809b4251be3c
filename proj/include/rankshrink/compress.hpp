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

#ifndef RANKSHRINK_COMPRESS_HPP
#define RANKSHRINK_COMPRESS_HPP

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rankshrink/model_io.hpp"
#include "rankshrink/nnet.hpp"

namespace rankshrink::compress {

enum class PruneMode {
  // keep the fewest leading singular values carrying energy_threshold of the total
  RetainedEnergy,
  // drop trailing singular values, smallest first, while the dropped set
  // carries at most (1 - energy_threshold) of the total
  PrunedEnergy,
};

std::string_view to_string(PruneMode mode);
PruneMode prune_mode_from_string(std::string_view name);

struct SvdPolicy {
  double energy_threshold = 0.9;
  double shrinkage_threshold = 0.75;
  PruneMode prune_mode = PruneMode::RetainedEnergy;
  bool include_output_layer = false;

  void validate() const;
};

enum class MatrixRole { TdnnAffine, LstmGate, LstmProjection, Output };

std::string_view to_string(MatrixRole role);
MatrixRole matrix_role_from_string(std::string_view name);

struct MatrixRecord {
  std::string layer;
  int layer_index = 0;
  MatrixRole role = MatrixRole::TdnnAffine;
  int rows = 0;  // m, output width
  int cols = 0;  // n, input width
  int rank = 0;  // k chosen by energy pruning
  std::optional<double> energy_retained;  // absent for planned (not measured) ranks
  double shrinkage_ratio = 0.0;
  bool skipped = false;
  long long param_delta = 0;  // m n - k (m + n) when applied, else 0
  long long flop_delta = 0;
};

struct ReportTotals {
  long long params_before = 0;
  long long params_after = 0;
  long long param_delta = 0;
  long long flops_before = 0;
  long long flops_after = 0;
  long long flop_delta = 0;
  int matrices = 0;
  int skipped = 0;
};

struct CompressionReport {
  SvdPolicy policy;
  nnet::NetworkSpec source_spec;
  std::vector<MatrixRecord> records;  // network order; gate before projection inside a cell
  ReportTotals totals;
};

/// Number of leading singular values to keep. sigma must be non-increasing,
/// non-negative and not all zero. Always returns at least 1.
int energy_prune(std::span<const double> sigma, const SvdPolicy& policy);

/// k (m + n) / (m n): parameters of a rank-k factor pair relative to the dense matrix.
double shrinkage_ratio(long long m, long long n, long long k);

struct CompressionResult {
  nnet::Params params;
  nnet::NetworkSpec spec;
  CompressionReport report;
};

/// SVD-compresses every dense affine transform: TDNN affines, LSTM gate and
/// projection matrices, and the output affine when the policy asks for it.
/// A matrix whose pruned factorization would have a shrinkage ratio above the
/// policy's threshold is left untouched and reported as skipped. Biases and
/// peepholes are carried over unchanged. Per-matrix SVDs run on up to
/// `threads` threads; the result does not depend on the thread count.
CompressionResult compress_network(const nnet::Params& params, const nnet::NetworkSpec& spec, const SvdPolicy& policy,
                                   unsigned threads = 1);

struct PlannedRank {
  std::string layer;
  MatrixRole role;
  int rank;
};

/// A report for externally chosen ranks, without touching any weights.
CompressionReport plan_report(const nnet::NetworkSpec& spec, std::span<const PlannedRank> ranks,
                              const SvdPolicy& policy = {});

/// The factorized architecture at the report's ranks, for training from scratch.
nnet::NetworkSpec derive_bottleneck_spec(const nnet::NetworkSpec& spec, const CompressionReport& report);

/// Ranks of every reported matrix whose input width equals `input_dim`, in network order.
std::vector<int> rank_trend(const CompressionReport& report, int input_dim);

/// Rounds each rank to the nearest multiple (ties upward), never below `multiple`.
std::vector<int> round_dims(std::span<const int> ranks, int multiple);

Json report_to_json(const CompressionReport& report);
CompressionReport report_from_json(const Json& j);
void save_report(const std::filesystem::path& path, const CompressionReport& report);
CompressionReport load_report(const std::filesystem::path& path);

/// Fixed-width text table, one row per matrix plus a totals line.
std::string render_table(const CompressionReport& report);

}  // namespace rankshrink::compress

#endif  // RANKSHRINK_COMPRESS_HPP
