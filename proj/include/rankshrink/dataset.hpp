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


#ifndef RANKSHRINK_DATASET_HPP
#define RANKSHRINK_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rankshrink/linalg.hpp"

namespace rankshrink::data {

/// A hidden Markov source over symbols. Each symbol holds for a uniformly
/// drawn number of frames; frames are the symbol's mean plus Gaussian noise.
struct SyntheticTask {
  int num_symbols = 0;
  int feature_dim = 0;
  MatrixXd means;        // num_symbols x feature_dim
  VectorXd variances;    // per symbol, isotropic
  MatrixXd transitions;  // row-stochastic, num_symbols x num_symbols
  int min_segment = 1;
  int max_segment = 1;
  double noise_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SyntheticTask&, const SyntheticTask&) = default;
};

struct TaskOptions {
  double mean_scale = 1.0;
  double noise_scale = 1.0;
  int min_segment = 4;
  int max_segment = 10;
};

/// Random means and variances, and a transition matrix with zero diagonal
/// (for num_symbols > 1) so consecutive segments always change symbol.
SyntheticTask make_task(int num_symbols, int feature_dim, std::uint64_t seed, const TaskOptions& options = {});

/// The task used throughout the desk benchmarks: 8 symbols, 20 features.
SyntheticTask standard_task(std::uint64_t seed = 1);

/// Stationary distribution by power iteration on the lazy chain (P + I) / 2.
VectorXd stationary_distribution(const MatrixXd& transitions);

struct Utterance {
  MatrixXd frames;           // T x feature_dim
  std::vector<int> labels;   // per frame
  std::vector<int> symbols;  // one per segment, in order
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Dataset {
  SyntheticTask task;
  int frames_per_sequence = 0;
  // Independent sample streams of one task, e.g. 0 for training, 1 for test.
  std::uint64_t stream = 0;
  std::vector<Utterance> utterances;

  std::size_t total_frames() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Deterministic in (task, num_sequences, frames_per_sequence, stream).
Dataset generate(const SyntheticTask& task, int num_sequences, int frames_per_sequence, std::uint64_t stream = 0);

/// labels[left, T - right): the targets aligned with a network's outputs.
std::span<const int> output_targets(const std::vector<int>& labels, int left_context, int right_context);

/// Run-length collapse of the output-window labels.
std::vector<int> reference_symbols(const std::vector<int>& labels, int left_context, int right_context);

/// One JSON header line, then per utterance: i32 T, i32 segments,
/// T * feature_dim f64 frames (row-major), T i32 labels, segments i32 symbols.
/// All binary values little-endian.
std::string serialize_dataset(const Dataset& dataset);
Dataset deserialize_dataset(const std::string& bytes);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace rankshrink::data

#endif  // RANKSHRINK_DATASET_HPP
