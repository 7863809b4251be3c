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


#ifndef RANKSHRINK_TRAINER_HPP
#define RANKSHRINK_TRAINER_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankshrink/dataset.hpp"
#include "rankshrink/nnet.hpp"

namespace rankshrink::trainer {

struct TrainConfig {
  int steps = 1000;
  int batch_size = 8;
  double learning_rate = 0.05;
  // Learning rate after the last step as a fraction of the initial one;
  // the schedule is lr * final_lr_fraction^(step / steps).
  double final_lr_fraction = 0.1;
  double momentum = 0.9;
  double clip_norm = 5.0;
  // L2 penalty coefficient, added to the gradient as weight_decay * w. Zero disables.
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  int eval_every = 50;
  // Utterances (taken from the start of the dataset) used for the loss history.
  int eval_sequences = 16;
  // Sequences of one batch processed concurrently; results do not depend on it.
  unsigned threads = 1;

  void validate() const;
};

struct LossPoint {
  int step = 0;
  double loss = 0.0;
};

struct TrainResult {
  nnet::Params params;
  std::vector<LossPoint> history;  // evaluation-subset loss, first entry at step 0
  double initial_loss() const { return history.front().loss; }
  double final_loss() const { return history.back().loss; }
};

/// Training diverged. Carries the parameters of the last evaluation whose
/// loss was finite and not flagged.
class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, int step, nnet::Params checkpoint, std::vector<LossPoint> history)
      : std::runtime_error(what), step_(step), checkpoint_(std::move(checkpoint)), history_(std::move(history)) {}
  int step() const { return step_; }
  const nnet::Params& checkpoint() const { return checkpoint_; }
  const std::vector<LossPoint>& history() const { return history_; }

 private:
  int step_;
  nnet::Params checkpoint_;
  std::vector<LossPoint> history_;
};

/// Scales the gradient so its global norm is at most clip_norm, exactly.
/// Returns the norm before clipping.
double clip_gradient(nnet::Params& gradient, double clip_norm);

/// From init_params(spec, config.seed).
TrainResult train(const nnet::NetworkSpec& spec, const TrainConfig& config, const data::Dataset& dataset);

/// Warm-started from params.
TrainResult fine_tune(const nnet::Params& params, const nnet::NetworkSpec& spec, const TrainConfig& config,
                      const data::Dataset& dataset);

/// Mean frame cross-entropy over the first `sequences` utterances (all if <= 0).
double dataset_loss(const nnet::Params& params, const nnet::NetworkSpec& spec, const data::Dataset& dataset,
                    int sequences = 0);

/// Fraction of output frames whose arg-max matches the label.
double frame_accuracy(const nnet::Params& params, const nnet::NetworkSpec& spec, const data::Dataset& dataset);

/// Outcome of one run in a stability comparison.
struct StabilityRecord {
  std::string label;
  bool diverged = false;
  int divergence_step = -1;
  // Final loss no lower than 99% of the loss at the midpoint evaluation.
  bool plateaued = false;
  std::vector<LossPoint> history;
  std::string message;
};

/// Trains each spec from scratch with the same data and config, recording
/// divergence and plateau events instead of throwing.
std::vector<StabilityRecord> stability_comparison(const std::vector<std::pair<std::string, nnet::NetworkSpec>>& specs,
                                                  const TrainConfig& config, const data::Dataset& dataset);

}  // namespace rankshrink::trainer

#endif  // RANKSHRINK_TRAINER_HPP
