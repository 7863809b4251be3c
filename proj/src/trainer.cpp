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


#include "rankshrink/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rankshrink/errors.hpp"

namespace rankshrink::trainer {

namespace {

void check_compatible(const nnet::NetworkSpec& spec, const data::Dataset& dataset) {
  spec.validate();
  if (spec.feature_dim != dataset.task.feature_dim) {
    throw InvalidInput("train: spec feature_dim " + std::to_string(spec.feature_dim) + " != dataset feature_dim " +
                       std::to_string(dataset.task.feature_dim));
  }
  if (spec.num_targets != dataset.task.num_symbols) {
    throw InvalidInput("train: spec num_targets " + std::to_string(spec.num_targets) + " != dataset num_symbols " +
                       std::to_string(dataset.task.num_symbols));
  }
  if (dataset.utterances.empty()) throw InvalidInput("train: empty dataset");
  for (const auto& u : dataset.utterances) {
    if (u.frames.rows() <= spec.total_context()) {
      throw InvalidInput("train: utterance of " + std::to_string(u.frames.rows()) +
                         " frames does not cover the network context " + std::to_string(spec.total_context()));
    }
  }
}

void scale(nnet::Params& p, double s) {
  nnet::for_each_tensor(p, [&](std::span<double> t, bool) {
    for (double& v : t) v *= s;
  });
}

bool finite(const nnet::Params& p) {
  bool ok = true;
  nnet::for_each_tensor(p, [&](std::span<const double> t, bool) {
    for (double v : t) ok = ok && std::isfinite(v);
  });
  return ok;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 0) throw InvalidInput("train config: steps must be >= 0");
  if (batch_size <= 0) throw InvalidInput("train config: batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidInput("train config: learning_rate must be finite and >= 0");
  }
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
    throw InvalidInput("train config: final_lr_fraction must be in (0, 1]");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("train config: momentum must be in [0, 1)");
  if (!(clip_norm > 0.0) || !std::isfinite(clip_norm)) throw InvalidInput("train config: clip_norm must be finite and > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw InvalidInput("train config: weight_decay must be >= 0");
  if (eval_every <= 0) throw InvalidInput("train config: eval_every must be positive");
  if (threads == 0) throw InvalidInput("train config: threads must be positive");
}

double clip_gradient(nnet::Params& gradient, double clip_norm) {
  if (!(clip_norm > 0.0) || !std::isfinite(clip_norm)) throw InvalidInput("clip_gradient: clip_norm must be > 0");
  const double norm = std::sqrt(nnet::squared_norm(gradient));
  if (!std::isfinite(norm)) throw NumericalFailure("clip_gradient: non-finite gradient norm", norm);
  if (norm <= clip_norm) return norm;
  const nnet::Params original = gradient;
  double s = clip_norm / norm;
  for (;;) {
    gradient = original;
    scale(gradient, s);
    if (std::sqrt(nnet::squared_norm(gradient)) <= clip_norm) break;
    s = std::nextafter(s, 0.0);
  }
  return norm;
}

double dataset_loss(const nnet::Params& params, const nnet::NetworkSpec& spec, const data::Dataset& dataset,
                    int sequences) {
  const std::size_t n = sequences <= 0 ? dataset.utterances.size()
                                       : std::min(dataset.utterances.size(), static_cast<std::size_t>(sequences));
  if (n == 0) throw InvalidInput("dataset_loss: empty dataset");
  const int left = spec.left_context();
  const int right = spec.right_context();
  double total = 0.0;
  std::size_t frames = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = dataset.utterances[i];
    const auto targets = data::output_targets(u.labels, left, right);
    total += nnet::cross_entropy(params, spec, u.frames, targets) * static_cast<double>(targets.size());
    frames += targets.size();
  }
  return total / static_cast<double>(frames);
}

double frame_accuracy(const nnet::Params& params, const nnet::NetworkSpec& spec, const data::Dataset& dataset) {
  if (dataset.utterances.empty()) throw InvalidInput("frame_accuracy: empty dataset");
  const int left = spec.left_context();
  const int right = spec.right_context();
  std::size_t correct = 0;
  std::size_t frames = 0;
  for (const auto& u : dataset.utterances) {
    const MatrixXd logp = nnet::forward(params, spec, u.frames);
    const auto targets = data::output_targets(u.labels, left, right);
    for (Eigen::Index t = 0; t < logp.rows(); ++t) {
      Eigen::Index best = 0;
      logp.row(t).maxCoeff(&best);
      correct += best == targets[static_cast<std::size_t>(t)];
    }
    frames += targets.size();
  }
  return static_cast<double>(correct) / static_cast<double>(frames);
}

TrainResult train(const nnet::NetworkSpec& spec, const TrainConfig& config, const data::Dataset& dataset) {
  spec.validate();
  return fine_tune(nnet::init_params(spec, config.seed), spec, config, dataset);
}

TrainResult fine_tune(const nnet::Params& params, const nnet::NetworkSpec& spec, const TrainConfig& config,
                      const data::Dataset& dataset) {
  config.validate();
  check_compatible(spec, dataset);
  nnet::check_params(params, spec);

  const int left = spec.left_context();
  const int right = spec.right_context();
  std::vector<std::span<const int>> targets;
  for (const auto& u : dataset.utterances) targets.push_back(data::output_targets(u.labels, left, right));

  TrainResult result;
  result.params = params;
  nnet::Params velocity = nnet::zeros_like(params);
  nnet::Params checkpoint = params;

  const double initial = dataset_loss(params, spec, dataset, config.eval_sequences);
  if (!std::isfinite(initial)) {
    throw TrainingFailure("train: initial loss is not finite", 0, params, {{0, initial}});
  }
  result.history.push_back({0, initial});
  int strikes = 0;

  auto evaluate = [&](int step) {
    const double loss = dataset_loss(result.params, spec, dataset, config.eval_sequences);
    result.history.push_back({step, loss});
    if (!std::isfinite(loss)) {
      throw TrainingFailure("train: evaluation loss became non-finite at step " + std::to_string(step), step,
                            checkpoint, result.history);
    }
    if (loss > 10.0 * initial) {
      if (++strikes >= 3) {
        throw TrainingFailure("train: loss above 10x its initial value for 3 consecutive evaluations at step " +
                                  std::to_string(step),
                              step, checkpoint, result.history);
      }
    } else {
      strikes = 0;
      checkpoint = result.params;
    }
  };

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(dataset.utterances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  std::vector<nnet::Sequence> batch;
  for (int step = 1; step <= config.steps; ++step) {
    batch.clear();
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      batch.push_back({&dataset.utterances[i].frames, targets[i]});
    }
    nnet::LossGradient lg = nnet::backward(result.params, spec, batch, config.threads);
    if (!std::isfinite(lg.loss) || !finite(lg.gradient)) {
      result.history.push_back({step, lg.loss});
      throw TrainingFailure("train: non-finite training loss at step " + std::to_string(step), step, checkpoint,
                            result.history);
    }
    if (config.weight_decay > 0.0) nnet::axpy(config.weight_decay, result.params, lg.gradient);
    clip_gradient(lg.gradient, config.clip_norm);

    const double progress = static_cast<double>(step - 1) / static_cast<double>(config.steps);
    const double lr = config.learning_rate * std::pow(config.final_lr_fraction, progress);
    scale(velocity, config.momentum);
    nnet::axpy(1.0, lg.gradient, velocity);
    nnet::axpy(-lr, velocity, result.params);

    if (step % config.eval_every == 0 || step == config.steps) evaluate(step);
  }
  return result;
}

std::vector<StabilityRecord> stability_comparison(const std::vector<std::pair<std::string, nnet::NetworkSpec>>& specs,
                                                  const TrainConfig& config, const data::Dataset& dataset) {
  std::vector<StabilityRecord> out;
  for (const auto& [label, spec] : specs) {
    StabilityRecord r;
    r.label = label;
    try {
      r.history = train(spec, config, dataset).history;
    } catch (const TrainingFailure& e) {
      r.diverged = true;
      r.divergence_step = e.step();
      r.history = e.history();
      r.message = e.what();
    }
    if (!r.diverged && r.history.size() >= 3) {
      const double mid = r.history[r.history.size() / 2].loss;
      r.plateaued = r.history.back().loss >= 0.99 * mid;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace rankshrink::trainer
