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

#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "rankshrink/compress.hpp"
#include "rankshrink/dataset.hpp"
#include "rankshrink/trainer.hpp"
#include "test_support.hpp"

using namespace rankshrink;
using namespace rankshrink::testing;

namespace {

data::SyntheticTask easy_task(std::uint64_t seed, double noise = 0.5) {
  data::TaskOptions o;
  o.mean_scale = 1.5;
  o.noise_scale = noise;
  o.min_segment = 3;
  o.max_segment = 6;
  return data::make_task(4, 6, seed, o);
}

nnet::NetworkSpec affine_net(int features, int targets, int hidden = 16) {
  nnet::NetworkSpec spec;
  spec.feature_dim = features;
  spec.num_targets = targets;
  spec.layers = {tdnn("TD1", {0}, features, hidden), relu(hidden), output(hidden, targets)};
  return spec;
}

// Multinomial logistic regression on raw frames, full-batch gradient descent.
double logistic_oracle_accuracy(const data::Dataset& d, int iterations) {
  const int S = d.task.num_symbols;
  const int F = d.task.feature_dim;
  MatrixXd x(static_cast<Eigen::Index>(d.total_frames()), F + 1);
  std::vector<int> y;
  Eigen::Index row = 0;
  for (const auto& u : d.utterances) {
    for (Eigen::Index t = 0; t < u.frames.rows(); ++t, ++row) {
      x.row(row) << u.frames.row(t), 1.0;
      y.push_back(u.labels[static_cast<std::size_t>(t)]);
    }
  }
  MatrixXd w = MatrixXd::Zero(F + 1, S);
  for (int it = 0; it < iterations; ++it) {
    MatrixXd z = x * w;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      z.row(r).array() -= z.row(r).maxCoeff();
      z.row(r) = z.row(r).array().exp().matrix();
      z.row(r) /= z.row(r).sum();
      z(r, y[static_cast<std::size_t>(r)]) -= 1.0;
    }
    w -= 0.5 / static_cast<double>(x.rows()) * (x.transpose() * z);
  }
  const MatrixXd z = x * w;
  int correct = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::Index best = 0;
    z.row(r).maxCoeff(&best);
    correct += best == y[static_cast<std::size_t>(r)];
  }
  return static_cast<double>(correct) / static_cast<double>(z.rows());
}

trainer::TrainConfig quick_config(int steps) {
  trainer::TrainConfig c;
  c.steps = steps;
  c.batch_size = 4;
  c.learning_rate = 0.1;
  c.eval_every = 25;
  c.eval_sequences = 8;
  return c;
}

}  // namespace

TEST_CASE("generate: noiseless task is separable by nearest mean") {
  data::TaskOptions o;
  o.noise_scale = 0.0;
  const auto task = data::make_task(5, 3, 4, o);
  const auto d = data::generate(task, 20, 50);
  for (const auto& u : d.utterances) {
    for (Eigen::Index t = 0; t < u.frames.rows(); ++t) {
      Eigen::Index best = 0;
      (task.means.rowwise() - u.frames.row(t)).rowwise().squaredNorm().minCoeff(&best);
      CHECK(best == u.labels[static_cast<std::size_t>(t)]);
    }
  }
}

TEST_CASE("generate: deterministic, streams independent, labels follow segments") {
  const auto task = data::standard_task(3);
  CHECK(task.num_symbols == 8);
  CHECK(task.feature_dim == 20);
  const auto a = data::generate(task, 10, 80);
  const auto b = data::generate(task, 10, 80);
  CHECK(a == b);
  CHECK_FALSE(a.utterances == data::generate(task, 10, 80, 1).utterances);
  CHECK(a.total_frames() == 800);
  for (const auto& u : a.utterances) {
    // zero-diagonal transitions: the label run-length collapse is the segment list
    CHECK(data::reference_symbols(u.labels, 0, 0) == u.symbols);
    std::size_t start = 0;
    for (std::size_t s = 0; s < u.symbols.size(); ++s) {
      std::size_t end = start;
      while (end < u.labels.size() && u.labels[end] == u.symbols[s]) ++end;
      const auto len = static_cast<int>(end - start);
      CHECK(len >= 1);
      CHECK(len <= task.max_segment);
      if (end < u.labels.size()) CHECK(len >= task.min_segment);
      start = end;
    }
    CHECK(start == u.labels.size());
  }
  CHECK(task.transitions.diagonal().isZero(0.0));
  CHECK((task.transitions.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("generate: symbol frequencies match the stationary distribution within 3 sigma") {
  const auto task = data::standard_task(11);
  const auto d = data::generate(task, 1, 100000);
  const auto& labels = d.utterances[0].labels;

  // Oracle: left eigenvector of P for eigenvalue 1.
  const Eigen::MatrixXd P = task.transitions;
  Eigen::EigenSolver<Eigen::MatrixXd> es(P.transpose());
  Eigen::Index one = 0;
  (es.eigenvalues().array() - 1.0).abs().minCoeff(&one);
  Eigen::VectorXd pi = es.eigenvectors().col(one).real();
  pi /= pi.sum();
  CHECK((pi - data::stationary_distribution(task.transitions)).cwiseAbs().maxCoeff() < 1e-10);

  // Asymptotic variance of a symbol's frame share: segment chain correlations
  // through the fundamental matrix Z, plus independent uniform lengths.
  const int S = task.num_symbols;
  const Eigen::MatrixXd Z =
      (Eigen::MatrixXd::Identity(S, S) - P + Eigen::VectorXd::Ones(S) * pi.transpose()).inverse();
  double el = 0.0, el2 = 0.0;
  for (int l = task.min_segment; l <= task.max_segment; ++l) {
    el += l;
    el2 += static_cast<double>(l) * l;
  }
  el /= task.max_segment - task.min_segment + 1;
  el2 /= task.max_segment - task.min_segment + 1;
  const double segments = static_cast<double>(labels.size()) / el;

  for (int i = 0; i < S; ++i) {
    Eigen::VectorXd f = -pi(i) * Eigen::VectorXd::Ones(S);
    f(i) += 1.0;
    const double var_f = 2.0 * (pi.array() * f.array() * (Z * f).array()).sum() - (pi.array() * f.array().square()).sum();
    const double iid = pi(i) * (1.0 - pi(i));
    const double per_segment = el2 * iid + el * el * (var_f - iid);
    const double sigma = std::sqrt(per_segment / segments) / el;
    const double share =
        static_cast<double>(std::count(labels.begin(), labels.end(), i)) / static_cast<double>(labels.size());
    CHECK(std::abs(share - pi(i)) <= 3.0 * sigma);
  }
}

TEST_CASE("task validation") {
  auto t = data::standard_task(1);
  t.transitions(0, 1) += 1e-9;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = data::standard_task(1);
  t.min_segment = 0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = data::standard_task(1);
  t.variances(2) = 0.0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  CHECK_THROWS_AS(data::generate(data::standard_task(1), 1, 0), InvalidInput);
  const std::vector<int> labels{0, 0, 1};
  CHECK_THROWS_AS(data::output_targets(labels, 2, 1), InvalidInput);
  CHECK(data::reference_symbols(std::vector<int>{3, 3, 1, 1, 2, 2}, 1, 1) == std::vector<int>{3, 1, 2});
}

TEST_CASE("dataset files round-trip bit-exactly and reject damage") {
  const auto d = data::generate(data::standard_task(2), 3, 17, 5);
  const std::string bytes = data::serialize_dataset(d);
  CHECK(data::deserialize_dataset(bytes) == d);
  CHECK(bytes.substr(0, bytes.find('\n')).find("\"frames_per_sequence\":17") != std::string::npos);
  CHECK_THROWS_AS(data::deserialize_dataset(bytes.substr(0, bytes.size() - 3)), InvalidInput);
  CHECK_THROWS_AS(data::deserialize_dataset(bytes + "x"), InvalidInput);
  CHECK_THROWS_AS(data::deserialize_dataset("{}\n"), InvalidInput);
}

TEST_CASE("train: separable task beats 95% frame accuracy within 500 steps, like the logistic oracle") {
  const auto task = easy_task(21);
  const auto d = data::generate(task, 40, 40);
  const double oracle = logistic_oracle_accuracy(d, 300);
  CHECK(oracle > 0.95);
  const auto spec = affine_net(6, 4);
  const auto result = trainer::train(spec, quick_config(500), d);
  const double acc = trainer::frame_accuracy(result.params, spec, d);
  MESSAGE("oracle " << oracle << " trained " << acc);
  CHECK(acc > 0.95);
  CHECK(result.final_loss() <= result.initial_loss());
  CHECK(result.history.front().step == 0);
  CHECK(result.history.back().step == 500);
  CHECK(result.history.size() == 21);
}

TEST_CASE("train: zero learning rate and zero steps leave parameters untouched") {
  const auto d = data::generate(easy_task(22), 6, 30);
  const auto spec = affine_net(6, 4);
  auto config = quick_config(20);
  config.learning_rate = 0.0;
  const auto frozen = trainer::train(spec, config, d);
  CHECK(frozen.params == nnet::init_params(spec, config.seed));

  std::mt19937_64 rng(1);
  auto params = nnet::init_params(spec, 9);
  randomize_vectors(params, rng);
  const auto none = trainer::fine_tune(params, spec, quick_config(0), d);
  CHECK(none.params == params);
  CHECK(none.history.size() == 1);
}

TEST_CASE("train: deterministic, and sharded batches give identical parameters") {
  const auto d = data::generate(easy_task(23), 12, 30);
  const auto spec = toy_lstm_tdnn(6, 4, 10, 8, 3, 3);
  auto config = quick_config(15);
  const auto a = trainer::train(spec, config, d);
  const auto b = trainer::train(spec, config, d);
  CHECK(a.params == b.params);
  config.threads = 3;
  const auto c = trainer::train(spec, config, d);
  CHECK(a.params == c.params);
  config.seed = 2;
  CHECK_FALSE(trainer::train(spec, config, d).params == a.params);
}

TEST_CASE("property: clipping never leaves the norm above the clip value") {
  std::mt19937_64 rng(31);
  const auto spec = toy_lstm_tdnn(5, 4);
  std::uniform_real_distribution<double> log_scale(-3.0, 6.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto g = nnet::init_params(spec, static_cast<std::uint64_t>(trial));
    randomize_vectors(g, rng);
    const double s = std::pow(10.0, log_scale(rng));
    nnet::for_each_tensor(g, [&](std::span<double> t, bool) {
      for (double& v : t) v *= s;
    });
    const double clip = std::pow(10.0, log_scale(rng) / 2.0);
    const auto before = g;
    const double norm = trainer::clip_gradient(g, clip);
    CHECK(norm == doctest::Approx(std::sqrt(nnet::squared_norm(before))));
    CHECK(std::sqrt(nnet::squared_norm(g)) <= clip);
    if (norm <= clip) CHECK(g == before);
  }
  auto g = nnet::init_params(spec, 1);
  CHECK_THROWS_AS(trainer::clip_gradient(g, 0.0), InvalidInput);
}

TEST_CASE("train: initial loss is close to ln(num_symbols)") {
  const auto task = data::standard_task(5);
  const auto d = data::generate(task, 16, 120);
  nnet::PresetDims dims{32, 32, 8, 8};
  for (const char* preset : {"baseline", "svd-default"}) {
    const auto spec = nnet::build_preset(preset, 20, 8, dims);
    const double loss = trainer::dataset_loss(nnet::init_params(spec, 1), spec, d);
    MESSAGE(std::string(preset) << " initial loss " << loss);
    CHECK(std::abs(loss - std::log(8.0)) <= 0.1 * std::log(8.0));
  }
}

TEST_CASE("train: divergence raises a failure carrying a finite checkpoint") {
  const auto d = data::generate(easy_task(24), 8, 30);
  const auto spec = affine_net(6, 4);
  auto config = quick_config(200);
  config.learning_rate = 1e6;
  config.clip_norm = 1e6;
  config.momentum = 0.0;
  config.eval_every = 1;
  try {
    trainer::train(spec, config, d);
    FAIL("expected divergence");
  } catch (const trainer::TrainingFailure& e) {
    CHECK(e.step() >= 1);
    nnet::check_params(e.checkpoint(), spec);
    CHECK(std::isfinite(trainer::dataset_loss(e.checkpoint(), spec, d, config.eval_sequences)));
    CHECK(e.history().size() >= 2);
  }
}

TEST_CASE("train: rejects mismatched inputs") {
  const auto d = data::generate(easy_task(25), 4, 30);
  CHECK_THROWS_AS(trainer::train(affine_net(5, 4), quick_config(1), d), InvalidInput);
  CHECK_THROWS_AS(trainer::train(affine_net(6, 3), quick_config(1), d), InvalidInput);
  auto config = quick_config(1);
  config.clip_norm = INFINITY;
  CHECK_THROWS_AS(trainer::train(affine_net(6, 4), config, d), InvalidInput);
  const auto deep = nnet::build_preset("baseline", 6, 4, {8, 8, 2, 2});
  CHECK_THROWS_AS(trainer::train(deep, quick_config(1), d), InvalidInput);
}

TEST_CASE("fine-tune: lossless compression keeps the loss; 0.9-energy compression recovers accuracy") {
  const auto task = easy_task(26, 2.5);
  const auto d = data::generate(task, 40, 60);
  const auto spec = toy_lstm_tdnn(6, 4, 24, 16, 6, 6);
  auto config = quick_config(800);
  config.weight_decay = 1e-3;
  const auto trained = trainer::train(spec, config, d);
  const double acc = trainer::frame_accuracy(trained.params, spec, d);

  compress::SvdPolicy lossless;
  lossless.energy_threshold = 1.0;
  lossless.shrinkage_threshold = 2.0;
  const auto same = compress::compress_network(trained.params, spec, lossless);
  const auto tuned_same = trainer::fine_tune(same.params, same.spec, quick_config(0), d);
  CHECK(std::abs(tuned_same.initial_loss() - trainer::dataset_loss(trained.params, spec, d, 8)) < 1e-6);

  compress::SvdPolicy lossy;
  lossy.energy_threshold = 0.9;
  lossy.shrinkage_threshold = 2.0;
  const auto small = compress::compress_network(trained.params, spec, lossy);
  const double compressed_acc = trainer::frame_accuracy(small.params, small.spec, d);
  auto ft = quick_config(300);
  ft.learning_rate = 0.02;
  const auto tuned = trainer::fine_tune(small.params, small.spec, ft, d);
  const double tuned_acc = trainer::frame_accuracy(tuned.params, small.spec, d);
  MESSAGE("trained " << acc << " compressed " << compressed_acc << " fine-tuned " << tuned_acc);
  CHECK(tuned_acc >= acc - 0.02);
}

TEST_CASE("stability harness records both architectures") {
  const auto d = data::generate(data::standard_task(7), 12, 70);
  nnet::PresetDims dims{16, 16, 4, 4};
  const auto interleaved = nnet::build_preset("svd-default", 20, 8, dims);
  nnet::NetworkSpec pure;
  pure.feature_dim = 20;
  pure.num_targets = 8;
  for (const auto& l : interleaved.layers) {
    if (l.kind == nnet::LayerKind::Lstmp) continue;
    pure.layers.push_back(l);
  }
  // Removing the LSTMs changes the input widths of the following layers.
  int width = 20;
  for (auto& l : pure.layers) {
    if (l.kind == nnet::LayerKind::FactorizedAffine || l.kind == nnet::LayerKind::Output) {
      l.input_dim = l.splice.size() * width;
    } else if (l.kind == nnet::LayerKind::Relu) {
      l.input_dim = l.output_dim = width;
    }
    if (l.kind != nnet::LayerKind::Relu) width = l.output_dim;
  }
  pure.validate();
  auto config = quick_config(20);
  config.eval_every = 5;
  const auto records = trainer::stability_comparison({{"tdnn-svd", pure}, {"lstm-tdnn-svd", interleaved}}, config, d);
  REQUIRE(records.size() == 2);
  for (const auto& r : records) {
    CHECK(r.history.size() >= 2);
    if (!r.diverged) CHECK(r.history.back().step == 20);
    MESSAGE(r.label << " diverged=" << r.diverged << " plateaued=" << r.plateaued);
  }
}
