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


#include "rankshrink/dataset.hpp"

#include <cmath>
#include <random>

#include "rankshrink/errors.hpp"
#include "rankshrink/model_io.hpp"
#include "rankshrink/util.hpp"

namespace rankshrink::data {

namespace {

constexpr int kDatasetFormatVersion = 1;

Json matrix_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) throw InvalidInput("dataset: bad matrix rows");
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw InvalidInput("dataset: bad matrix cols");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Json task_to_json(const SyntheticTask& t) {
  Json j;
  j["num_symbols"] = t.num_symbols;
  j["feature_dim"] = t.feature_dim;
  j["min_segment"] = t.min_segment;
  j["max_segment"] = t.max_segment;
  j["noise_scale"] = t.noise_scale;
  j["seed"] = t.seed;
  j["means"] = matrix_json(t.means);
  j["variances"] = std::vector<double>(t.variances.begin(), t.variances.end());
  j["transitions"] = matrix_json(t.transitions);
  return j;
}

SyntheticTask task_from_json(const Json& j) {
  SyntheticTask t;
  t.num_symbols = j.at("num_symbols").get<int>();
  t.feature_dim = j.at("feature_dim").get<int>();
  t.min_segment = j.at("min_segment").get<int>();
  t.max_segment = j.at("max_segment").get<int>();
  t.noise_scale = j.at("noise_scale").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  if (t.num_symbols <= 0 || t.feature_dim <= 0) throw InvalidInput("dataset: non-positive task dims");
  t.means = matrix_from_json(j.at("means"), t.num_symbols, t.feature_dim);
  const auto v = j.at("variances").get<std::vector<double>>();
  t.variances = Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  t.transitions = matrix_from_json(j.at("transitions"), t.num_symbols, t.num_symbols);
  t.validate();
  return t;
}

int draw(std::mt19937_64& rng, const double* weights, int n) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // Rounding left u above the final partial sum: take the last positive weight.
  for (int i = n; i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return n - 1;
}

}  // namespace

void SyntheticTask::validate() const {
  if (num_symbols <= 0) throw InvalidInput("task: num_symbols must be positive");
  if (feature_dim <= 0) throw InvalidInput("task: feature_dim must be positive");
  if (means.rows() != num_symbols || means.cols() != feature_dim) throw InvalidInput("task: means shape");
  if (variances.size() != num_symbols) throw InvalidInput("task: variances size");
  if (transitions.rows() != num_symbols || transitions.cols() != num_symbols) {
    throw InvalidInput("task: transitions shape");
  }
  if (!all_finite(means) || !all_finite(variances)) throw InvalidInput("task: non-finite emission parameters");
  if ((variances.array() <= 0.0).any()) throw InvalidInput("task: variances must be positive");
  for (int i = 0; i < num_symbols; ++i) {
    if ((transitions.row(i).array() < 0.0).any() || !all_finite(transitions.row(i))) {
      throw InvalidInput("task: transition entries must be finite and non-negative");
    }
    if (std::abs(transitions.row(i).sum() - 1.0) > 1e-12) {
      throw InvalidInput("task: transition row " + std::to_string(i) + " does not sum to 1");
    }
  }
  if (min_segment < 1 || max_segment < min_segment) throw InvalidInput("task: need 1 <= min_segment <= max_segment");
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) throw InvalidInput("task: noise_scale must be >= 0");
}

SyntheticTask make_task(int num_symbols, int feature_dim, std::uint64_t seed, const TaskOptions& options) {
  if (num_symbols <= 0 || feature_dim <= 0) throw InvalidInput("make_task: dims must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> var(0.5, 1.5);
  std::uniform_real_distribution<double> weight(0.2, 1.0);

  SyntheticTask t;
  t.num_symbols = num_symbols;
  t.feature_dim = feature_dim;
  t.means.resize(num_symbols, feature_dim);
  for (Eigen::Index i = 0; i < t.means.size(); ++i) t.means.data()[i] = options.mean_scale * normal(rng);
  t.variances.resize(num_symbols);
  for (double& v : t.variances) v = var(rng);
  t.transitions = MatrixXd::Zero(num_symbols, num_symbols);
  for (int i = 0; i < num_symbols; ++i) {
    for (int j = 0; j < num_symbols; ++j) {
      if (i != j || num_symbols == 1) t.transitions(i, j) = weight(rng);
    }
    t.transitions.row(i) /= t.transitions.row(i).sum();
  }
  t.min_segment = options.min_segment;
  t.max_segment = options.max_segment;
  t.noise_scale = options.noise_scale;
  t.seed = seed;
  t.validate();
  return t;
}

SyntheticTask standard_task(std::uint64_t seed) {
  TaskOptions o;
  o.mean_scale = 0.35;
  o.noise_scale = 1.0;
  o.min_segment = 4;
  o.max_segment = 10;
  return make_task(8, 20, seed, o);
}

VectorXd stationary_distribution(const MatrixXd& transitions) {
  const Eigen::Index n = transitions.rows();
  if (n == 0 || transitions.cols() != n) throw InvalidInput("stationary_distribution: need a square matrix");
  const MatrixXd lazy = 0.5 * (transitions + MatrixXd::Identity(n, n));
  Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(n, 1.0 / static_cast<double>(n));
  for (int iter = 0; iter < 100000; ++iter) {
    Eigen::RowVectorXd next = pi * lazy;
    next /= next.sum();
    const double change = (next - pi).cwiseAbs().sum();
    pi = next;
    if (change < 1e-15) break;
  }
  return pi.transpose();
}

std::size_t Dataset::total_frames() const {
  std::size_t total = 0;
  for (const auto& u : utterances) total += static_cast<std::size_t>(u.frames.rows());
  return total;
}

Dataset generate(const SyntheticTask& task, int num_sequences, int frames_per_sequence, std::uint64_t stream) {
  task.validate();
  if (num_sequences < 0 || frames_per_sequence <= 0) {
    throw InvalidInput("generate: need num_sequences >= 0 and frames_per_sequence > 0");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(task.seed), static_cast<std::uint32_t>(task.seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> length(task.min_segment, task.max_segment);
  const VectorXd pi = stationary_distribution(task.transitions);
  const int S = task.num_symbols;
  const int F = task.feature_dim;

  Dataset d;
  d.task = task;
  d.frames_per_sequence = frames_per_sequence;
  d.stream = stream;
  d.utterances.reserve(static_cast<std::size_t>(num_sequences));
  for (int n = 0; n < num_sequences; ++n) {
    Utterance u;
    u.frames.resize(frames_per_sequence, F);
    u.labels.reserve(static_cast<std::size_t>(frames_per_sequence));
    int symbol = draw(rng, pi.data(), S);
    while (static_cast<int>(u.labels.size()) < frames_per_sequence) {
      if (!u.symbols.empty()) symbol = draw(rng, task.transitions.row(symbol).data(), S);
      u.symbols.push_back(symbol);
      const int len = std::min(length(rng), frames_per_sequence - static_cast<int>(u.labels.size()));
      const double sd = task.noise_scale * std::sqrt(task.variances(symbol));
      for (int k = 0; k < len; ++k) {
        const auto t = static_cast<Eigen::Index>(u.labels.size());
        for (int f = 0; f < F; ++f) u.frames(t, f) = task.means(symbol, f) + sd * normal(rng);
        u.labels.push_back(symbol);
      }
    }
    d.utterances.push_back(std::move(u));
  }
  return d;
}

std::span<const int> output_targets(const std::vector<int>& labels, int left_context, int right_context) {
  if (left_context < 0 || right_context < 0) throw InvalidInput("output_targets: negative context");
  const auto n = static_cast<long>(labels.size()) - left_context - right_context;
  if (n <= 0) throw InvalidInput("output_targets: utterance shorter than the network context");
  return std::span<const int>(labels).subspan(static_cast<std::size_t>(left_context), static_cast<std::size_t>(n));
}

std::vector<int> reference_symbols(const std::vector<int>& labels, int left_context, int right_context) {
  std::vector<int> out;
  for (int s : output_targets(labels, left_context, right_context)) {
    if (out.empty() || out.back() != s) out.push_back(s);
  }
  return out;
}

std::string serialize_dataset(const Dataset& d) {
  Json header;
  header["format"] = "rankshrink-dataset";
  header["format_version"] = kDatasetFormatVersion;
  header["task"] = task_to_json(d.task);
  header["sequences"] = d.utterances.size();
  header["frames_per_sequence"] = d.frames_per_sequence;
  header["stream"] = d.stream;
  std::string out = header.dump() + "\n";
  for (const auto& u : d.utterances) {
    if (u.frames.cols() != d.task.feature_dim || static_cast<std::size_t>(u.frames.rows()) != u.labels.size()) {
      throw InvalidInput("serialize_dataset: utterance shape disagrees with the task");
    }
    util::append_i32_le(out, static_cast<std::int32_t>(u.frames.rows()));
    util::append_i32_le(out, static_cast<std::int32_t>(u.symbols.size()));
    for (Eigen::Index i = 0; i < u.frames.size(); ++i) util::append_f64_le(out, u.frames.data()[i]);
    for (int l : u.labels) util::append_i32_le(out, l);
    for (int s : u.symbols) util::append_i32_le(out, s);
  }
  return out;
}

Dataset deserialize_dataset(const std::string& bytes) {
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos) throw InvalidInput("dataset: missing header line");
  Json header;
  try {
    header = Json::parse(bytes.substr(0, eol));
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("dataset: bad header: ") + e.what());
  }
  Dataset d;
  std::size_t count = 0;
  try {
    if (header.at("format") != "rankshrink-dataset") throw InvalidInput("dataset: unknown format");
    if (header.at("format_version").get<int>() != kDatasetFormatVersion) {
      throw InvalidInput("dataset: unsupported format_version");
    }
    d.task = task_from_json(header.at("task"));
    d.frames_per_sequence = header.at("frames_per_sequence").get<int>();
    d.stream = header.at("stream").get<std::uint64_t>();
    count = header.at("sequences").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("dataset: bad header: ") + e.what());
  }

  const std::string_view body(bytes.data() + eol + 1, bytes.size() - eol - 1);
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (body.size() - pos < n) throw InvalidInput("dataset: truncated utterance block");
  };
  const auto F = static_cast<std::size_t>(d.task.feature_dim);
  for (std::size_t n = 0; n < count; ++n) {
    need(8);
    const std::int32_t T = util::read_i32_le(body, pos);
    const std::int32_t segs = util::read_i32_le(body, pos + 4);
    pos += 8;
    if (T < 0 || segs < 0) throw InvalidInput("dataset: negative block size");
    const auto t = static_cast<std::size_t>(T);
    need(t * F * 8 + t * 4 + static_cast<std::size_t>(segs) * 4);
    Utterance u;
    u.frames.resize(T, d.task.feature_dim);
    for (std::size_t i = 0; i < t * F; ++i, pos += 8) u.frames.data()[i] = util::read_f64_le(body, pos);
    u.labels.resize(t);
    for (auto& l : u.labels) {
      l = util::read_i32_le(body, pos);
      pos += 4;
      if (l < 0 || l >= d.task.num_symbols) throw InvalidInput("dataset: label out of range");
    }
    u.symbols.resize(static_cast<std::size_t>(segs));
    for (auto& s : u.symbols) {
      s = util::read_i32_le(body, pos);
      pos += 4;
    }
    d.utterances.push_back(std::move(u));
  }
  if (pos != body.size()) throw InvalidInput("dataset: trailing bytes after the last block");
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  util::write_file(path, serialize_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(util::read_file(path)); }

}  // namespace rankshrink::data
