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

#include "rankshrink/compress.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <thread>

#include "rankshrink/linalg.hpp"
#include "rankshrink/util.hpp"

namespace rankshrink::compress {

using nnet::LayerKind;

std::string_view to_string(PruneMode mode) {
  return mode == PruneMode::RetainedEnergy ? "retained" : "pruned";
}

PruneMode prune_mode_from_string(std::string_view name) {
  if (name == "retained" || name == "retained-energy") return PruneMode::RetainedEnergy;
  if (name == "pruned" || name == "pruned-energy") return PruneMode::PrunedEnergy;
  throw InvalidInput("unknown prune mode '" + std::string(name) + "'");
}

void SvdPolicy::validate() const {
  if (!(energy_threshold > 0.0 && energy_threshold <= 1.0)) {
    throw InvalidInput("energy threshold must be in (0, 1]");
  }
  if (!(shrinkage_threshold > 0.0) || !std::isfinite(shrinkage_threshold)) {
    throw InvalidInput("shrinkage threshold must be positive and finite");
  }
}

std::string_view to_string(MatrixRole role) {
  switch (role) {
    case MatrixRole::TdnnAffine: return "tdnn-affine";
    case MatrixRole::LstmGate: return "lstm-gate";
    case MatrixRole::LstmProjection: return "lstm-projection";
    case MatrixRole::Output: return "output";
  }
  return "unknown";
}

MatrixRole matrix_role_from_string(std::string_view name) {
  for (MatrixRole r : {MatrixRole::TdnnAffine, MatrixRole::LstmGate, MatrixRole::LstmProjection, MatrixRole::Output}) {
    if (to_string(r) == name) return r;
  }
  throw InvalidInput("unknown matrix role '" + std::string(name) + "'");
}

int energy_prune(std::span<const double> sigma, const SvdPolicy& policy) {
  policy.validate();
  if (sigma.empty()) throw InvalidInput("energy_prune: empty singular values");
  bool any_positive = false;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] >= 0.0) || !std::isfinite(sigma[i])) throw InvalidInput("energy_prune: singular values must be finite and non-negative");
    if (i > 0 && sigma[i] > sigma[i - 1]) throw InvalidInput("energy_prune: singular values must be non-increasing");
    any_positive = any_positive || sigma[i] > 0.0;
  }
  if (!any_positive) throw InvalidInput("energy_prune: all singular values are zero");

  const int n = static_cast<int>(sigma.size());
  // Full retention keeps every nonzero value, including ones whose square is
  // lost when added to the total.
  if (policy.energy_threshold == 1.0) {
    return static_cast<int>(std::count_if(sigma.begin(), sigma.end(), [](double s) { return s > 0.0; }));
  }
  if (policy.prune_mode == PruneMode::RetainedEnergy) {
    double total = 0.0;
    for (double s : sigma) total += s * s;
    const double target = policy.energy_threshold * total;
    double kept = 0.0;
    for (int k = 1; k <= n; ++k) {
      kept += sigma[k - 1] * sigma[k - 1];
      if (kept >= target) return k;
    }
    return n;
  }

  // Pruned-energy: accumulate from the smallest value upward.
  double total = 0.0;
  for (int i = n; i-- > 0;) total += sigma[i] * sigma[i];
  const double allowance = (1.0 - policy.energy_threshold) * total;
  double dropped = 0.0;
  int k = n;
  while (k > 1) {
    const double next = dropped + sigma[k - 1] * sigma[k - 1];
    if (next > allowance) break;
    dropped = next;
    --k;
  }
  return k;
}

double shrinkage_ratio(long long m, long long n, long long k) {
  if (m <= 0 || n <= 0 || k <= 0) throw InvalidInput("shrinkage_ratio: dimensions must be positive");
  return static_cast<double>(k) * static_cast<double>(m + n) / (static_cast<double>(m) * static_cast<double>(n));
}

namespace {

struct Job {
  int layer_index;
  MatrixRole role;
  const MatrixXd* weight;
};

struct JobResult {
  MatrixRecord record;
  MatrixXd in_factor;   // k x n
  MatrixXd out_factor;  // m x k
};

std::vector<Job> collect_jobs(const nnet::Params& params, const nnet::NetworkSpec& spec, const SvdPolicy& policy) {
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const auto& p = params.layers[i];
    const int idx = static_cast<int>(i);
    switch (l.kind) {
      case LayerKind::TdnnAffine:
        jobs.push_back({idx, MatrixRole::TdnnAffine, &p.affine.in_map});
        break;
      case LayerKind::Lstmp:
        if (!p.gate.factorized()) jobs.push_back({idx, MatrixRole::LstmGate, &p.gate.in_map});
        if (!p.projection.factorized()) jobs.push_back({idx, MatrixRole::LstmProjection, &p.projection.in_map});
        break;
      case LayerKind::Output:
        if (policy.include_output_layer && !p.affine.factorized()) {
          jobs.push_back({idx, MatrixRole::Output, &p.affine.in_map});
        }
        break;
      case LayerKind::FactorizedAffine:
      case LayerKind::Relu:
        break;
    }
  }
  return jobs;
}

void fill_decision(MatrixRecord& r, const SvdPolicy& policy) {
  r.shrinkage_ratio = shrinkage_ratio(r.rows, r.cols, r.rank);
  r.skipped = r.shrinkage_ratio > policy.shrinkage_threshold;
  const long long m = r.rows, n = r.cols, k = r.rank;
  r.param_delta = r.skipped ? 0 : m * n - k * (m + n);
  r.flop_delta = r.param_delta;
}

JobResult run_job(const nnet::NetworkSpec& spec, const Job& job, const SvdPolicy& policy) {
  JobResult out;
  MatrixRecord& r = out.record;
  r.layer = spec.layers[static_cast<std::size_t>(job.layer_index)].name;
  r.layer_index = job.layer_index;
  r.role = job.role;
  r.rows = static_cast<int>(job.weight->rows());
  r.cols = static_cast<int>(job.weight->cols());

  const auto factors = svd(*job.weight);
  const std::span<const double> sigma(factors.sigma.data(), static_cast<std::size_t>(factors.sigma.size()));
  if (factors.sigma(0) == 0.0) {
    r.rank = 1;  // an all-zero matrix is exactly representable at any rank
    r.energy_retained = 1.0;
  } else {
    r.rank = energy_prune(sigma, policy);
    const double total = factors.sigma.squaredNorm();
    r.energy_retained = factors.sigma.head(r.rank).squaredNorm() / total;
  }
  fill_decision(r, policy);
  if (!r.skipped) {
    auto [a, b] = truncate(factors, r.rank);
    out.out_factor = std::move(a);
    out.in_factor = std::move(b);
  }
  return out;
}

void apply_rank(nnet::LayerSpec& l, MatrixRole role, int rank) {
  switch (role) {
    case MatrixRole::TdnnAffine:
      l.kind = LayerKind::FactorizedAffine;
      l.bottleneck_dim = rank;
      break;
    case MatrixRole::LstmGate: l.gate_bottleneck_dim = rank; break;
    case MatrixRole::LstmProjection: l.projection_bottleneck_dim = rank; break;
    case MatrixRole::Output: l.bottleneck_dim = rank; break;
  }
}

void compute_totals(CompressionReport& report, const nnet::NetworkSpec& before, const nnet::NetworkSpec& after) {
  ReportTotals& t = report.totals;
  t = {};
  t.params_before = static_cast<long long>(nnet::param_count(before));
  t.params_after = static_cast<long long>(nnet::param_count(after));
  t.param_delta = t.params_before - t.params_after;
  t.flops_before = static_cast<long long>(nnet::flop_count(before));
  t.flops_after = static_cast<long long>(nnet::flop_count(after));
  t.flop_delta = t.flops_before - t.flops_after;
  long long summed = 0;
  for (const auto& r : report.records) {
    ++t.matrices;
    if (r.skipped) ++t.skipped;
    summed += r.param_delta;
  }
  if (summed != t.param_delta) throw std::logic_error("compression report: per-matrix deltas do not add up");
}

}  // namespace

CompressionResult compress_network(const nnet::Params& params, const nnet::NetworkSpec& spec, const SvdPolicy& policy,
                                   unsigned threads) {
  policy.validate();
  if (params.empty()) throw InvalidInput("compress: model has no parameters");
  nnet::check_params(params, spec);

  const std::vector<Job> jobs = collect_jobs(params, spec, policy);
  std::vector<JobResult> results(jobs.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) results[j] = run_job(spec, jobs[j], policy);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = w; j < jobs.size(); j += workers) results[j] = run_job(spec, jobs[j], policy);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  CompressionResult out;
  out.spec = spec;
  out.params = params;
  out.report.policy = policy;
  out.report.source_spec = spec;
  for (JobResult& res : results) {
    const MatrixRecord& r = res.record;
    if (!r.skipped) {
      auto& l = out.spec.layers[static_cast<std::size_t>(r.layer_index)];
      auto& p = out.params.layers[static_cast<std::size_t>(r.layer_index)];
      apply_rank(l, r.role, r.rank);
      nnet::Linear& target = r.role == MatrixRole::LstmGate         ? p.gate
                             : r.role == MatrixRole::LstmProjection ? p.projection
                                                                    : p.affine;
      target.in_map = std::move(res.in_factor);
      target.out_map = std::move(res.out_factor);
    }
    out.report.records.push_back(r);
  }
  out.spec.validate();
  nnet::check_params(out.params, out.spec);
  compute_totals(out.report, spec, out.spec);
  return out;
}

namespace {

struct MatrixShape {
  int rows;
  int cols;
};

std::optional<MatrixShape> dense_shape(const nnet::LayerSpec& l, MatrixRole role) {
  switch (role) {
    case MatrixRole::TdnnAffine:
      if (l.kind == LayerKind::TdnnAffine) return MatrixShape{l.output_dim, l.input_dim};
      break;
    case MatrixRole::LstmGate:
      if (l.kind == LayerKind::Lstmp && l.gate_bottleneck_dim == 0) return MatrixShape{4 * l.cell_dim, l.gate_input_dim()};
      break;
    case MatrixRole::LstmProjection:
      if (l.kind == LayerKind::Lstmp && l.projection_bottleneck_dim == 0) return MatrixShape{l.output_dim, l.cell_dim};
      break;
    case MatrixRole::Output:
      if (l.kind == LayerKind::Output && l.bottleneck_dim == 0) return MatrixShape{l.output_dim, l.input_dim};
      break;
  }
  return std::nullopt;
}

}  // namespace

CompressionReport plan_report(const nnet::NetworkSpec& spec, std::span<const PlannedRank> ranks,
                              const SvdPolicy& policy) {
  spec.validate();
  policy.validate();
  CompressionReport report;
  report.policy = policy;
  report.source_spec = spec;
  nnet::NetworkSpec after = spec;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    for (MatrixRole role : {MatrixRole::TdnnAffine, MatrixRole::LstmGate, MatrixRole::LstmProjection, MatrixRole::Output}) {
      const auto shape = dense_shape(l, role);
      if (!shape) continue;
      for (const PlannedRank& pr : ranks) {
        if (pr.layer != l.name || pr.role != role) continue;
        if (pr.rank < 1 || pr.rank > std::min(shape->rows, shape->cols)) {
          throw InvalidInput("plan_report: rank " + std::to_string(pr.rank) + " out of range for " + l.name);
        }
        MatrixRecord r;
        r.layer = l.name;
        r.layer_index = static_cast<int>(i);
        r.role = role;
        r.rows = shape->rows;
        r.cols = shape->cols;
        r.rank = pr.rank;
        fill_decision(r, policy);
        if (!r.skipped) apply_rank(after.layers[i], role, r.rank);
        report.records.push_back(r);
      }
    }
  }
  if (report.records.size() != ranks.size()) {
    throw InvalidInput("plan_report: some planned ranks do not name a dense matrix of the spec");
  }
  compute_totals(report, spec, after);
  return report;
}

nnet::NetworkSpec derive_bottleneck_spec(const nnet::NetworkSpec& spec, const CompressionReport& report) {
  spec.validate();
  if (!(report.source_spec == spec)) {
    throw InvalidInput("bottleneck: the report was produced for a different network spec");
  }
  nnet::NetworkSpec out = spec;
  for (const MatrixRecord& r : report.records) {
    if (r.layer_index < 0 || static_cast<std::size_t>(r.layer_index) >= spec.layers.size()) {
      throw InvalidInput("bottleneck: record layer index out of range");
    }
    const auto& l = spec.layers[static_cast<std::size_t>(r.layer_index)];
    const auto shape = dense_shape(l, r.role);
    if (l.name != r.layer || !shape || shape->rows != r.rows || shape->cols != r.cols) {
      throw InvalidInput("bottleneck: record for " + r.layer + " does not match the spec");
    }
    if (!r.skipped) apply_rank(out.layers[static_cast<std::size_t>(r.layer_index)], r.role, r.rank);
  }
  out.validate();
  return out;
}

std::vector<int> rank_trend(const CompressionReport& report, int input_dim) {
  std::vector<int> out;
  for (const auto& r : report.records)
    if (r.cols == input_dim) out.push_back(r.rank);
  return out;
}

std::vector<int> round_dims(std::span<const int> ranks, int multiple) {
  if (multiple <= 0) throw InvalidInput("round_dims: multiple must be positive");
  std::vector<int> out;
  out.reserve(ranks.size());
  for (int r : ranks) {
    if (r <= 0) throw InvalidInput("round_dims: ranks must be positive");
    const int rounded = (r + multiple / 2) / multiple * multiple;
    out.push_back(std::max(rounded, multiple));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files

Json report_to_json(const CompressionReport& report) {
  Json j;
  j["format_version"] = 1;
  j["policy"] = {{"energy_threshold", report.policy.energy_threshold},
                 {"shrinkage_threshold", report.policy.shrinkage_threshold},
                 {"prune_mode", std::string(to_string(report.policy.prune_mode))},
                 {"include_output_layer", report.policy.include_output_layer}};
  j["source_spec"] = spec_to_json(report.source_spec);
  Json records = Json::array();
  for (const auto& r : report.records) {
    Json rj;
    rj["layer"] = r.layer;
    rj["layer_index"] = r.layer_index;
    rj["role"] = std::string(to_string(r.role));
    rj["rows"] = r.rows;
    rj["cols"] = r.cols;
    rj["rank"] = r.rank;
    rj["energy_retained"] = r.energy_retained ? Json(*r.energy_retained) : Json(nullptr);
    rj["shrinkage_ratio"] = r.shrinkage_ratio;
    rj["skipped"] = r.skipped;
    rj["param_delta"] = r.param_delta;
    rj["flop_delta"] = r.flop_delta;
    records.push_back(std::move(rj));
  }
  j["records"] = std::move(records);
  const auto& t = report.totals;
  j["totals"] = {{"params_before", t.params_before}, {"params_after", t.params_after},
                 {"param_delta", t.param_delta},     {"flops_before", t.flops_before},
                 {"flops_after", t.flops_after},     {"flop_delta", t.flop_delta},
                 {"matrices", t.matrices},           {"skipped", t.skipped}};
  return j;
}

CompressionReport report_from_json(const Json& j) {
  try {
    CompressionReport report;
    const Json& p = j.at("policy");
    report.policy.energy_threshold = p.at("energy_threshold").get<double>();
    report.policy.shrinkage_threshold = p.at("shrinkage_threshold").get<double>();
    report.policy.prune_mode = prune_mode_from_string(p.at("prune_mode").get<std::string>());
    report.policy.include_output_layer = p.at("include_output_layer").get<bool>();
    report.source_spec = spec_from_json(j.at("source_spec"));
    for (const Json& rj : j.at("records")) {
      MatrixRecord r;
      r.layer = rj.at("layer").get<std::string>();
      r.layer_index = rj.at("layer_index").get<int>();
      r.role = matrix_role_from_string(rj.at("role").get<std::string>());
      r.rows = rj.at("rows").get<int>();
      r.cols = rj.at("cols").get<int>();
      r.rank = rj.at("rank").get<int>();
      if (!rj.at("energy_retained").is_null()) r.energy_retained = rj.at("energy_retained").get<double>();
      r.shrinkage_ratio = rj.at("shrinkage_ratio").get<double>();
      r.skipped = rj.at("skipped").get<bool>();
      r.param_delta = rj.at("param_delta").get<long long>();
      r.flop_delta = rj.at("flop_delta").get<long long>();
      report.records.push_back(std::move(r));
    }
    const Json& t = j.at("totals");
    report.totals.params_before = t.at("params_before").get<long long>();
    report.totals.params_after = t.at("params_after").get<long long>();
    report.totals.param_delta = t.at("param_delta").get<long long>();
    report.totals.flops_before = t.at("flops_before").get<long long>();
    report.totals.flops_after = t.at("flops_after").get<long long>();
    report.totals.flop_delta = t.at("flop_delta").get<long long>();
    report.totals.matrices = t.at("matrices").get<int>();
    report.totals.skipped = t.at("skipped").get<int>();
    return report;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("malformed compression report: ") + e.what());
  }
}

void save_report(const std::filesystem::path& path, const CompressionReport& report) {
  util::write_file(path, report_to_json(report).dump(1) + "\n");
}

CompressionReport load_report(const std::filesystem::path& path) {
  try {
    return report_from_json(Json::parse(util::read_file(path)));
  } catch (const Json::parse_error& e) {
    throw InvalidInput(std::string("report is not valid JSON: ") + e.what());
  }
}

std::string render_table(const CompressionReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %-16s %11s %6s %8s %7s %8s %12s\n", "layer", "role", "dims", "rank", "energy",
                "ratio", "status", "param_delta");
  out << line;
  for (const auto& r : report.records) {
    const std::string dims = std::to_string(r.rows) + "x" + std::to_string(r.cols);
    const std::string energy = r.energy_retained ? std::to_string(*r.energy_retained).substr(0, 6) : "-";
    std::snprintf(line, sizeof line, "%-8s %-16s %11s %6d %8s %7.4f %8s %12lld\n", r.layer.c_str(),
                  std::string(to_string(r.role)).c_str(), dims.c_str(), r.rank, energy.c_str(), r.shrinkage_ratio,
                  r.skipped ? "skipped" : "applied", r.param_delta);
    out << line;
  }
  const auto& t = report.totals;
  std::snprintf(line, sizeof line, "params %lld -> %lld (delta %lld), MACs/frame %lld -> %lld, %d of %d skipped\n",
                t.params_before, t.params_after, t.param_delta, t.flops_before, t.flops_after, t.skipped, t.matrices);
  out << line;
  return out.str();
}

}  // namespace rankshrink::compress
