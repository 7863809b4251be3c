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


#ifndef RANKSHRINK_BENCH_HPP
#define RANKSHRINK_BENCH_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rankshrink/dataset.hpp"
#include "rankshrink/decoder.hpp"
#include "rankshrink/model_io.hpp"

namespace rankshrink::bench {

/// Real-time factor: processing time over the duration of the audio the
/// frames stand for.
struct RtfMeasurement {
  double processing_seconds = 0.0;  // median over repeats
  double audio_seconds = 0.0;
  double rtf = 0.0;  // processing_seconds / audio_seconds
  int repeats = 0;
  double min_rtf = 0.0;
  double median_rtf = 0.0;
  double max_rtf = 0.0;
  std::vector<double> repeat_seconds;  // in measurement order
};

/// Median of the repeat times (mean of the middle pair for even counts).
RtfMeasurement rtf_from_times(const std::vector<double>& repeat_seconds, double audio_seconds);

/// One untimed warm-up pass, then `repeats` timed passes of network forward
/// plus decoding over the whole dataset on the calling thread.
RtfMeasurement measure_rtf(const nnet::Params& params, const nnet::NetworkSpec& spec,
                           const decoder::DecodeGraph& graph, const data::Dataset& dataset,
                           const decoder::DecodeConfig& config, int repeats, double frame_period = 0.01);

struct ArtifactRef {
  std::string path;
  std::string sha256;
};

/// Everything needed to rerun a command and check its outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  Json config = Json::object();
  std::map<std::string, std::uint64_t> seeds;
  std::vector<ArtifactRef> inputs;
  std::vector<ArtifactRef> outputs;
  std::string toolkit_version = RANKSHRINK_VERSION;
  std::string started_at;
  std::string finished_at;
  Json metrics = Json::object();  // timing fields live here and under *_at

  std::string config_hash() const;
};

ArtifactRef artifact(const std::filesystem::path& path);
Json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);
/// Written next to the primary output as "<output>.manifest.json".
std::filesystem::path manifest_path(const std::filesystem::path& output);
void save_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);
/// Paths whose current hash differs from the one recorded (missing files included).
std::vector<std::string> stale_artifacts(const RunManifest& m);
/// UTC, ISO 8601, second resolution.
std::string utc_timestamp();

struct ReportRow {
  std::string model;
  std::string config;
  std::optional<double> params;
  std::optional<double> flops;
  std::optional<double> rtf;
  std::optional<double> ter;
};

/// Rows for every manifest carrying measurements (bench and decode runs).
/// Parameter and FLOP counts are recomputed from the model file.
std::vector<ReportRow> rows_from_manifests(const std::vector<RunManifest>& manifests);

/// "-50.00%"-style signed relative change; "n/a" when the base is zero.
std::string relative_delta(double candidate, double base);

/// Rows sorted by model then config. With more than one row, relative
/// deltas against the baseline model's row (same config when present) are
/// appended; an absent baseline is rejected.
std::string render_report(std::vector<ReportRow> rows, const std::string& baseline);

}  // namespace rankshrink::bench

#endif  // RANKSHRINK_BENCH_HPP
