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


#include "rankshrink/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>

#include "rankshrink/errors.hpp"
#include "rankshrink/util.hpp"

namespace rankshrink::bench {

namespace {

using Clock = std::chrono::steady_clock;

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string cell(const std::optional<double>& v, int digits) { return v ? fixed(*v, digits) : "-"; }

std::string delta_cell(const std::optional<double>& v, const std::optional<double>& base) {
  return v && base ? relative_delta(*v, *base) : "-";
}

std::string decode_config_label(const Json& c) {
  std::ostringstream os;
  os << "max_active=" << c.value("max_active", 0) << " beam=";
  const Json& beam = c.value("beam", Json());
  if (beam.is_number()) {
    os << beam.get<double>();
  } else {
    os << "inf";
  }
  return os.str();
}

}  // namespace

RtfMeasurement rtf_from_times(const std::vector<double>& repeat_seconds, double audio_seconds) {
  if (repeat_seconds.empty()) throw InvalidInput("rtf: need at least one repeat");
  if (!(audio_seconds > 0.0)) throw InvalidInput("rtf: audio duration must be positive");
  std::vector<double> sorted = repeat_seconds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  RtfMeasurement m;
  m.processing_seconds = median;
  m.audio_seconds = audio_seconds;
  m.rtf = median / audio_seconds;
  m.repeats = static_cast<int>(n);
  m.min_rtf = sorted.front() / audio_seconds;
  m.median_rtf = m.rtf;
  m.max_rtf = sorted.back() / audio_seconds;
  m.repeat_seconds = repeat_seconds;
  return m;
}

RtfMeasurement measure_rtf(const nnet::Params& params, const nnet::NetworkSpec& spec,
                           const decoder::DecodeGraph& graph, const data::Dataset& dataset,
                           const decoder::DecodeConfig& config, int repeats, double frame_period) {
  if (repeats < 1) throw InvalidInput("measure_rtf: repeats must be >= 1");
  if (dataset.utterances.empty()) throw InvalidInput("measure_rtf: empty dataset");
  if (!(frame_period > 0.0)) throw InvalidInput("measure_rtf: frame period must be positive");
  auto pass = [&] {
    const auto t0 = Clock::now();
    for (const auto& u : dataset.utterances) {
      try {
        decoder::decode(params, spec, graph, u.frames, config);
      } catch (const DecodeFailure&) {
        // Failed searches still cost time; they are counted by the sweep, not here.
      }
    }
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };
  pass();
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) times.push_back(pass());
  return rtf_from_times(times, static_cast<double>(dataset.total_frames()) * frame_period);
}

std::string RunManifest::config_hash() const { return util::sha256_hex(config.dump()); }

ArtifactRef artifact(const std::filesystem::path& path) {
  return {path.string(), util::sha256_hex(util::read_file(path))};
}

Json manifest_to_json(const RunManifest& m) {
  auto refs = [](const std::vector<ArtifactRef>& v) {
    Json a = Json::array();
    for (const auto& r : v) a.push_back({{"path", r.path}, {"sha256", r.sha256}});
    return a;
  };
  Json j;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["config"] = m.config;
  j["config_hash"] = m.config_hash();
  j["seeds"] = Json::object();
  for (const auto& [k, v] : m.seeds) j["seeds"][k] = v;
  j["inputs"] = refs(m.inputs);
  j["outputs"] = refs(m.outputs);
  j["toolkit_version"] = m.toolkit_version;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["metrics"] = m.metrics;
  return j;
}

RunManifest manifest_from_json(const Json& j) {
  auto refs = [](const Json& a) {
    std::vector<ArtifactRef> v;
    for (const auto& r : a) v.push_back({r.at("path").get<std::string>(), r.at("sha256").get<std::string>()});
    return v;
  };
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = j.at("config");
    for (const auto& [k, v] : j.at("seeds").items()) m.seeds[k] = v.get<std::uint64_t>();
    m.inputs = refs(j.at("inputs"));
    m.outputs = refs(j.at("outputs"));
    m.toolkit_version = j.at("toolkit_version").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.metrics = j.at("metrics");
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("manifest: ") + e.what());
  }
  if (j.contains("config_hash") && j["config_hash"] != m.config_hash()) {
    throw InvalidInput("manifest: config_hash does not match config");
  }
  return m;
}

std::filesystem::path manifest_path(const std::filesystem::path& output) {
  return output.string() + ".manifest.json";
}

void save_manifest(const std::filesystem::path& path, const RunManifest& m) {
  util::write_file(path, manifest_to_json(m).dump(2) + "\n");
}

RunManifest load_manifest(const std::filesystem::path& path) {
  try {
    return manifest_from_json(Json::parse(util::read_file(path)));
  } catch (const Json::parse_error& e) {
    throw InvalidInput("manifest " + path.string() + ": " + e.what());
  }
}

std::vector<std::string> stale_artifacts(const RunManifest& m) {
  std::vector<std::string> stale;
  for (const auto* list : {&m.inputs, &m.outputs}) {
    for (const auto& r : *list) {
      std::error_code ec;
      if (!std::filesystem::exists(r.path, ec) || artifact(r.path).sha256 != r.sha256) stale.push_back(r.path);
    }
  }
  return stale;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::vector<ReportRow> rows_from_manifests(const std::vector<RunManifest>& manifests) {
  std::vector<ReportRow> rows;
  for (const auto& m : manifests) {
    if (m.command != "bench" && m.command != "decode") continue;
    const std::string model_path = m.config.at("model").get<std::string>();
    const Model model = load_model(model_path);
    const double params = static_cast<double>(nnet::param_count(model.spec));
    const double flops = static_cast<double>(nnet::flop_count(model.spec));
    const std::string name = std::filesystem::path(model_path).stem().string();
    if (m.command == "bench") {
      ReportRow r{name, decode_config_label(m.config), params, flops, std::nullopt, std::nullopt};
      if (m.metrics.contains("rtf")) r.rtf = m.metrics["rtf"].get<double>();
      if (m.metrics.contains("ter")) r.ter = m.metrics["ter"].get<double>();
      rows.push_back(r);
    } else {
      for (const auto& s : m.metrics.value("sweep", Json::array())) {
        ReportRow r{name, decode_config_label(s), params, flops, s.at("rtf").get<double>(), s.at("ter").get<double>()};
        rows.push_back(r);
      }
    }
  }
  return rows;
}

std::string relative_delta(double candidate, double base) {
  if (base == 0.0) return "n/a";
  const double pct = (candidate - base) / base * 100.0;
  return (pct < 0.0 ? "" : "+") + fixed(pct, 2) + "%";
}

std::string render_report(std::vector<ReportRow> rows, const std::string& baseline) {
  if (rows.empty()) throw InvalidInput("report: no runs");
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return a.model != b.model ? a.model < b.model : a.config < b.config;
  });
  const bool deltas = rows.size() > 1;
  if (std::none_of(rows.begin(), rows.end(), [&](const ReportRow& r) { return r.model == baseline; })) {
    throw InvalidInput("report: baseline '" + baseline + "' matches no run");
  }
  auto base_for = [&](const ReportRow& r) -> const ReportRow& {
    const ReportRow* first = nullptr;
    for (const auto& b : rows) {
      if (b.model != baseline) continue;
      if (b.config == r.config) return b;
      if (!first) first = &b;
    }
    return *first;
  };

  std::vector<std::vector<std::string>> table;
  table.push_back({"model", "config", "params", "flops/frame", "rtf", "ter"});
  if (deltas) {
    for (const char* h : {"params vs base", "flops vs base", "rtf vs base", "ter vs base"}) table[0].push_back(h);
  }
  for (const auto& r : rows) {
    std::vector<std::string> line{r.model, r.config, cell(r.params, 0), cell(r.flops, 0), cell(r.rtf, 4),
                                  cell(r.ter, 4)};
    if (deltas) {
      const ReportRow& b = base_for(r);
      line.push_back(delta_cell(r.params, b.params));
      line.push_back(delta_cell(r.flops, b.flops));
      line.push_back(delta_cell(r.rtf, b.rtf));
      line.push_back(delta_cell(r.ter, b.ter));
    }
    table.push_back(std::move(line));
  }
  std::vector<std::size_t> width(table[0].size(), 0);
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::string out;
  auto emit = [&](const std::vector<std::string>& line) {
    std::string text;
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) text += "  ";
      text += line[c] + std::string(width[c] - line[c].size(), ' ');
    }
    text.erase(text.find_last_not_of(' ') + 1);
    out += text + '\n';
  };
  emit(table[0]);
  std::vector<std::string> rule;
  for (std::size_t w : width) rule.emplace_back(w, '-');
  emit(rule);
  for (std::size_t i = 1; i < table.size(); ++i) emit(table[i]);
  return out;
}

}  // namespace rankshrink::bench
