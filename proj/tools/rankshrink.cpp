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


// rankshrink: train, compress, retrain, decode and benchmark LSTM-TDNN
// acoustic models on synthetic data. Every command that writes a file also
// writes "<file>.manifest.json" describing how it was produced.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rankshrink/bench.hpp"
#include "rankshrink/compress.hpp"
#include "rankshrink/dataset.hpp"
#include "rankshrink/decoder.hpp"
#include "rankshrink/errors.hpp"
#include "rankshrink/model_io.hpp"
#include "rankshrink/trainer.hpp"
#include "rankshrink/util.hpp"

namespace fs = std::filesystem;
using namespace rankshrink;

namespace {

std::vector<std::string> g_argv;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (auto env = util::seed_from_env()) return *env;
  return 1;
}

bench::RunManifest start_manifest(const std::string& command) {
  bench::RunManifest m;
  m.command = command;
  m.argv = g_argv;
  m.started_at = bench::utc_timestamp();
  return m;
}

void finish_manifest(bench::RunManifest& m, const fs::path& primary) {
  m.finished_at = bench::utc_timestamp();
  bench::save_manifest(bench::manifest_path(primary), m);
}

Json beam_json(double beam) { return std::isfinite(beam) ? Json(beam) : Json(nullptr); }

// ---------------------------------------------------------------------------

struct GenDataArgs {
  int symbols = 8;
  int feature_dim = 20;
  std::optional<std::uint64_t> seed;
  int sequences = 200;
  int frames = 120;
  std::uint64_t stream = 0;
  double mean_scale = 0.35;
  double noise_scale = 1.0;
  int min_segment = 4;
  int max_segment = 10;
  std::string out;
};

void run_gen_data(const GenDataArgs& a) {
  auto m = start_manifest("gen-data");
  const std::uint64_t seed = resolve_seed(a.seed);
  data::TaskOptions o{a.mean_scale, a.noise_scale, a.min_segment, a.max_segment};
  const auto task = data::make_task(a.symbols, a.feature_dim, seed, o);
  const auto d = data::generate(task, a.sequences, a.frames, a.stream);
  data::save_dataset(a.out, d);
  m.config = {{"symbols", a.symbols},         {"feature_dim", a.feature_dim}, {"seed", seed},
              {"sequences", a.sequences},     {"frames", a.frames},           {"stream", a.stream},
              {"mean_scale", a.mean_scale},   {"noise_scale", a.noise_scale}, {"min_segment", a.min_segment},
              {"max_segment", a.max_segment}, {"out", a.out}};
  m.seeds["data"] = seed;
  m.outputs.push_back(bench::artifact(a.out));
  m.metrics = {{"frames_total", d.total_frames()}};
  finish_manifest(m, a.out);
  std::cout << Json{{"out", a.out}, {"sequences", a.sequences}, {"frames_total", d.total_frames()}}.dump() << "\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::optional<std::uint64_t> seed;
  int steps = 1500;
  int batch_size = 8;
  double learning_rate = 0.1;
  double final_lr_fraction = 0.1;
  double momentum = 0.9;
  double clip_norm = 5.0;
  double weight_decay = 5e-3;
  int eval_every = 100;
  int eval_sequences = 16;
  unsigned threads = 1;
  std::string data;
  std::string out;

  trainer::TrainConfig config(std::uint64_t resolved_seed) const {
    trainer::TrainConfig c;
    c.steps = steps;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.final_lr_fraction = final_lr_fraction;
    c.momentum = momentum;
    c.clip_norm = clip_norm;
    c.weight_decay = weight_decay;
    c.seed = resolved_seed;
    c.eval_every = eval_every;
    c.eval_sequences = eval_sequences;
    c.threads = threads;
    return c;
  }
};

void add_train_options(CLI::App* app, TrainArgs& a) {
  app->add_option("--seed", a.seed, "Initialization and batch-order seed (default: $RANKSHRINK_SEED or 1)");
  app->add_option("--steps", a.steps, "Optimizer steps")->capture_default_str();
  app->add_option("--data", a.data, "Training dataset")->required();
  app->add_option("--out", a.out, "Output model file")->required();
  app->add_option("--batch-size", a.batch_size)->capture_default_str();
  app->add_option("--learning-rate", a.learning_rate)->capture_default_str();
  app->add_option("--final-lr-fraction", a.final_lr_fraction, "Learning rate at the last step, relative")
      ->capture_default_str();
  app->add_option("--momentum", a.momentum)->capture_default_str();
  app->add_option("--clip-norm", a.clip_norm, "Global gradient-norm clip")->capture_default_str();
  app->add_option("--eval-every", a.eval_every, "Steps between loss evaluations")->capture_default_str();
  app->add_option("--eval-sequences", a.eval_sequences)->capture_default_str();
  app->add_option("--threads", a.threads, "Sequences processed concurrently (results are identical)")
      ->capture_default_str();
}

Json config_json(const trainer::TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"final_lr_fraction", c.final_lr_fraction},
          {"momentum", c.momentum},
          {"clip_norm", c.clip_norm},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"eval_sequences", c.eval_sequences}};
}

Json history_json(const std::vector<trainer::LossPoint>& h) {
  Json a = Json::array();
  for (const auto& p : h) a.push_back({p.step, p.loss});
  return a;
}

// Trains (or fine-tunes, when `start` is given) and writes the model and manifest.
void train_and_save(bench::RunManifest& m, const nnet::NetworkSpec& spec, const std::optional<nnet::Params>& start,
                    const TrainArgs& a, std::uint64_t seed, Json extra_metadata) {
  const auto d = data::load_dataset(a.data);
  const auto config = a.config(seed);
  trainer::TrainResult r;
  try {
    r = start ? trainer::fine_tune(*start, spec, config, d) : trainer::train(spec, config, d);
  } catch (const trainer::TrainingFailure& e) {
    // Keep the last good parameters for inspection; the run still fails.
    const fs::path ckpt = a.out + ".failed.json";
    Json meta = extra_metadata;
    meta["failure"] = {{"step", e.step()}, {"message", e.what()}};
    save_model(ckpt, Model{spec, e.checkpoint(), seed, meta});
    throw;
  }
  Json meta = std::move(extra_metadata);
  meta["train_config"] = config_json(config);
  meta["loss_history"] = history_json(r.history);
  save_model(a.out, Model{spec, r.params, seed, meta});

  m.config["train"] = config_json(config);
  m.config["data"] = a.data;
  m.config["out"] = a.out;
  m.seeds["train"] = seed;
  m.inputs.push_back(bench::artifact(a.data));
  m.outputs.push_back(bench::artifact(a.out));
  m.metrics = {{"initial_loss", r.initial_loss()},
               {"final_loss", r.final_loss()},
               {"params", nnet::param_count(spec)},
               {"flops_per_frame", nnet::flop_count(spec)}};
  finish_manifest(m, a.out);
  std::cout << Json{{"out", a.out},
                    {"params", nnet::param_count(spec)},
                    {"initial_loss", r.initial_loss()},
                    {"final_loss", r.final_loss()}}
                   .dump()
            << "\n";
}

struct PresetArgs {
  std::string preset;
  nnet::PresetDims dims;
};

void run_train(const PresetArgs& p, const TrainArgs& a) {
  auto m = start_manifest("train");
  const auto d = data::load_dataset(a.data);
  const auto spec = nnet::build_preset(p.preset, d.task.feature_dim, d.task.num_symbols, p.dims);
  m.config = {{"preset", p.preset},
              {"tdnn_dim", p.dims.tdnn_dim},
              {"cell_dim", p.dims.cell_dim},
              {"rec_proj_dim", p.dims.rec_proj_dim},
              {"nonrec_proj_dim", p.dims.nonrec_proj_dim}};
  train_and_save(m, spec, std::nullopt, a, resolve_seed(a.seed), {{"preset", p.preset}});
}

void run_fine_tune(const std::string& model_path, const TrainArgs& a) {
  auto m = start_manifest("fine-tune");
  const Model model = load_model(model_path);
  m.config = {{"model", model_path}};
  m.inputs.push_back(bench::artifact(model_path));
  Json meta = model.training_metadata;
  meta["fine_tuned_from"] = bench::artifact(model_path).sha256;
  train_and_save(m, model.spec, model.params, a, resolve_seed(a.seed), meta);
}

// ---------------------------------------------------------------------------

struct CompressArgs {
  std::string in;
  std::string out;
  double energy_threshold = 0.9;
  double shrinkage_threshold = 0.75;
  std::string prune_mode = "retained";
  bool include_output_layer = false;
  std::string report;
  unsigned threads = 1;
};

void run_compress(const CompressArgs& a) {
  auto m = start_manifest("compress");
  const Model model = load_model(a.in);
  compress::SvdPolicy policy;
  policy.energy_threshold = a.energy_threshold;
  policy.shrinkage_threshold = a.shrinkage_threshold;
  policy.prune_mode = compress::prune_mode_from_string(a.prune_mode);
  policy.include_output_layer = a.include_output_layer;
  const auto result = compress::compress_network(model.params, model.spec, policy, a.threads);

  Json meta = model.training_metadata;
  meta["compressed_from"] = bench::artifact(a.in).sha256;
  save_model(a.out, Model{result.spec, result.params, model.seed, meta});
  compress::save_report(a.report, result.report);

  m.config = {{"in", a.in},
              {"out", a.out},
              {"report", a.report},
              {"energy_threshold", a.energy_threshold},
              {"shrinkage_threshold", a.shrinkage_threshold},
              {"prune_mode", std::string(compress::to_string(policy.prune_mode))},
              {"include_output_layer", a.include_output_layer}};
  m.inputs.push_back(bench::artifact(a.in));
  m.outputs.push_back(bench::artifact(a.out));
  m.outputs.push_back(bench::artifact(a.report));
  const auto& t = result.report.totals;
  m.metrics = {{"params_before", t.params_before}, {"params_after", t.params_after},
               {"flops_before", t.flops_before},   {"flops_after", t.flops_after},
               {"matrices", t.matrices},           {"skipped", t.skipped}};
  finish_manifest(m, a.out);
  std::cout << compress::render_table(result.report);
}

// ---------------------------------------------------------------------------

void run_bottleneck(const std::string& report_path, const TrainArgs& a, bool train_it) {
  auto m = start_manifest("bottleneck");
  const auto report = compress::load_report(report_path);
  const auto spec = compress::derive_bottleneck_spec(report.source_spec, report);
  const auto predicted = report.totals.params_after;
  if (static_cast<long long>(nnet::param_count(spec)) != predicted) {
    throw std::logic_error("bottleneck: derived spec disagrees with the report's predicted parameter count");
  }
  m.config = {{"report", report_path}};
  m.inputs.push_back(bench::artifact(report_path));
  const std::uint64_t seed = resolve_seed(a.seed);
  Json meta = {{"derived_from_report", bench::artifact(report_path).sha256}, {"predicted_params", predicted}};
  if (train_it) {
    train_and_save(m, spec, std::nullopt, a, seed, meta);
    return;
  }
  save_model(a.out, Model{spec, nnet::init_params(spec, seed), seed, meta});
  m.config["out"] = a.out;
  m.seeds["init"] = seed;
  m.outputs.push_back(bench::artifact(a.out));
  m.metrics = {{"params", nnet::param_count(spec)}, {"flops_per_frame", nnet::flop_count(spec)}};
  finish_manifest(m, a.out);
  std::cout << Json{{"out", a.out}, {"params", nnet::param_count(spec)}, {"predicted_params", predicted}}.dump()
            << "\n";
}

// ---------------------------------------------------------------------------

struct DecodeArgs {
  std::string model;
  std::string data;
  std::vector<int> max_active{500};
  std::vector<double> beam{std::numeric_limits<double>::infinity()};
  double acoustic_scale = 0.1;
  double self_loop = 0.5;
  std::string graph = "bigram";
  double frame_period_ms = 10.0;
  std::string out;
  std::string hyp_out;
  int repeats = 5;
};

decoder::DecodeGraph make_graph(const std::string& kind, const data::SyntheticTask& task, double self_loop) {
  if (kind == "bigram") return decoder::bigram_graph(task.transitions, self_loop);
  if (kind == "loop") return decoder::symbol_loop_graph(task.num_symbols, self_loop);
  throw InvalidInput("unknown graph '" + kind + "' (expected bigram or loop)");
}

Json decode_config_json(const DecodeArgs& a) {
  return {{"model", a.model},         {"data", a.data},   {"acoustic_scale", a.acoustic_scale},
          {"self_loop", a.self_loop}, {"graph", a.graph}, {"frame_period_ms", a.frame_period_ms}};
}

void run_decode(const DecodeArgs& a) {
  auto m = start_manifest("decode");
  const Model model = load_model(a.model);
  const auto d = data::load_dataset(a.data);
  const auto graph = make_graph(a.graph, d.task, a.self_loop);
  const auto rows = decoder::sweep(model.params, model.spec, graph, d, a.max_active, a.beam, a.acoustic_scale,
                                   a.frame_period_ms / 1000.0);
  const std::string tsv = decoder::sweep_to_tsv(rows);
  std::cout << tsv;

  std::vector<fs::path> written;
  if (!a.hyp_out.empty()) {
    // Hypotheses of the first configuration, one utterance per line.
    const decoder::DecodeConfig first{a.beam.front(), a.max_active.front(), a.acoustic_scale};
    std::string text;
    for (const auto& u : decoder::decode_dataset(model.params, model.spec, graph, d, first)) {
      if (u.failed) {
        text += "FAILED";
      } else {
        for (std::size_t i = 0; i < u.hypothesis.size(); ++i) text += (i ? " " : "") + std::to_string(u.hypothesis[i]);
      }
      text += "\n";
    }
    util::write_file(a.hyp_out, text);
    written.emplace_back(a.hyp_out);
  }
  if (!a.out.empty()) {
    util::write_file(a.out, tsv);
    written.insert(written.begin(), a.out);
  }
  if (written.empty()) return;

  m.config = decode_config_json(a);
  m.config["max_active"] = a.max_active;
  Json beams = Json::array();
  for (double b : a.beam) beams.push_back(beam_json(b));
  m.config["beam"] = beams;
  m.inputs.push_back(bench::artifact(a.model));
  m.inputs.push_back(bench::artifact(a.data));
  for (const auto& p : written) m.outputs.push_back(bench::artifact(p));
  Json sweep = Json::array();
  for (const auto& r : rows) {
    sweep.push_back({{"max_active", r.max_active},
                     {"beam", beam_json(r.beam)},
                     {"ter", r.ter},
                     {"rtf", r.rtf},
                     {"tokens_expanded", r.tokens_expanded},
                     {"failures", r.failures}});
  }
  m.metrics = {{"sweep", sweep}};
  finish_manifest(m, written.front());
}

void run_bench(const DecodeArgs& a) {
  auto m = start_manifest("bench");
  if (a.max_active.size() != 1 || a.beam.size() != 1) throw InvalidInput("bench: takes a single configuration");
  const Model model = load_model(a.model);
  const auto d = data::load_dataset(a.data);
  const auto graph = make_graph(a.graph, d.task, a.self_loop);
  const decoder::DecodeConfig config{a.beam.front(), a.max_active.front(), a.acoustic_scale};

  std::size_t edits = 0, ref_len = 0, failures = 0;
  for (const auto& u : decoder::decode_dataset(model.params, model.spec, graph, d, config)) {
    edits += decoder::edit_distance(u.hypothesis, u.reference);
    ref_len += u.reference.size();
    failures += u.failed;
  }
  const auto rtf = bench::measure_rtf(model.params, model.spec, graph, d, config, a.repeats, a.frame_period_ms / 1000.0);

  Json result = {{"rtf", rtf.rtf},
                 {"processing_seconds", rtf.processing_seconds},
                 {"audio_seconds", rtf.audio_seconds},
                 {"repeats", rtf.repeats},
                 {"rtf_min", rtf.min_rtf},
                 {"rtf_median", rtf.median_rtf},
                 {"rtf_max", rtf.max_rtf},
                 {"repeat_seconds", rtf.repeat_seconds},
                 {"ter", static_cast<double>(edits) / static_cast<double>(ref_len)},
                 {"failures", failures},
                 {"params", nnet::param_count(model.spec)},
                 {"flops_per_frame", nnet::flop_count(model.spec)}};
  std::cout << result.dump(2) << "\n";
  if (a.out.empty()) return;
  util::write_file(a.out, result.dump(2) + "\n");
  m.config = decode_config_json(a);
  m.config["max_active"] = a.max_active.front();
  m.config["beam"] = beam_json(a.beam.front());
  m.config["repeats"] = a.repeats;
  m.inputs.push_back(bench::artifact(a.model));
  m.inputs.push_back(bench::artifact(a.data));
  m.outputs.push_back(bench::artifact(a.out));
  m.metrics = result;
  finish_manifest(m, a.out);
}

void run_report(const std::string& baseline, const std::vector<std::string>& paths) {
  std::vector<bench::RunManifest> manifests;
  for (const auto& p : paths) manifests.push_back(bench::load_manifest(p));
  std::cout << bench::render_report(bench::rows_from_manifests(manifests), baseline);
}

int run_verify(const std::vector<std::string>& paths) {
  int bad = 0;
  for (const auto& p : paths) {
    const auto stale = bench::stale_artifacts(bench::load_manifest(p));
    for (const auto& s : stale) std::cout << "changed: " << s << " (" << p << ")\n";
    bad += !stale.empty();
  }
  if (bad == 0) std::cout << "ok: " << paths.size() << " manifest(s) match their artifacts\n";
  return bad == 0 ? 0 : 1;
}

void add_preset_dims(CLI::App* app, nnet::PresetDims& dims) {
  app->add_option("--tdnn-dim", dims.tdnn_dim, "TDNN layer width")->capture_default_str();
  app->add_option("--cell-dim", dims.cell_dim, "LSTM cell width")->capture_default_str();
  app->add_option("--rec-proj-dim", dims.rec_proj_dim, "LSTM recurrent projection width")->capture_default_str();
  app->add_option("--nonrec-proj-dim", dims.nonrec_proj_dim, "LSTM non-recurrent projection width")
      ->capture_default_str();
}

void add_decode_options(CLI::App* app, DecodeArgs& a, bool sweep) {
  app->add_option("--model", a.model, "Model file")->required();
  app->add_option("--data", a.data, "Dataset to decode")->required();
  if (sweep) {
    app->add_option("--max-active", a.max_active, "Token cap per frame; comma list sweeps")->delimiter(',');
    app->add_option("--beam", a.beam, "Log-domain beam (inf disables); comma list sweeps")->delimiter(',');
  } else {
    app->add_option("--max-active", a.max_active, "Token cap per frame");
    app->add_option("--beam", a.beam, "Log-domain beam (inf disables)");
  }
  app->add_option("--acoustic-scale", a.acoustic_scale)->capture_default_str();
  app->add_option("--self-loop", a.self_loop, "HMM self-loop probability")->capture_default_str();
  app->add_option("--graph", a.graph, "bigram or loop")->capture_default_str();
  app->add_option("--frame-period-ms", a.frame_period_ms, "Audio duration of one frame")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Low-rank compression of LSTM-TDNN acoustic models, at desk scale"};
  app.set_version_flag("--version", std::string(RANKSHRINK_VERSION));
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Sample a synthetic dataset");
  gen_cmd->add_option("--symbols", gen.symbols)->capture_default_str();
  gen_cmd->add_option("--feature-dim", gen.feature_dim)->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Task seed (default: $RANKSHRINK_SEED or 1)");
  gen_cmd->add_option("--sequences", gen.sequences)->capture_default_str();
  gen_cmd->add_option("--frames", gen.frames, "Frames per sequence")->capture_default_str();
  gen_cmd->add_option("--out", gen.out)->required();
  gen_cmd->add_option("--stream", gen.stream, "Sample stream; same seed, different stream = held-out data")
      ->capture_default_str();
  gen_cmd->add_option("--mean-scale", gen.mean_scale)->capture_default_str();
  gen_cmd->add_option("--noise-scale", gen.noise_scale)->capture_default_str();
  gen_cmd->add_option("--min-segment", gen.min_segment)->capture_default_str();
  gen_cmd->add_option("--max-segment", gen.max_segment)->capture_default_str();

  PresetArgs preset;
  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a preset network from scratch");
  train_cmd->add_option("--preset", preset.preset)
      ->required()
      ->check(CLI::IsMember({"baseline", "lstm-tdnn-1", "lstm-tdnn-2", "svd-default", "desk"}));
  add_train_options(train_cmd, train);
  train_cmd->add_option("--weight-decay", train.weight_decay, "L2 coefficient")->capture_default_str();
  add_preset_dims(train_cmd, preset.dims);

  std::string ft_model;
  TrainArgs ft;
  ft.steps = 300;
  ft.learning_rate = 0.02;
  ft.weight_decay = 0.0;
  auto* ft_cmd = app.add_subcommand("fine-tune", "Continue training a model, e.g. after compression");
  ft_cmd->add_option("--model", ft_model)->required();
  add_train_options(ft_cmd, ft);
  ft_cmd->add_option("--weight-decay", ft.weight_decay, "L2 coefficient")->capture_default_str();

  CompressArgs comp;
  auto* comp_cmd = app.add_subcommand("compress", "Factorize weight matrices by truncated SVD");
  comp_cmd->add_option("--in", comp.in)->required();
  comp_cmd->add_option("--out", comp.out)->required();
  comp_cmd->add_option("--energy-threshold", comp.energy_threshold)->capture_default_str();
  comp_cmd->add_option("--shrinkage-threshold", comp.shrinkage_threshold)->capture_default_str();
  comp_cmd->add_option("--prune-mode", comp.prune_mode)
      ->check(CLI::IsMember({"retained", "pruned"}))
      ->capture_default_str();
  comp_cmd->add_flag("--include-output-layer", comp.include_output_layer);
  comp_cmd->add_option("--report", comp.report)->required();
  comp_cmd->add_option("--threads", comp.threads)->capture_default_str();

  std::string bn_report;
  TrainArgs bn;
  bn.weight_decay = 0.0;
  auto* bn_cmd = app.add_subcommand("bottleneck", "Build the factorized network of a report, randomly initialized");
  bn_cmd->add_option("--report", bn_report)->required();
  bn_cmd->add_option("--out", bn.out)->required();
  bn_cmd->add_option("--seed", bn.seed, "Initialization seed (default: $RANKSHRINK_SEED or 1)");
  auto* bn_data = bn_cmd->add_option("--data", bn.data, "Train from scratch on this dataset");
  bn_cmd->add_option("--steps", bn.steps)->capture_default_str();
  bn_cmd->add_option("--batch-size", bn.batch_size)->capture_default_str();
  bn_cmd->add_option("--learning-rate", bn.learning_rate)->capture_default_str();
  bn_cmd->add_option("--weight-decay", bn.weight_decay)->capture_default_str();
  bn_cmd->add_option("--threads", bn.threads)->capture_default_str();

  DecodeArgs dec;
  auto* dec_cmd = app.add_subcommand("decode", "Decode a dataset; prints one TSV row per configuration");
  add_decode_options(dec_cmd, dec, true);
  dec_cmd->add_option("--out", dec.out, "Also write the TSV here (with a manifest)");
  dec_cmd->add_option("--hyp-out", dec.hyp_out, "Hypotheses of the first configuration");

  DecodeArgs ben;
  auto* ben_cmd = app.add_subcommand("bench", "Measure real-time factor");
  add_decode_options(ben_cmd, ben, false);
  ben_cmd->add_option("--repeats", ben.repeats)->capture_default_str()->check(CLI::PositiveNumber);
  ben_cmd->add_option("--out", ben.out, "Write the measurement as JSON (with a manifest)");

  std::string baseline;
  std::vector<std::string> report_paths;
  auto* rep_cmd = app.add_subcommand("report", "Compare runs from their manifests");
  rep_cmd->add_option("--baseline", baseline, "Model name (file stem) deltas are relative to")->required();
  rep_cmd->add_option("paths", report_paths, "Manifest files")->required();

  std::vector<std::string> verify_paths;
  auto* ver_cmd = app.add_subcommand("verify", "Check recorded artifact hashes");
  ver_cmd->add_option("manifests", verify_paths)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << Json{{"error", "usage"}, {"command", argc > 1 ? argv[1] : ""}, {"message", e.what()}}.dump() << "\n";
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  std::string command = app.get_subcommands().front()->get_name();
  try {
    if (*gen_cmd) run_gen_data(gen);
    if (*train_cmd) run_train(preset, train);
    if (*ft_cmd) run_fine_tune(ft_model, ft);
    if (*comp_cmd) run_compress(comp);
    if (*bn_cmd) run_bottleneck(bn_report, bn, bn_data->count() > 0);
    if (*dec_cmd) run_decode(dec);
    if (*ben_cmd) run_bench(ben);
    if (*rep_cmd) run_report(baseline, report_paths);
    if (*ver_cmd) return run_verify(verify_paths);
  } catch (const std::exception& e) {
    Json err = {{"error", error_kind(e)}, {"command", command}, {"message", e.what()}};
    if (const auto* d = dynamic_cast<const DecodeFailure*>(&e)) err["frame"] = d->frame();
    if (const auto* t = dynamic_cast<const trainer::TrainingFailure*>(&e)) {
      err["error"] = "training_failure";
      err["step"] = t->step();
    }
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
