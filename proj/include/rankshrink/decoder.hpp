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


#ifndef RANKSHRINK_DECODER_HPP
#define RANKSHRINK_DECODER_HPP

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rankshrink/dataset.hpp"
#include "rankshrink/nnet.hpp"

namespace rankshrink::decoder {

struct Arc {
  int to = 0;
  double logp = 0.0;
  int olabel = -1;  // symbol emitted into the hypothesis when taken, -1 for none
  friend bool operator==(const Arc&, const Arc&) = default;
};

/// State 'start' is the only non-emitting state (symbol -1) and has no
/// incoming arcs; decoding begins by leaving it on the first frame. Every
/// other state consumes one frame scored by its symbol's log-likelihood.
struct DecodeGraph {
  std::vector<int> symbols;
  std::vector<std::vector<Arc>> arcs;
  int start = 0;
  std::vector<int> finals;

  int num_states() const { return static_cast<int>(symbols.size()); }
  /// num_symbols < 0 skips the upper bound check on symbol ids.
  void validate(int num_symbols = -1) const;
  friend bool operator==(const DecodeGraph&, const DecodeGraph&) = default;
};

/// A 3-state left-to-right chain per symbol joined by a uniform symbol loop.
DecodeGraph symbol_loop_graph(int num_symbols, double self_loop);

/// Chains replicated per left context and joined with the given symbol
/// transition probabilities; the first chain is entered with the stationary
/// distribution. Pairs with zero probability are left out.
DecodeGraph bigram_graph(const MatrixXd& transitions, double self_loop);

struct DecodeConfig {
  double beam = std::numeric_limits<double>::infinity();
  int max_active = std::numeric_limits<int>::max();
  double acoustic_scale = 0.1;
  void validate() const;
};

struct DecodeResult {
  std::vector<int> symbols;  // olabels along the best path
  std::vector<int> states;   // best state per frame
  double score = 0.0;
  std::size_t frames = 0;
  std::size_t tokens_expanded = 0;  // surviving tokens summed over frames
  std::size_t peak_tokens = 0;
  double seconds = 0.0;
};

/// Viterbi over per-frame log-likelihoods (frames x symbols). A path's score
/// adds, frame by frame, arc log-probability then acoustic_scale * loglik.
/// Ties between predecessors go to the lower state id.
DecodeResult decode_loglik(const DecodeGraph& graph, const MatrixXd& loglik, const DecodeConfig& config);

/// Network forward pass followed by decode_loglik; seconds covers both.
DecodeResult decode(const nnet::Params& params, const nnet::NetworkSpec& spec, const DecodeGraph& graph,
                    const MatrixXd& frames, const DecodeConfig& config);

std::size_t edit_distance(std::span<const int> a, std::span<const int> b);
/// edit_distance / |reference|; the reference must be non-empty.
double token_error_rate(std::span<const int> hypothesis, std::span<const int> reference);

struct UtteranceDecode {
  std::vector<int> hypothesis;
  std::vector<int> reference;
  bool failed = false;
  std::string error;
  DecodeResult result;
};

struct SweepRow {
  int max_active = 0;
  double beam = 0.0;
  double acoustic_scale = 0.0;
  std::size_t utterances = 0;
  std::size_t failures = 0;
  double ter = 0.0;  // total edits / total reference symbols; failed utterances count as empty hypotheses
  double rtf = 0.0;  // total processing seconds / total audio seconds
  double tokens_expanded = 0.0;  // mean per utterance that decoded
};

/// Decodes every utterance; failures are recorded, not thrown.
std::vector<UtteranceDecode> decode_dataset(const nnet::Params& params, const nnet::NetworkSpec& spec,
                                            const DecodeGraph& graph, const data::Dataset& dataset,
                                            const DecodeConfig& config);

/// One row per (max_active, beam) pair, max_active varying slowest. The
/// forward pass runs once per utterance and its time is charged to every row.
std::vector<SweepRow> sweep(const nnet::Params& params, const nnet::NetworkSpec& spec, const DecodeGraph& graph,
                            const data::Dataset& dataset, std::span<const int> max_active,
                            std::span<const double> beams, double acoustic_scale, double frame_period = 0.01);

std::string sweep_to_tsv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> sweep_from_tsv(const std::string& text);

}  // namespace rankshrink::decoder

#endif  // RANKSHRINK_DECODER_HPP
