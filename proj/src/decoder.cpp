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


#include "rankshrink/decoder.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <deque>
#include <iomanip>
#include <sstream>

#include "rankshrink/errors.hpp"

namespace rankshrink::decoder {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double log_sum_exp(const std::vector<Arc>& arcs) {
  double m = -std::numeric_limits<double>::infinity();
  for (const Arc& a : arcs) m = std::max(m, a.logp);
  double s = 0.0;
  for (const Arc& a : arcs) s += std::exp(a.logp - m);
  return m + std::log(s);
}

struct Token {
  int state;
  double score;
  int back;    // index into the previous frame's survivors, -1 at the first frame
  int olabel;  // of the arc that reached this token
};

void check_self_loop(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidInput("graph: self_loop probability must be in (0, 1)");
}

}  // namespace

void DecodeGraph::validate(int num_symbols) const {
  const int n = num_states();
  if (n < 2) throw InvalidInput("graph: need a start state and at least one emitting state");
  if (static_cast<int>(arcs.size()) != n) throw InvalidInput("graph: arcs and symbols sizes differ");
  if (start < 0 || start >= n) throw InvalidInput("graph: start state out of range");
  if (symbols[static_cast<std::size_t>(start)] != -1) throw InvalidInput("graph: start state must be non-emitting");
  for (int s = 0; s < n; ++s) {
    const int sym = symbols[static_cast<std::size_t>(s)];
    if (s != start && (sym < 0 || (num_symbols >= 0 && sym >= num_symbols))) {
      throw InvalidInput("graph: state " + std::to_string(s) + " has invalid symbol " + std::to_string(sym));
    }
    const auto& out = arcs[static_cast<std::size_t>(s)];
    for (const Arc& a : out) {
      if (a.to < 0 || a.to >= n) throw InvalidInput("graph: arc from state " + std::to_string(s) + " out of range");
      if (a.to == start) throw InvalidInput("graph: arcs may not enter the start state");
      if (!std::isfinite(a.logp)) throw InvalidInput("graph: non-finite arc log-probability");
      if (a.olabel < -1 || (num_symbols >= 0 && a.olabel >= num_symbols)) {
        throw InvalidInput("graph: arc output label out of range");
      }
    }
    if (!out.empty() && log_sum_exp(out) > 1e-9) {
      throw InvalidInput("graph: outgoing probabilities of state " + std::to_string(s) + " sum above 1");
    }
  }
  if (finals.empty()) throw InvalidInput("graph: no final states");
  std::vector<char> is_final(static_cast<std::size_t>(n), 0);
  for (int f : finals) {
    if (f < 0 || f >= n || f == start) throw InvalidInput("graph: invalid final state");
    if (is_final[static_cast<std::size_t>(f)]++) throw InvalidInput("graph: duplicate final state");
  }
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::deque<int> queue{start};
  seen[static_cast<std::size_t>(start)] = 1;
  while (!queue.empty()) {
    const int s = queue.front();
    queue.pop_front();
    for (const Arc& a : arcs[static_cast<std::size_t>(s)]) {
      if (!seen[static_cast<std::size_t>(a.to)]) {
        seen[static_cast<std::size_t>(a.to)] = 1;
        queue.push_back(a.to);
      }
    }
  }
  for (int s = 0; s < n; ++s) {
    if (!seen[static_cast<std::size_t>(s)]) throw InvalidInput("graph: state " + std::to_string(s) + " unreachable");
  }
}

DecodeGraph symbol_loop_graph(int num_symbols, double self_loop) {
  if (num_symbols <= 0) throw InvalidInput("symbol_loop_graph: num_symbols must be positive");
  check_self_loop(self_loop);
  DecodeGraph g;
  const int n = 1 + 3 * num_symbols;
  g.symbols.assign(static_cast<std::size_t>(n), -1);
  g.arcs.resize(static_cast<std::size_t>(n));
  auto first = [](int s) { return 1 + 3 * s; };
  const double enter = -std::log(static_cast<double>(num_symbols));
  const double stay = std::log(self_loop);
  const double leave = std::log1p(-self_loop);
  for (int s = 0; s < num_symbols; ++s) {
    g.arcs[0].push_back({first(s), enter, s});
    for (int j = 0; j < 3; ++j) {
      const int q = first(s) + j;
      g.symbols[static_cast<std::size_t>(q)] = s;
      auto& out = g.arcs[static_cast<std::size_t>(q)];
      out.push_back({q, stay, -1});
      if (j < 2) {
        out.push_back({q + 1, leave, -1});
      } else {
        for (int t = 0; t < num_symbols; ++t) out.push_back({first(t), leave + enter, t});
      }
    }
    g.finals.push_back(first(s) + 2);
  }
  return g;
}

DecodeGraph bigram_graph(const MatrixXd& transitions, double self_loop) {
  const auto S = static_cast<int>(transitions.rows());
  if (S == 0 || transitions.cols() != S) throw InvalidInput("bigram_graph: need a square transition matrix");
  check_self_loop(self_loop);
  const VectorXd pi = data::stationary_distribution(transitions);

  // Chain index c covers contexts: c < S is "no predecessor, symbol c";
  // later chains are (prev, sym) pairs with nonzero probability.
  std::vector<std::pair<int, int>> chains;
  for (int s = 0; s < S; ++s) chains.emplace_back(-1, s);
  std::vector<int> pair_chain(static_cast<std::size_t>(S * S), -1);
  for (int a = 0; a < S; ++a) {
    for (int b = 0; b < S; ++b) {
      if (transitions(a, b) > 0.0) {
        pair_chain[static_cast<std::size_t>(a * S + b)] = static_cast<int>(chains.size());
        chains.emplace_back(a, b);
      }
    }
  }
  DecodeGraph g;
  const int n = 1 + 3 * static_cast<int>(chains.size());
  g.symbols.assign(static_cast<std::size_t>(n), -1);
  g.arcs.resize(static_cast<std::size_t>(n));
  auto first = [](int c) { return 1 + 3 * c; };
  const double stay = std::log(self_loop);
  const double leave = std::log1p(-self_loop);
  for (int s = 0; s < S; ++s) {
    if (pi(s) > 0.0) g.arcs[0].push_back({first(s), std::log(pi(s)), s});
  }
  for (int c = 0; c < static_cast<int>(chains.size()); ++c) {
    const int sym = chains[static_cast<std::size_t>(c)].second;
    for (int j = 0; j < 3; ++j) {
      const int q = first(c) + j;
      g.symbols[static_cast<std::size_t>(q)] = sym;
      auto& out = g.arcs[static_cast<std::size_t>(q)];
      out.push_back({q, stay, -1});
      if (j < 2) {
        out.push_back({q + 1, leave, -1});
      } else {
        for (int t = 0; t < S; ++t) {
          const int next = pair_chain[static_cast<std::size_t>(sym * S + t)];
          if (next >= 0) out.push_back({first(next), leave + std::log(transitions(sym, t)), t});
        }
      }
    }
    g.finals.push_back(first(c) + 2);
  }
  // Chains whose context never occurs (stationary mass zero) are unreachable.
  g.validate(S);
  return g;
}

void DecodeConfig::validate() const {
  if (!(beam > 0.0)) throw InvalidInput("decode config: beam must be positive");
  if (max_active <= 0) throw InvalidInput("decode config: max_active must be positive");
  if (!(acoustic_scale > 0.0) || !std::isfinite(acoustic_scale)) {
    throw InvalidInput("decode config: acoustic_scale must be finite and positive");
  }
}

DecodeResult decode_loglik(const DecodeGraph& graph, const MatrixXd& loglik, const DecodeConfig& config) {
  const auto t0 = Clock::now();
  config.validate();
  graph.validate(static_cast<int>(loglik.cols()));
  if (loglik.rows() == 0) throw InvalidInput("decode: no frames");
  if (!all_finite(loglik)) throw InvalidInput("decode: non-finite log-likelihoods");

  const auto n = static_cast<std::size_t>(graph.num_states());
  const auto T = static_cast<std::size_t>(loglik.rows());
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  std::vector<double> best(n, kNone);
  std::vector<int> back(n, -1);
  std::vector<int> label(n, -1);
  std::vector<int> touched;
  std::vector<std::vector<Token>> lattice(T);

  DecodeResult result;
  std::vector<Token> prev{{graph.start, 0.0, -1, -1}};
  for (std::size_t t = 0; t < T; ++t) {
    touched.clear();
    for (std::size_t i = 0; i < prev.size(); ++i) {
      const Token& tok = prev[i];
      for (const Arc& a : graph.arcs[static_cast<std::size_t>(tok.state)]) {
        const auto q = static_cast<std::size_t>(a.to);
        const double cand =
            tok.score + a.logp + config.acoustic_scale * loglik(static_cast<Eigen::Index>(t), graph.symbols[q]);
        if (best[q] == kNone) touched.push_back(a.to);
        if (cand > best[q]) {
          best[q] = cand;
          back[q] = t == 0 ? -1 : static_cast<int>(i);
          label[q] = a.olabel;
        }
      }
    }
    if (touched.empty()) throw DecodeFailure("decode: no surviving token at frame " + std::to_string(t), static_cast<int>(t));

    std::vector<Token>& alive = lattice[t];
    double top = kNone;
    for (int q : touched) top = std::max(top, best[static_cast<std::size_t>(q)]);
    const double floor = top - config.beam;
    for (int q : touched) {
      const auto s = static_cast<std::size_t>(q);
      if (best[s] >= floor) alive.push_back({q, best[s], back[s], label[s]});
      best[s] = kNone;
    }
    if (alive.size() > static_cast<std::size_t>(config.max_active)) {
      const auto keep = static_cast<std::ptrdiff_t>(config.max_active);
      std::nth_element(alive.begin(), alive.begin() + keep - 1, alive.end(), [](const Token& a, const Token& b) {
        return a.score != b.score ? a.score > b.score : a.state < b.state;
      });
      alive.resize(static_cast<std::size_t>(keep));
    }
    std::sort(alive.begin(), alive.end(), [](const Token& a, const Token& b) { return a.state < b.state; });
    result.tokens_expanded += alive.size();
    result.peak_tokens = std::max(result.peak_tokens, alive.size());
    prev = alive;
  }

  std::vector<char> is_final(n, 0);
  for (int f : graph.finals) is_final[static_cast<std::size_t>(f)] = 1;
  int winner = -1;
  for (std::size_t i = 0; i < prev.size(); ++i) {
    if (!is_final[static_cast<std::size_t>(prev[i].state)]) continue;
    if (winner < 0 || prev[i].score > prev[static_cast<std::size_t>(winner)].score) winner = static_cast<int>(i);
  }
  if (winner < 0) throw DecodeFailure("decode: no token in a final state at frame " + std::to_string(T - 1), static_cast<int>(T - 1));

  result.score = prev[static_cast<std::size_t>(winner)].score;
  result.frames = T;
  result.states.resize(T);
  int idx = winner;
  for (std::size_t t = T; t-- > 0;) {
    const Token& tok = lattice[t][static_cast<std::size_t>(idx)];
    result.states[t] = tok.state;
    if (tok.olabel >= 0) result.symbols.push_back(tok.olabel);
    idx = tok.back;
  }
  std::reverse(result.symbols.begin(), result.symbols.end());
  result.seconds = seconds_since(t0);
  return result;
}

DecodeResult decode(const nnet::Params& params, const nnet::NetworkSpec& spec, const DecodeGraph& graph,
                    const MatrixXd& frames, const DecodeConfig& config) {
  const auto t0 = Clock::now();
  const MatrixXd loglik = nnet::forward(params, spec, frames);
  DecodeResult r = decode_loglik(graph, loglik, config);
  r.seconds = seconds_since(t0);
  return r;
}

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0u : 1u)});
      diag = up;
    }
  }
  return row[b.size()];
}

double token_error_rate(std::span<const int> hypothesis, std::span<const int> reference) {
  if (reference.empty()) throw InvalidInput("token_error_rate: empty reference");
  return static_cast<double>(edit_distance(hypothesis, reference)) / static_cast<double>(reference.size());
}

std::vector<UtteranceDecode> decode_dataset(const nnet::Params& params, const nnet::NetworkSpec& spec,
                                            const DecodeGraph& graph, const data::Dataset& dataset,
                                            const DecodeConfig& config) {
  std::vector<UtteranceDecode> out;
  for (const auto& u : dataset.utterances) {
    UtteranceDecode d;
    d.reference = data::reference_symbols(u.labels, spec.left_context(), spec.right_context());
    try {
      d.result = decode(params, spec, graph, u.frames, config);
      d.hypothesis = d.result.symbols;
    } catch (const DecodeFailure& e) {
      d.failed = true;
      d.error = e.what();
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<SweepRow> sweep(const nnet::Params& params, const nnet::NetworkSpec& spec, const DecodeGraph& graph,
                            const data::Dataset& dataset, std::span<const int> max_active,
                            std::span<const double> beams, double acoustic_scale, double frame_period) {
  if (max_active.empty() || beams.empty()) throw InvalidInput("sweep: empty configuration lists");
  if (dataset.utterances.empty()) throw InvalidInput("sweep: empty dataset");
  if (!(frame_period > 0.0)) throw InvalidInput("sweep: frame_period must be positive");

  struct Prepared {
    MatrixXd loglik;
    std::vector<int> reference;
    double forward_seconds;
    double audio_seconds;
  };
  std::vector<Prepared> prepared;
  for (const auto& u : dataset.utterances) {
    const auto t0 = Clock::now();
    MatrixXd ll = nnet::forward(params, spec, u.frames);
    prepared.push_back({std::move(ll), data::reference_symbols(u.labels, spec.left_context(), spec.right_context()),
                        seconds_since(t0), static_cast<double>(u.frames.rows()) * frame_period});
  }

  std::vector<SweepRow> rows;
  for (int ma : max_active) {
    for (double beam : beams) {
      DecodeConfig config{beam, ma, acoustic_scale};
      config.validate();
      SweepRow row{ma, beam, acoustic_scale, prepared.size(), 0, 0.0, 0.0, 0.0};
      std::size_t edits = 0, ref_len = 0, tokens = 0;
      double processing = 0.0, audio = 0.0;
      for (const auto& p : prepared) {
        const auto t0 = Clock::now();
        std::vector<int> hyp;
        try {
          const DecodeResult r = decode_loglik(graph, p.loglik, config);
          hyp = r.symbols;
          tokens += r.tokens_expanded;
        } catch (const DecodeFailure&) {
          ++row.failures;
        }
        processing += p.forward_seconds + seconds_since(t0);
        audio += p.audio_seconds;
        edits += edit_distance(hyp, p.reference);
        ref_len += p.reference.size();
      }
      row.ter = static_cast<double>(edits) / static_cast<double>(ref_len);
      row.rtf = processing / audio;
      const std::size_t decoded = row.utterances - row.failures;
      row.tokens_expanded = decoded == 0 ? 0.0 : static_cast<double>(tokens) / static_cast<double>(decoded);
      rows.push_back(row);
    }
  }
  return rows;
}

namespace {

// Shortest text that parses back to the same double.
std::string shortest(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string sweep_to_tsv(const std::vector<SweepRow>& rows) {
  std::string out = "max_active\tbeam\tacoustic_scale\tutterances\tfailures\tter\trtf\ttokens_expanded\n";
  for (const auto& r : rows) {
    out += std::to_string(r.max_active) + '\t' + shortest(r.beam) + '\t' + shortest(r.acoustic_scale) + '\t' +
           std::to_string(r.utterances) + '\t' + std::to_string(r.failures) + '\t' + shortest(r.ter) + '\t' +
           shortest(r.rtf) + '\t' + shortest(r.tokens_expanded) + '\n';
  }
  return out;
}

std::vector<SweepRow> sweep_from_tsv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("max_active\tbeam\t", 0) != 0) {
    throw InvalidInput("sweep table: missing header");
  }
  std::vector<SweepRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    SweepRow r;
    std::string beam;
    ls >> r.max_active >> beam >> r.acoustic_scale >> r.utterances >> r.failures >> r.ter >> r.rtf >>
        r.tokens_expanded;
    if (ls.fail()) throw InvalidInput("sweep table: malformed row '" + line + "'");
    r.beam = beam == "inf" ? std::numeric_limits<double>::infinity() : std::stod(beam);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace rankshrink::decoder
