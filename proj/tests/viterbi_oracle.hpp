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


// Reference Viterbi implementations shared by the decoder tests and the
// acceptance suite. Deliberately naive: dense score tables, no tokens.

#ifndef RANKSHRINK_TESTS_VITERBI_ORACLE_HPP
#define RANKSHRINK_TESTS_VITERBI_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "rankshrink/decoder.hpp"

namespace rankshrink::testing::oracle {

struct Path {
  double score = -std::numeric_limits<double>::infinity();
  std::vector<int> states;
  std::vector<int> symbols;
};

inline MatrixXd random_loglik(Eigen::Index frames, Eigen::Index symbols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 2.0);
  MatrixXd z(frames, symbols);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const double m = z.row(t).maxCoeff();
    z.row(t).array() -= m + std::log((z.row(t).array() - m).exp().sum());
  }
  return z;
}

// delta[t][q] = max over predecessors p (ascending, first maximum kept) of
// delta[t-1][p] + logp(p, q) + scale * loglik[t][sym(q)].
inline Path viterbi(const decoder::DecodeGraph& g, const MatrixXd& ll, double scale) {
  const double ninf = -std::numeric_limits<double>::infinity();
  const auto n = static_cast<std::size_t>(g.num_states());
  const auto T = static_cast<std::size_t>(ll.rows());
  std::vector<std::vector<double>> delta(T, std::vector<double>(n, ninf));
  std::vector<std::vector<int>> from(T, std::vector<int>(n, -1));
  std::vector<std::vector<int>> label(T, std::vector<int>(n, -1));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t p = 0; p < n; ++p) {
      const double base = t == 0 ? (static_cast<int>(p) == g.start ? 0.0 : ninf) : delta[t - 1][p];
      if (base == ninf) continue;
      for (const auto& a : g.arcs[p]) {
        const auto q = static_cast<std::size_t>(a.to);
        const double cand = base + a.logp + scale * ll(static_cast<Eigen::Index>(t), g.symbols[q]);
        if (cand > delta[t][q]) {
          delta[t][q] = cand;
          from[t][q] = static_cast<int>(p);
          label[t][q] = a.olabel;
        }
      }
    }
  }
  Path best;
  int end = -1;
  std::vector<int> finals = g.finals;
  std::sort(finals.begin(), finals.end());
  for (int f : finals) {
    if (delta[T - 1][static_cast<std::size_t>(f)] > best.score) {
      best.score = delta[T - 1][static_cast<std::size_t>(f)];
      end = f;
    }
  }
  if (end < 0) return best;
  best.states.resize(T);
  for (std::size_t t = T; t-- > 0;) {
    best.states[t] = end;
    if (label[t][static_cast<std::size_t>(end)] >= 0) best.symbols.push_back(label[t][static_cast<std::size_t>(end)]);
    end = from[t][static_cast<std::size_t>(end)];
  }
  std::reverse(best.symbols.begin(), best.symbols.end());
  return best;
}

// Every state sequence of length T, scored in decoding order. Exponential;
// keep T and the state count small.
inline Path brute_force(const decoder::DecodeGraph& g, const MatrixXd& ll, double scale) {
  Path best;
  const int n = g.num_states();
  const auto T = static_cast<int>(ll.rows());
  std::vector<int> states(static_cast<std::size_t>(T));
  std::function<void(int, int, double)> rec = [&](int t, int from, double score) {
    if (t == T) {
      if (std::find(g.finals.begin(), g.finals.end(), from) != g.finals.end() && score > best.score) {
        best.score = score;
        best.states = states;
      }
      return;
    }
    for (int q = 0; q < n; ++q) {
      double arc = -std::numeric_limits<double>::infinity();
      for (const auto& a : g.arcs[static_cast<std::size_t>(from)]) {
        if (a.to == q) arc = std::max(arc, a.logp);
      }
      if (arc == -std::numeric_limits<double>::infinity()) continue;
      states[static_cast<std::size_t>(t)] = q;
      rec(t + 1, q, score + arc + scale * ll(t, g.symbols[static_cast<std::size_t>(q)]));
    }
  };
  rec(0, g.start, 0.0);
  return best;
}

// Keeps only the single best state per frame (lowest id on ties).
inline Path greedy(const decoder::DecodeGraph& g, const MatrixXd& ll, double scale) {
  Path p;
  int state = g.start;
  double score = 0.0;
  for (Eigen::Index t = 0; t < ll.rows(); ++t) {
    int best_q = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& a : g.arcs[static_cast<std::size_t>(state)]) {
      const double cand = score + a.logp + scale * ll(t, g.symbols[static_cast<std::size_t>(a.to)]);
      if (cand > best || (cand == best && a.to < best_q)) {
        best = cand;
        best_q = a.to;
      }
    }
    state = best_q;
    score = best;
    p.states.push_back(state);
  }
  p.score = score;
  return p;
}

struct Instance {
  decoder::DecodeGraph graph;
  MatrixXd loglik;
  double acoustic_scale = 1.0;
};

// Start state plus 1..max_states-1 emitting states with random arcs; a chain
// start -> 1 -> 2 -> ... keeps every state reachable.
inline Instance random_instance(std::mt19937_64& rng, int max_states, int max_frames, int max_symbols) {
  std::uniform_int_distribution<int> states(2, max_states);
  std::uniform_int_distribution<int> frames(1, max_frames);
  std::uniform_int_distribution<int> symbols(1, max_symbols);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Instance inst;
  const int n = states(rng);
  const int S = symbols(rng);
  auto& g = inst.graph;
  g.symbols.assign(static_cast<std::size_t>(n), -1);
  g.arcs.resize(static_cast<std::size_t>(n));
  for (int s = 1; s < n; ++s) g.symbols[static_cast<std::size_t>(s)] = static_cast<int>(rng() % static_cast<unsigned>(S));
  for (int p = 0; p < n; ++p) {
    std::vector<std::pair<int, double>> out;
    for (int q = 1; q < n; ++q) {
      if (q == p + 1 || unit(rng) < 0.5) out.emplace_back(q, 0.1 + unit(rng));
    }
    if (out.empty()) continue;
    double total = 0.0;
    for (const auto& [q, w] : out) total += w;
    const double mass = unit(rng) < 0.3 ? 0.5 + 0.5 * unit(rng) : 1.0;
    for (const auto& [q, w] : out) {
      const int olabel = unit(rng) < 0.5 ? g.symbols[static_cast<std::size_t>(q)] : -1;
      g.arcs[static_cast<std::size_t>(p)].push_back({q, std::log(mass * w / total), olabel});
    }
  }
  for (int s = 1; s < n; ++s) {
    if (unit(rng) < 0.5) g.finals.push_back(s);
  }
  if (g.finals.empty()) g.finals.push_back(n - 1);
  inst.loglik = random_loglik(frames(rng), S, rng);
  inst.acoustic_scale = unit(rng) < 0.5 ? 1.0 : 0.05 + unit(rng);
  return inst;
}

}  // namespace rankshrink::testing::oracle

#endif  // RANKSHRINK_TESTS_VITERBI_ORACLE_HPP
