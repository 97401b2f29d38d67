// Copyright 2026 The SynRewrite Authors
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

// Self-contained numerical checks shared by `synrewrite selftest` and the
// acceptance runner. Every oracle here is written independently of the code
// under test (brute-force loops, full sorts, finite differences).

#ifndef SYNREWRITE_TOOLS_CHECKS_HPP_
#define SYNREWRITE_TOOLS_CHECKS_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "synrewrite/synrewrite.hpp"

namespace synrewrite::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

inline std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <typename Fn>
CheckResult timed(std::string name, Fn&& fn) {
  auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = fn();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = std::move(name);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Leakage: element-by-element counting over vectors, no set algebra.

inline CheckResult leakage_oracle(int n_triples = 500, std::uint64_t seed = 17) {
  return timed("leakage oracle", [&] {
    std::mt19937_64 rng(seed);
    const std::vector<std::string> pool = {"alpha", "beta",  "gamma", "delta", "eps",
                                           "zeta",  "eta",   "theta", "iota",  "kappa",
                                           "2012",  "white collar", "neighborhood watch"};
    auto draw = [&] {
      std::vector<std::string> v;
      for (const auto& s : pool) {
        if (rng() % 3 == 0) v.push_back(s);
      }
      return v;
    };
    auto contains = [](const std::vector<std::string>& v, const std::string& s) {
      for (const auto& x : v) {
        if (x == s) return true;
      }
      return false;
    };
    int bad = 0;
    for (int t = 0; t < n_triples; ++t) {
      auto q = draw(), h = draw(), d = draw();
      long N = 0, M = 0, K = 0;
      for (const auto& e : q) {
        ++N;
        if (!contains(h, e)) {
          ++M;
          if (contains(d, e)) ++K;
        }
      }
      double lr = M > 0 ? double(K) / double(M) : 0.0;
      double plr = N > 0 ? double(K) / double(N) : 0.0;
      auto s = leakage_for_record(EntitySet(q.begin(), q.end()), EntitySet(h.begin(), h.end()),
                                  EntitySet(d.begin(), d.end()));
      if (s.n_query_entities != N || s.m_not_in_history != M || s.k_solely_from_docans != K ||
          s.lr != lr || s.pure_lr != plr) {
        ++bad;
      }
    }
    CheckResult r;
    r.pass = bad == 0;
    r.detail = std::to_string(n_triples - bad) + "/" + std::to_string(n_triples) + " exact";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Retrieval: full-sort brute force with ties built in by duplicated rows.

inline std::vector<double> unit_gaussian(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> g;
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n = 0;
  for (auto& x : v) {
    x = g(rng);
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

inline CheckResult retrieval_oracle(int n_docs = 1000, int n_queries = 100, int dim = 32,
                                    std::uint64_t seed = 17) {
  return timed("retrieval oracle", [&] {
    std::mt19937_64 rng(seed);
    std::vector<std::string> ids;
    std::vector<double> rows;
    std::vector<std::vector<double>> distinct;
    for (int i = 0; i < n_docs; ++i) {
      // About one row in five repeats an earlier row, producing exact ties.
      std::vector<double> v = (i > 0 && rng() % 5 == 0)
                                  ? distinct[rng() % distinct.size()]
                                  : unit_gaussian(rng, dim);
      distinct.push_back(v);
      char id[16];
      std::snprintf(id, sizeof id, "d%04d", static_cast<int>(rng() % 100000));
      ids.push_back(std::string(id) + "-" + std::to_string(i));
      rows.insert(rows.end(), v.begin(), v.end());
    }
    FlatIndex index(dim, ids, rows);
    int bad = 0, ties_seen = 0;
    for (int q = 0; q < n_queries; ++q) {
      // Half the queries are copies of index rows so duplicated rows tie at the top.
      std::vector<double> qv = q % 2 == 0 ? distinct[rng() % distinct.size()] : unit_gaussian(rng, dim);
      std::vector<std::pair<double, std::string>> all;
      for (int i = 0; i < n_docs; ++i) {
        double s = 0;
        for (int d = 0; d < dim; ++d) s += rows[std::size_t(i) * std::size_t(dim) + std::size_t(d)] * qv[std::size_t(d)];
        all.push_back({s, ids[std::size_t(i)]});
      }
      std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      for (std::size_t i = 1; i < 10; ++i) {
        if (all[i].first == all[i - 1].first) ++ties_seen;
      }
      for (int k : {1, 5, 10}) {
        auto res = index.search(qv, k);
        if (res.ranked.size() != std::size_t(k)) {
          ++bad;
          continue;
        }
        for (int i = 0; i < k; ++i) {
          if (res.ranked[std::size_t(i)].doc_id != all[std::size_t(i)].second ||
              res.ranked[std::size_t(i)].score != all[std::size_t(i)].first) {
            ++bad;
            break;
          }
        }
      }
    }
    CheckResult r;
    r.pass = bad == 0 && ties_seen > 0;
    r.detail = std::to_string(3 * n_queries - bad) + "/" + std::to_string(3 * n_queries) +
               " rankings exact, " + std::to_string(ties_seen) + " tied adjacent pairs in top-10";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Model gradients: central differences on every parameter entry.

struct GradCheckStats {
  double max_group_rel = 0;   // max over groups of ||a - n|| / max(||a||, ||n||)
  double max_abs = 0;         // max entrywise |a - n|
  std::string worst_group;
  std::vector<double> group_rel;
};

inline TinySeq2Seq gradcheck_model(int hidden = 6, std::uint64_t seed = 17) {
  std::vector<std::string> words = {"what", "is", "the", "owner", "of", "it", "blue", "tamsin"};
  TinySeq2Seq m(Vocab(words), hidden, seed);
  // Wider init than the default so every entry has a gradient well above
  // finite-difference roundoff.
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (Eigen::Index i = 0; i < m.params().total(); ++i) m.params().flat()[i] = u(rng);
  return m;
}

inline GradCheckStats model_gradient_stats(TinySeq2Seq& model, double eps = 1e-5) {
  TokenIds in1 = {7, 8, 4, 9, 10}, out1 = {8, 9, 13, 14, Vocab::kEos};
  TokenIds in2 = {12, 11, 6, 12, 7, 8}, out2 = {7, 8, 9, 10, 12, Vocab::kEos};
  std::vector<LogProbTerm> terms = {{&in1, &out1, -1.0}, {&in2, &out2, -0.5}};
  auto loss = [&] {
    return -sequence_logprob(model, in1, out1) - 0.5 * sequence_logprob(model, in2, out2);
  };
  ParamSet g = backward(model, terms);
  GradCheckStats st;
  for (int p = 0; p < kNumParams; ++p) {
    auto id = static_cast<ParamId>(p);
    double diff2 = 0, a2 = 0, n2 = 0;
    for (Eigen::Index i = 0; i < model.params().count(id); ++i) {
      double& w = model.params().flat()[model.params().offset(id) + i];
      const double w0 = w;
      w = w0 + eps;
      const double lp = loss();
      w = w0 - eps;
      const double lm = loss();
      w = w0;
      const double num = (lp - lm) / (2 * eps);
      const double ana = g.flat()[model.params().offset(id) + i];
      diff2 += (ana - num) * (ana - num);
      a2 += ana * ana;
      n2 += num * num;
      st.max_abs = std::max(st.max_abs, std::abs(ana - num));
    }
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    const double rel = denom > 0 ? std::sqrt(diff2) / denom : 0.0;
    st.group_rel.push_back(rel);
    if (rel >= st.max_group_rel) {
      st.max_group_rel = rel;
      st.worst_group = kParamNames[static_cast<std::size_t>(p)];
    }
  }
  return st;
}

inline CheckResult model_gradient_check(double tol = 1e-4) {
  return timed("model gradient check", [&] {
    TinySeq2Seq m = gradcheck_model();
    auto st = model_gradient_stats(m);
    CheckResult r;
    r.pass = st.max_group_rel <= tol;
    r.detail = "max group rel err " + fmt("%.3e", st.max_group_rel) + " (" + st.worst_group +
               "), max abs err " + fmt("%.3e", st.max_abs);
    return r;
  });
}

// ---------------------------------------------------------------------------
// Preference-loss gradients w.r.t. the six bundle fields.

inline LogProbBundle random_bundle(std::mt19937_64& rng, double lo = -12.0) {
  std::uniform_real_distribution<double> u(lo, -0.01);
  return {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
}

inline double* field(LogProbBundle& b, int i) {
  double* f[6] = {&b.theta_plus, &b.theta_minus, &b.ref_plus, &b.ref_minus, &b.anc_plus,
                  &b.anc_minus};
  return f[i];
}

inline double loss_gradient_max_rel(int n_bundles = 100, std::uint64_t seed = 17,
                                    double beta = 0.3) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  const double h = 1e-5;
  for (int t = 0; t < n_bundles; ++t) {
    LogProbBundle b = random_bundle(rng);
    for (PrefVariant v : {PrefVariant::kDpo, PrefVariant::kApo, PrefVariant::kApoZero}) {
      auto val = preference_loss(b, v, beta);
      for (int f = 0; f < 6; ++f) {
        LogProbBundle bp = b, bm = b;
        *field(bp, f) += h;
        *field(bm, f) -= h;
        // Fourth-order central difference keeps truncation error well under 1e-8.
        LogProbBundle bp2 = b, bm2 = b;
        *field(bp2, f) += 2 * h;
        *field(bm2, f) -= 2 * h;
        const double num = (8 * (preference_loss(bp, v, beta).loss -
                                 preference_loss(bm, v, beta).loss) -
                            (preference_loss(bp2, v, beta).loss -
                             preference_loss(bm2, v, beta).loss)) /
                           (12 * h);
        const double ana = *field(val.grad, f);
        const double denom = std::max({std::abs(ana), std::abs(num), 1e-3});
        worst = std::max(worst, std::abs(ana - num) / denom);
      }
    }
  }
  return worst;
}

inline CheckResult loss_gradient_check(double tol = 1e-8) {
  return timed("loss gradient check", [&] {
    double worst = loss_gradient_max_rel();
    CheckResult r;
    r.pass = worst <= tol;
    r.detail = "max rel err " + fmt("%.3e", worst) + " over dpo/apo/apo_zero x 6 fields";
    return r;
  });
}

// ---------------------------------------------------------------------------
// Loss anchors.

inline CheckResult loss_anchor_check(int n_bundles = 100, std::uint64_t seed = 17) {
  return timed("loss anchors", [&] {
    std::mt19937_64 rng(seed);
    const double beta = 0.3;
    double dpo_dev = 0, apo_zero_dev = 0, apo_vs_dpo = 0;
    for (int t = 0; t < n_bundles; ++t) {
      LogProbBundle b = random_bundle(rng);
      LogProbBundle same_ref = b;
      same_ref.ref_plus = b.theta_plus;
      same_ref.ref_minus = b.theta_minus;
      dpo_dev = std::max(dpo_dev, std::abs(dpo_loss(same_ref, beta).loss - std::log(2.0)));
      LogProbBundle at_init = b;
      at_init.anc_plus = b.theta_plus;
      at_init.anc_minus = b.theta_minus;
      apo_zero_dev = std::max(apo_zero_dev, std::abs(apo_zero_loss(at_init, beta).loss - 1.0));
      LogProbBundle anc_is_ref = b;
      anc_is_ref.anc_plus = b.ref_plus;
      anc_is_ref.anc_minus = b.ref_minus;
      apo_vs_dpo = std::max(apo_vs_dpo, std::abs(apo_loss(anc_is_ref, beta).loss -
                                                 dpo_loss(anc_is_ref, beta).loss));
    }
    CheckResult r;
    r.pass = dpo_dev <= 1e-12 && apo_zero_dev <= 1e-12 && apo_vs_dpo == 0.0;
    r.detail = "|dpo-ln2| " + fmt("%.1e", dpo_dev) + ", |apo_zero-1| " + fmt("%.1e", apo_zero_dev) +
               ", |apo-dpo| " + fmt("%.1e", apo_vs_dpo);
    return r;
  });
}

inline std::vector<CheckResult> selftest_suite(std::uint64_t seed = 17) {
  return {leakage_oracle(500, seed), retrieval_oracle(1000, 100, 32, seed), model_gradient_check(),
          loss_gradient_check(), loss_anchor_check(100, seed)};
}

}  // namespace synrewrite::checks

#endif  // SYNREWRITE_TOOLS_CHECKS_HPP_
