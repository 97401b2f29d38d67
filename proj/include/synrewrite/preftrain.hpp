// Copyright 2026 The SynRewrite Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SYNREWRITE_PREFTRAIN_HPP_
#define SYNREWRITE_PREFTRAIN_HPP_

// Supervised and preference training for the rewriter.
//
// Preference losses over a pair (x, y+, y-), with policy log-probs
// Δθ± = log πθ(y±|x), reference Δref±, and anchor Δanc±:
//
//   DPO:       -log σ(β((Δθ+ - Δθ-) - (Δref+ - Δref-)))
//   APO:       -log σ(β((Δθ+ - Δθ-) - (Δanc+ - Δanc-)))
//   APO-zero:  (1 - σ(β(Δθ+ - Δanc+))) + σ(β(Δθ- - Δanc-))
//
// For APO-zero the anchor is the policy before preference training.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "synrewrite/common.hpp"
#include "synrewrite/datamodel.hpp"
#include "synrewrite/textmetrics.hpp"
#include "synrewrite/tinyseq2seq.hpp"

namespace synrewrite {

namespace detail {

inline double log1p_exp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Rng>
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Supervised fine-tuning

struct Seq2SeqExample {
  TokenIds input;
  TokenIds target;  // ends with EOS
};

struct LossAndGrad {
  double loss = 0;
  ParamSet grads;
};

// Mean over examples of the summed per-token negative log-likelihood.
inline LossAndGrad sft_loss(const TinySeq2Seq& model, std::span<const Seq2SeqExample> batch) {
  if (batch.empty()) throw ValidationError("sft_loss: empty batch");
  LossAndGrad out{0.0, model.zero_like()};
  const double w = -1.0 / double(batch.size());
  for (const auto& ex : batch) {
    out.loss += w * accumulate_logprob_gradient(model, ex.input, ex.target, w, out.grads);
  }
  out.grads.check_finite("sft gradient");
  return out;
}

struct SftConfig {
  int epochs = 2;
  int batch = 1;
  AdamConfig adam = AdamConfig::sft_defaults();
  std::uint64_t seed = 17;
};

struct SftEpochLog {
  int epoch = 0;
  double mean_loss = 0;
};

// Runs mini-batch Adam over `examples`. `on_epoch` (optional) is called after
// each epoch; returning false stops training early.
inline std::vector<SftEpochLog> train_sft(
    TinySeq2Seq& model, const std::vector<Seq2SeqExample>& examples, const SftConfig& cfg,
    const std::function<bool(const SftEpochLog&)>& on_epoch = {}) {
  if (examples.empty()) throw ValidationError("train_sft: no examples");
  if (cfg.batch < 1) throw ValidationError("train_sft: batch must be >= 1");
  const std::size_t batch = static_cast<std::size_t>(cfg.batch);
  const long steps_per_epoch = static_cast<long>((examples.size() + batch - 1) / batch);
  AdamConfig adam = cfg.adam;
  adam.total_steps = steps_per_epoch * cfg.epochs;
  OptimState opt(model.params().total());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<SftEpochLog> history;
  std::vector<Seq2SeqExample> mb;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle_indices(order, rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      mb.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) {
        mb.push_back(examples[order[i]]);
      }
      auto lg = sft_loss(model, mb);
      loss_sum += lg.loss * double(mb.size());
      adam_step(model.params(), lg.grads, opt, adam);
      model.set_step(model.step() + 1);
    }
    history.push_back({epoch, loss_sum / double(examples.size())});
    if (on_epoch && !on_epoch(history.back())) break;
  }
  return history;
}

// ---------------------------------------------------------------------------
// Preference losses

struct LogProbBundle {
  double theta_plus = 0, theta_minus = 0;
  double ref_plus = 0, ref_minus = 0;
  double anc_plus = 0, anc_minus = 0;
};

enum class PrefVariant { kDpo, kApo, kApoZero };

inline PrefVariant pref_variant_from_string(const std::string& s) {
  if (s == "dpo") return PrefVariant::kDpo;
  if (s == "apo") return PrefVariant::kApo;
  if (s == "apo_zero") return PrefVariant::kApoZero;
  throw ValidationError("unknown preference loss '" + s + "' (dpo|apo|apo_zero)");
}

inline const char* to_string(PrefVariant v) {
  switch (v) {
    case PrefVariant::kDpo:
      return "dpo";
    case PrefVariant::kApo:
      return "apo";
    case PrefVariant::kApoZero:
      return "apo_zero";
  }
  return "?";
}

// Loss value and its partial derivatives with respect to every bundle field.
struct PrefLossValue {
  double loss = 0;
  LogProbBundle grad;
};

namespace detail {

// -log σ(β((a+ - a-) - (b+ - b-))) and its gradient, written into the
// policy and baseline slots given.
inline PrefLossValue logistic_pair_loss(double beta, double pol_plus, double pol_minus,
                                        double base_plus, double base_minus,
                                        bool baseline_is_anchor) {
  if (!(beta > 0)) throw ValidationError("beta must be positive");
  const double u = beta * ((pol_plus - pol_minus) - (base_plus - base_minus));
  PrefLossValue v;
  v.loss = log1p_exp(-u);
  const double g = -beta * sigmoid_scalar(-u);  // dL/d(pol_plus)
  v.grad.theta_plus = g;
  v.grad.theta_minus = -g;
  if (baseline_is_anchor) {
    v.grad.anc_plus = -g;
    v.grad.anc_minus = g;
  } else {
    v.grad.ref_plus = -g;
    v.grad.ref_minus = g;
  }
  return v;
}

}  // namespace detail

inline PrefLossValue dpo_loss(const LogProbBundle& b, double beta) {
  return detail::logistic_pair_loss(beta, b.theta_plus, b.theta_minus, b.ref_plus, b.ref_minus,
                                    false);
}

inline PrefLossValue apo_loss(const LogProbBundle& b, double beta) {
  return detail::logistic_pair_loss(beta, b.theta_plus, b.theta_minus, b.anc_plus, b.anc_minus,
                                    true);
}

inline PrefLossValue apo_zero_loss(const LogProbBundle& b, double beta) {
  if (!(beta > 0)) throw ValidationError("beta must be positive");
  const double xc = beta * (b.theta_plus - b.anc_plus);
  const double xr = beta * (b.theta_minus - b.anc_minus);
  // 1 - σ(x) is evaluated as σ(-x) to avoid cancellation when σ(x) -> 1.
  const double sc = detail::sigmoid_scalar(xc), sc_c = detail::sigmoid_scalar(-xc);
  const double sr = detail::sigmoid_scalar(xr), sr_c = detail::sigmoid_scalar(-xr);
  PrefLossValue v;
  v.loss = sc_c + sr;
  const double gc = -beta * sc * sc_c;
  const double gr = beta * sr * sr_c;
  v.grad.theta_plus = gc;
  v.grad.anc_plus = -gc;
  v.grad.theta_minus = gr;
  v.grad.anc_minus = -gr;
  return v;
}

inline PrefLossValue preference_loss(const LogProbBundle& b, PrefVariant variant, double beta) {
  switch (variant) {
    case PrefVariant::kDpo:
      return dpo_loss(b, beta);
    case PrefVariant::kApo:
      return apo_loss(b, beta);
    case PrefVariant::kApoZero:
      return apo_zero_loss(b, beta);
  }
  throw Error("unreachable");
}

// ---------------------------------------------------------------------------
// Preference pairs from downstream feedback

struct PreferencePair {
  TokenIds input;
  TokenIds chosen;    // without EOS
  TokenIds rejected;  // without EOS
  double score_chosen = 0;
  double score_rejected = 0;
  std::string record_id;

  double margin() const { return score_chosen - score_rejected; }
};

// Downstream signal for one candidate rewrite: reciprocal rank of the gold
// document (0 past the cutoff) and ROUGE-L (0-100) of the generated answer.
struct CandidateFeedback {
  double reciprocal_rank = 0;
  double answer_rouge_l = 0;
};

using FeedbackFn =
    std::function<CandidateFeedback(const QueryRecord& record, const std::string& rewrite)>;

struct PairConfig {
  int num_candidates = 8;
  double temperature = 1.0;
  std::uint64_t seed = 17;
  double threshold = 0.05;  // minimum score margin
  double retrieval_weight = 0.5;
  double generation_weight = 0.5;
  int max_len = 32;
  int max_history_turns = -1;
};

struct PairSummary {
  std::size_t records = 0;
  std::size_t pairs = 0;
  std::size_t skipped_identical = 0;
  std::size_t skipped_margin = 0;
};

inline double feedback_score(const CandidateFeedback& f, const PairConfig& cfg) {
  return cfg.retrieval_weight * f.reciprocal_rank +
         cfg.generation_weight * f.answer_rouge_l / 100.0;
}

struct ScoredCandidate {
  TokenIds tokens;
  double score = 0;
};

// argmax / argmin of score; ties go to the shorter candidate, then the
// earlier one.
inline std::pair<std::size_t, std::size_t> pick_chosen_rejected(
    const std::vector<ScoredCandidate>& cands) {
  std::size_t best = 0, worst = 0;
  for (std::size_t i = 1; i < cands.size(); ++i) {
    const auto& c = cands[i];
    if (c.score > cands[best].score ||
        (c.score == cands[best].score && c.tokens.size() < cands[best].tokens.size())) {
      best = i;
    }
    if (c.score < cands[worst].score ||
        (c.score == cands[worst].score && c.tokens.size() < cands[worst].tokens.size())) {
      worst = i;
    }
  }
  return {best, worst};
}

// Samples candidates from `model` for each record, scores them with
// `feedback`, and keeps (best, worst) when their scores differ by at least
// the threshold.
inline std::vector<PreferencePair> build_preference_pairs(const std::vector<QueryRecord>& records,
                                                          const TinySeq2Seq& model,
                                                          const FeedbackFn& feedback,
                                                          const PairConfig& cfg,
                                                          PairSummary* summary = nullptr) {
  if (cfg.num_candidates < 2) throw ValidationError("need at least two candidates per record");
  PairSummary sum;
  std::vector<PreferencePair> pairs;
  const Vocab& vocab = model.vocab();
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    ++sum.records;
    TokenIds input = vocab.encode(serialize_rewriter_input(rec, cfg.max_history_turns));
    std::vector<ScoredCandidate> cands;
    for (int c = 0; c < cfg.num_candidates; ++c) {
      std::uint64_t seed =
          cfg.seed + static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(cfg.num_candidates) +
          static_cast<std::uint64_t>(c);
      TokenIds out = generate(model, input, DecodeOptions::sample(cfg.temperature, seed, cfg.max_len));
      std::string text = join_tokens(vocab.decode(out));
      cands.push_back({std::move(out), feedback_score(feedback(rec, text), cfg)});
    }
    bool all_same = std::all_of(cands.begin(), cands.end(),
                                [&](const auto& c) { return c.tokens == cands[0].tokens; });
    if (all_same) {
      ++sum.skipped_identical;
      continue;
    }
    auto [best, worst] = pick_chosen_rejected(cands);
    if (cands[best].score - cands[worst].score < cfg.threshold ||
        cands[best].tokens == cands[worst].tokens) {
      ++sum.skipped_margin;
      continue;
    }
    pairs.push_back({input, cands[best].tokens, cands[worst].tokens, cands[best].score,
                     cands[worst].score, rec.record_id});
    ++sum.pairs;
  }
  if (summary) *summary = sum;
  return pairs;
}

inline nlohmann::json to_json(const PreferencePair& p, const Vocab& vocab) {
  auto text = [&](const TokenIds& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += vocab.symbol(ids[i]);
    }
    return out;
  };
  return {{"record_id", p.record_id},   {"input", text(p.input)},
          {"chosen", text(p.chosen)},   {"rejected", text(p.rejected)},
          {"score_chosen", p.score_chosen}, {"score_rejected", p.score_rejected}};
}

inline PreferencePair preference_pair_from_json(const nlohmann::json& j, const Vocab& vocab) {
  auto ids = [&](const std::string& s) {
    TokenIds out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(vocab.id(tok));
    return out;
  };
  PreferencePair p;
  p.input = ids(j.at("input").get<std::string>());
  p.chosen = ids(j.at("chosen").get<std::string>());
  p.rejected = ids(j.at("rejected").get<std::string>());
  p.score_chosen = j.at("score_chosen").get<double>();
  p.score_rejected = j.at("score_rejected").get<double>();
  p.record_id = j.value("record_id", "");
  return p;
}

inline std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs, const Vocab& vocab) {
  std::string out;
  for (const auto& p : pairs) out += to_json(p, vocab).dump() + "\n";
  return out;
}

inline std::vector<PreferencePair> pairs_from_jsonl(std::string_view text, const Vocab& vocab) {
  std::vector<PreferencePair> out;
  for (const auto& [line, content] : split_jsonl(text)) {
    try {
      out.push_back(preference_pair_from_json(nlohmann::json::parse(content), vocab));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(detail::where(line) + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preference training

struct PrefLossConfig {
  double beta = 0.3;
  PrefVariant variant = PrefVariant::kDpo;
  int epochs = 4;
  int batch = 2;
  int grad_accum = 8;
  AdamConfig adam = AdamConfig::preference_defaults();
  std::uint64_t seed = 17;
};

struct PrefEpochLog {
  int epoch = 0;           // 0 = before training
  double mean_loss = 0;    // mean training loss over the epoch's pairs
  double mean_margin = 0;  // E[Δθ+ - Δθ-] after the epoch
  double frac_preferred = 0;  // fraction of pairs with Δθ+ > Δθ-
};

struct PrefTrainResult {
  TinySeq2Seq model;
  std::vector<PrefEpochLog> history;
  bool aborted = false;
  std::string abort_reason;
};

struct PairLogProbs {
  double plus = 0;
  double minus = 0;
};

inline std::vector<PairLogProbs> pair_logprobs(const TinySeq2Seq& model,
                                               const std::vector<PreferencePair>& pairs) {
  std::vector<PairLogProbs> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    TokenIds yp = p.chosen, ym = p.rejected;
    yp.push_back(Vocab::kEos);
    ym.push_back(Vocab::kEos);
    out.push_back({sequence_logprob(model, p.input, yp), sequence_logprob(model, p.input, ym)});
  }
  return out;
}

inline std::pair<double, double> margin_stats(const std::vector<PairLogProbs>& lp) {
  if (lp.empty()) return {0.0, 0.0};
  double m = 0;
  std::size_t preferred = 0;
  for (const auto& x : lp) {
    m += x.plus - x.minus;
    if (x.plus > x.minus) ++preferred;
  }
  return {m / double(lp.size()), double(preferred) / double(lp.size())};
}

// Trains a copy of `sft_model` on `pairs`. Reference and anchor are frozen
// copies of `sft_model`. A non-finite loss or gradient stops training and
// returns the parameters from before the failing update.
inline PrefTrainResult train_preference(const TinySeq2Seq& sft_model,
                                        const std::vector<PreferencePair>& pairs,
                                        const PrefLossConfig& cfg) {
  if (pairs.empty()) throw ValidationError("train_preference: no pairs");
  if (!(cfg.beta > 0)) throw ValidationError("beta must be positive");
  if (cfg.batch < 1 || cfg.grad_accum < 1) {
    throw ValidationError("batch and grad_accum must be >= 1");
  }
  PrefTrainResult res{sft_model, {}, false, {}};
  TinySeq2Seq& policy = res.model;
  const std::vector<PairLogProbs> frozen = pair_logprobs(sft_model, pairs);

  std::vector<TokenIds> chosen_t, rejected_t;
  for (const auto& p : pairs) {
    chosen_t.push_back(p.chosen);
    chosen_t.back().push_back(Vocab::kEos);
    rejected_t.push_back(p.rejected);
    rejected_t.back().push_back(Vocab::kEos);
  }

  auto [m0, f0] = margin_stats(frozen);
  res.history.push_back({0, 0.0, m0, f0});

  const std::size_t per_step = static_cast<std::size_t>(cfg.batch) * static_cast<std::size_t>(cfg.grad_accum);
  const long steps_per_epoch = static_cast<long>((pairs.size() + per_step - 1) / per_step);
  AdamConfig adam = cfg.adam;
  adam.total_steps = steps_per_epoch * cfg.epochs;
  OptimState opt(policy.params().total());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle_indices(order, rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += per_step) {
      const std::size_t end = std::min(order.size(), start + per_step);
      const double w = 1.0 / double(end - start);
      ParamSet grads = policy.zero_like();
      try {
        for (std::size_t i = start; i < end; ++i) {
          const std::size_t k = order[i];
          LogProbBundle b;
          b.theta_plus = sequence_logprob(policy, pairs[k].input, chosen_t[k]);
          b.theta_minus = sequence_logprob(policy, pairs[k].input, rejected_t[k]);
          b.ref_plus = b.anc_plus = frozen[k].plus;
          b.ref_minus = b.anc_minus = frozen[k].minus;
          PrefLossValue v = preference_loss(b, cfg.variant, cfg.beta);
          if (!std::isfinite(v.loss)) throw NumericError("non-finite preference loss");
          loss_sum += v.loss;
          // Chain rule through the policy log-probs only; reference and
          // anchor are frozen.
          accumulate_logprob_gradient(policy, pairs[k].input, chosen_t[k], w * v.grad.theta_plus, grads);
          accumulate_logprob_gradient(policy, pairs[k].input, rejected_t[k], w * v.grad.theta_minus, grads);
        }
        grads.check_finite("preference gradient");
      } catch (const NumericError& e) {
        res.aborted = true;
        res.abort_reason = e.what();
        return res;
      }
      ParamSet before = policy.params();
      adam_step(policy.params(), grads, opt, adam);
      if (!policy.params().flat().allFinite()) {
        policy.params() = std::move(before);
        res.aborted = true;
        res.abort_reason = "non-finite parameters after update";
        return res;
      }
      policy.set_step(policy.step() + 1);
    }
    auto [m, f] = margin_stats(pair_logprobs(policy, pairs));
    res.history.push_back({epoch, loss_sum / double(pairs.size()), m, f});
  }
  return res;
}

inline nlohmann::json to_json(const std::vector<PrefEpochLog>& history) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& h : history) {
    out.push_back({{"epoch", h.epoch},
                   {"mean_loss", h.mean_loss},
                   {"mean_margin", h.mean_margin},
                   {"frac_preferred", h.frac_preferred}});
  }
  return out;
}

}  // namespace synrewrite

#endif  // SYNREWRITE_PREFTRAIN_HPP_
