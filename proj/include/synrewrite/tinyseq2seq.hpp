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

#ifndef SYNREWRITE_TINYSEQ2SEQ_HPP_
#define SYNREWRITE_TINYSEQ2SEQ_HPP_

// A small GRU encoder-decoder rewriter with hand-written backpropagation.
//
// Encoder:  h_i = GRU_enc(E[x_i], h_{i-1}),  h_0 = 0,  c = h_S
// Decoder:  s_0 = c,  s_t = GRU_dec([E[y_{t-1}]; c], s_{t-1}),  y_0 = BOS
// Output:   p_t = softmax(W_out s_t + b_out)
//
// GRU cell (gates stacked z, r, n in W, U, b):
//   z = sigmoid(W_z x + U_z h + b_z)
//   r = sigmoid(W_r x + U_r h + b_r)
//   n = tanh(W_n x + U_n (r * h) + b_n)
//   h' = (1 - z) * n + z * h
//
// Everything is float64 so gradients can be checked against central finite
// differences.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "synrewrite/common.hpp"
#include "synrewrite/datamodel.hpp"
#include "synrewrite/textmetrics.hpp"

namespace synrewrite {

using TokenIds = std::vector<int>;

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kTurn = 4;
  static constexpr int kAns = 5;
  static constexpr int kQuery = 6;
  static constexpr int kNumSpecial = 7;
  static constexpr std::size_t kDefaultCap = 2000;

  Vocab() : Vocab(std::vector<std::string>{}) {}

  // `words` excludes the special symbols, which always come first.
  explicit Vocab(const std::vector<std::string>& words) {
    symbols_ = {"<pad>", "<bos>", "<eos>", "<unk>", "<turn>", "<ans>", "<query>"};
    for (const auto& w : words) symbols_.push_back(w);
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!ids_.emplace(symbols_[i], static_cast<int>(i)).second) {
        throw ValidationError("duplicate vocabulary symbol '" + symbols_[i] + "'");
      }
    }
  }

  // Most frequent tokens first (ties alphabetical), capped at `cap` symbols
  // including the specials.
  static Vocab build(const std::vector<TokenSeq>& corpus, std::size_t cap = kDefaultCap) {
    const Vocab specials;
    std::map<std::string, std::size_t> freq;
    for (const auto& seq : corpus) {
      for (const auto& t : seq) {
        if (specials.id(t) == kUnk && t != "<unk>") ++freq[t];
      }
    }
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> words;
    for (const auto& [w, _] : items) {
      if (words.size() + kNumSpecial >= cap) break;
      words.push_back(w);
    }
    return Vocab(words);
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  TokenIds encode(const TokenSeq& tokens) const {
    TokenIds out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  // Target sequence: tokens followed by EOS.
  TokenIds encode_target(const TokenSeq& tokens) const {
    TokenIds out = encode(tokens);
    out.push_back(kEos);
    return out;
  }

  // Stops at EOS; drops PAD and BOS.
  TokenSeq decode(const TokenIds& ids) const {
    TokenSeq out;
    for (int i : ids) {
      if (i == kEos) break;
      if (i == kPad || i == kBos) continue;
      out.push_back(symbol(i));
    }
    return out;
  }

  std::string hash() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& s : symbols_) {
      h = fnv1a64(s, h);
      h = fnv1a64(std::string_view("\n"), h);
    }
    return hex64(h);
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.symbols_ == b.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> ids_;
};

// Rewriter input: history turns most recent first, each as
// <turn> question <ans> answer, then <query> followed by the current query.
// `max_turns` < 0 keeps the whole history.
inline TokenSeq serialize_rewriter_input(const QueryRecord& r, int max_turns = -1) {
  TokenSeq out;
  std::size_t turns = max_turns < 0 ? r.history.size()
                                    : std::min<std::size_t>(r.history.size(),
                                                            static_cast<std::size_t>(max_turns));
  for (std::size_t i = 0; i < turns; ++i) {
    out.push_back("<turn>");
    for (auto& t : tokenize(r.history[i].question)) out.push_back(std::move(t));
    out.push_back("<ans>");
    for (auto& t : tokenize(r.history[i].answer)) out.push_back(std::move(t));
  }
  out.push_back("<query>");
  for (auto& t : tokenize(r.query)) out.push_back(std::move(t));
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

enum ParamId : int {
  kEmbed = 0,
  kEncW,
  kEncU,
  kEncB,
  kDecW,
  kDecU,
  kDecB,
  kOutW,
  kOutB,
  kNumParams
};

inline constexpr std::array<const char*, kNumParams> kParamNames = {
    "embed", "enc_W", "enc_U", "enc_b", "dec_W", "dec_U", "dec_b", "out_W", "out_b"};

// All parameter tensors packed into one flat buffer; gradients and optimizer
// moments use the same layout.
class ParamSet {
 public:
  using MatMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;

  ParamSet() = default;
  ParamSet(int vocab, int hidden) : vocab_(vocab), hidden_(hidden) {
    const Eigen::Index v = vocab, d = hidden;
    shapes_ = {{{v, d}, {3 * d, d}, {3 * d, d}, {3 * d, 1}, {3 * d, 2 * d},
                {3 * d, d}, {3 * d, 1}, {v, d}, {v, 1}}};
    Eigen::Index off = 0;
    for (int p = 0; p < kNumParams; ++p) {
      offsets_[static_cast<std::size_t>(p)] = off;
      off += shapes_[static_cast<std::size_t>(p)][0] * shapes_[static_cast<std::size_t>(p)][1];
    }
    data_ = Eigen::VectorXd::Zero(off);
  }

  int vocab() const { return vocab_; }
  int hidden() const { return hidden_; }
  Eigen::Index total() const { return data_.size(); }
  Eigen::VectorXd& flat() { return data_; }
  const Eigen::VectorXd& flat() const { return data_; }

  Eigen::Index offset(ParamId p) const { return offsets_[static_cast<std::size_t>(p)]; }
  Eigen::Index count(ParamId p) const { return rows(p) * cols(p); }
  Eigen::Index rows(ParamId p) const { return shapes_[static_cast<std::size_t>(p)][0]; }
  Eigen::Index cols(ParamId p) const { return shapes_[static_cast<std::size_t>(p)][1]; }

  MatMap operator[](ParamId p) { return MatMap(data_.data() + offset(p), rows(p), cols(p)); }
  ConstMatMap operator[](ParamId p) const {
    return ConstMatMap(data_.data() + offset(p), rows(p), cols(p));
  }

  void set_zero() { data_.setZero(); }

  // Throws NumericError naming the first tensor holding NaN/Inf.
  void check_finite(const char* what) const {
    for (int p = 0; p < kNumParams; ++p) {
      auto id = static_cast<ParamId>(p);
      if (!data_.segment(offset(id), count(id)).allFinite()) {
        throw NumericError(std::string(what) + ": non-finite values in '" +
                           kParamNames[static_cast<std::size_t>(p)] + "'");
      }
    }
  }

 private:
  int vocab_ = 0;
  int hidden_ = 0;
  std::array<std::array<Eigen::Index, 2>, kNumParams> shapes_{};
  std::array<Eigen::Index, kNumParams> offsets_{};
  Eigen::VectorXd data_;
};

// ---------------------------------------------------------------------------
// GRU cell

namespace detail {

inline Eigen::VectorXd sigmoid(const Eigen::VectorXd& a) {
  return a.unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  });
}

struct GruCache {
  Eigen::VectorXd x, h_prev, z, r, n, rh;
};

inline Eigen::VectorXd gru_forward(const ParamSet::ConstMatMap& W,
                                   const ParamSet::ConstMatMap& U,
                                   const ParamSet::ConstMatMap& b,
                                   const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& h_prev, GruCache* cache) {
  const Eigen::Index d = h_prev.size();
  Eigen::VectorXd a_zr = W.topRows(2 * d) * x + U.topRows(2 * d) * h_prev + b.col(0).head(2 * d);
  Eigen::VectorXd z = sigmoid(a_zr.head(d));
  Eigen::VectorXd r = sigmoid(a_zr.tail(d));
  Eigen::VectorXd rh = r.cwiseProduct(h_prev);
  Eigen::VectorXd n =
      (W.bottomRows(d) * x + U.bottomRows(d) * rh + b.col(0).tail(d)).array().tanh().matrix();
  Eigen::VectorXd h = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h_prev);
  if (cache) *cache = {x, h_prev, std::move(z), std::move(r), std::move(n), std::move(rh)};
  return h;
}

// Accumulates parameter gradients; writes dL/dx and returns dL/dh_prev.
inline Eigen::VectorXd gru_backward(const ParamSet::ConstMatMap& W,
                                    const ParamSet::ConstMatMap& U, const GruCache& c,
                                    const Eigen::VectorXd& dh, ParamSet::MatMap dW,
                                    ParamSet::MatMap dU, ParamSet::MatMap db,
                                    Eigen::VectorXd* dx) {
  const Eigen::Index d = dh.size();
  Eigen::VectorXd da_n =
      dh.cwiseProduct((1.0 - c.z.array()).matrix())
          .cwiseProduct((1.0 - c.n.array().square()).matrix());
  Eigen::VectorXd da_z =
      dh.cwiseProduct(c.h_prev - c.n).cwiseProduct(c.z.cwiseProduct((1.0 - c.z.array()).matrix()));
  Eigen::VectorXd d_rh = U.bottomRows(d).transpose() * da_n;
  Eigen::VectorXd da_r =
      d_rh.cwiseProduct(c.h_prev).cwiseProduct(c.r.cwiseProduct((1.0 - c.r.array()).matrix()));

  Eigen::VectorXd da_zr(2 * d);
  da_zr << da_z, da_r;

  dW.bottomRows(d).noalias() += da_n * c.x.transpose();
  dU.bottomRows(d).noalias() += da_n * c.rh.transpose();
  db.col(0).tail(d) += da_n;
  dW.topRows(2 * d).noalias() += da_zr * c.x.transpose();
  dU.topRows(2 * d).noalias() += da_zr * c.h_prev.transpose();
  db.col(0).head(2 * d) += da_zr;

  if (dx) {
    *dx = W.topRows(2 * d).transpose() * da_zr;
    dx->noalias() += W.bottomRows(d).transpose() * da_n;
  }
  Eigen::VectorXd dh_prev = dh.cwiseProduct(c.z) + d_rh.cwiseProduct(c.r);
  dh_prev.noalias() += U.topRows(2 * d).transpose() * da_zr;
  return dh_prev;
}

// Log-softmax of `logits` into `logp`; returns probabilities.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits, Eigen::VectorXd* logp = nullptr) {
  double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp().matrix();
  double sum = e.sum();
  if (logp) *logp = (logits.array() - mx - std::log(sum)).matrix();
  return e / sum;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model

class TinySeq2Seq {
 public:
  static constexpr int kDefaultHidden = 64;
  static constexpr std::uint64_t kDefaultSeed = 17;
  static constexpr double kInitRange = 0.08;

  TinySeq2Seq() = default;

  // Parameters drawn from uniform(-0.08, 0.08) with a fixed seed.
  TinySeq2Seq(Vocab vocab, int hidden = kDefaultHidden, std::uint64_t seed = kDefaultSeed)
      : vocab_(std::move(vocab)), params_(vocab_.size(), hidden), seed_(seed) {
    if (hidden < 1) throw ValidationError("hidden size must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-kInitRange, kInitRange);
    for (Eigen::Index i = 0; i < params_.total(); ++i) params_.flat()[i] = u(rng);
  }

  const Vocab& vocab() const { return vocab_; }
  int hidden() const { return params_.hidden(); }
  std::uint64_t seed() const { return seed_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

  ParamSet zero_like() const { return ParamSet(params_.vocab(), params_.hidden()); }

  Eigen::VectorXd encode(std::span<const int> input,
                         std::vector<detail::GruCache>* caches = nullptr) const {
    check_ids(input, "input");
    Eigen::VectorXd h = Eigen::VectorXd::Zero(hidden());
    if (caches) caches->resize(input.size());
    for (std::size_t i = 0; i < input.size(); ++i) {
      Eigen::VectorXd x = params_[kEmbed].row(input[i]).transpose();
      h = detail::gru_forward(params_[kEncW], params_[kEncU], params_[kEncB], x, h,
                              caches ? &(*caches)[i] : nullptr);
    }
    return h;
  }

  // One decoder step: consumes `prev` and returns output logits; updates state.
  Eigen::VectorXd decode_step(int prev, const Eigen::VectorXd& context, Eigen::VectorXd& state,
                              detail::GruCache* cache = nullptr) const {
    const Eigen::Index d = hidden();
    Eigen::VectorXd x(2 * d);
    x << params_[kEmbed].row(prev).transpose(), context;
    state = detail::gru_forward(params_[kDecW], params_[kDecU], params_[kDecB], x, state, cache);
    return params_[kOutW] * state + params_[kOutB].col(0);
  }

  void check_ids(std::span<const int> ids, const char* what) const {
    for (int id : ids) {
      if (id < 0 || id >= vocab_.size()) {
        throw ValidationError(std::string(what) + " token id " + std::to_string(id) +
                              " is outside the vocabulary");
      }
    }
  }

 private:
  Vocab vocab_;
  ParamSet params_;
  std::uint64_t seed_ = kDefaultSeed;
  long step_ = 0;
};

inline void check_target(const TinySeq2Seq& model, std::span<const int> output) {
  model.check_ids(output, "output");
  if (output.empty() || output.back() != Vocab::kEos) {
    throw ValidationError("output sequence must end with EOS");
  }
}

// log p(output | input) under teacher forcing.
inline double sequence_logprob(const TinySeq2Seq& model, std::span<const int> input,
                               std::span<const int> output) {
  check_target(model, output);
  Eigen::VectorXd context = model.encode(input);
  Eigen::VectorXd state = context;
  Eigen::VectorXd logp;
  double total = 0;
  int prev = Vocab::kBos;
  for (int y : output) {
    detail::softmax(model.decode_step(prev, context, state), &logp);
    total += logp[y];
    prev = y;
  }
  return total;
}

// Adds scale * d/dθ log p(output | input) into `grads`; returns the
// log-probability.
inline double accumulate_logprob_gradient(const TinySeq2Seq& model, std::span<const int> input,
                                          std::span<const int> output, double scale,
                                          ParamSet& grads) {
  check_target(model, output);
  const ParamSet& P = model.params();
  const Eigen::Index d = model.hidden();

  std::vector<detail::GruCache> enc_caches;
  Eigen::VectorXd context = model.encode(input, &enc_caches);

  const std::size_t T = output.size();
  std::vector<detail::GruCache> dec_caches(T);
  std::vector<Eigen::VectorXd> states(T), probs(T);
  Eigen::VectorXd state = context;
  Eigen::VectorXd logp;
  double total = 0;
  int prev = Vocab::kBos;
  for (std::size_t t = 0; t < T; ++t) {
    probs[t] = detail::softmax(model.decode_step(prev, context, state, &dec_caches[t]), &logp);
    states[t] = state;
    total += logp[output[t]];
    prev = output[t];
  }
  if (scale == 0.0) return total;

  Eigen::VectorXd d_context = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd d_state = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd dx;
  auto dEmbed = grads[kEmbed];
  auto dOutW = grads[kOutW];
  auto dOutB = grads[kOutB];
  for (std::size_t t = T; t-- > 0;) {
    // d(log p_t[y]) / d logits = onehot(y) - p_t
    Eigen::VectorXd dlogits = -scale * probs[t];
    dlogits[output[t]] += scale;
    dOutW.noalias() += dlogits * states[t].transpose();
    dOutB.col(0) += dlogits;
    d_state.noalias() += P[kOutW].transpose() * dlogits;
    d_state = detail::gru_backward(P[kDecW], P[kDecU], dec_caches[t], d_state, grads[kDecW],
                                   grads[kDecU], grads[kDecB], &dx);
    int prev_tok = t == 0 ? Vocab::kBos : output[t - 1];
    dEmbed.row(prev_tok) += dx.head(d).transpose();
    d_context += dx.tail(d);
  }
  // s_0 = c
  Eigen::VectorXd dh = d_context + d_state;
  for (std::size_t i = input.size(); i-- > 0;) {
    dh = detail::gru_backward(P[kEncW], P[kEncU], enc_caches[i], dh, grads[kEncW], grads[kEncU],
                              grads[kEncB], &dx);
    dEmbed.row(input[i]) += dx.transpose();
  }
  return total;
}

// One term of a loss that is linear in sequence log-probabilities:
// L = sum_i weight_i * log p(output_i | input_i).
struct LogProbTerm {
  const TokenIds* input = nullptr;
  const TokenIds* output = nullptr;
  double weight = 0;
};

// Exact gradient of sum_i weight_i * log p_i. Throws NumericError naming the
// parameter tensor if any gradient entry is NaN/Inf.
inline ParamSet backward(const TinySeq2Seq& model, const std::vector<LogProbTerm>& terms) {
  ParamSet grads = model.zero_like();
  for (const auto& term : terms) {
    accumulate_logprob_gradient(model, *term.input, *term.output, term.weight, grads);
  }
  grads.check_finite("gradient");
  return grads;
}

// ---------------------------------------------------------------------------
// Decoding

struct DecodeOptions {
  enum class Mode { kGreedy, kSample };
  Mode mode = Mode::kGreedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int max_len = 32;

  static DecodeOptions greedy(int max_len = 32) { return {Mode::kGreedy, 1.0, 0, max_len}; }
  static DecodeOptions sample(double temperature, std::uint64_t seed, int max_len = 32) {
    return {Mode::kSample, temperature, seed, max_len};
  }
};

// Output ids without the terminating EOS. Stops at EOS or after max_len
// tokens. PAD and BOS are never emitted.
inline TokenIds generate(const TinySeq2Seq& model, std::span<const int> input,
                         const DecodeOptions& opts) {
  if (opts.max_len < 1) throw ValidationError("max_len must be >= 1");
  if (opts.mode == DecodeOptions::Mode::kSample && !(opts.temperature > 0)) {
    throw ValidationError("sampling temperature must be positive");
  }
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd context = model.encode(input);
  Eigen::VectorXd state = context;
  TokenIds out;
  int prev = Vocab::kBos;
  for (int t = 0; t < opts.max_len; ++t) {
    Eigen::VectorXd logits = model.decode_step(prev, context, state);
    logits[Vocab::kPad] = -std::numeric_limits<double>::infinity();
    logits[Vocab::kBos] = -std::numeric_limits<double>::infinity();
    int next = 0;
    if (opts.mode == DecodeOptions::Mode::kGreedy) {
      logits.maxCoeff(&next);
    } else {
      Eigen::VectorXd p = detail::softmax(logits / opts.temperature);
      double u = unif(rng), acc = 0;
      next = static_cast<int>(p.size()) - 1;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    if (next == Vocab::kEos) break;
    out.push_back(next);
    prev = next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

enum class LrSchedule { kCosine, kLinear, kConstant };

inline LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "cosine") return LrSchedule::kCosine;
  if (s == "linear") return LrSchedule::kLinear;
  if (s == "constant") return LrSchedule::kConstant;
  throw ValidationError("unknown lr schedule '" + s + "'");
}

inline const char* to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::kCosine:
      return "cosine";
    case LrSchedule::kLinear:
      return "linear";
    case LrSchedule::kConstant:
      return "constant";
  }
  return "?";
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_ratio = 0.3;
  LrSchedule schedule = LrSchedule::kCosine;
  long total_steps = 1;

  // Supervised stage: lr 1e-4, cosine decay after a 30% linear warmup.
  static AdamConfig sft_defaults() { return {}; }
  // Preference stage: lr 1e-5, linear decay after a 10% linear warmup.
  static AdamConfig preference_defaults() {
    AdamConfig c;
    c.lr = 1e-5;
    c.warmup_ratio = 0.1;
    c.schedule = LrSchedule::kLinear;
    return c;
  }

  long warmup_steps() const {
    return static_cast<long>(std::ceil(warmup_ratio * double(total_steps)));
  }

  // Learning rate for the update taking the optimizer from `step` to
  // step + 1. Warmup ramps linearly from 0.
  double lr_at(long step) const {
    const long w = warmup_steps();
    if (schedule == LrSchedule::kConstant) return lr;
    if (step < w) return lr * double(step) / double(std::max(1L, w));
    const double span = double(std::max(1L, total_steps - w));
    const double progress = std::min(1.0, double(step - w) / span);
    if (schedule == LrSchedule::kCosine) {
      return lr * 0.5 * (1.0 + std::cos(M_PI * progress));
    }
    return lr * (1.0 - progress);
  }
};

struct OptimState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;

  explicit OptimState(Eigen::Index n = 0)
      : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

// Adam with bias correction. `grads` is the gradient of the loss being
// minimized.
inline void adam_step(ParamSet& params, const ParamSet& grads, OptimState& st,
                      const AdamConfig& cfg) {
  if (grads.total() != params.total() || st.m.size() != params.total()) {
    throw ValidationError("adam_step: shape mismatch");
  }
  const double lr = cfg.lr_at(st.step);
  ++st.step;
  const auto& g = grads.flat();
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.step));
  params.flat().array() -=
      lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + cfg.eps);
}

// ---------------------------------------------------------------------------
// Checkpoints: `<path>` holds "SRS2S001", u64 count, count little-endian
// f64 parameters; `<path>.json` holds vocabulary and metadata.

inline void save_checkpoint(const TinySeq2Seq& model, const std::filesystem::path& path) {
  const auto& flat = model.params().flat();
  std::string blob = "SRS2S001";
  std::uint64_t n = static_cast<std::uint64_t>(flat.size());
  blob.append(reinterpret_cast<const char*>(&n), sizeof n);
  blob.append(reinterpret_cast<const char*>(flat.data()), flat.size() * sizeof(double));
  write_file_atomic(path, blob);
  nlohmann::json meta = {{"format", 1},
                         {"hidden", model.hidden()},
                         {"seed", model.seed()},
                         {"step", model.step()},
                         {"vocab_hash", model.vocab().hash()},
                         {"vocab", model.vocab().symbols()}};
  auto meta_path = path;
  meta_path += ".json";
  write_file_atomic(meta_path, meta.dump(1));
}

inline TinySeq2Seq load_checkpoint(const std::filesystem::path& path) {
  auto meta_path = path;
  meta_path += ".json";
  auto meta = nlohmann::json::parse(read_file(meta_path));
  auto symbols = meta.at("vocab").get<std::vector<std::string>>();
  if (symbols.size() < Vocab::kNumSpecial) throw ValidationError("checkpoint vocabulary too small");
  Vocab vocab(std::vector<std::string>(symbols.begin() + Vocab::kNumSpecial, symbols.end()));
  if (vocab.hash() != meta.at("vocab_hash").get<std::string>()) {
    throw ValidationError("checkpoint vocabulary hash mismatch");
  }
  TinySeq2Seq model(std::move(vocab), meta.at("hidden").get<int>(),
                    meta.at("seed").get<std::uint64_t>());
  model.set_step(meta.at("step").get<long>());
  std::string blob = read_file(path);
  std::uint64_t n = 0;
  if (blob.size() < 16 || blob.compare(0, 8, "SRS2S001") != 0) {
    throw ValidationError("not a checkpoint: " + path.string());
  }
  std::memcpy(&n, blob.data() + 8, sizeof n);
  auto& flat = model.params().flat();
  if (n != static_cast<std::uint64_t>(flat.size()) || blob.size() != 16 + n * sizeof(double)) {
    throw ValidationError("checkpoint parameter count mismatch");
  }
  std::memcpy(flat.data(), blob.data() + 16, n * sizeof(double));
  model.params().check_finite("checkpoint");
  return model;
}

}  // namespace synrewrite

#endif  // SYNREWRITE_TINYSEQ2SEQ_HPP_
