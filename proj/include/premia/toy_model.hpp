#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "premia/casefold.hpp"
#include "premia/corpus.hpp"
#include "premia/errors.hpp"

namespace premia::toy {

using json = nlohmann::json;
using TokenId = int32_t;

// ---------------------------------------------------------------------------
// Deterministic sampling helpers
//
// mt19937_64 output is pinned by the standard; the distributions below are
// hand-rolled so sampled corpora and golden fixtures are identical across
// standard libraries.
// ---------------------------------------------------------------------------

namespace rng {

inline uint64_t uniform_below(std::mt19937_64& g, uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_below(0)");
  uint64_t mask = ~uint64_t{0};
  uint64_t top = n - 1;
  while (mask >> 1 >= top) mask >>= 1;
  uint64_t r;
  do {
    r = g() & mask;
  } while (r >= n);
  return r;
}

inline double uniform_unit(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline int uniform_int(std::mt19937_64& g, int lo, int hi) {
  return lo + static_cast<int>(uniform_below(g, static_cast<uint64_t>(hi - lo + 1)));
}

// Box-Muller; two uniforms per normal, second value discarded for simplicity.
inline double normal(std::mt19937_64& g) {
  double u1 = uniform_unit(g);
  double u2 = uniform_unit(g);
  if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
inline void shuffle(std::vector<T>& v, std::mt19937_64& g) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = uniform_below(g, i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace rng

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

inline constexpr const char* kBosSymbol = "<s>";
inline constexpr const char* kEosSymbol = "</s>";

struct Vocab {
  std::vector<std::string> symbols;  // index == TokenId; [0]=BOS, [1]=EOS

  static constexpr TokenId bos = 0;
  static constexpr TokenId eos = 1;
  static constexpr TokenId first_regular = 2;

  int size() const { return static_cast<int>(symbols.size()); }
  int regular_count() const { return size() - 2; }

  // BOS + EOS + the first n lowercase latin letters.
  static Vocab lowercase_latin(int n_regular) {
    if (n_regular < 1 || n_regular > 26)
      throw ValidationError("vocab_size must be in [1, 26]");
    Vocab v;
    v.symbols = {kBosSymbol, kEosSymbol};
    for (int i = 0; i < n_regular; ++i) v.symbols.push_back(std::string(1, char('a' + i)));
    return v;
  }

  void validate() const {
    if (size() < 3) throw ValidationError("vocab must have at least 3 symbols");
    if (symbols[0] != kBosSymbol || symbols[1] != kEosSymbol)
      throw ValidationError("vocab must reserve BOS and EOS at indices 0 and 1");
    std::set<std::string> seen(symbols.begin(), symbols.end());
    if (static_cast<int>(seen.size()) != size())
      throw ValidationError("vocab symbols must be distinct");
  }

  // Per-character encoding; requires all regular symbols to be single chars.
  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (char c : text) {
      std::string s(1, c);
      auto it = std::find(symbols.begin() + first_regular, symbols.end(), s);
      if (it == symbols.end())
        throw ValidationError("character '" + s + "' not in vocab");
      out.push_back(static_cast<TokenId>(it - symbols.begin()));
    }
    return out;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId t : ids) out += symbols.at(static_cast<size_t>(t));
    return out;
  }
};

// ---------------------------------------------------------------------------
// LogitTable: dense autoregressive model over fixed-length contexts
// ---------------------------------------------------------------------------

class LogitTable {
 public:
  LogitTable() = default;

  LogitTable(Vocab vocab, int order) : vocab_(std::move(vocab)), order_(order) {
    vocab_.validate();
    if (order_ < 1) throw ValidationError("order must be >= 1");
    size_t v = static_cast<size_t>(vocab_.size());
    size_t rows = 1;
    for (int i = 0; i < order_; ++i) {
      rows *= v;
      if (rows * v > (size_t{1} << 25))
        throw ValidationError("logit table too large for this order/vocab");
    }
    rows_ = rows;
    logits_.assign(rows_ * v, 0.0);
  }

  static LogitTable uniform(Vocab vocab, int order) { return LogitTable(std::move(vocab), order); }

  static LogitTable random(Vocab vocab, int order, uint64_t seed, double scale = 1.0) {
    LogitTable t(std::move(vocab), order);
    std::mt19937_64 g(seed);
    for (double& x : t.logits_) x = scale * rng::normal(g);
    return t;
  }

  const Vocab& vocab() const { return vocab_; }
  int order() const { return order_; }
  int vocab_size() const { return vocab_.size(); }
  size_t rows() const { return rows_; }
  std::vector<double>& logits() { return logits_; }
  const std::vector<double>& logits() const { return logits_; }

  bool same_shape(const LogitTable& other) const {
    return order_ == other.order_ && vocab_.symbols == other.vocab_.symbols;
  }

  // Row index for the `order` most recent tokens of `prefix`, BOS-padded on
  // the left when the prefix is shorter than the context length.
  size_t context_row(std::span<const TokenId> prefix) const {
    size_t v = static_cast<size_t>(vocab_.size());
    size_t idx = 0;
    for (int k = order_; k >= 1; --k) {
      TokenId t = Vocab::bos;
      if (static_cast<int>(prefix.size()) >= k) t = prefix[prefix.size() - static_cast<size_t>(k)];
      check_token(t);
      idx = idx * v + static_cast<size_t>(t);
    }
    return idx;
  }

  const double* row(size_t r) const { return logits_.data() + r * static_cast<size_t>(vocab_.size()); }
  double* row(size_t r) { return logits_.data() + r * static_cast<size_t>(vocab_.size()); }

  double row_logsumexp(size_t r) const {
    const double* l = row(r);
    int v = vocab_.size();
    double mx = l[0];
    for (int i = 1; i < v; ++i) mx = std::max(mx, l[i]);
    double s = 0.0;
    for (int i = 0; i < v; ++i) s += std::exp(l[i] - mx);
    return mx + std::log(s);
  }

  double log_prob(size_t r, TokenId next) const {
    check_token(next);
    return row(r)[next] - row_logsumexp(r);
  }

  // softmax of row r into `probs` (resized to vocab size)
  void row_softmax(size_t r, std::vector<double>& probs) const {
    const double* l = row(r);
    int v = vocab_.size();
    probs.resize(static_cast<size_t>(v));
    double mx = l[0];
    for (int i = 1; i < v; ++i) mx = std::max(mx, l[i]);
    double s = 0.0;
    for (int i = 0; i < v; ++i) {
      probs[static_cast<size_t>(i)] = std::exp(l[i] - mx);
      s += probs[static_cast<size_t>(i)];
    }
    for (int i = 0; i < v; ++i) probs[static_cast<size_t>(i)] /= s;
  }

  void check_token(TokenId t) const {
    if (t < 0 || t >= vocab_.size())
      throw ValidationError("token id " + std::to_string(t) + " out of range");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json obj;
    obj["format"] = "logit_table";
    obj["version"] = 1;
    obj["order"] = order_;
    obj["vocab"] = vocab_.symbols;
    obj["logits"] = logits_;
    return obj;
  }

  static LogitTable from_json(const json& obj) {
    if (!obj.is_object() || obj.value("format", "") != "logit_table")
      throw ValidationError("not a logit_table checkpoint");
    if (obj.value("version", 0) != 1)
      throw ValidationError("unsupported checkpoint version");
    Vocab v;
    v.symbols = obj.at("vocab").get<std::vector<std::string>>();
    LogitTable t(std::move(v), obj.at("order").get<int>());
    auto logits = obj.at("logits").get<std::vector<double>>();
    if (logits.size() != t.logits_.size())
      throw ValidationError("checkpoint logits size mismatch");
    for (double x : logits)
      if (!std::isfinite(x)) throw ValidationError("checkpoint contains non-finite logits");
    t.logits_ = std::move(logits);
    return t;
  }

 private:
  Vocab vocab_;
  int order_ = 1;
  size_t rows_ = 0;
  std::vector<double> logits_;
};

// ---------------------------------------------------------------------------
// Sequence scoring
// ---------------------------------------------------------------------------

struct SequenceScore {
  double total = 0.0;
  std::vector<double> per_token;
};

// log pi(response | prompt) = sum_i log pi(y_i | last `order` tokens of
// prompt . y_<i). Empty response scores 0.
inline SequenceScore sequence_cond_logprob(const LogitTable& model,
                                           std::span<const TokenId> prompt,
                                           std::span<const TokenId> response) {
  SequenceScore out;
  out.per_token.reserve(response.size());
  std::vector<TokenId> prefix(prompt.begin(), prompt.end());
  for (TokenId t : response) {
    size_t r = model.context_row(prefix);
    double lp = model.log_prob(r, t);
    out.per_token.push_back(lp);
    out.total += lp;
    prefix.push_back(t);
  }
  return out;
}

// (row, next-token) pairs visited while scoring response after prompt; the
// support of d log pi(response|prompt) / d logits.
inline std::vector<std::pair<size_t, TokenId>> visited_cells(const LogitTable& model,
                                                             std::span<const TokenId> prompt,
                                                             std::span<const TokenId> response) {
  std::vector<std::pair<size_t, TokenId>> out;
  out.reserve(response.size());
  std::vector<TokenId> prefix(prompt.begin(), prompt.end());
  for (TokenId t : response) {
    model.check_token(t);
    out.emplace_back(model.context_row(prefix), t);
    prefix.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SftExample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
};

struct PreferenceTokens {
  std::vector<TokenId> prompt;
  std::vector<TokenId> chosen;
  std::vector<TokenId> rejected;
};

struct SftResult {
  LogitTable model;
  std::vector<double> epoch_loss;  // mean negative conditional log-likelihood
};

namespace detail {

// Adds coef * (onehot(next) - softmax(row)) for every visited cell.
inline void accumulate_logprob_grad(const LogitTable& model,
                                    const std::vector<std::pair<size_t, TokenId>>& cells,
                                    double coef, std::vector<double>& grad,
                                    std::vector<double>& scratch) {
  int v = model.vocab_size();
  for (const auto& [r, next] : cells) {
    model.row_softmax(r, scratch);
    double* g = grad.data() + r * static_cast<size_t>(v);
    for (int j = 0; j < v; ++j) g[j] -= coef * scratch[static_cast<size_t>(j)];
    g[next] += coef;
  }
}

inline double stable_softplus(double x) {
  // log(1 + e^x)
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// Full-batch gradient descent on mean sequence NLL over (prompt, chosen)
// pairs. Loss is recorded at the start of each epoch (the value the epoch's
// step descends).
inline SftResult sft_train(const LogitTable& model, std::span<const SftExample> corpus,
                           double lr, int epochs, uint64_t seed) {
  if (corpus.empty()) throw ValidationError("sft_train: empty corpus");
  if (lr < 0) throw ValidationError("sft_train: negative learning rate");
  (void)seed;  // full-batch updates need no shuffling

  SftResult out{model, {}};
  size_t table_size = out.model.logits().size();
  std::vector<double> grad(table_size);
  std::vector<double> scratch;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    double inv_b = 1.0 / static_cast<double>(corpus.size());
    for (const auto& ex : corpus) {
      auto cells = visited_cells(out.model, ex.prompt, ex.response);
      double ll = 0.0;
      for (const auto& [r, next] : cells) ll += out.model.log_prob(r, next);
      loss -= inv_b * ll;
      // NLL gradient: accumulate with coefficient -1/B on the log-likelihood
      detail::accumulate_logprob_grad(out.model, cells, -inv_b, grad, scratch);
    }
    if (!std::isfinite(loss)) throw TrainingDivergence("sft loss is not finite", epoch);
    out.epoch_loss.push_back(loss);
    auto& logits = out.model.logits();
    for (size_t i = 0; i < table_size; ++i) logits[i] -= lr * grad[i];
  }
  return out;
}

// Mean preference-classification loss and its analytic gradient.
//
// loss = -mean log sigma(beta * [(log p_theta(y_w|x) - log p_ref(y_w|x))
//                              - (log p_theta(y_l|x) - log p_ref(y_l|x))])
inline std::pair<double, std::vector<double>> dpo_loss_and_grad(
    const LogitTable& theta, const LogitTable& ref,
    std::span<const PreferenceTokens> batch, double beta) {
  if (!theta.same_shape(ref)) throw ValidationError("dpo: theta and ref shapes differ");
  if (batch.empty()) throw ValidationError("dpo: empty batch");

  std::vector<double> grad(theta.logits().size(), 0.0);
  std::vector<double> scratch;
  double loss = 0.0;
  double inv_b = 1.0 / static_cast<double>(batch.size());

  for (const auto& ex : batch) {
    auto cells_w = visited_cells(theta, ex.prompt, ex.chosen);
    auto cells_l = visited_cells(theta, ex.prompt, ex.rejected);

    double margin = 0.0;
    for (const auto& [r, t] : cells_w) margin += theta.log_prob(r, t) - ref.log_prob(r, t);
    for (const auto& [r, t] : cells_l) margin -= theta.log_prob(r, t) - ref.log_prob(r, t);

    double z = beta * margin;
    loss += inv_b * detail::stable_softplus(-z);

    // d loss_i / d theta = -sigmoid(-z) * beta * (grad logp(y_w) - grad logp(y_l))
    double coef = -detail::sigmoid(-z) * beta * inv_b;
    detail::accumulate_logprob_grad(theta, cells_w, coef, grad, scratch);
    detail::accumulate_logprob_grad(theta, cells_l, -coef, grad, scratch);
  }
  return {loss, std::move(grad)};
}

// Fraction of tuples whose implicit-reward comparison prefers the chosen
// response: log ratio(chosen) > log ratio(rejected); ties count one half.
inline double preference_accuracy(const LogitTable& theta, const LogitTable& ref,
                                  std::span<const PreferenceTokens> tuples) {
  if (!theta.same_shape(ref)) throw ValidationError("preference_accuracy: model shapes differ");
  if (tuples.empty()) throw ValidationError("preference_accuracy: empty tuples");
  double score = 0.0;
  for (const auto& ex : tuples) {
    double rw = sequence_cond_logprob(theta, ex.prompt, ex.chosen).total -
                sequence_cond_logprob(ref, ex.prompt, ex.chosen).total;
    double rl = sequence_cond_logprob(theta, ex.prompt, ex.rejected).total -
                sequence_cond_logprob(ref, ex.prompt, ex.rejected).total;
    if (rw > rl)
      score += 1.0;
    else if (rw == rl)
      score += 0.5;
  }
  return score / static_cast<double>(tuples.size());
}

struct DpoHyperParams {
  double beta = 0.4;
  double learning_rate = 0.3;
  int epochs = 30;
  int batch_size = 1'000'000;  // >= corpus size means full batch
  uint64_t seed = 0;

  void validate() const {
    if (beta <= 0) throw ValidationError("beta must be > 0");
    if (learning_rate < 0) throw ValidationError("learning_rate must be >= 0");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  }

  json to_json() const {
    return json{{"beta", beta},
                {"learning_rate", learning_rate},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"seed", seed}};
  }

  static DpoHyperParams from_json(const json& obj) {
    DpoHyperParams hp;
    hp.beta = obj.value("beta", hp.beta);
    hp.learning_rate = obj.value("learning_rate", hp.learning_rate);
    hp.epochs = obj.value("epochs", hp.epochs);
    hp.batch_size = obj.value("batch_size", hp.batch_size);
    hp.seed = obj.value("seed", hp.seed);
    return hp;
  }
};

struct DpoEpochStats {
  int epoch = 0;  // 0 = before any update
  double loss = 0.0;
  double train_accuracy = 0.0;
  double eval_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct DpoResult {
  LogitTable model;
  std::vector<DpoEpochStats> history;
};

// Gradient descent on the preference loss with deterministic seeded
// sharding. Epoch stats are evaluated on the full train/eval splits after
// each epoch's updates; row 0 records the initial state.
inline DpoResult dpo_train(const LogitTable& theta0, const LogitTable& ref,
                           std::span<const PreferenceTokens> train,
                           std::span<const PreferenceTokens> eval_split,
                           const DpoHyperParams& hp) {
  hp.validate();
  if (!theta0.same_shape(ref)) throw ValidationError("dpo_train: model shapes differ");
  if (train.empty()) throw ValidationError("dpo_train: empty train corpus");

  DpoResult out{theta0, {}};
  auto record = [&](int epoch) {
    auto [loss, grad] = dpo_loss_and_grad(out.model, ref, train, hp.beta);
    (void)grad;
    if (!std::isfinite(loss)) throw TrainingDivergence("dpo loss is not finite", epoch);
    DpoEpochStats row;
    row.epoch = epoch;
    row.loss = loss;
    row.train_accuracy = preference_accuracy(out.model, ref, train);
    if (!eval_split.empty())
      row.eval_accuracy = preference_accuracy(out.model, ref, eval_split);
    out.history.push_back(row);
  };

  record(0);

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PreferenceTokens> batch;

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::mt19937_64 g(hp.seed + static_cast<uint64_t>(epoch));
    size_t bs = static_cast<size_t>(hp.batch_size);
    if (bs < train.size()) rng::shuffle(order, g);

    for (size_t start = 0; start < train.size(); start += bs) {
      size_t end = std::min(start + bs, train.size());
      batch.clear();
      for (size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
      auto [loss, grad] = dpo_loss_and_grad(out.model, ref, batch, hp.beta);
      if (!std::isfinite(loss)) throw TrainingDivergence("dpo loss is not finite", epoch);
      auto& logits = out.model.logits();
      for (size_t i = 0; i < logits.size(); ++i)
        logits[i] -= hp.learning_rate * grad[i];
    }
    record(epoch);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

struct SynthConfig {
  int n_records = 2000;
  double member_fraction = 0.5;
  int prompt_len_min = 3, prompt_len_max = 8;
  int response_len_min = 4, response_len_max = 12;
  int vocab_size = 26;  // regular symbols; BOS/EOS are added on top
  int order = 2;
  uint64_t world_seed = 20240601;
  uint64_t split_seed = 20240602;

  void validate() const {
    if (n_records < 1) throw ValidationError("n_records must be >= 1");
    if (!(member_fraction > 0.0 && member_fraction < 1.0))
      throw ValidationError("member_fraction must be in (0, 1)");
    if (prompt_len_min < 0 || prompt_len_max < prompt_len_min)
      throw ValidationError("invalid prompt_len range");
    if (response_len_min < 1 || response_len_max < response_len_min)
      throw ValidationError("invalid response_len range");
    if (order < 1) throw ValidationError("order must be >= 1");
  }

  json to_json() const {
    return json{{"n_records", n_records},
                {"member_fraction", member_fraction},
                {"prompt_len", {prompt_len_min, prompt_len_max}},
                {"response_len", {response_len_min, response_len_max}},
                {"vocab_size", vocab_size},
                {"order", order},
                {"world_seed", world_seed},
                {"split_seed", split_seed}};
  }

  static SynthConfig from_json(const json& obj) {
    SynthConfig c;
    c.n_records = obj.value("n_records", c.n_records);
    c.member_fraction = obj.value("member_fraction", c.member_fraction);
    if (obj.contains("prompt_len")) {
      c.prompt_len_min = obj.at("prompt_len").at(0).get<int>();
      c.prompt_len_max = obj.at("prompt_len").at(1).get<int>();
    }
    if (obj.contains("response_len")) {
      c.response_len_min = obj.at("response_len").at(0).get<int>();
      c.response_len_max = obj.at("response_len").at(1).get<int>();
    }
    c.vocab_size = obj.value("vocab_size", c.vocab_size);
    c.order = obj.value("order", c.order);
    c.world_seed = obj.value("world_seed", c.world_seed);
    c.split_seed = obj.value("split_seed", c.split_seed);
    return c;
  }
};

namespace detail {

// Inverse-CDF sample over an allowed subset of one table row.
inline TokenId sample_from_row(const LogitTable& model, size_t row,
                               std::span<const TokenId> allowed, std::mt19937_64& g) {
  const double* l = model.row(row);
  double mx = -std::numeric_limits<double>::infinity();
  for (TokenId t : allowed) mx = std::max(mx, l[t]);
  double total = 0.0;
  for (TokenId t : allowed) total += std::exp(l[t] - mx);
  double u = rng::uniform_unit(g) * total;
  double cum = 0.0;
  for (TokenId t : allowed) {
    cum += std::exp(l[t] - mx);
    if (u < cum) return t;
  }
  return allowed.back();
}

}  // namespace detail

// Samples `len` tokens continuing `prefix`, restricted to regular symbols.
inline std::vector<TokenId> sample_fixed(const LogitTable& model, std::vector<TokenId> prefix,
                                         int len, std::mt19937_64& g) {
  std::vector<TokenId> allowed;
  for (TokenId t = Vocab::first_regular; t < model.vocab_size(); ++t) allowed.push_back(t);
  std::vector<TokenId> out;
  out.reserve(static_cast<size_t>(len));
  for (int i = 0; i < len; ++i) {
    TokenId t = detail::sample_from_row(model, model.context_row(prefix), allowed, g);
    out.push_back(t);
    prefix.push_back(t);
  }
  return out;
}

// Samples until EOS or max_len tokens, EOS excluded from the output.
inline std::vector<TokenId> sample_until_eos(const LogitTable& model,
                                             std::vector<TokenId> prefix, int max_len,
                                             std::mt19937_64& g) {
  std::vector<TokenId> allowed;
  allowed.push_back(Vocab::eos);
  for (TokenId t = Vocab::first_regular; t < model.vocab_size(); ++t) allowed.push_back(t);
  std::vector<TokenId> out;
  for (int i = 0; i < max_len; ++i) {
    TokenId t = detail::sample_from_row(model, model.context_row(prefix), allowed, g);
    if (t == Vocab::eos) break;
    out.push_back(t);
    prefix.push_back(t);
  }
  return out;
}

struct SynthCorpus {
  corpus::Corpus data;
  LogitTable world;
};

// A fixed random world model samples prompts and two responses per prompt;
// the first draw is labeled chosen. Membership is a seeded subset of exactly
// floor(n_records * member_fraction) records. Fully deterministic given cfg.
inline SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Vocab vocab = Vocab::lowercase_latin(cfg.vocab_size);
  LogitTable world = LogitTable::random(vocab, cfg.order, cfg.world_seed, 1.0);

  std::mt19937_64 g(cfg.world_seed ^ 0x5DEECE66DULL);
  SynthCorpus out{corpus::Corpus{}, world};

  int id_width = static_cast<int>(std::to_string(cfg.n_records - 1).size());
  for (int i = 0; i < cfg.n_records; ++i) {
    int plen = rng::uniform_int(g, cfg.prompt_len_min, cfg.prompt_len_max);
    auto prompt = sample_fixed(world, {}, plen, g);

    int wlen = rng::uniform_int(g, cfg.response_len_min, cfg.response_len_max);
    auto chosen = sample_fixed(world, prompt, wlen, g);

    std::vector<TokenId> rejected;
    do {
      int llen = rng::uniform_int(g, cfg.response_len_min, cfg.response_len_max);
      rejected = sample_fixed(world, prompt, llen, g);
    } while (rejected == chosen);

    corpus::PreferenceRecord rec;
    std::string num = std::to_string(i);
    rec.id = "synth-" + std::string(static_cast<size_t>(id_width) - num.size(), '0') + num;
    rec.prompt = vocab.decode(prompt);
    rec.chosen = vocab.decode(chosen);
    rec.rejected = vocab.decode(rejected);
    rec.member = false;
    out.data.records.push_back(std::move(rec));
  }

  size_t n_members =
      static_cast<size_t>(std::floor(static_cast<double>(cfg.n_records) * cfg.member_fraction));
  std::vector<size_t> idx(static_cast<size_t>(cfg.n_records));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 gs(cfg.split_seed);
  rng::shuffle(idx, gs);
  for (size_t k = 0; k < n_members; ++k) out.data.records[idx[k]].member = true;

  out.data.provenance = json{{"generator", "synthetic"},
                             {"world_seed", cfg.world_seed},
                             {"split_seed", cfg.split_seed}};
  return out;
}

// ---------------------------------------------------------------------------
// Record scoring: model evaluations as TokenLogProbs streams
// ---------------------------------------------------------------------------

// Responses are scored with a terminating EOS; full roles score the whole
// prompt+response concatenation from a BOS context.
inline corpus::TokenLogProbs evaluate_role(const LogitTable& model,
                                           const corpus::PreferenceRecord& rec,
                                           corpus::Role role, corpus::ModelTag tag) {
  using corpus::Role;
  const Vocab& v = model.vocab();

  std::vector<TokenId> prompt_ids, scored_ids;
  const std::string& response_text =
      (role == Role::chosen_cond || role == Role::chosen_full || role == Role::chosen_full_lower)
          ? rec.chosen
          : rec.rejected;
  switch (role) {
    case Role::chosen_cond:
    case Role::rejected_cond:
      prompt_ids = v.encode(rec.prompt);
      scored_ids = v.encode(response_text);
      break;
    case Role::chosen_full:
    case Role::rejected_full:
      scored_ids = v.encode(rec.prompt + response_text);
      break;
    case Role::chosen_full_lower:
    case Role::rejected_full_lower:
      scored_ids = v.encode(text::fold_lowercase(rec.prompt + response_text));
      break;
  }
  scored_ids.push_back(Vocab::eos);

  auto score = sequence_cond_logprob(model, prompt_ids, scored_ids);
  corpus::TokenLogProbs out;
  out.record_id = rec.id;
  out.role = role;
  out.model_tag = tag;
  out.tokens.reserve(scored_ids.size());
  for (size_t i = 0; i < scored_ids.size(); ++i)
    out.tokens.emplace_back(v.symbols[static_cast<size_t>(scored_ids[i])], score.per_token[i]);
  return out;
}

inline PreferenceTokens tokenize_record(const Vocab& v, const corpus::PreferenceRecord& rec) {
  PreferenceTokens out;
  out.prompt = v.encode(rec.prompt);
  out.chosen = v.encode(rec.chosen);
  out.chosen.push_back(Vocab::eos);
  out.rejected = v.encode(rec.rejected);
  out.rejected.push_back(Vocab::eos);
  return out;
}

}  // namespace premia::toy
