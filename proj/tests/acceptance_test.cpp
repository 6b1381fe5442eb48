// End-to-end acceptance gate. Each criterion prints exactly one line,
//   "C<n> <what it checks>: PASS" or "... : FAIL (<reason>)",
// and the process exits nonzero when any criterion failed. Unlike the unit
// suites this exercises the installed CLI binary and a live loopback HTTP
// server, so it owns its own temp directory and subprocess plumbing.

#include <mpfr.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "premia/attacks.hpp"
#include "premia/corpus.hpp"
#include "premia/errors.hpp"
#include "premia/eval.hpp"
#include "premia/inference_client.hpp"
#include "premia/signed_log_real.hpp"
#include "premia/toy_model.hpp"
#include "premia/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using premia::num::SignedLogReal;
namespace attacks = premia::attacks;
namespace corpus = premia::corpus;
namespace eval = premia::eval;
namespace toy = premia::toy;

namespace {

int g_failures = 0;

void report(const std::string& label, bool ok, const std::string& detail) {
  std::cout << label << ": " << (ok ? "PASS" : "FAIL");
  if (!ok && !detail.empty()) std::cout << " (" << detail << ")";
  std::cout << "\n";
  if (!ok) ++g_failures;
}

// Body returns "" on success, a reason on failure; exceptions fail too.
void criterion(const std::string& label, const std::function<std::string()>& body) {
  std::string detail;
  try {
    detail = body();
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  report(label, detail.empty(), detail);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Subprocess plumbing for the CLI binary
// ---------------------------------------------------------------------------

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CmdResult run_cli(const std::string& args, const fs::path& capture_dir,
                  const std::string& tag) {
  fs::path out_file = capture_dir / (tag + ".out.txt");
  fs::path err_file = capture_dir / (tag + ".err.txt");
  std::string cmd = std::string(PREMIA_CLI_BIN) + " " + args + " >" + out_file.string() +
                    " 2>" + err_file.string();
  int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = premia::util::read_file(out_file.string());
  r.err = premia::util::read_file(err_file.string());
  return r;
}

// ---------------------------------------------------------------------------
// Shared randomized labeled score sets (C1 and C2 must use the same sets)
// ---------------------------------------------------------------------------

using ScoreSet = std::vector<eval::Labeled<double>>;

std::vector<ScoreSet> make_score_sets(int count, uint64_t seed) {
  std::mt19937_64 g(seed);
  std::vector<ScoreSet> sets;
  sets.reserve(count);
  for (int s = 0; s < count; ++s) {
    auto m = static_cast<int>(1 + g() % 250);
    auto n = static_cast<int>(1 + g() % 250);
    // even sets draw from a coarse grid so ties are plentiful
    bool coarse = s % 2 == 0;
    std::uniform_int_distribution<int> grid(-8, 8);
    std::uniform_real_distribution<double> real(-10.0, 10.0);
    ScoreSet rows;
    rows.reserve(m + n);
    for (int i = 0; i < m + n; ++i) {
      eval::Labeled<double> row;
      row.record_id = (i < m ? "m" : "n") + std::to_string(i);
      row.member = i < m;
      row.value = coarse ? 0.5 * grid(g) : real(g);
      rows.push_back(std::move(row));
    }
    sets.push_back(std::move(rows));
  }
  return sets;
}

// O(m*n) Mann-Whitney pair count: wins 1, ties 0.5.
double brute_force_auroc(const ScoreSet& rows) {
  double won = 0.0;
  size_t m = 0;
  for (const auto& a : rows) {
    if (!a.member) continue;
    ++m;
    for (const auto& b : rows) {
      if (b.member) continue;
      if (a.value > b.value)
        won += 1.0;
      else if (a.value == b.value)
        won += 0.5;
    }
  }
  size_t n = rows.size() - m;
  return won / (static_cast<double>(m) * static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Small toy-model helpers
// ---------------------------------------------------------------------------

toy::PreferenceTokens random_tuple(const toy::Vocab& v, std::mt19937_64& g) {
  std::uniform_int_distribution<int> letter(2, v.size() - 1);
  std::uniform_int_distribution<int> plen(0, 2), rlen(1, 3);
  toy::PreferenceTokens t;
  for (int i = plen(g); i > 0; --i) t.prompt.push_back(letter(g));
  for (int i = rlen(g); i > 0; --i) t.chosen.push_back(letter(g));
  do {
    t.rejected.clear();
    for (int i = rlen(g); i > 0; --i) t.rejected.push_back(letter(g));
  } while (t.rejected == t.chosen);
  return t;
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);  // lines appear as criteria finish

  char tmpl[] = "/tmp/premia-acceptance-XXXXXX";
  if (mkdtemp(tmpl) == nullptr) {
    std::cerr << "cannot create temp directory\n";
    return 1;
  }
  fs::path tmp(tmpl);

  const int kSetCount = 200;
  std::vector<ScoreSet> sets = make_score_sets(kSetCount, 20240814);

  // C1: exact agreement with the quadratic pair-count definition of AUROC.
  criterion("C1 AUROC matches brute-force pair counting on 200 randomized sets", [&] {
    auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (const auto& s : sets) {
      double fast = eval::auroc<double>(s);
      double slow = brute_force_auroc(s);
      worst = std::max(worst, std::abs(fast - slow));
      if (std::abs(fast - slow) > 1e-12)
        return "auroc " + fmt(fast) + " vs oracle " + fmt(slow);
    }
    double dt = seconds_since(t0);
    if (dt >= 5.0) return "took " + fmt(dt) + " s (budget 5 s)";
    if (worst > 1e-12) return "worst deviation " + fmt(worst);
    return std::string();
  });

  // C2: the ROC polyline integrates back to the same statistic.
  criterion("C2 trapezoidal ROC area equals AUROC on the same sets", [&] {
    for (const auto& s : sets) {
      auto roc = eval::roc_points<double>(s);
      double area = eval::roc_area(roc);
      double direct = eval::auroc<double>(s);
      if (std::abs(area - direct) > 1e-12)
        return "area " + fmt(area) + " vs auroc " + fmt(direct);
    }
    return std::string();
  });

  // C3: closed forms for the likelihood-based scores.
  criterion("C3 uniform-model perplexity equals V and the MIN-K fixture is exact", [&] {
    for (int V : {3, 10, 26}) {
      toy::Vocab v = toy::Vocab::lowercase_latin(V - 2);
      toy::LogitTable t = toy::LogitTable::uniform(v, 2);
      std::string text;
      for (int i = 0; i < 7; ++i) text += static_cast<char>('a' + i % (V - 2));
      toy::SequenceScore s = toy::sequence_cond_logprob(t, {}, v.encode(text));
      double p = attacks::perplexity(s.per_token);
      if (std::abs(p - V) > 1e-9)
        return "V=" + std::to_string(V) + " gave perplexity " + fmt(p);
    }
    corpus::TokenLogProbs lp;
    lp.record_id = "fixture";
    lp.role = corpus::Role::chosen_full;
    lp.model_tag = corpus::ModelTag::target;
    for (int i = 1; i <= 5; ++i) lp.tokens.emplace_back("t" + std::to_string(i), -double(i));
    double got = attacks::score_min_k(lp, attacks::MinKConfig{40.0}).real_value();
    if (got != -4.5) return "min_k gave " + fmt(got) + ", want -4.5 exactly";
    return std::string();
  });

  // C4: the DPO objective's two analytic anchors.
  criterion("C4 DPO loss is ln 2 at theta=ref and gradients match finite differences", [&] {
    auto t0 = std::chrono::steady_clock::now();
    const double ln2 = std::log(2.0);

    toy::SynthConfig cfg;
    cfg.n_records = 30;
    cfg.vocab_size = 4;
    cfg.order = 1;
    toy::SynthCorpus synth = toy::generate_synthetic_corpus(cfg);
    std::vector<toy::PreferenceTokens> tuples;
    for (const auto& rec : synth.data.records)
      tuples.push_back(toy::tokenize_record(synth.world.vocab(), rec));
    for (double beta : {0.05, 0.4, 3.0}) {
      for (size_t take : {size_t{1}, size_t{7}, tuples.size()}) {
        std::vector<toy::PreferenceTokens> batch(tuples.begin(), tuples.begin() + take);
        double loss = toy::dpo_loss_and_grad(synth.world, synth.world, batch, beta).first;
        if (std::abs(loss - ln2) > 1e-12)
          return "theta=ref loss " + fmt(loss) + " at beta " + fmt(beta);
      }
    }

    std::mt19937_64 g(4242);
    std::uniform_real_distribution<double> beta_dist(0.1, 2.0);
    const double h = 1e-5;
    for (int inst = 0; inst < 50; ++inst) {
      int letters = 2 + static_cast<int>(g() % 3);  // table width 4..6
      toy::Vocab v = toy::Vocab::lowercase_latin(letters);
      toy::LogitTable theta = toy::LogitTable::random(v, 1, g());
      toy::LogitTable ref = toy::LogitTable::random(v, 1, g());
      std::vector<toy::PreferenceTokens> batch;
      for (int i = 0; i < 3; ++i) batch.push_back(random_tuple(v, g));
      double beta = beta_dist(g);
      auto [loss, grad] = toy::dpo_loss_and_grad(theta, ref, batch, beta);
      if (!std::isfinite(loss)) return "non-finite loss in instance " + std::to_string(inst);
      for (size_t i = 0; i < theta.logits().size(); ++i) {
        toy::LogitTable up = theta, down = theta;
        up.logits()[i] += h;
        down.logits()[i] -= h;
        double fd = (toy::dpo_loss_and_grad(up, ref, batch, beta).first -
                     toy::dpo_loss_and_grad(down, ref, batch, beta).first) /
                    (2 * h);
        // unit floor: the loss is O(1), and an exactly-cancelling entry still
        // shows one-ulp central-difference noise (~1e-11)
        double rel = std::abs(fd - grad[i]) /
                     std::max({std::abs(fd), std::abs(grad[i]), 1.0});
        if (rel > 1e-5)
          return "instance " + std::to_string(inst) + " entry " + std::to_string(i) +
                 ": grad " + fmt(grad[i]) + " vs fd " + fmt(fd);
      }
    }
    double dt = seconds_since(t0);
    if (dt >= 10.0) return "took " + fmt(dt) + " s (budget 10 s)";
    return std::string();
  });

  // C5: a target identical to the reference must look like a coin flip.
  criterion("C5 identical target and reference yield zero scores and AUROC 0.5", [&] {
    toy::SynthConfig cfg;
    cfg.n_records = 60;
    cfg.vocab_size = 8;
    cfg.order = 1;
    toy::SynthCorpus synth = toy::generate_synthetic_corpus(cfg);

    std::vector<corpus::TokenLogProbs> streams;
    for (const auto& rec : synth.data.records) {
      for (auto role : {corpus::Role::chosen_cond, corpus::Role::rejected_cond}) {
        streams.push_back(toy::evaluate_role(synth.world, rec, role, corpus::ModelTag::target));
        streams.push_back(
            toy::evaluate_role(synth.world, rec, role, corpus::ModelTag::reference));
      }
    }
    std::set<attacks::AttackKind> kinds = {attacks::AttackKind::premia_single,
                                           attacks::AttackKind::premia_tuple};
    std::set<attacks::TargetRole> targets = {attacks::TargetRole::chosen,
                                             attacks::TargetRole::rejected,
                                             attacks::TargetRole::pair};
    auto required = attacks::required_pairs(kinds, targets);
    auto joined = corpus::join_for_attack(synth.data, streams, required, false);
    auto scores = attacks::run_attack_suite(joined.rows, kinds, targets, attacks::MinKConfig{});

    std::map<std::string, bool> member;
    for (const auto& rec : synth.data.records) member[rec.id] = rec.member.value();

    std::map<std::pair<attacks::AttackKind, attacks::TargetRole>,
             std::vector<eval::Labeled<SignedLogReal>>>
        groups;
    for (const auto& s : scores) {
      if (s.kind == attacks::AttackKind::premia_single && s.real_value() != 0.0)
        return "premia_single for " + s.record_id + " is " + fmt(s.real_value());
      if (s.kind == attacks::AttackKind::premia_tuple && s.signed_value().sign != 0)
        return "premia_tuple for " + s.record_id + " has nonzero sign";
      eval::Labeled<SignedLogReal> row;
      row.record_id = s.record_id;
      row.value = s.as_signed();
      row.member = member.at(s.record_id);
      groups[{s.kind, s.target_role}].push_back(std::move(row));
    }
    if (groups.size() != 3) return "expected 3 score groups, got " + std::to_string(groups.size());
    for (const auto& [key, rows] : groups) {
      double a = eval::auroc<SignedLogReal>(rows);
      if (a != 0.5)
        return std::string(attacks::to_string(key.first)) + "/" +
               attacks::to_string(key.second) + " auroc " + fmt(a) + ", want exactly 0.5";
    }
    return std::string();
  });

  // C6: the headline behaviour — alignment on the tuples leaks membership,
  // the supervised-only control does not.
  fs::path sim_a = tmp / "sim_a";
  criterion("C6 default simulate leaks via DPO but not via the SFT control", [&] {
    auto t0 = std::chrono::steady_clock::now();
    CmdResult r = run_cli("simulate --out " + sim_a.string(), tmp, "sim_a");
    double dt = seconds_since(t0);
    if (r.exit_code != 0) return "exit code " + std::to_string(r.exit_code) + ": " + r.err;
    if (dt >= 60.0) return "took " + fmt(dt) + " s (budget 60 s)";
    json summary = json::parse(premia::util::read_file((sim_a / "summary.json").string()));
    double dpo_pair = summary["dpo"]["premia_tuple_auroc"].get<double>();
    double sft_pair = summary["sft_control"]["premia_tuple_auroc"].get<double>();
    double dpo_single = summary["dpo"]["premia_single_chosen_auroc"].get<double>();
    double dpo_ppl = summary["dpo"]["ppl_chosen_auroc"].get<double>();
    if (dpo_pair < 0.8) return "dpo premia_tuple auroc " + fmt(dpo_pair) + " < 0.8";
    if (sft_pair < 0.45 || sft_pair > 0.55)
      return "sft control premia_tuple auroc " + fmt(sft_pair) + " outside [0.45, 0.55]";
    if (!(dpo_single > dpo_ppl))
      return "premia_single chosen " + fmt(dpo_single) + " not above ppl " + fmt(dpo_ppl);
    return std::string();
  });

  // C7: ordering of the signed-log tuple scores against exact arithmetic.
  criterion("C7 signed-log tuple scores order identically to a 256-bit oracle", [&] {
    const int n = 1000;
    std::mt19937_64 g(777);
    std::uniform_real_distribution<double> U(-50.0, 50.0);
    std::vector<SignedLogReal> vals;
    vals.reserve(n);
    auto oracle = std::make_unique<mpfr_t[]>(n);
    mpfr_t ea, eb;
    mpfr_init2(ea, 256);
    mpfr_init2(eb, 256);
    double prev_a = 0.0, prev_b = 0.0;
    for (int i = 0; i < n; ++i) {
      double a = U(g), b = U(g);
      if (i % 25 == 7) b = a;                       // exact zero
      if (i % 40 == 11 && i > 0) a = prev_a, b = prev_b;  // duplicate value
      prev_a = a, prev_b = b;
      vals.push_back(attacks::premia_tuple("r" + std::to_string(i), a, b).signed_value());
      mpfr_init2(oracle[i], 256);
      mpfr_set_d(ea, a, MPFR_RNDN);
      mpfr_exp(ea, ea, MPFR_RNDN);
      mpfr_set_d(eb, b, MPFR_RNDN);
      mpfr_exp(eb, eb, MPFR_RNDN);
      mpfr_sub(oracle[i], ea, eb, MPFR_RNDN);
    }
    std::string bad;
    for (int i = 0; i < n && bad.empty(); ++i) {
      for (int j = i + 1; j < n; ++j) {
        int want = mpfr_cmp(oracle[i], oracle[j]);
        want = want < 0 ? -1 : want > 0 ? 1 : 0;
        int got = vals[i] < vals[j] ? -1 : vals[j] < vals[i] ? 1 : 0;
        if (got != want) {
          bad = "pair (" + std::to_string(i) + ", " + std::to_string(j) + "): oracle " +
                std::to_string(want) + ", got " + std::to_string(got);
          break;
        }
      }
    }
    for (int i = 0; i < n; ++i) mpfr_clear(oracle[i]);
    mpfr_clear(ea);
    mpfr_clear(eb);
    return bad;
  });

  // C8: diversity metric hand fixtures, exact.
  criterion("C8 diversity hand fixtures reproduce exactly", [&] {
    auto m1 = eval::diversity_metrics({{"a", "b", "a", "b"}});
    if (m1.distinct_1 != 0.5) return "distinct-1 " + fmt(m1.distinct_1) + ", want 0.5";
    if (m1.distinct_2 != 2.0 / 3.0) return "distinct-2 " + fmt(m1.distinct_2) + ", want 2/3";
    std::vector<std::string> same(200, "tok");
    auto m2 = eval::diversity_metrics({same});
    if (!m2.msttr_100.has_value()) return std::string("msttr absent for 200 tokens");
    if (*m2.msttr_100 != 0.01) return "msttr " + fmt(*m2.msttr_100) + ", want 0.01";
    if (m2.distinct_1 != 1.0 / 200.0) return "distinct-1 " + fmt(m2.distinct_1) + ", want 1/200";
    return std::string();
  });

  // C9: a manifest pins every seed, so replaying it is bit-for-bit identical.
  criterion("C9 replaying a simulate manifest reproduces every output byte", [&] {
    fs::path manifest = sim_a / "manifest.json";
    if (!fs::exists(manifest)) return std::string("no manifest from C6's run");
    fs::path sim_b = tmp / "sim_b";
    CmdResult r = run_cli("simulate --config " + manifest.string() + " --out " + sim_b.string(),
                          tmp, "sim_b");
    if (r.exit_code != 0) return "exit code " + std::to_string(r.exit_code) + ": " + r.err;
    for (const char* rel :
         {"corpus.jsonl", "sft_curve.csv", "dpo_curve.csv", "models/world.json",
          "models/sft.json", "models/dpo.json", "scores_dpo.jsonl", "scores_sft.jsonl",
          "report_dpo.json", "report_dpo.csv", "report_sft.json", "report_sft.csv",
          "summary.json", "manifest.json"}) {
      if (premia::util::read_file((sim_a / rel).string()) !=
          premia::util::read_file((sim_b / rel).string()))
        return std::string(rel) + " differs between runs";
    }
    return std::string();
  });

  // C10: live-server client behaviour, and the auth token stays secret.
  criterion("C10 client fetches fixtures, bounds retries, and never leaks the token", [&] {
    const std::string secret = "hunter2-acceptance-secret";
    setenv("PREMIA_ACCEPT_TOKEN", secret.c_str(), 1);
    setenv("PREMIA_ACCEPT_BAD", "wrong-token", 1);

    std::mutex mu;
    std::map<std::string, int> hits;
    httplib::Server svr;
    svr.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
      if (req.get_header_value("Authorization") != "Bearer " + secret) {
        res.status = 401;
        res.set_content("{}", "application/json");
        return;
      }
      json body = json::parse(req.body, nullptr, false);
      std::string text = body.is_object() ? body.value("prompt", "") : "";
      int hit;
      {
        std::lock_guard lock(mu);
        hit = ++hits[text];
      }
      if (text.rfind("retry", 0) == 0 && hit <= 2) {
        res.status = 429;
        res.set_content("{}", "application/json");
        return;
      }
      if (text.rfind("flaky", 0) == 0) {
        res.status = 429;
        res.set_content("{}", "application/json");
        return;
      }
      // echo scoring: one token per byte, null first logprob, -0.25*i after
      json tokens = json::array(), lps = json::array(), offs = json::array();
      for (size_t i = 0; i < text.size(); ++i) {
        tokens.push_back(std::string(1, text[i]));
        lps.push_back(i == 0 ? json(nullptr) : json(-0.25 * static_cast<double>(i)));
        offs.push_back(i);
      }
      json resp = {{"choices",
                    json::array({{{"text", text},
                                  {"logprobs",
                                   {{"tokens", tokens},
                                    {"token_logprobs", lps},
                                    {"text_offset", offs}}}}})}};
      res.set_content(resp.dump(), "application/json");
    });
    int port = svr.bind_to_any_port("127.0.0.1");
    if (port <= 0) return std::string("cannot bind a loopback port");
    std::thread server_thread([&] { svr.listen_after_bind(); });
    svr.wait_until_ready();
    // joined on every exit path below
    auto shutdown = [&] {
      svr.stop();
      server_thread.join();
    };

    premia::client::EndpointConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.model_name = "toy-target";
    cfg.auth_token_env = "PREMIA_ACCEPT_TOKEN";
    cfg.max_retries = 3;
    cfg.backoff_s = 0.01;

    try {
      // fixture shapes through the real transport
      premia::client::CompletionsClient client(cfg);
      auto full = client.fetch_full_logprobs("abcd");
      if (!full.dropped_null_first || full.tokens.size() != 3 ||
          full.tokens[0] != std::pair<std::string, double>("b", -0.25) ||
          full.tokens[1] != std::pair<std::string, double>("c", -0.5) ||
          full.tokens[2] != std::pair<std::string, double>("d", -0.75)) {
        shutdown();
        return std::string("full fetch did not produce the fixture tokens");
      }
      auto cond = client.fetch_cond_logprobs("ab", "cd");
      if (cond.tokens.size() != 2 || cond.boundary_straddle ||
          cond.tokens[0] != std::pair<std::string, double>("c", -0.5) ||
          cond.tokens[1] != std::pair<std::string, double>("d", -0.75)) {
        shutdown();
        return std::string("cond fetch did not produce the fixture tokens");
      }

      // two 429s then success: exactly 3 requests and real backoff elapsed
      auto t0 = std::chrono::steady_clock::now();
      premia::client::CompletionsClient retry_client(cfg);
      auto retried = retry_client.fetch_full_logprobs("retry-me");
      double waited = seconds_since(t0);
      int retry_hits;
      {
        std::lock_guard lock(mu);
        retry_hits = hits["retry-me"];
      }
      if (retried.tokens.empty() || retry_hits != 3 || retry_client.requests_made() != 3) {
        shutdown();
        return "retry path made " + std::to_string(retry_hits) + " server hits";
      }
      if (waited < 0.025) {
        shutdown();
        return "backoff too short: " + fmt(waited) + " s for two retries";
      }

      // persistent 429: max_retries + 1 attempts, then a transport error
      premia::client::EndpointConfig flaky_cfg = cfg;
      flaky_cfg.max_retries = 2;
      premia::client::CompletionsClient flaky(flaky_cfg);
      bool threw = false;
      try {
        flaky.fetch_full_logprobs("flaky-text");
      } catch (const premia::TransportError& e) {
        threw = true;
        if (std::string(e.what()).find("3 attempts") == std::string::npos) {
          shutdown();
          return "exhaustion message lacks the attempt count: " + std::string(e.what());
        }
      }
      int flaky_hits;
      {
        std::lock_guard lock(mu);
        flaky_hits = hits["flaky-text"];
      }
      if (!threw || flaky_hits != 3) {
        shutdown();
        return "persistent 429 made " + std::to_string(flaky_hits) + " hits (want 3)";
      }

      // bad credentials: AuthError, no retry, and no token value in the message
      premia::client::EndpointConfig bad_cfg = cfg;
      bad_cfg.auth_token_env = "PREMIA_ACCEPT_BAD";
      premia::client::CompletionsClient rejected(bad_cfg);
      bool auth_threw = false;
      try {
        rejected.fetch_full_logprobs("credential-check");
      } catch (const premia::AuthError& e) {
        auth_threw = true;
        std::string what = e.what();
        if (what.find("401") == std::string::npos || what.find("wrong-token") != std::string::npos ||
            what.find(secret) != std::string::npos) {
          shutdown();
          return "auth error message is wrong or leaks the token: " + what;
        }
      }
      if (!auth_threw) {
        shutdown();
        return std::string("HTTP 401 did not raise an auth error");
      }
    } catch (const std::exception& e) {
      shutdown();
      return std::string("live client failed: ") + e.what();
    }

    // the CLI end of the pipe: fetch a corpus, then resume without refetching
    fs::path fetch_dir = tmp / "fetch";
    fs::create_directories(fetch_dir);
    write_file(fetch_dir / "corpus.jsonl",
               R"({"id":"r1","prompt":"ab","chosen":"cd","rejected":"ef"})" "\n"
               R"({"id":"r2","prompt":"pq","chosen":"rs","rejected":"tu"})" "\n");
    write_file(fetch_dir / "endpoint.json", cfg.to_json().dump() + "\n");
    fs::path out_path = fetch_dir / "logprobs.jsonl";
    std::string fetch_args = "fetch --endpoint " + (fetch_dir / "endpoint.json").string() +
                             " --corpus " + (fetch_dir / "corpus.jsonl").string() + " --out " +
                             out_path.string() + " --cache " +
                             (fetch_dir / "cache.jsonl").string();
    CmdResult r = run_cli(fetch_args, fetch_dir, "fetch1");
    if (r.exit_code != 0) {
      shutdown();
      return "fetch exit code " + std::to_string(r.exit_code) + ": " + r.err;
    }
    auto rows = corpus::parse_logprob_jsonl(premia::util::read_file(out_path.string()));
    auto row_is = [](const corpus::TokenLogProbs& lp, const std::string& id, corpus::Role role,
                     const std::string& t1, const std::string& t2) {
      return lp.record_id == id && lp.role == role &&
             lp.model_tag == corpus::ModelTag::target && lp.tokens.size() == 2 &&
             lp.tokens[0] == std::pair<std::string, double>(t1, -0.5) &&
             lp.tokens[1] == std::pair<std::string, double>(t2, -0.75);
    };
    if (rows.size() != 4 || !row_is(rows[0], "r1", corpus::Role::chosen_cond, "c", "d") ||
        !row_is(rows[1], "r1", corpus::Role::rejected_cond, "e", "f") ||
        !row_is(rows[2], "r2", corpus::Role::chosen_cond, "r", "s") ||
        !row_is(rows[3], "r2", corpus::Role::rejected_cond, "t", "u")) {
      shutdown();
      return std::string("CLI fetch rows do not match the fixture logprobs");
    }

    int hits_before_resume;
    {
      std::lock_guard lock(mu);
      hits_before_resume = 0;
      for (const auto& [_, c] : hits) hits_before_resume += c;
    }
    CmdResult r2 = run_cli(fetch_args, fetch_dir, "fetch2");
    int hits_after_resume;
    {
      std::lock_guard lock(mu);
      hits_after_resume = 0;
      for (const auto& [_, c] : hits) hits_after_resume += c;
    }
    shutdown();
    if (r2.exit_code != 0) return "resume exit code " + std::to_string(r2.exit_code);
    if (hits_after_resume != hits_before_resume)
      return std::string("resume refetched rows already on disk");

    // nothing the run produced may contain the token value
    for (const auto& entry : fs::recursive_directory_iterator(fetch_dir)) {
      if (!entry.is_regular_file()) continue;
      if (premia::util::read_file(entry.path().string()).find(secret) != std::string::npos)
        return "token value leaked into " + entry.path().filename().string();
    }
    return std::string();
  });

  std::error_code ec;
  fs::remove_all(tmp, ec);

  std::cout << "acceptance: " << (10 - g_failures) << "/10 criteria passed\n";
  return g_failures == 0 ? 0 : 1;
}
