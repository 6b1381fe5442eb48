// premia: membership-inference auditing for preference-tuple corpora.
//
// Subcommands:
//   score      corpus + token logprobs -> attack-score JSONL
//   eval       attack scores + labels  -> AUROC/ROC reports (JSON + CSV)
//   simulate   end-to-end seeded toy run: synthesize, SFT, DPO, attack, report
//   fetch      pull token logprobs from an OpenAI-compatible completions API
//   diversity  n-gram diversity metrics over a text corpus
//
// Exit codes: 0 success, 1 internal error, 2 validation error, 3 external
// service error.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "premia/attacks.hpp"
#include "premia/corpus.hpp"
#include "premia/errors.hpp"
#include "premia/eval.hpp"
#include "premia/inference_client.hpp"
#include "premia/manifest.hpp"
#include "premia/signed_log_real.hpp"
#include "premia/toy_model.hpp"
#include "premia/util.hpp"
#include "premia/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitValidation = 2;
constexpr int kExitExternal = 3;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

json read_json_file(const std::string& path) {
  std::string text = premia::util::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw premia::ValidationError(path + ": " + e.what());
  }
}

premia::corpus::Corpus load_corpus(const std::string& path) {
  try {
    return premia::corpus::parse_preference_jsonl(premia::util::read_file(path));
  } catch (const premia::ValidationError& e) {
    throw premia::ValidationError(path + ": " + e.what());
  }
}

std::vector<premia::corpus::TokenLogProbs> load_logprob_files(
    const std::vector<std::string>& paths) {
  std::vector<premia::corpus::TokenLogProbs> all;
  std::set<std::tuple<std::string, premia::corpus::Role, premia::corpus::ModelTag>> seen;
  for (const auto& path : paths) {
    std::vector<premia::corpus::TokenLogProbs> some;
    try {
      some = premia::corpus::parse_logprob_jsonl(premia::util::read_file(path));
    } catch (const premia::ValidationError& e) {
      throw premia::ValidationError(path + ": " + e.what());
    }
    for (auto& lp : some) {
      if (!seen.insert({lp.record_id, lp.role, lp.model_tag}).second)
        throw premia::ValidationError(path + ": duplicate logprobs for record \"" +
                                      lp.record_id + "\" (" + to_string(lp.role) + ", " +
                                      to_string(lp.model_tag) + ")");
      all.push_back(std::move(lp));
    }
  }
  return all;
}

std::set<premia::attacks::AttackKind> parse_kinds(const std::vector<std::string>& names) {
  std::set<premia::attacks::AttackKind> out;
  if (names.empty()) {
    for (auto k : premia::attacks::kAllAttackKinds) out.insert(k);
    return out;
  }
  for (const auto& n : names) out.insert(premia::attacks::attack_kind_from_string(n));
  return out;
}

std::set<premia::attacks::TargetRole> parse_roles(const std::vector<std::string>& names) {
  std::set<premia::attacks::TargetRole> out;
  if (names.empty()) {
    out = {premia::attacks::TargetRole::chosen, premia::attacks::TargetRole::rejected,
           premia::attacks::TargetRole::pair};
    return out;
  }
  for (const auto& n : names) out.insert(premia::attacks::target_role_from_string(n));
  return out;
}

std::map<std::string, bool> membership_map(const premia::corpus::Corpus& corpus) {
  std::map<std::string, bool> out;
  for (const auto& rec : corpus.records) {
    if (!rec.member.has_value())
      throw premia::ValidationError("record \"" + rec.id + "\" has no membership label");
    out[rec.id] = *rec.member;
  }
  return out;
}

// Tuple text length in characters; the toy tokenizer is per-character so this
// doubles as a token count for length-stratified reports.
std::map<std::string, int> record_lengths(const premia::corpus::Corpus& corpus) {
  std::map<std::string, int> out;
  for (const auto& rec : corpus.records)
    out[rec.id] =
        static_cast<int>(rec.prompt.size() + rec.chosen.size() + rec.rejected.size());
  return out;
}

// Reports for every (kind, role) group present in `scores`, in enum order.
std::vector<premia::eval::EvalReport> build_reports(
    std::span<const premia::attacks::AttackScore> scores,
    const std::map<std::string, bool>& member_by_id,
    const std::map<std::string, int>* lengths = nullptr, int n_buckets = 0) {
  std::map<std::pair<int, int>, std::vector<premia::attacks::AttackScore>> groups;
  for (const auto& s : scores)
    groups[{static_cast<int>(s.kind), static_cast<int>(s.target_role)}].push_back(s);
  std::vector<premia::eval::EvalReport> out;
  for (const auto& [key, group] : groups)
    out.push_back(premia::eval::report_for_group(group, member_by_id, lengths, n_buckets));
  return out;
}

std::string reports_to_json_text(std::span<const premia::eval::EvalReport> reports) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  return arr.dump(2) + "\n";
}

double find_auroc(std::span<const premia::eval::EvalReport> reports, const char* kind,
                  const char* role) {
  for (const auto& r : reports)
    if (r.kind == kind && r.role == role) return r.auroc;
  throw premia::ValidationError(std::string("no report for (") + kind + ", " + role + ")");
}

// Numbers rendered through JSON for shortest round-trip formatting, so CSV
// cells match across runs and platforms.
std::string num_str(double v) { return json(v).dump(); }

void write_manifest(const premia::manifest::Manifest& m, const std::string& path) {
  premia::util::atomic_write_file(path, m.serialize());
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

struct ScoreArgs {
  std::string corpus_path;
  std::vector<std::string> logprob_paths;
  std::vector<std::string> kinds;
  std::vector<std::string> roles;
  double min_k_percent = 20.0;
  bool permissive = false;
  std::string out_path;
};

int cmd_score(const ScoreArgs& args) {
  auto corpus = load_corpus(args.corpus_path);
  auto logprobs = load_logprob_files(args.logprob_paths);
  auto kinds = parse_kinds(args.kinds);
  auto targets = parse_roles(args.roles);
  premia::attacks::MinKConfig min_k{args.min_k_percent};
  min_k.validate();

  auto required = premia::attacks::required_pairs(kinds, targets);
  auto joined = premia::corpus::join_for_attack(corpus, logprobs, required, args.permissive);
  for (const auto& miss : joined.missing)
    std::cerr << "premia score: skipping record \"" << miss.record_id << "\": no logprobs for ("
              << to_string(miss.role) << ", " << to_string(miss.tag) << ")\n";

  auto scores = premia::attacks::run_attack_suite(joined.rows, kinds, targets, min_k);
  std::string payload = premia::attacks::serialize_scores(scores);
  premia::util::atomic_write_file(args.out_path, payload);

  premia::manifest::Manifest m;
  m.command = "score";
  json kind_names = json::array(), role_names = json::array();
  for (auto k : kinds) kind_names.push_back(to_string(k));
  for (auto t : targets) role_names.push_back(to_string(t));
  m.config = json{{"kinds", kind_names},
                  {"roles", role_names},
                  {"min_k_percent", args.min_k_percent},
                  {"permissive", args.permissive}};
  m.add_input(args.corpus_path, premia::util::read_file(args.corpus_path));
  for (const auto& p : args.logprob_paths) m.add_input(p, premia::util::read_file(p));
  m.add_output(args.out_path, payload);
  write_manifest(m, args.out_path + ".manifest.json");

  std::cerr << "premia score: wrote " << scores.size() << " scores for " << joined.rows.size()
            << " records to " << args.out_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string scores_path;
  std::string corpus_path;
  std::string out_path;
  std::string csv_path;
  std::string classify_out;
  int buckets = 0;
  std::optional<double> tau;
};

int cmd_eval(const EvalArgs& args) {
  auto scores = premia::attacks::parse_scores_jsonl(premia::util::read_file(args.scores_path));
  if (scores.empty()) throw premia::ValidationError(args.scores_path + ": no scores");
  auto corpus = load_corpus(args.corpus_path);
  auto members = membership_map(corpus);
  auto lengths = record_lengths(corpus);

  auto reports = build_reports(scores, members, args.buckets > 0 ? &lengths : nullptr,
                               args.buckets);
  std::string report_text = reports_to_json_text(reports);
  premia::util::atomic_write_file(args.out_path, report_text);

  std::string csv_text;
  if (!args.csv_path.empty()) {
    csv_text = premia::eval::reports_to_csv(reports);
    premia::util::atomic_write_file(args.csv_path, csv_text);
  }

  std::string classify_text;
  if (args.tau.has_value()) {
    if (args.classify_out.empty())
      throw premia::ValidationError("--tau requires --classify-out");
    premia::num::SignedLogReal tau_key = premia::attacks::AttackScore{
        "", premia::attacks::AttackKind::ppl, premia::attacks::TargetRole::chosen,
        *args.tau}.as_signed();
    for (const auto& s : scores) {
      ordered_json row;
      row["record_id"] = s.record_id;
      row["kind"] = to_string(s.kind);
      row["role"] = to_string(s.target_role);
      row["label"] = premia::eval::classify(s.as_signed(), tau_key);
      classify_text += row.dump() + "\n";
    }
    premia::util::atomic_write_file(args.classify_out, classify_text);
  }

  premia::manifest::Manifest m;
  m.command = "eval";
  m.config = json{{"buckets", args.buckets}};
  if (args.tau) m.config["tau"] = *args.tau;
  m.add_input(args.scores_path, premia::util::read_file(args.scores_path));
  m.add_input(args.corpus_path, premia::util::read_file(args.corpus_path));
  m.add_output(args.out_path, report_text);
  if (!args.csv_path.empty()) m.add_output(args.csv_path, csv_text);
  if (!args.classify_out.empty() && args.tau) m.add_output(args.classify_out, classify_text);
  write_manifest(m, args.out_path + ".manifest.json");

  std::cerr << "premia eval: wrote " << reports.size() << " reports to " << args.out_path
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::optional<int> dpo_epochs;
  std::optional<int> sft_epochs;
};

struct SimulateConfig {
  uint64_t seed = 20240601;
  premia::toy::SynthConfig synth;
  double sft_learning_rate = 0.5;
  int sft_epochs = 60;
  premia::toy::DpoHyperParams dpo;
  double min_k_percent = 20.0;
  int buckets = 0;

  json to_json() const {
    json obj;
    obj["seed"] = seed;
    obj["synth"] = synth.to_json();
    obj["sft"] = json{{"learning_rate", sft_learning_rate}, {"epochs", sft_epochs}};
    obj["dpo"] = dpo.to_json();
    obj["min_k_percent"] = min_k_percent;
    obj["buckets"] = buckets;
    return obj;
  }
};

// Applies file config and flag overrides on top of defaults; any seed not
// pinned explicitly is derived from the master seed, and the result is fully
// concrete (re-running it reproduces the run bit-for-bit).
SimulateConfig resolve_simulate_config(const SimulateArgs& args) {
  json raw = json::object();
  if (!args.config_path.empty())
    raw = premia::manifest::extract_config(read_json_file(args.config_path));
  if (!raw.is_object()) throw premia::ValidationError("simulate config must be a JSON object");

  SimulateConfig cfg;
  cfg.seed = raw.value("seed", cfg.seed);
  if (args.seed) cfg.seed = *args.seed;

  json synth_raw = raw.value("synth", json::object());
  cfg.synth = premia::toy::SynthConfig::from_json(synth_raw);
  json sft_raw = raw.value("sft", json::object());
  cfg.sft_learning_rate = sft_raw.value("learning_rate", cfg.sft_learning_rate);
  cfg.sft_epochs = sft_raw.value("epochs", cfg.sft_epochs);
  json dpo_raw = raw.value("dpo", json::object());
  cfg.dpo = premia::toy::DpoHyperParams::from_json(dpo_raw);
  cfg.min_k_percent = raw.value("min_k_percent", cfg.min_k_percent);
  cfg.buckets = raw.value("buckets", cfg.buckets);

  uint64_t stream = cfg.seed;
  auto next = [&stream] { return premia::util::splitmix64(stream); };
  uint64_t derived_world = next(), derived_split = next(), derived_dpo = next();
  if (!synth_raw.contains("world_seed")) cfg.synth.world_seed = derived_world;
  if (!synth_raw.contains("split_seed")) cfg.synth.split_seed = derived_split;
  if (!dpo_raw.contains("seed")) cfg.dpo.seed = derived_dpo;

  if (args.sft_epochs) cfg.sft_epochs = *args.sft_epochs;
  if (args.dpo_epochs) cfg.dpo.epochs = *args.dpo_epochs;
  if (cfg.sft_epochs < 0) throw premia::ValidationError("sft epochs must be >= 0");
  if (cfg.dpo.epochs < 0) throw premia::ValidationError("dpo epochs must be >= 0");
  cfg.synth.validate();
  if (cfg.dpo.epochs > 0) cfg.dpo.validate();
  return cfg;
}

// Logprob streams for one attack condition: which model plays each tag.
std::vector<premia::corpus::TokenLogProbs> score_condition(
    const premia::corpus::Corpus& corpus, const premia::toy::LogitTable& target,
    const premia::toy::LogitTable& reference, const premia::toy::LogitTable& small_ref) {
  using premia::corpus::ModelTag;
  using premia::corpus::Role;
  std::vector<premia::corpus::TokenLogProbs> out;
  out.reserve(corpus.records.size() * 10);
  for (const auto& rec : corpus.records) {
    for (Role role : {Role::chosen_full, Role::rejected_full})
      out.push_back(premia::toy::evaluate_role(target, rec, role, ModelTag::target));
    for (Role role : {Role::chosen_full_lower, Role::rejected_full_lower})
      out.push_back(premia::toy::evaluate_role(target, rec, role, ModelTag::target));
    for (Role role : {Role::chosen_cond, Role::rejected_cond})
      out.push_back(premia::toy::evaluate_role(target, rec, role, ModelTag::target));
    for (Role role : {Role::chosen_cond, Role::rejected_cond})
      out.push_back(premia::toy::evaluate_role(reference, rec, role, ModelTag::reference));
    for (Role role : {Role::chosen_full, Role::rejected_full})
      out.push_back(premia::toy::evaluate_role(small_ref, rec, role, ModelTag::small_ref));
  }
  return out;
}

int cmd_simulate(const SimulateArgs& args) {
  SimulateConfig cfg = resolve_simulate_config(args);
  fs::create_directories(args.out_dir);
  fs::create_directories(fs::path(args.out_dir) / "models");
  auto out_path = [&](const std::string& rel) {
    return (fs::path(args.out_dir) / rel).string();
  };

  // 1. Synthetic world and corpus
  auto synth = premia::toy::generate_synthetic_corpus(cfg.synth);
  const auto& corpus = synth.data;
  std::string corpus_text = premia::corpus::serialize_preference_jsonl(corpus);
  premia::util::atomic_write_file(out_path("corpus.jsonl"), corpus_text);

  const premia::toy::Vocab& vocab = synth.world.vocab();
  std::vector<premia::toy::SftExample> sft_set;
  std::vector<premia::toy::PreferenceTokens> member_tuples, nonmember_tuples;
  for (const auto& rec : corpus.records) {
    auto toks = premia::toy::tokenize_record(vocab, rec);
    if (rec.member.value()) {
      sft_set.push_back({toks.prompt, toks.chosen});
      member_tuples.push_back(std::move(toks));
    } else {
      nonmember_tuples.push_back(std::move(toks));
    }
  }
  if (member_tuples.empty() || nonmember_tuples.empty())
    throw premia::ValidationError("simulate needs both members and non-members");

  // 2. SFT on member (prompt, chosen) pairs, starting from the world model
  premia::toy::LogitTable sft_model = synth.world;
  std::string sft_curve = "epoch,loss\n";
  if (cfg.sft_epochs > 0) {
    auto sft = premia::toy::sft_train(synth.world, sft_set, cfg.sft_learning_rate,
                                      cfg.sft_epochs, cfg.seed);
    sft_model = std::move(sft.model);
    for (size_t i = 0; i < sft.epoch_loss.size(); ++i)
      sft_curve += std::to_string(i) + "," + num_str(sft.epoch_loss[i]) + "\n";
  }
  premia::util::atomic_write_file(out_path("sft_curve.csv"), sft_curve);

  // 3. Reference = frozen SFT copy; DPO-train the target on member tuples
  const premia::toy::LogitTable& reference = sft_model;
  premia::toy::LogitTable dpo_model = sft_model;
  std::string dpo_curve = "epoch,loss,train_accuracy,eval_accuracy\n";
  std::vector<premia::toy::DpoEpochStats> history;
  if (cfg.dpo.epochs > 0) {
    auto dpo = premia::toy::dpo_train(sft_model, reference, member_tuples, nonmember_tuples,
                                      cfg.dpo);
    dpo_model = std::move(dpo.model);
    history = std::move(dpo.history);
  } else {
    premia::toy::DpoEpochStats row;
    row.epoch = 0;
    auto [loss, grad] =
        premia::toy::dpo_loss_and_grad(dpo_model, reference, member_tuples, cfg.dpo.beta);
    (void)grad;
    row.loss = loss;
    row.train_accuracy = premia::toy::preference_accuracy(dpo_model, reference, member_tuples);
    row.eval_accuracy =
        premia::toy::preference_accuracy(dpo_model, reference, nonmember_tuples);
    history.push_back(row);
  }
  for (const auto& row : history)
    dpo_curve += std::to_string(row.epoch) + "," + num_str(row.loss) + "," +
                 num_str(row.train_accuracy) + "," + num_str(row.eval_accuracy) + "\n";
  premia::util::atomic_write_file(out_path("dpo_curve.csv"), dpo_curve);

  premia::util::atomic_write_file(out_path("models/world.json"),
                                  synth.world.to_json().dump() + "\n");
  premia::util::atomic_write_file(out_path("models/sft.json"),
                                  sft_model.to_json().dump() + "\n");
  premia::util::atomic_write_file(out_path("models/dpo.json"),
                                  dpo_model.to_json().dump() + "\n");

  // 4. Attack both conditions: DPO target, and SFT-only control ("not
  //    directly aligned" stand-in); reference is the SFT model in both.
  std::set<premia::attacks::AttackKind> kinds;
  for (auto k : premia::attacks::kAllAttackKinds) kinds.insert(k);
  std::set<premia::attacks::TargetRole> targets = {premia::attacks::TargetRole::chosen,
                                                   premia::attacks::TargetRole::rejected,
                                                   premia::attacks::TargetRole::pair};
  auto required = premia::attacks::required_pairs(kinds, targets);
  premia::attacks::MinKConfig min_k{cfg.min_k_percent};
  auto members = membership_map(corpus);
  auto lengths = record_lengths(corpus);

  struct Condition {
    const char* name;
    const premia::toy::LogitTable* target;
  };
  std::map<std::string, std::vector<premia::eval::EvalReport>> all_reports;
  std::vector<std::pair<std::string, std::string>> outputs;  // rel path, content
  for (const Condition& cond : {Condition{"dpo", &dpo_model}, Condition{"sft", &sft_model}}) {
    auto logprobs = score_condition(corpus, *cond.target, reference, synth.world);
    auto joined = premia::corpus::join_for_attack(corpus, logprobs, required, false);
    auto scores = premia::attacks::run_attack_suite(joined.rows, kinds, targets, min_k);
    std::string score_text = premia::attacks::serialize_scores(scores);
    outputs.emplace_back(std::string("scores_") + cond.name + ".jsonl", score_text);

    auto reports =
        build_reports(scores, members, cfg.buckets > 0 ? &lengths : nullptr, cfg.buckets);
    outputs.emplace_back(std::string("report_") + cond.name + ".json",
                         reports_to_json_text(reports));
    outputs.emplace_back(std::string("report_") + cond.name + ".csv",
                         premia::eval::reports_to_csv(reports));
    all_reports[cond.name] = std::move(reports);
  }
  for (const auto& [rel, content] : outputs)
    premia::util::atomic_write_file(out_path(rel), content);

  // 5. Summary of the headline numbers
  const auto& dpo_reports = all_reports.at("dpo");
  const auto& sft_reports = all_reports.at("sft");
  ordered_json summary;
  summary["dpo"] = {
      {"premia_tuple_auroc", find_auroc(dpo_reports, "premia_tuple", "pair")},
      {"premia_single_chosen_auroc", find_auroc(dpo_reports, "premia_single", "chosen")},
      {"ppl_chosen_auroc", find_auroc(dpo_reports, "ppl", "chosen")},
      {"final_train_accuracy", history.back().train_accuracy},
      {"final_eval_accuracy", history.back().eval_accuracy},
      {"final_loss", history.back().loss},
  };
  summary["sft_control"] = {
      {"premia_tuple_auroc", find_auroc(sft_reports, "premia_tuple", "pair")},
      {"premia_single_chosen_auroc", find_auroc(sft_reports, "premia_single", "chosen")},
      {"ppl_chosen_auroc", find_auroc(sft_reports, "ppl", "chosen")},
  };
  summary["n_member"] = member_tuples.size();
  summary["n_nonmember"] = nonmember_tuples.size();
  std::string summary_text = summary.dump(2) + "\n";
  premia::util::atomic_write_file(out_path("summary.json"), summary_text);

  // 6. Manifest over everything written
  premia::manifest::Manifest m;
  m.command = "simulate";
  m.config = cfg.to_json();
  m.add_output("corpus.jsonl", corpus_text);
  m.add_output("sft_curve.csv", sft_curve);
  m.add_output("dpo_curve.csv", dpo_curve);
  for (const auto& rel : {"models/world.json", "models/sft.json", "models/dpo.json"})
    m.add_output(rel, premia::util::read_file(out_path(rel)));
  for (const auto& [rel, content] : outputs) m.add_output(rel, content);
  m.add_output("summary.json", summary_text);
  write_manifest(m, out_path("manifest.json"));

  std::cerr << "premia simulate: dpo premia_tuple auroc = "
            << summary["dpo"]["premia_tuple_auroc"].dump()
            << ", sft control = " << summary["sft_control"]["premia_tuple_auroc"].dump()
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fetch
// ---------------------------------------------------------------------------

struct FetchArgs {
  std::string endpoint_path;
  std::string corpus_path;
  std::vector<std::string> roles;  // corpus roles (chosen_cond, ...)
  std::string tag = "target";
  std::string out_path;
  std::string cache_path;
};

struct FetchTask {
  const premia::corpus::PreferenceRecord* rec;
  premia::corpus::Role role;
};

// Text the endpoint scores for a (record, role) pair; cond roles carry the
// prompt separately so the client can slice at the boundary.
std::pair<std::string, std::string> task_text(const FetchTask& task) {
  using premia::corpus::Role;
  const auto& rec = *task.rec;
  switch (task.role) {
    case Role::chosen_cond: return {rec.prompt, rec.chosen};
    case Role::rejected_cond: return {rec.prompt, rec.rejected};
    case Role::chosen_full: return {"", rec.prompt + rec.chosen};
    case Role::rejected_full: return {"", rec.prompt + rec.rejected};
    case Role::chosen_full_lower:
      return {"", premia::text::fold_lowercase(rec.prompt + rec.chosen)};
    case Role::rejected_full_lower:
      return {"", premia::text::fold_lowercase(rec.prompt + rec.rejected)};
  }
  throw premia::ValidationError("invalid role");
}

int cmd_fetch(const FetchArgs& args) {
  auto endpoint = premia::client::EndpointConfig::from_json(
      premia::manifest::extract_config(read_json_file(args.endpoint_path)));
  auto corpus = load_corpus(args.corpus_path);
  auto tag = premia::corpus::model_tag_from_string(args.tag);

  std::vector<premia::corpus::Role> roles;
  if (args.roles.empty()) {
    roles = {premia::corpus::Role::chosen_cond, premia::corpus::Role::rejected_cond};
  } else {
    for (const auto& r : args.roles) roles.push_back(premia::corpus::role_from_string(r));
  }

  // Resume: rows already in the output file are never re-fetched.
  std::set<std::pair<std::string, premia::corpus::Role>> done;
  if (fs::exists(args.out_path)) {
    for (const auto& lp :
         premia::corpus::parse_logprob_jsonl(premia::util::read_file(args.out_path)))
      if (lp.model_tag == tag) done.insert({lp.record_id, lp.role});
  }

  std::vector<FetchTask> tasks;
  for (const auto& rec : corpus.records)
    for (auto role : roles)
      if (!done.contains({rec.id, role})) tasks.push_back({&rec, role});

  auto limiter = std::make_shared<premia::client::RateLimiter>(endpoint.requests_per_second);
  auto cache = args.cache_path.empty()
                   ? std::make_shared<premia::client::LogprobCache>()
                   : std::make_shared<premia::client::LogprobCache>(args.cache_path);

  std::ofstream out(args.out_path, std::ios::app);
  if (!out) throw premia::ValidationError("cannot open output file " + args.out_path);

  size_t written = 0, skipped_empty = 0;
  size_t pool = static_cast<size_t>(endpoint.parallelism);
  for (size_t base = 0; base < tasks.size(); base += pool) {
    size_t n = std::min(pool, tasks.size() - base);
    std::vector<std::future<premia::client::FetchedTokens>> futures;
    for (size_t i = 0; i < n; ++i) {
      futures.push_back(std::async(std::launch::async, [&, i] {
        premia::client::CompletionsClient client(endpoint, limiter, cache);
        auto [prompt, payload] = task_text(tasks[base + i]);
        if (prompt.empty()) return client.fetch_full_logprobs(payload);
        return client.fetch_cond_logprobs(prompt, payload);
      }));
    }
    for (size_t i = 0; i < n; ++i) {
      const FetchTask& task = tasks[base + i];
      premia::client::FetchedTokens fetched;
      try {
        fetched = futures[i].get();
      } catch (...) {
        out.flush();
        throw;  // partial progress already on disk
      }
      if (fetched.tokens.empty()) {
        std::cerr << "premia fetch: warning: empty token list for record \"" << task.rec->id
                  << "\" role " << to_string(task.role) << "; row skipped\n";
        ++skipped_empty;
        continue;
      }
      premia::corpus::TokenLogProbs lp;
      lp.record_id = task.rec->id;
      lp.role = task.role;
      lp.model_tag = tag;
      lp.tokens = std::move(fetched.tokens);
      if (fetched.boundary_straddle)
        std::cerr << "premia fetch: note: token straddles the prompt boundary for record \""
                  << task.rec->id << "\"; assigned to the response side\n";
      out << premia::corpus::serialize_logprobs(lp) << "\n";
      out.flush();
      ++written;
    }
  }
  out.close();

  premia::manifest::Manifest m;
  m.command = "fetch";
  json role_names = json::array();
  for (auto r : roles) role_names.push_back(to_string(r));
  m.config = json{{"endpoint", endpoint.to_json()}, {"roles", role_names}, {"tag", args.tag}};
  m.add_input(args.corpus_path, premia::util::read_file(args.corpus_path));
  m.add_output(args.out_path, premia::util::read_file(args.out_path));
  write_manifest(m, args.out_path + ".manifest.json");

  std::cerr << "premia fetch: wrote " << written << " rows (" << done.size()
            << " already present, " << skipped_empty << " empty)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// diversity
// ---------------------------------------------------------------------------

struct DiversityArgs {
  std::string texts_path;
  std::string corpus_path;
  std::string field = "chosen";
  std::string out_path;
};

int cmd_diversity(const DiversityArgs& args) {
  std::vector<std::vector<std::string>> texts;
  std::string input_path;
  if (!args.texts_path.empty()) {
    input_path = args.texts_path;
    std::istringstream in(premia::util::read_file(args.texts_path));
    std::string line;
    while (std::getline(in, line)) {
      auto toks = premia::eval::whitespace_tokens(line);
      if (!toks.empty()) texts.push_back(std::move(toks));
    }
  } else if (!args.corpus_path.empty()) {
    input_path = args.corpus_path;
    auto corpus = load_corpus(args.corpus_path);
    for (const auto& rec : corpus.records) {
      const std::string* field = nullptr;
      if (args.field == "prompt")
        field = &rec.prompt;
      else if (args.field == "chosen")
        field = &rec.chosen;
      else if (args.field == "rejected")
        field = &rec.rejected;
      else
        throw premia::ValidationError("unknown field \"" + args.field +
                                      "\" (expected prompt, chosen, or rejected)");
      auto toks = premia::eval::whitespace_tokens(*field);
      if (!toks.empty()) texts.push_back(std::move(toks));
    }
  } else {
    throw premia::ValidationError("diversity needs --texts or --corpus");
  }

  auto metrics = premia::eval::diversity_metrics(texts);
  std::string payload = metrics.to_json().dump(2) + "\n";
  premia::util::atomic_write_file(args.out_path, payload);

  premia::manifest::Manifest m;
  m.command = "diversity";
  m.config = json{{"field", args.texts_path.empty() ? args.field : ""}};
  m.add_input(input_path, premia::util::read_file(input_path));
  m.add_output(args.out_path, payload);
  write_manifest(m, args.out_path + ".manifest.json");
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"membership-inference auditing for preference-tuple corpora"};
  app.set_version_flag("--version", PREMIA_VERSION);
  app.require_subcommand(1);

  ScoreArgs score_args;
  auto* score = app.add_subcommand("score", "compute attack scores from token logprobs");
  score->add_option("--corpus", score_args.corpus_path, "preference-tuple JSONL")->required();
  score->add_option("--logprobs", score_args.logprob_paths, "token-logprob JSONL (repeatable)")
      ->required();
  score->add_option("--kinds", score_args.kinds,
                    "attack kinds (default: all)")->delimiter(',');
  score->add_option("--roles", score_args.roles,
                    "target roles: chosen, rejected, pair (default: all)")->delimiter(',');
  score->add_option("--min-k-percent", score_args.min_k_percent, "MIN-K selection percentage");
  score->add_flag("--permissive", score_args.permissive,
                  "skip records with missing logprobs instead of failing");
  score->add_option("--out", score_args.out_path, "attack-score JSONL path")->required();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate labeled attack scores");
  eval->add_option("--scores", eval_args.scores_path, "attack-score JSONL")->required();
  eval->add_option("--corpus", eval_args.corpus_path, "labeled preference-tuple JSONL")
      ->required();
  eval->add_option("--out", eval_args.out_path, "report JSON path")->required();
  eval->add_option("--csv", eval_args.csv_path, "also write an attacks-by-roles AUROC CSV");
  eval->add_option("--buckets", eval_args.buckets, "length-stratified AUROC bucket count");
  double tau_value = 0.0;
  auto* tau_opt = eval->add_option("--tau", tau_value, "threshold for 0/1 classification");
  eval->add_option("--classify-out", eval_args.classify_out,
                   "classification JSONL path (with --tau)");

  SimulateArgs sim_args;
  uint64_t sim_seed = 0;
  int sim_epochs = 0, sim_sft_epochs = 0;
  auto* simulate = app.add_subcommand("simulate", "seeded end-to-end toy audit run");
  simulate->add_option("--config", sim_args.config_path,
                       "config JSON (or a manifest from an earlier run)");
  simulate->add_option("--out", sim_args.out_dir, "output directory")->required();
  auto* seed_opt = simulate->add_option("--seed", sim_seed, "master seed override");
  auto* epochs_opt =
      simulate->add_option("--epochs", sim_epochs, "DPO epoch override (0 = skip DPO)");
  auto* sft_epochs_opt = simulate->add_option("--sft-epochs", sim_sft_epochs,
                                              "SFT epoch override (0 = skip SFT)");

  FetchArgs fetch_args;
  auto* fetch = app.add_subcommand("fetch", "fetch token logprobs from a completions API");
  fetch->add_option("--endpoint", fetch_args.endpoint_path, "endpoint config JSON")->required();
  fetch->add_option("--corpus", fetch_args.corpus_path, "preference-tuple JSONL")->required();
  fetch->add_option("--roles", fetch_args.roles,
                    "logprob roles to fetch (default: chosen_cond, rejected_cond)")
      ->delimiter(',');
  fetch->add_option("--tag", fetch_args.tag, "model tag: target, reference, small_ref");
  fetch->add_option("--out", fetch_args.out_path, "token-logprob JSONL path")->required();
  fetch->add_option("--cache", fetch_args.cache_path, "response cache JSONL path");

  DiversityArgs div_args;
  auto* diversity = app.add_subcommand("diversity", "n-gram diversity metrics for texts");
  diversity->add_option("--texts", div_args.texts_path, "plain text, one document per line");
  diversity->add_option("--corpus", div_args.corpus_path, "preference-tuple JSONL");
  diversity->add_option("--field", div_args.field, "corpus field: prompt, chosen, rejected");
  diversity->add_option("--out", div_args.out_path, "metrics JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (*tau_opt) eval_args.tau = tau_value;
  if (*seed_opt) sim_args.seed = sim_seed;
  if (*epochs_opt) sim_args.dpo_epochs = sim_epochs;
  if (*sft_epochs_opt) sim_args.sft_epochs = sim_sft_epochs;

  try {
    if (*score) return cmd_score(score_args);
    if (*eval) return cmd_eval(eval_args);
    if (*simulate) return cmd_simulate(sim_args);
    if (*fetch) return cmd_fetch(fetch_args);
    if (*diversity) return cmd_diversity(div_args);
    std::cerr << app.help();
    return kExitValidation;
  } catch (const premia::ValidationError& e) {
    std::cerr << "premia: validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const premia::ClientError& e) {
    std::cerr << "premia: external service error: " << e.what() << "\n";
    return kExitExternal;
  } catch (const premia::TrainingDivergence& e) {
    std::cerr << "premia: training diverged at epoch " << e.epoch() << ": " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "premia: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
