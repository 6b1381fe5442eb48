#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "premia/errors.hpp"

namespace premia::corpus {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// External log-prob sources may report values a hair above zero from float
// round-off; anything beyond this is rejected.
inline constexpr double kLogProbTolerance = 1e-9;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class Role {
  chosen_cond,
  rejected_cond,
  chosen_full,
  rejected_full,
  chosen_full_lower,
  rejected_full_lower,
};

enum class ModelTag { target, reference, small_ref };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::chosen_cond: return "chosen_cond";
    case Role::rejected_cond: return "rejected_cond";
    case Role::chosen_full: return "chosen_full";
    case Role::rejected_full: return "rejected_full";
    case Role::chosen_full_lower: return "chosen_full_lower";
    case Role::rejected_full_lower: return "rejected_full_lower";
  }
  return "?";
}

inline const char* to_string(ModelTag t) {
  switch (t) {
    case ModelTag::target: return "target";
    case ModelTag::reference: return "reference";
    case ModelTag::small_ref: return "small_ref";
  }
  return "?";
}

inline Role role_from_string(std::string_view s) {
  if (s == "chosen_cond") return Role::chosen_cond;
  if (s == "rejected_cond") return Role::rejected_cond;
  if (s == "chosen_full") return Role::chosen_full;
  if (s == "rejected_full") return Role::rejected_full;
  if (s == "chosen_full_lower") return Role::chosen_full_lower;
  if (s == "rejected_full_lower") return Role::rejected_full_lower;
  throw ValidationError("unknown role: " + std::string(s));
}

inline ModelTag model_tag_from_string(std::string_view s) {
  if (s == "target") return ModelTag::target;
  if (s == "reference") return ModelTag::reference;
  if (s == "small_ref") return ModelTag::small_ref;
  throw ValidationError("unknown model_tag: " + std::string(s));
}

// One preference tuple: prompt, preferred and rejected response, and an
// optional membership label (the attack's ground truth).
struct PreferenceRecord {
  std::string id;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::optional<bool> member;

  bool operator==(const PreferenceRecord&) const = default;
};

// Per-token log-probabilities (nats) for one (record, role, model) triple.
struct TokenLogProbs {
  std::string record_id;
  Role role = Role::chosen_cond;
  ModelTag model_tag = ModelTag::target;
  std::vector<std::pair<std::string, double>> tokens;

  double sum() const {
    double s = 0.0;
    for (const auto& [tok, lp] : tokens) s += lp;
    return s;
  }
  std::vector<double> logprobs() const {
    std::vector<double> out;
    out.reserve(tokens.size());
    for (const auto& [tok, lp] : tokens) out.push_back(lp);
    return out;
  }
};

struct Corpus {
  std::vector<PreferenceRecord> records;
  json provenance = json::object();

  bool labeled() const {
    return !records.empty() && records.front().member.has_value();
  }
};

// ---------------------------------------------------------------------------
// Record validation
// ---------------------------------------------------------------------------

inline void validate_record(const PreferenceRecord& r, const std::string& where) {
  if (r.id.empty()) throw ValidationError("empty id " + where);
  if (r.chosen.empty()) throw ValidationError("empty chosen " + where);
  if (r.rejected.empty()) throw ValidationError("empty rejected " + where);
  if (r.chosen == r.rejected)
    throw ValidationError("chosen and rejected are identical " + where);
}

inline void validate_logprobs(const TokenLogProbs& lp, const std::string& where) {
  if (lp.record_id.empty()) throw ValidationError("empty record_id " + where);
  if (lp.tokens.empty()) throw ValidationError("empty token list " + where);
  for (const auto& [tok, v] : lp.tokens) {
    if (!(v <= kLogProbTolerance))
      throw ValidationError("logprob exceeds 0 (" + std::to_string(v) + ") " + where);
  }
}

// ---------------------------------------------------------------------------
// JSONL parsing / serialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::string get_string_field(const json& obj, const char* key, int line_no) {
  if (!obj.contains(key))
    throw ValidationError("missing field " + std::string(key) + " at line " +
                          std::to_string(line_no));
  if (!obj.at(key).is_string())
    throw ValidationError("field " + std::string(key) + " is not a string at line " +
                          std::to_string(line_no));
  return obj.at(key).get<std::string>();
}

inline json parse_json_line(const std::string& line, int line_no) {
  json obj = json::parse(line, nullptr, false);
  if (obj.is_discarded())
    throw ValidationError("malformed JSON at line " + std::to_string(line_no));
  if (!obj.is_object())
    throw ValidationError("expected a JSON object at line " + std::to_string(line_no));
  return obj;
}

}  // namespace detail

// One JSON object per non-blank line. Order preserved; ids must be unique;
// member labels are all-or-none across the corpus.
inline Corpus parse_preference_jsonl(std::istream& in) {
  Corpus out;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  int labeled = -1;  // -1 undecided, else 0/1
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj = detail::parse_json_line(line, line_no);

    PreferenceRecord rec;
    rec.id = detail::get_string_field(obj, "id", line_no);
    rec.prompt = detail::get_string_field(obj, "prompt", line_no);
    rec.chosen = detail::get_string_field(obj, "chosen", line_no);
    rec.rejected = detail::get_string_field(obj, "rejected", line_no);
    if (obj.contains("member")) {
      if (!obj.at("member").is_boolean())
        throw ValidationError("field member is not a boolean at line " +
                              std::to_string(line_no));
      rec.member = obj.at("member").get<bool>();
    }
    validate_record(rec, "at line " + std::to_string(line_no));

    if (!seen_ids.insert(rec.id).second)
      throw ValidationError("duplicate id " + rec.id + " at line " + std::to_string(line_no));

    int has_label = rec.member.has_value() ? 1 : 0;
    if (labeled == -1) labeled = has_label;
    if (labeled != has_label)
      throw ValidationError("mixed labeled and unlabeled records at line " +
                            std::to_string(line_no));

    out.records.push_back(std::move(rec));
  }
  return out;
}

inline Corpus parse_preference_jsonl(const std::string& text) {
  std::istringstream in(text);
  return parse_preference_jsonl(in);
}

inline std::string serialize_record(const PreferenceRecord& r) {
  ordered_json obj;
  obj["id"] = r.id;
  obj["prompt"] = r.prompt;
  obj["chosen"] = r.chosen;
  obj["rejected"] = r.rejected;
  if (r.member.has_value()) obj["member"] = *r.member;
  return obj.dump();
}

inline std::string serialize_preference_jsonl(const Corpus& c) {
  std::string out;
  for (const auto& r : c.records) {
    out += serialize_record(r);
    out += '\n';
  }
  return out;
}

// Logprob JSONL: {"record_id", "role", "model_tag", "tokens": [[token, logprob], ...]}.
inline std::vector<TokenLogProbs> parse_logprob_jsonl(std::istream& in) {
  std::vector<TokenLogProbs> out;
  std::set<std::tuple<std::string, Role, ModelTag>> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj = detail::parse_json_line(line, line_no);

    TokenLogProbs lp;
    lp.record_id = detail::get_string_field(obj, "record_id", line_no);
    lp.role = role_from_string(detail::get_string_field(obj, "role", line_no));
    lp.model_tag = model_tag_from_string(detail::get_string_field(obj, "model_tag", line_no));
    if (!obj.contains("tokens") || !obj.at("tokens").is_array())
      throw ValidationError("missing field tokens at line " + std::to_string(line_no));
    for (const auto& t : obj.at("tokens")) {
      if (!t.is_array() || t.size() != 2 || !t[0].is_string() || !t[1].is_number())
        throw ValidationError("token entries must be [string, number] pairs at line " +
                              std::to_string(line_no));
      lp.tokens.emplace_back(t[0].get<std::string>(), t[1].get<double>());
    }
    validate_logprobs(lp, "at line " + std::to_string(line_no));

    if (!seen.insert({lp.record_id, lp.role, lp.model_tag}).second)
      throw ValidationError("duplicate (record_id, role, model_tag) = (" + lp.record_id +
                            ", " + to_string(lp.role) + ", " + to_string(lp.model_tag) +
                            ") at line " + std::to_string(line_no));

    out.push_back(std::move(lp));
  }
  return out;
}

inline std::vector<TokenLogProbs> parse_logprob_jsonl(const std::string& text) {
  std::istringstream in(text);
  return parse_logprob_jsonl(in);
}

inline std::string serialize_logprobs(const TokenLogProbs& lp) {
  ordered_json obj;
  obj["record_id"] = lp.record_id;
  obj["role"] = to_string(lp.role);
  obj["model_tag"] = to_string(lp.model_tag);
  ordered_json toks = ordered_json::array();
  for (const auto& [tok, v] : lp.tokens) toks.push_back({tok, v});
  obj["tokens"] = std::move(toks);
  return obj.dump();
}

// ---------------------------------------------------------------------------
// Joining records with their log-prob streams
// ---------------------------------------------------------------------------

struct JoinKey {
  Role role;
  ModelTag tag;
  auto operator<=>(const JoinKey&) const = default;
};

struct JoinedRow {
  const PreferenceRecord* record = nullptr;
  std::map<JoinKey, const TokenLogProbs*> entries;

  const TokenLogProbs& at(Role role, ModelTag tag) const {
    auto it = entries.find(JoinKey{role, tag});
    if (it == entries.end())
      throw ValidationError("record " + record->id + " has no logprobs for (" +
                            std::string(to_string(role)) + ", " + to_string(tag) + ")");
    return *it->second;
  }
};

struct MissingEntry {
  std::string record_id;
  Role role;
  ModelTag tag;
};

struct JoinResult {
  std::vector<JoinedRow> rows;      // corpus order, only complete records
  std::vector<MissingEntry> missing;  // populated in permissive mode
};

// Pairs each record with its logprob entries. Records missing a required
// (role, tag) pair are an error in strict mode and a reported skip in
// permissive mode; they are never silently dropped.
inline JoinResult join_for_attack(const Corpus& corpus,
                                  std::span<const TokenLogProbs> logprobs,
                                  const std::set<JoinKey>& required,
                                  bool permissive = false) {
  std::set<std::string> ids;
  for (const auto& r : corpus.records) ids.insert(r.id);

  std::map<std::pair<std::string, JoinKey>, const TokenLogProbs*> index;
  for (const auto& lp : logprobs) {
    if (!ids.contains(lp.record_id))
      throw ValidationError("logprob row references unknown record id " + lp.record_id);
    auto key = std::make_pair(lp.record_id, JoinKey{lp.role, lp.model_tag});
    if (!index.emplace(key, &lp).second)
      throw ValidationError("duplicate logprob entry for (" + lp.record_id + ", " +
                            to_string(lp.role) + ", " + to_string(lp.model_tag) + ")");
  }

  JoinResult out;
  for (const auto& rec : corpus.records) {
    JoinedRow row;
    row.record = &rec;
    std::vector<MissingEntry> missing_here;
    for (const auto& key : required) {
      auto it = index.find({rec.id, key});
      if (it == index.end()) {
        missing_here.push_back({rec.id, key.role, key.tag});
      } else {
        row.entries[key] = it->second;
      }
    }
    if (missing_here.empty()) {
      out.rows.push_back(std::move(row));
    } else if (permissive) {
      out.missing.insert(out.missing.end(), missing_here.begin(), missing_here.end());
    } else {
      std::string msg = "missing logprob entries:";
      for (const auto& m : missing_here)
        msg += " (" + m.record_id + ", " + to_string(m.role) + ", " + to_string(m.tag) + ")";
      throw ValidationError(msg);
    }
  }
  return out;
}

}  // namespace premia::corpus
