#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "premia/corpus.hpp"
#include "premia/errors.hpp"
#include "premia/signed_log_real.hpp"

namespace premia::attacks {

using json = nlohmann::json;
using num::SignedLogReal;

// All scores share one orientation: higher value => more likely member.

enum class AttackKind { ppl, zlib, lowercase, ref, min_k, premia_single, premia_tuple };
enum class TargetRole { chosen, rejected, pair };

inline constexpr AttackKind kAllAttackKinds[] = {
    AttackKind::ppl,          AttackKind::zlib,         AttackKind::lowercase,
    AttackKind::ref,          AttackKind::min_k,        AttackKind::premia_single,
    AttackKind::premia_tuple,
};

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::ppl: return "ppl";
    case AttackKind::zlib: return "zlib";
    case AttackKind::lowercase: return "lowercase";
    case AttackKind::ref: return "ref";
    case AttackKind::min_k: return "min_k";
    case AttackKind::premia_single: return "premia_single";
    case AttackKind::premia_tuple: return "premia_tuple";
  }
  throw ValidationError("invalid attack kind");
}

inline AttackKind attack_kind_from_string(std::string_view s) {
  for (AttackKind k : kAllAttackKinds)
    if (s == to_string(k)) return k;
  throw ValidationError("unknown attack kind \"" + std::string(s) + "\"");
}

inline const char* to_string(TargetRole r) {
  switch (r) {
    case TargetRole::chosen: return "chosen";
    case TargetRole::rejected: return "rejected";
    case TargetRole::pair: return "pair";
  }
  throw ValidationError("invalid target role");
}

inline TargetRole target_role_from_string(std::string_view s) {
  for (TargetRole r : {TargetRole::chosen, TargetRole::rejected, TargetRole::pair})
    if (s == to_string(r)) return r;
  throw ValidationError("unknown target role \"" + std::string(s) + "\"");
}

// Which side of the tuple a logprob stream describes.
inline TargetRole target_role_of(corpus::Role r) {
  switch (r) {
    case corpus::Role::chosen_cond:
    case corpus::Role::chosen_full:
    case corpus::Role::chosen_full_lower:
      return TargetRole::chosen;
    case corpus::Role::rejected_cond:
    case corpus::Role::rejected_full:
    case corpus::Role::rejected_full_lower:
      return TargetRole::rejected;
  }
  throw ValidationError("invalid role");
}

struct MinKConfig {
  double k_percent = 20.0;

  void validate() const {
    if (!(k_percent > 0.0 && k_percent <= 100.0))
      throw ValidationError("min_k k_percent must be in (0, 100]");
  }
};

struct AttackScore {
  std::string record_id;
  AttackKind kind = AttackKind::ppl;
  TargetRole target_role = TargetRole::chosen;
  std::variant<double, SignedLogReal> value;

  bool is_signed() const { return std::holds_alternative<SignedLogReal>(value); }
  double real_value() const { return std::get<double>(value); }
  const SignedLogReal& signed_value() const { return std::get<SignedLogReal>(value); }

  // Ranking key usable across both representations of one attack kind.
  SignedLogReal as_signed() const {
    if (is_signed()) return signed_value();
    double v = real_value();
    if (v == 0.0) return SignedLogReal::zero();
    return SignedLogReal{v > 0 ? +1 : -1, std::log(std::abs(v))};
  }
};

namespace detail {

inline AttackScore make_score(std::string record_id, AttackKind kind, TargetRole role,
                              double value) {
  if (!std::isfinite(value))
    throw ValidationError("attack score for record \"" + record_id + "\" is not finite");
  return AttackScore{std::move(record_id), kind, role, value};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Score functions
// ---------------------------------------------------------------------------

// P = exp(-(1/n) sum log pi)
inline double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw ValidationError("perplexity of an empty token list");
  double s = 0.0;
  for (double lp : logprobs) {
    if (lp > corpus::kLogProbTolerance)
      throw ValidationError("perplexity input has a positive logprob");
    s += lp;
  }
  return std::exp(-s / static_cast<double>(logprobs.size()));
}

// -ln P == mean token logprob; lower perplexity => higher score
inline AttackScore score_ppl(const corpus::TokenLogProbs& full) {
  if (full.tokens.empty()) throw ValidationError("ppl: empty token list");
  double value = full.sum() / static_cast<double>(full.tokens.size());
  return detail::make_score(full.record_id, AttackKind::ppl, target_role_of(full.role), value);
}

// Byte length of `text` in zlib format (RFC 1950), DEFLATE level 6.
inline size_t zlib_compressed_size(std::string_view text) {
  uLong bound = compressBound(static_cast<uLong>(text.size()));
  std::vector<Bytef> buf(bound);
  uLongf out_len = bound;
  int rc = compress2(buf.data(), &out_len, reinterpret_cast<const Bytef*>(text.data()),
                     static_cast<uLong>(text.size()), 6);
  if (rc != Z_OK) throw std::runtime_error("zlib compress2 failed: " + std::to_string(rc));
  return static_cast<size_t>(out_len);
}

// -(ln P) / Z with Z = 8 * compressed byte length of the scored text
inline AttackScore score_zlib(std::string_view text, const corpus::TokenLogProbs& full) {
  if (text.empty()) throw ValidationError("zlib: empty text");
  if (full.tokens.empty()) throw ValidationError("zlib: empty token list");
  double z_bits = 8.0 * static_cast<double>(zlib_compressed_size(text));
  double value = -std::log(perplexity(full.logprobs())) / z_bits;
  return detail::make_score(full.record_id, AttackKind::zlib, target_role_of(full.role), value);
}

// -P_original / P_lowercased: perplexity ratio, negated for orientation
inline AttackScore score_lowercase(std::string record_id, TargetRole role, double ppl_original,
                                   double ppl_lowercased) {
  if (!std::isfinite(ppl_original) || !std::isfinite(ppl_lowercased))
    throw ValidationError("lowercase: non-finite perplexity");
  if (ppl_original < 1.0 - 1e-9 || ppl_lowercased < 1.0 - 1e-9)
    throw ValidationError("lowercase: perplexity below 1");
  return detail::make_score(std::move(record_id), AttackKind::lowercase, role,
                            -ppl_original / ppl_lowercased);
}

// mean target logprob - mean small-reference logprob; token counts may differ
inline AttackScore score_ref(const corpus::TokenLogProbs& target_full,
                             const corpus::TokenLogProbs& smallref_full) {
  if (target_full.tokens.empty() || smallref_full.tokens.empty())
    throw ValidationError("ref: empty token list");
  if (target_full.record_id != smallref_full.record_id ||
      target_full.role != smallref_full.role)
    throw ValidationError("ref: record/role mismatch between target and small reference");
  double mt = target_full.sum() / static_cast<double>(target_full.tokens.size());
  double mr = smallref_full.sum() / static_cast<double>(smallref_full.tokens.size());
  return detail::make_score(target_full.record_id, AttackKind::ref,
                            target_role_of(target_full.role), mt - mr);
}

// mean of the m = max(1, ceil(n*k/100)) smallest logprobs; positional tie-break
inline AttackScore score_min_k(const corpus::TokenLogProbs& full, const MinKConfig& cfg = {}) {
  cfg.validate();
  if (full.tokens.empty()) throw ValidationError("min_k: empty token list");
  size_t n = full.tokens.size();
  size_t m = std::max<size_t>(
      1, static_cast<size_t>(std::ceil(static_cast<double>(n) * cfg.k_percent / 100.0)));
  m = std::min(m, n);

  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (full.tokens[a].second != full.tokens[b].second)
      return full.tokens[a].second < full.tokens[b].second;
    return a < b;
  });
  double s = 0.0;
  for (size_t i = 0; i < m; ++i) s += full.tokens[idx[i]].second;
  return detail::make_score(full.record_id, AttackKind::min_k, target_role_of(full.role),
                            s / static_cast<double>(m));
}

// log rho_y = log pi_target(y|x) - log pi_ref(y|x)
inline AttackScore premia_single(const corpus::TokenLogProbs& target_cond,
                                 const corpus::TokenLogProbs& ref_cond) {
  if (target_cond.record_id != ref_cond.record_id || target_cond.role != ref_cond.role)
    throw ValidationError("premia_single: record/role mismatch between target and reference");
  return detail::make_score(target_cond.record_id, AttackKind::premia_single,
                            target_role_of(target_cond.role),
                            target_cond.sum() - ref_cond.sum());
}

// delta rho = e^a - e^b for a = log rho_w, b = log rho_l, kept in log space
inline AttackScore premia_tuple(std::string record_id, double log_rho_w, double log_rho_l) {
  if (!std::isfinite(log_rho_w) || !std::isfinite(log_rho_l))
    throw ValidationError("premia_tuple: non-finite log ratio");
  return AttackScore{std::move(record_id), AttackKind::premia_tuple, TargetRole::pair,
                     SignedLogReal::sub_exp(log_rho_w, log_rho_l)};
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

namespace detail {

inline corpus::Role full_role(TargetRole t) {
  return t == TargetRole::chosen ? corpus::Role::chosen_full : corpus::Role::rejected_full;
}
inline corpus::Role lower_role(TargetRole t) {
  return t == TargetRole::chosen ? corpus::Role::chosen_full_lower
                                 : corpus::Role::rejected_full_lower;
}
inline corpus::Role cond_role(TargetRole t) {
  return t == TargetRole::chosen ? corpus::Role::chosen_cond : corpus::Role::rejected_cond;
}

inline void check_suite_config(const std::set<AttackKind>& kinds,
                               const std::set<TargetRole>& targets) {
  if (kinds.empty()) throw ValidationError("attack suite needs at least one kind");
  if (targets.empty()) throw ValidationError("attack suite needs at least one target role");
  bool has_response_target =
      targets.contains(TargetRole::chosen) || targets.contains(TargetRole::rejected);
  for (AttackKind k : kinds) {
    bool is_pair = k == AttackKind::premia_tuple;
    if (is_pair && !targets.contains(TargetRole::pair))
      throw ValidationError("premia_tuple requires the \"pair\" target role");
    if (!is_pair && !has_response_target)
      throw ValidationError(std::string(to_string(k)) +
                            " requires a \"chosen\" or \"rejected\" target role");
  }
  if (targets.contains(TargetRole::pair) && !kinds.contains(AttackKind::premia_tuple))
    throw ValidationError("the \"pair\" target role is only served by premia_tuple");
}

}  // namespace detail

// (role, model) logprob streams the suite will look up for this configuration
inline std::set<corpus::JoinKey> required_pairs(const std::set<AttackKind>& kinds,
                                                const std::set<TargetRole>& targets) {
  detail::check_suite_config(kinds, targets);
  using corpus::JoinKey;
  using corpus::ModelTag;
  std::set<JoinKey> out;
  for (TargetRole t : {TargetRole::chosen, TargetRole::rejected}) {
    if (!targets.contains(t)) continue;
    for (AttackKind k : kinds) {
      switch (k) {
        case AttackKind::ppl:
        case AttackKind::zlib:
          out.insert({detail::full_role(t), ModelTag::target});
          break;
        case AttackKind::lowercase:
          out.insert({detail::full_role(t), ModelTag::target});
          out.insert({detail::lower_role(t), ModelTag::target});
          break;
        case AttackKind::ref:
          out.insert({detail::full_role(t), ModelTag::target});
          out.insert({detail::full_role(t), ModelTag::small_ref});
          break;
        case AttackKind::min_k:
          out.insert({detail::full_role(t), ModelTag::target});
          break;
        case AttackKind::premia_single:
          out.insert({detail::cond_role(t), ModelTag::target});
          out.insert({detail::cond_role(t), ModelTag::reference});
          break;
        case AttackKind::premia_tuple:
          break;
      }
    }
  }
  if (kinds.contains(AttackKind::premia_tuple)) {
    for (TargetRole t : {TargetRole::chosen, TargetRole::rejected}) {
      out.insert({detail::cond_role(t), corpus::ModelTag::target});
      out.insert({detail::cond_role(t), corpus::ModelTag::reference});
    }
  }
  return out;
}

// One score per (record, kind, compatible target role), sorted by
// (record_id, kind, role). Rows must carry every stream required_pairs()
// lists for the configuration; gaps raise errors naming the record.
inline std::vector<AttackScore> run_attack_suite(std::span<const corpus::JoinedRow> rows,
                                                 const std::set<AttackKind>& kinds,
                                                 const std::set<TargetRole>& targets,
                                                 const MinKConfig& min_k_cfg = {}) {
  detail::check_suite_config(kinds, targets);
  min_k_cfg.validate();

  std::vector<AttackScore> out;
  for (const auto& row : rows) {
    const auto& rec = *row.record;
    for (TargetRole t : {TargetRole::chosen, TargetRole::rejected}) {
      if (!targets.contains(t)) continue;
      const std::string& response = t == TargetRole::chosen ? rec.chosen : rec.rejected;
      for (AttackKind k : kinds) {
        using corpus::ModelTag;
        switch (k) {
          case AttackKind::ppl:
            out.push_back(score_ppl(row.at(detail::full_role(t), ModelTag::target)));
            break;
          case AttackKind::zlib:
            out.push_back(score_zlib(rec.prompt + response,
                                     row.at(detail::full_role(t), ModelTag::target)));
            break;
          case AttackKind::lowercase: {
            double po = perplexity(row.at(detail::full_role(t), ModelTag::target).logprobs());
            double pl = perplexity(row.at(detail::lower_role(t), ModelTag::target).logprobs());
            out.push_back(score_lowercase(rec.id, t, po, pl));
            break;
          }
          case AttackKind::ref:
            out.push_back(score_ref(row.at(detail::full_role(t), ModelTag::target),
                                    row.at(detail::full_role(t), ModelTag::small_ref)));
            break;
          case AttackKind::min_k:
            out.push_back(score_min_k(row.at(detail::full_role(t), ModelTag::target), min_k_cfg));
            break;
          case AttackKind::premia_single:
            out.push_back(premia_single(row.at(detail::cond_role(t), ModelTag::target),
                                        row.at(detail::cond_role(t), ModelTag::reference)));
            break;
          case AttackKind::premia_tuple:
            break;  // handled once per record below
        }
      }
    }
    if (kinds.contains(AttackKind::premia_tuple)) {
      using corpus::ModelTag;
      using corpus::Role;
      double lw = row.at(Role::chosen_cond, ModelTag::target).sum() -
                  row.at(Role::chosen_cond, ModelTag::reference).sum();
      double ll = row.at(Role::rejected_cond, ModelTag::target).sum() -
                  row.at(Role::rejected_cond, ModelTag::reference).sum();
      out.push_back(premia_tuple(rec.id, lw, ll));
    }
  }

  std::sort(out.begin(), out.end(), [](const AttackScore& a, const AttackScore& b) {
    if (a.record_id != b.record_id) return a.record_id < b.record_id;
    if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
    return static_cast<int>(a.target_role) < static_cast<int>(b.target_role);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: {"record_id", "kind", "role", "value"} per line
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json score_to_json(const AttackScore& s) {
  nlohmann::ordered_json obj;
  obj["record_id"] = s.record_id;
  obj["kind"] = to_string(s.kind);
  obj["role"] = to_string(s.target_role);
  if (s.is_signed())
    obj["value"] = s.signed_value().to_json();
  else
    obj["value"] = s.real_value();
  return obj;
}

inline std::string serialize_scores(std::span<const AttackScore> scores) {
  std::string out;
  for (const auto& s : scores) {
    out += score_to_json(s).dump();
    out += '\n';
  }
  return out;
}

inline AttackScore score_from_json(const json& obj) {
  if (!obj.is_object()) throw ValidationError("attack score must be a JSON object");
  for (const char* key : {"record_id", "kind", "role", "value"})
    if (!obj.contains(key))
      throw ValidationError(std::string("attack score missing \"") + key + "\"");
  AttackScore s;
  s.record_id = obj.at("record_id").get<std::string>();
  if (s.record_id.empty()) throw ValidationError("attack score record_id is empty");
  s.kind = attack_kind_from_string(obj.at("kind").get<std::string>());
  s.target_role = target_role_from_string(obj.at("role").get<std::string>());
  const json& v = obj.at("value");
  if (v.is_number()) {
    double d = v.get<double>();
    if (!std::isfinite(d)) throw ValidationError("attack score value is not finite");
    s.value = d;
  } else if (v.is_object()) {
    s.value = SignedLogReal::from_json(v);
  } else {
    throw ValidationError("attack score value must be a number or a signed object");
  }
  if (s.kind == AttackKind::premia_tuple && !s.is_signed())
    throw ValidationError("premia_tuple scores must use the signed representation");
  if (s.kind != AttackKind::premia_tuple && s.is_signed())
    throw ValidationError(std::string(to_string(s.kind)) + " scores must be plain reals");
  return s;
}

inline std::vector<AttackScore> parse_scores_jsonl(std::istream& in) {
  std::vector<AttackScore> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    try {
      out.push_back(score_from_json(obj));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<AttackScore> parse_scores_jsonl(const std::string& text) {
  std::istringstream in(text);
  return parse_scores_jsonl(in);
}

}  // namespace premia::attacks
