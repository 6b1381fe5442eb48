#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "premia/attacks.hpp"
#include "premia/errors.hpp"
#include "premia/signed_log_real.hpp"
#include "premia/toy_model.hpp"

namespace premia::eval {

using json = nlohmann::json;
using num::SignedLogReal;

using toy::preference_accuracy;

template <typename V>
struct Labeled {
  std::string record_id;
  V value{};
  bool member = false;
};

// ---------------------------------------------------------------------------
// AUROC / ROC
// ---------------------------------------------------------------------------

// Mann-Whitney statistic with midrank ties: the probability a random member
// outscores a random non-member, ties counting one half.
template <typename V>
double auroc(std::span<const Labeled<V>> scores) {
  size_t m = 0;
  for (const auto& s : scores) m += s.member ? 1 : 0;
  size_t n = scores.size() - m;
  if (m == 0 || n == 0)
    throw ValidationError("auroc requires at least one member and one non-member");

  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a].value < scores[b].value; });

  double member_rank_sum = 0.0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j < idx.size() && scores[idx[j]].value == scores[idx[i]].value) ++j;
    double midrank = static_cast<double>(i + 1 + j) / 2.0;  // mean of ranks i+1 .. j
    for (size_t k = i; k < j; ++k)
      if (scores[idx[k]].member) member_rank_sum += midrank;
    i = j;
  }
  double u = member_rank_sum - static_cast<double>(m) * static_cast<double>(m + 1) / 2.0;
  return u / (static_cast<double>(m) * static_cast<double>(n));
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// Threshold sweep over distinct score values with strict `>` classification.
// Starts at (0,0), ends at (1,1); trapezoidal area equals auroc().
template <typename V>
std::vector<RocPoint> roc_points(std::span<const Labeled<V>> scores) {
  size_t m = 0;
  for (const auto& s : scores) m += s.member ? 1 : 0;
  size_t n = scores.size() - m;
  if (m == 0 || n == 0)
    throw ValidationError("roc requires at least one member and one non-member");

  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[b].value < scores[a].value; });

  std::vector<RocPoint> out;
  out.push_back({0.0, 0.0});
  size_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j < idx.size() && scores[idx[j]].value == scores[idx[i]].value) ++j;
    for (size_t k = i; k < j; ++k) {
      if (scores[idx[k]].member)
        ++tp;
      else
        ++fp;
    }
    out.push_back({static_cast<double>(fp) / static_cast<double>(n),
                   static_cast<double>(tp) / static_cast<double>(m)});
    i = j;
  }
  return out;
}

inline double roc_area(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  return area;
}

// 1 iff value > tau (strict, so a score exactly at the threshold is negative)
template <typename V>
int classify(const V& value, const V& tau) {
  return tau < value ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Length-stratified AUROC
// ---------------------------------------------------------------------------

struct BucketRow {
  int index = 0;
  size_t n = 0;
  int min_length = 0;
  int max_length = 0;
  size_t n_member = 0;
  size_t n_nonmember = 0;
  bool valid = false;  // both classes present
  double auroc = std::numeric_limits<double>::quiet_NaN();
};

// Records sorted by length and split into n_buckets equal-count buckets
// (remainder spread over the earliest buckets); per-bucket AUROC where both
// classes are present, otherwise the bucket is flagged invalid.
template <typename V>
std::vector<BucketRow> stratified_auroc(std::span<const Labeled<V>> scores,
                                        const std::map<std::string, int>& lengths,
                                        int n_buckets) {
  if (n_buckets < 1) throw ValidationError("n_buckets must be >= 1");
  if (scores.empty()) throw ValidationError("stratified_auroc: no scores");
  for (const auto& s : scores)
    if (!lengths.contains(s.record_id))
      throw ValidationError("no length for record \"" + s.record_id + "\"");

  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    int la = lengths.at(scores[a].record_id), lb = lengths.at(scores[b].record_id);
    if (la != lb) return la < lb;
    return scores[a].record_id < scores[b].record_id;
  });

  size_t total = scores.size();
  size_t nb = static_cast<size_t>(n_buckets);
  if (nb > total) nb = total;
  size_t q = total / nb, r = total % nb;

  std::vector<BucketRow> out;
  size_t pos = 0;
  for (size_t b = 0; b < nb; ++b) {
    size_t size = q + (b < r ? 1 : 0);
    BucketRow row;
    row.index = static_cast<int>(b);
    row.n = size;
    std::vector<Labeled<V>> bucket;
    for (size_t k = 0; k < size; ++k) {
      const auto& s = scores[idx[pos + k]];
      bucket.push_back(s);
      int len = lengths.at(s.record_id);
      if (k == 0) row.min_length = row.max_length = len;
      row.min_length = std::min(row.min_length, len);
      row.max_length = std::max(row.max_length, len);
      if (s.member)
        ++row.n_member;
      else
        ++row.n_nonmember;
    }
    if (row.n_member > 0 && row.n_nonmember > 0) {
      row.valid = true;
      row.auroc = auroc<V>(bucket);
    }
    out.push_back(row);
    pos += size;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string kind;
  std::string role;
  double auroc = 0.0;
  size_t n_member = 0;
  size_t n_nonmember = 0;
  std::vector<RocPoint> roc;
  std::vector<BucketRow> buckets;  // empty = not stratified

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json obj;
    obj["kind"] = kind;
    obj["role"] = role;
    obj["auroc"] = auroc;
    obj["n_member"] = n_member;
    obj["n_nonmember"] = n_nonmember;
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (const auto& p : roc) points.push_back({p.fpr, p.tpr});
    obj["roc"] = std::move(points);
    if (!buckets.empty()) {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (const auto& b : buckets) {
        nlohmann::ordered_json row;
        row["index"] = b.index;
        row["n"] = b.n;
        row["min_length"] = b.min_length;
        row["max_length"] = b.max_length;
        row["n_member"] = b.n_member;
        row["n_nonmember"] = b.n_nonmember;
        if (b.valid)
          row["auroc"] = b.auroc;
        else
          row["auroc"] = nullptr;
        rows.push_back(std::move(row));
      }
      obj["buckets"] = std::move(rows);
    }
    return obj;
  }

  static EvalReport from_json(const json& obj) {
    EvalReport r;
    r.kind = obj.at("kind").get<std::string>();
    r.role = obj.at("role").get<std::string>();
    r.auroc = obj.at("auroc").get<double>();
    r.n_member = obj.at("n_member").get<size_t>();
    r.n_nonmember = obj.at("n_nonmember").get<size_t>();
    for (const auto& p : obj.at("roc"))
      r.roc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    if (obj.contains("buckets")) {
      for (const auto& row : obj.at("buckets")) {
        BucketRow b;
        b.index = row.at("index").get<int>();
        b.n = row.at("n").get<size_t>();
        b.min_length = row.at("min_length").get<int>();
        b.max_length = row.at("max_length").get<int>();
        b.n_member = row.at("n_member").get<size_t>();
        b.n_nonmember = row.at("n_nonmember").get<size_t>();
        if (!row.at("auroc").is_null()) {
          b.valid = true;
          b.auroc = row.at("auroc").get<double>();
        }
        r.buckets.push_back(b);
      }
    }
    return r;
  }
};

template <typename V>
EvalReport make_report(std::string kind, std::string role, std::span<const Labeled<V>> scores,
                       const std::map<std::string, int>* lengths = nullptr, int n_buckets = 0) {
  EvalReport r;
  r.kind = std::move(kind);
  r.role = std::move(role);
  r.auroc = auroc(scores);
  for (const auto& s : scores)
    (s.member ? r.n_member : r.n_nonmember) += 1;
  r.roc = roc_points(scores);
  if (lengths && n_buckets > 0) r.buckets = stratified_auroc(scores, *lengths, n_buckets);
  return r;
}

// Builds the report for one (kind, role) score group, resolving membership
// labels by record id. Signed and plain values keep their native ordering.
inline EvalReport report_for_group(std::span<const attacks::AttackScore> group,
                                   const std::map<std::string, bool>& member_by_id,
                                   const std::map<std::string, int>* lengths = nullptr,
                                   int n_buckets = 0) {
  if (group.empty()) throw ValidationError("empty score group");
  const auto kind = group.front().kind;
  const auto role = group.front().target_role;
  for (const auto& s : group)
    if (s.kind != kind || s.target_role != role)
      throw ValidationError("score group mixes attack kinds or roles");

  auto member_of = [&](const std::string& id) {
    auto it = member_by_id.find(id);
    if (it == member_by_id.end())
      throw ValidationError("no membership label for record \"" + id + "\"");
    return it->second;
  };

  std::string kind_s = attacks::to_string(kind);
  std::string role_s = attacks::to_string(role);
  if (group.front().is_signed()) {
    std::vector<Labeled<SignedLogReal>> labeled;
    labeled.reserve(group.size());
    for (const auto& s : group)
      labeled.push_back({s.record_id, s.signed_value(), member_of(s.record_id)});
    return make_report<SignedLogReal>(kind_s, role_s, labeled, lengths, n_buckets);
  }
  std::vector<Labeled<double>> labeled;
  labeled.reserve(group.size());
  for (const auto& s : group)
    labeled.push_back({s.record_id, s.real_value(), member_of(s.record_id)});
  return make_report<double>(kind_s, role_s, labeled, lengths, n_buckets);
}

// CSV with one row per attack kind and one AUROC column per target role.
inline std::string reports_to_csv(std::span<const EvalReport> reports) {
  const char* roles[] = {"chosen", "rejected", "pair"};
  std::map<std::string, std::map<std::string, double>> table;  // kind -> role -> auroc
  for (const auto& r : reports) table[r.kind][r.role] = r.auroc;

  std::ostringstream out;
  out << "attack,chosen,rejected,pair\n";
  for (attacks::AttackKind k : attacks::kAllAttackKinds) {
    auto it = table.find(attacks::to_string(k));
    if (it == table.end()) continue;
    out << it->first;
    for (const char* role : roles) {
      out << ',';
      auto jt = it->second.find(role);
      if (jt != it->second.end()) {
        std::ostringstream cell;
        cell.precision(6);
        cell << std::fixed << jt->second;
        out << cell.str();
      }
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Diversity metrics
// ---------------------------------------------------------------------------

struct DiversityMetrics {
  std::optional<double> msttr_100;  // absent when the corpus has < 100 tokens
  double distinct_1 = 0.0;
  double distinct_2 = 0.0;
  size_t unique_1 = 0;
  size_t unique_2 = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json obj;
    if (msttr_100)
      obj["msttr_100"] = *msttr_100;
    else
      obj["msttr_100"] = nullptr;
    obj["distinct_1"] = distinct_1;
    obj["distinct_2"] = distinct_2;
    obj["unique_1"] = unique_1;
    obj["unique_2"] = unique_2;
    return obj;
  }
};

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(std::string(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

// Distinct-n and unique-n pool n-gram counts over the whole corpus (n-grams
// never cross text boundaries); MSTTR-100 averages type/token ratios over
// disjoint 100-token segments of the concatenated corpus, dropping the final
// partial segment.
inline DiversityMetrics diversity_metrics(const std::vector<std::vector<std::string>>& texts) {
  if (texts.empty()) throw ValidationError("diversity_metrics: no texts");

  std::map<std::string, size_t> uni, bi;
  size_t total_uni = 0, total_bi = 0;
  std::vector<const std::string*> stream;
  for (const auto& toks : texts) {
    for (size_t i = 0; i < toks.size(); ++i) {
      ++uni[toks[i]];
      ++total_uni;
      stream.push_back(&toks[i]);
      if (i + 1 < toks.size()) {
        ++bi[toks[i] + "\x1f" + toks[i + 1]];
        ++total_bi;
      }
    }
  }
  if (total_uni == 0) throw ValidationError("diversity_metrics: corpus has no tokens");

  DiversityMetrics out;
  out.distinct_1 = static_cast<double>(uni.size()) / static_cast<double>(total_uni);
  for (const auto& [k, c] : uni)
    if (c == 1) ++out.unique_1;
  if (total_bi > 0) {
    out.distinct_2 = static_cast<double>(bi.size()) / static_cast<double>(total_bi);
    for (const auto& [k, c] : bi)
      if (c == 1) ++out.unique_2;
  }

  constexpr size_t kSegment = 100;
  size_t n_segments = stream.size() / kSegment;
  if (n_segments > 0) {
    double sum = 0.0;
    for (size_t s = 0; s < n_segments; ++s) {
      std::set<std::string_view> types;
      for (size_t i = 0; i < kSegment; ++i) types.insert(*stream[s * kSegment + i]);
      sum += static_cast<double>(types.size()) / static_cast<double>(kSegment);
    }
    out.msttr_100 = sum / static_cast<double>(n_segments);
  }
  return out;
}

}  // namespace premia::eval
