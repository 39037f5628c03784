#pragma once

// Caption normalization (rewrite rules over tokenized captions), paired
// caption manifests, and pluggable text-embedding providers.

#include "eqdiff/tensor.hpp"
#include "eqdiff/util.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace eqdiff {

enum class RuleKind { ReplaceWord, ReplacePhrase, RemovePhrase, ResolveConflict };

struct RewriteRule {
  RuleKind kind = RuleKind::ReplaceWord;
  std::string pattern;      // lowercase token or space-joined phrase
  std::string replacement;  // empty for removals; "A|B" for conflicts
  int priority = 0;         // lower runs first; equal priorities keep file order
};

inline RuleKind parse_rule_kind(const std::string& s) {
  if (s == "replace_word") return RuleKind::ReplaceWord;
  if (s == "replace_phrase") return RuleKind::ReplacePhrase;
  if (s == "remove_phrase") return RuleKind::RemovePhrase;
  if (s == "resolve_conflict") return RuleKind::ResolveConflict;
  throw DataError("unknown rewrite rule kind: " + s);
}

// The curated edits quoted from the caption cleanup: abbreviation fixes,
// imperceptible-content removal, continuous-state trimming, and the
// keep-first policy for contradictory turn directions.
inline std::vector<RewriteRule> builtin_rules() {
  return {
      {RuleKind::RemovePhrase, "hidden ped", "", 10},
      {RuleKind::ReplacePhrase, "waiting at the intersection", "at the intersection", 20},
      {RuleKind::ReplaceWord, "ped", "pedestrians", 30},
      {RuleKind::ReplaceWord, "peds", "pedestrians", 30},
      {RuleKind::ResolveConflict, "turn left", "turn right", 40},
  };
}

// Rule file lines: priority<TAB>kind<TAB>pattern<TAB>replacement
inline std::vector<RewriteRule> load_rules(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open rule file: " + path.string());
  std::vector<RewriteRule> rules;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() < 3)
      throw DataError("malformed rule at " + path.string() + ":" + std::to_string(lineno));
    RewriteRule r;
    r.priority = std::stoi(cols[0]);
    r.kind = parse_rule_kind(cols[1]);
    r.pattern = cols[2];
    r.replacement = cols.size() > 3 ? cols[3] : "";
    if (r.pattern.empty())
      throw DataError("empty rule pattern at " + path.string() + ":" + std::to_string(lineno));
    rules.push_back(std::move(r));
  }
  return rules;
}

namespace detail {

inline std::vector<std::string> tokenize_caption(const std::string& raw) {
  std::vector<std::string> toks;
  std::string cur;
  for (char ch : raw) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {  // whitespace and punctuation both split; punctuation drops
      toks.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) toks.push_back(cur);
  return toks;
}

inline std::vector<std::string> split_phrase(const std::string& s) { return tokenize_caption(s); }

inline std::optional<std::size_t> find_phrase(const std::vector<std::string>& toks,
                                              const std::vector<std::string>& phrase,
                                              std::size_t from = 0) {
  if (phrase.empty() || phrase.size() > toks.size()) return std::nullopt;
  for (std::size_t i = from; i + phrase.size() <= toks.size(); ++i)
    if (std::equal(phrase.begin(), phrase.end(), toks.begin() + i)) return i;
  return std::nullopt;
}

inline void erase_phrase_at(std::vector<std::string>& toks, std::size_t at, std::size_t len) {
  toks.erase(toks.begin() + at, toks.begin() + at + len);
}

}  // namespace detail

inline std::string normalize_caption(const std::string& raw, const std::vector<RewriteRule>& rules) {
  auto toks = detail::tokenize_caption(raw);
  // stable order: by priority, ties in list order
  std::vector<const RewriteRule*> ordered;
  for (const auto& r : rules) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const RewriteRule* a, const RewriteRule* b) { return a->priority < b->priority; });
  for (const RewriteRule* r : ordered) {
    switch (r->kind) {
      case RuleKind::ReplaceWord: {
        auto repl = detail::split_phrase(r->replacement);
        for (std::size_t i = 0; i < toks.size();) {
          if (toks[i] == r->pattern) {
            toks.erase(toks.begin() + i);
            toks.insert(toks.begin() + i, repl.begin(), repl.end());
            i += repl.size();
          } else {
            ++i;
          }
        }
        break;
      }
      case RuleKind::ReplacePhrase:
      case RuleKind::RemovePhrase: {
        auto pat = detail::split_phrase(r->pattern);
        auto repl = r->kind == RuleKind::ReplacePhrase ? detail::split_phrase(r->replacement)
                                                       : std::vector<std::string>{};
        std::size_t from = 0;
        while (auto at = detail::find_phrase(toks, pat, from)) {
          detail::erase_phrase_at(toks, *at, pat.size());
          toks.insert(toks.begin() + *at, repl.begin(), repl.end());
          from = *at + repl.size();
        }
        break;
      }
      case RuleKind::ResolveConflict: {
        // both phrases present -> keep whichever occurs first, drop the other
        auto pa = detail::split_phrase(r->pattern);
        auto pb = detail::split_phrase(r->replacement);
        auto ia = detail::find_phrase(toks, pa);
        auto ib = detail::find_phrase(toks, pb);
        if (ia && ib) {
          if (*ia <= *ib)
            detail::erase_phrase_at(toks, *ib, pb.size());
          else
            detail::erase_phrase_at(toks, *ia, pa.size());
        }
        break;
      }
    }
  }
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out.push_back(' ');
    out += toks[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// caption manifests: frame_id<TAB>caption, '#' comments

struct CaptionRecord {
  std::string frame_id;
  std::string raw;
  std::string normalized;
};

struct ManifestLoadResult {
  std::vector<CaptionRecord> records;
  std::int64_t duplicate_warnings = 0;
};

inline ManifestLoadResult load_pairs(const std::filesystem::path& path,
                                     const std::vector<RewriteRule>& rules) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open caption manifest: " + path.string());
  ManifestLoadResult res;
  std::map<std::string, std::size_t> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("malformed manifest line (missing tab) at " + path.string() + ":" +
                      std::to_string(lineno));
    CaptionRecord rec;
    rec.frame_id = line.substr(0, tab);
    rec.raw = line.substr(tab + 1);
    rec.normalized = normalize_caption(rec.raw, rules);
    auto it = seen.find(rec.frame_id);
    if (it != seen.end()) {  // duplicate frame id: last one wins
      res.records[it->second] = rec;
      ++res.duplicate_warnings;
    } else {
      seen[rec.frame_id] = res.records.size();
      res.records.push_back(std::move(rec));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// embedding providers

struct TextEmbedding {
  std::vector<double> vector;
  std::string provider;
};

// Deterministic feature hashing of the caption's token bag into D signed
// buckets, then L2 normalization. Stands in for a pretrained encoder; real
// encoder outputs enter through the file_lookup provider instead.
inline TextEmbedding embed_hashed_bow(const std::string& caption, std::int64_t dim = 512) {
  auto toks = detail::tokenize_caption(caption);
  TextEmbedding e{std::vector<double>(dim, 0.0), "hashed_bow"};
  if (toks.empty()) {
    e.provider = "empty";
    return e;
  }
  for (const auto& t : toks) {
    std::uint64_t h = fnv1a64(t);
    std::int64_t bucket = static_cast<std::int64_t>(h % static_cast<std::uint64_t>(dim));
    double sign = (h >> 63) ? -1.0 : 1.0;
    e.vector[bucket] += sign;
  }
  double norm = 0;
  for (double v : e.vector) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) {  // all tokens cancelled; treat as empty
    e.provider = "empty";
    return e;
  }
  for (double& v : e.vector) v /= norm;
  return e;
}

// Embedding bank: <stem>.json maps normalized caption -> row; <stem>.f32
// holds packed little-endian f32 rows of width dim.
class EmbeddingBank {
 public:
  static EmbeddingBank open(const std::filesystem::path& stem) {
    EmbeddingBank bank;
    std::filesystem::path idx = stem;
    idx += ".json";
    std::ifstream f(idx);
    if (!f) throw DataError("cannot open embedding bank index: " + idx.string());
    nlohmann::json j;
    f >> j;
    bank.dim_ = j.at("dim").get<std::int64_t>();
    for (auto& [k, v] : j.at("index").items()) bank.index_[k] = v.get<std::int64_t>();
    std::filesystem::path bin = stem;
    bin += ".f32";
    std::ifstream b(bin, std::ios::binary | std::ios::ate);
    if (!b) throw DataError("cannot open embedding bank data: " + bin.string());
    std::int64_t bytes = b.tellg();
    b.seekg(0);
    std::vector<float> raw(bytes / 4);
    b.read(reinterpret_cast<char*>(raw.data()), bytes);
    bank.rows_.assign(raw.begin(), raw.end());
    return bank;
  }

  static void write(const std::filesystem::path& stem,
                    const std::vector<std::pair<std::string, std::vector<double>>>& entries,
                    std::int64_t dim) {
    nlohmann::json idx;
    idx["dim"] = dim;
    nlohmann::json map = nlohmann::json::object();
    std::vector<float> rows;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (static_cast<std::int64_t>(entries[i].second.size()) != dim)
        throw ShapeError("embedding bank: row width mismatch for caption \"" + entries[i].first + "\"");
      map[entries[i].first] = i;
      for (double v : entries[i].second) rows.push_back(static_cast<float>(v));
    }
    idx["index"] = map;
    std::filesystem::path ip = stem;
    ip += ".json";
    std::ofstream f(ip);
    f << idx.dump(2) << "\n";
    std::filesystem::path bp = stem;
    bp += ".f32";
    std::ofstream b(bp, std::ios::binary);
    b.write(reinterpret_cast<const char*>(rows.data()), rows.size() * sizeof(float));
  }

  TextEmbedding lookup(const std::string& normalized_caption) const {
    auto it = index_.find(normalized_caption);
    if (it == index_.end())
      throw DataError("embedding bank has no entry for caption: \"" + normalized_caption + "\"");
    TextEmbedding e{std::vector<double>(rows_.begin() + it->second * dim_,
                                        rows_.begin() + (it->second + 1) * dim_),
                    "file_lookup"};
    return e;
  }

  std::int64_t dim() const { return dim_; }

 private:
  std::int64_t dim_ = 0;
  std::map<std::string, std::int64_t> index_;
  std::vector<double> rows_;
};

inline TextEmbedding embed_text(const std::string& caption, const std::string& provider,
                                std::int64_t dim = 512, const EmbeddingBank* bank = nullptr) {
  if (provider == "hashed_bow") return embed_hashed_bow(caption, dim);
  if (provider == "file_lookup") {
    if (!bank) throw DataError("file_lookup provider requires an embedding bank");
    return bank->lookup(caption);
  }
  throw DataError("unknown embedding provider: " + provider);
}

// token -> occurrence count, for the corpus frequency report
inline std::map<std::string, std::int64_t> token_frequencies(const std::vector<CaptionRecord>& recs) {
  std::map<std::string, std::int64_t> freq;
  for (const auto& r : recs)
    for (const auto& t : detail::tokenize_caption(r.normalized)) ++freq[t];
  return freq;
}

}  // namespace eqdiff
