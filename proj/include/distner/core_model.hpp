#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "distner/error.hpp"
#include "distner/text.hpp"

namespace distner {

// Codes are alphabetical so that the tag order used for decoding tie-breaks
// (O, I_ARC, ..., I_SOC) is simply 1 + code.
enum class EntityType : std::uint8_t { ARC, CMD, ERR, EXT, ORG, OS, PKG, PRP, SOC };

inline constexpr std::size_t kEntityTypeCount = 9;
inline constexpr std::size_t kTagCount = kEntityTypeCount + 1;

inline constexpr std::array<EntityType, kEntityTypeCount> kAllEntityTypes = {
    EntityType::ARC, EntityType::CMD, EntityType::ERR, EntityType::EXT, EntityType::ORG,
    EntityType::OS,  EntityType::PKG, EntityType::PRP, EntityType::SOC};

inline constexpr std::array<std::string_view, kEntityTypeCount> kEntityTypeNames = {
    "ARC", "CMD", "ERR", "EXT", "ORG", "OS", "PKG", "PRP", "SOC"};

inline std::string_view to_string(EntityType t) { return kEntityTypeNames[static_cast<std::size_t>(t)]; }

inline std::optional<EntityType> parse_entity_type(std::string_view s) {
  for (std::size_t i = 0; i < kEntityTypeCount; ++i) {
    if (kEntityTypeNames[i] == s) return static_cast<EntityType>(i);
  }
  return std::nullopt;
}

inline EntityType entity_type_from(std::string_view s) {
  if (auto t = parse_entity_type(s)) return *t;
  throw Error("unknown_entity_type", "unknown entity type '" + std::string(s) + "'");
}

enum class Tag : std::uint8_t { O, I_ARC, I_CMD, I_ERR, I_EXT, I_ORG, I_OS, I_PKG, I_PRP, I_SOC };

inline constexpr Tag tag_for(EntityType t) { return static_cast<Tag>(static_cast<std::uint8_t>(t) + 1); }

inline constexpr std::optional<EntityType> entity_of(Tag t) {
  if (t == Tag::O) return std::nullopt;
  return static_cast<EntityType>(static_cast<std::uint8_t>(t) - 1);
}

inline constexpr std::size_t index_of(Tag t) { return static_cast<std::size_t>(t); }

inline std::string to_string(Tag t) {
  if (t == Tag::O) return "O";
  return "I_" + std::string(to_string(*entity_of(t)));
}

inline Tag tag_from(std::string_view s) {
  if (s == "O") return Tag::O;
  if (s.size() > 2 && s.substr(0, 2) == "I_") {
    if (auto t = parse_entity_type(s.substr(2))) return tag_for(*t);
  }
  throw Error("unknown_tag", "unknown tag symbol '" + std::string(s) + "'");
}

enum class Provenance : std::uint8_t { dictionary, heuristic, model, human };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::dictionary: return "dictionary";
    case Provenance::heuristic: return "heuristic";
    case Provenance::model: return "model";
    case Provenance::human: return "human";
  }
  return "dictionary";
}

inline Provenance provenance_from(std::string_view s) {
  if (s == "dictionary") return Provenance::dictionary;
  if (s == "heuristic") return Provenance::heuristic;
  if (s == "model") return Provenance::model;
  if (s == "human") return Provenance::human;
  throw Error("unknown_provenance", "unknown provenance '" + std::string(s) + "'");
}

enum class Source : std::uint8_t { bug, qa };

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  auto operator<=>(const Date&) const = default;
};

// Accepts "YYYY-MM-DD" optionally followed by a time part.
inline Date parse_date(std::string_view s) {
  Date d;
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') {
    throw Error("bad_date", "expected ISO-8601 date, got '" + std::string(s) + "'");
  }
  auto num = [&](std::size_t at, std::size_t len) {
    int v = 0;
    for (std::size_t i = at; i < at + len; ++i) {
      if (!is_ascii_digit(s[i])) throw Error("bad_date", "expected ISO-8601 date, got '" + std::string(s) + "'");
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  d.year = num(0, 4);
  d.month = num(5, 2);
  d.day = num(8, 2);
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31) {
    throw Error("bad_date", "date out of range: '" + std::string(s) + "'");
  }
  return d;
}

inline std::string to_string(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", d.year, d.month, d.day);
  return buf;
}

struct Token {
  std::string surface;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::optional<std::string> pos;

  bool operator==(const Token&) const = default;
};

struct Document {
  std::string id;
  std::string text;
  std::vector<Token> tokens;
  Date created_at;
  Source source = Source::bug;
  std::map<std::string, std::string> metadata;
};

struct Span {
  std::size_t token_start = 0;
  std::size_t token_end = 0;  // exclusive
  EntityType entity_type = EntityType::PKG;
  Provenance provenance = Provenance::dictionary;
  double confidence = 1.0;

  std::size_t length() const { return token_end - token_start; }
  bool overlaps(const Span& o) const { return token_start < o.token_end && o.token_start < token_end; }
  bool same_extent(const Span& o) const {
    return token_start == o.token_start && token_end == o.token_end && entity_type == o.entity_type;
  }
};

using TagSequence = std::vector<Tag>;

struct LabeledItem {
  Document doc;
  TagSequence tags;
};

// Holds the distantly supervised set as well as the active-learning sets L and d.
struct LabeledDataset {
  std::string name;
  std::vector<LabeledItem> items;
};

// Whitespace split, then every leading and trailing ASCII punctuation character becomes its
// own token. The interior of a chunk is never split, so "4.15", "pypy-configparser" and
// "x86_64" survive intact.
inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto emit = [&](std::size_t b, std::size_t e) {
    out.push_back(Token{std::string(text.substr(b, e - b)), b, e, std::nullopt});
  };
  while (i < n) {
    while (i < n && is_ascii_space(text[i])) ++i;
    if (i >= n) break;
    std::size_t b = i;
    while (i < n && !is_ascii_space(text[i])) ++i;
    std::size_t e = i;

    std::size_t core_b = b;
    while (core_b < e && is_ascii_punct(text[core_b])) ++core_b;
    std::size_t core_e = e;
    while (core_e > core_b && is_ascii_punct(text[core_e - 1])) --core_e;

    for (std::size_t k = b; k < core_b; ++k) emit(k, k + 1);
    if (core_b < core_e) emit(core_b, core_e);
    for (std::size_t k = core_e; k < e; ++k) emit(k, k + 1);
  }
  return out;
}

inline Document make_document(std::string id, std::string text, Date created_at = {},
                              Source source = Source::bug) {
  if (!is_valid_utf8(text)) throw Error("invalid_utf8", "document '" + id + "' is not valid UTF-8");
  Document d;
  d.id = std::move(id);
  d.text = std::move(text);
  d.tokens = tokenize(d.text);
  d.created_at = created_at;
  d.source = source;
  return d;
}

inline std::vector<std::string> lowered_tokens(const Document& doc, std::size_t begin, std::size_t end) {
  std::vector<std::string> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(to_lower(doc.tokens[i].surface));
  return out;
}

inline std::string span_surface(const Document& doc, const Span& s) {
  std::string out;
  for (std::size_t i = s.token_start; i < s.token_end; ++i) {
    if (i > s.token_start) out += ' ';
    out += doc.tokens[i].surface;
  }
  return out;
}

struct ValidationConfig {
  std::size_t min_words = 60;
  std::size_t max_words = 400;
  std::string cross_reference_pattern =
      R"(\s*Automatically imported from [^\n]*bug report\s*#?\S*\s*)";
};

enum class Verdict : std::uint8_t { accept, too_short, too_long, cross_reference };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::accept: return "accept";
    case Verdict::too_short: return "too_short";
    case Verdict::too_long: return "too_long";
    case Verdict::cross_reference: return "cross_reference";
  }
  return "accept";
}

// Word count is the token count after tokenization.
inline Verdict validate_document(const Document& doc, const ValidationConfig& cfg = {}) {
  static thread_local std::string cached_pattern;
  static thread_local std::regex cached_re;
  if (cached_pattern != cfg.cross_reference_pattern) {
    cached_re = std::regex(cfg.cross_reference_pattern, std::regex::ECMAScript | std::regex::icase);
    cached_pattern = cfg.cross_reference_pattern;
  }
  if (!cfg.cross_reference_pattern.empty() && std::regex_match(doc.text, cached_re)) {
    return Verdict::cross_reference;
  }
  const std::size_t words = doc.tokens.size();
  if (words < cfg.min_words) return Verdict::too_short;
  if (words > cfg.max_words) return Verdict::too_long;
  return Verdict::accept;
}

inline TagSequence spans_to_tags(const Document& doc, const std::vector<Span>& spans) {
  TagSequence tags(doc.tokens.size(), Tag::O);
  std::vector<bool> taken(doc.tokens.size(), false);
  for (const Span& s : spans) {
    if (s.token_start >= s.token_end || s.token_end > doc.tokens.size()) {
      throw Error("invalid_span", "span [" + std::to_string(s.token_start) + "," +
                                      std::to_string(s.token_end) + ") out of range in '" + doc.id + "'");
    }
    for (std::size_t i = s.token_start; i < s.token_end; ++i) {
      if (taken[i]) {
        throw Error("unresolved_overlap", "overlapping spans at token " + std::to_string(i) + " in '" +
                                              doc.id + "'");
      }
      taken[i] = true;
      tags[i] = tag_for(s.entity_type);
    }
  }
  return tags;
}

// Maximal runs of one I_<type> tag become a span. IO tagging cannot separate two adjacent
// entities of the same type; they come back merged.
inline std::vector<Span> tags_to_spans(const TagSequence& tags, Provenance provenance = Provenance::dictionary) {
  std::vector<Span> out;
  std::size_t i = 0;
  while (i < tags.size()) {
    if (index_of(tags[i]) >= kTagCount) throw Error("unknown_tag", "tag index out of alphabet");
    if (tags[i] == Tag::O) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < tags.size() && tags[j] == tags[i]) ++j;
    out.push_back(Span{i, j, *entity_of(tags[i]), provenance, 1.0});
    i = j;
  }
  return out;
}

inline TagSequence tags_from_strings(const std::vector<std::string>& symbols) {
  TagSequence out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) out.push_back(tag_from(s));
  return out;
}

inline void check_consistent(const LabeledDataset& ds) {
  for (const auto& item : ds.items) {
    if (item.tags.size() != item.doc.tokens.size()) {
      throw Error("length_mismatch", "document '" + item.doc.id + "' has " +
                                         std::to_string(item.doc.tokens.size()) + " tokens but " +
                                         std::to_string(item.tags.size()) + " tags");
    }
  }
}

}  // namespace distner
