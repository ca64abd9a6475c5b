#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"
#include "distner/dictionary.hpp"
#include "distner/process.hpp"

namespace distner {

class PosTagger {
 public:
  virtual ~PosTagger() = default;
  // Exactly one Penn-style tag per token.
  virtual std::vector<std::string> tag(const std::vector<std::string>& tokens) = 0;
  virtual std::string name() const = 0;
};

// Closed-class lexicon plus suffix heuristics. Good enough to drive the context rules;
// nobody should mistake it for a real tagger.
class BuiltinPosTagger : public PosTagger {
 public:
  BuiltinPosTagger() {
    auto add = [&](std::string_view tag, std::initializer_list<std::string_view> words) {
      for (auto w : words) lexicon_.emplace(std::string(w), std::string(tag));
    };
    add("DT", {"the", "a", "an", "this", "that", "these", "those", "some", "any", "each", "every",
               "no", "another", "all", "both", "either", "neither"});
    add("IN", {"of", "in", "on", "at", "by", "for", "with", "from", "about", "into", "over", "after",
               "before", "under", "between", "through", "during", "without", "within", "while", "than",
               "because", "if", "since", "until", "although", "though", "whether", "as", "upon", "via",
               "against", "among", "across", "behind", "beside", "onto", "per", "unless", "whereas"});
    add("TO", {"to"});
    add("CC", {"and", "or", "but", "nor"});
    add("PRP", {"i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them", "itself"});
    add("PRP$", {"my", "your", "his", "its", "our", "their", "her"});
    add("MD", {"can", "could", "will", "would", "shall", "should", "may", "might", "must", "cannot"});
    add("VBZ", {"is", "has", "does", "seems", "looks"});
    add("VBP", {"are", "am", "have", "do"});
    add("VBD", {"was", "were", "had", "did", "got", "went", "made"});
    add("VBN", {"been", "done", "gone", "seen"});
    add("VBG", {"being"});
    add("VB", {"be", "find", "get", "make", "see", "try", "use", "fix", "go", "let", "know"});
    add("RB", {"not", "n't", "very", "also", "just", "only", "still", "now", "then", "too", "already",
               "always", "never", "again", "here", "there", "really", "so", "even", "often", "however"});
    add("JJR", {"less", "more", "better", "worse", "greater", "larger", "smaller", "higher", "lower",
                "older", "newer", "faster", "slower"});
    add("JJS", {"most", "least", "best", "worst", "latest"});
    add("WDT", {"which"});
    add("WP", {"who", "what", "whom"});
    add("WRB", {"when", "where", "why", "how"});
  }

  std::string name() const override { return "builtin"; }

  std::vector<std::string> tag(const std::vector<std::string>& tokens) override {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      out.push_back(tag_one(tokens[i], i, i ? out[i - 1] : std::string()));
    }
    return out;
  }

 private:
  static bool ends_with(const std::string& s, std::string_view suf) {
    return s.size() > suf.size() + 1 && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  }

  std::string tag_one(const std::string& tok, std::size_t i, const std::string& prev_tag) const {
    if (tok.size() == 1 && is_ascii_punct(tok[0])) {
      switch (tok[0]) {
        case '.': case '!': case '?': return ".";
        case ',': return ",";
        case ':': case ';': case '-': return ":";
        case '(': case '[': case '{': return "-LRB-";
        case ')': case ']': case '}': return "-RRB-";
        case '"': case '\'': case '`': return "''";
        case '$': return "$";
        case '#': return "#";
        default: return "SYM";
      }
    }
    bool numeric = !tok.empty();
    bool any_digit = false;
    for (char c : tok) {
      if (is_ascii_digit(c)) any_digit = true;
      else if (c != '.' && c != ',') numeric = false;
    }
    if (numeric && any_digit) return "CD";

    const std::string lower = to_lower(tok);
    if (auto it = lexicon_.find(lower); it != lexicon_.end()) return it->second;
    if (prev_tag == "MD" || prev_tag == "TO") return "VB";
    if (ends_with(lower, "ing")) return "VBG";
    if (ends_with(lower, "ed")) return "VBD";
    if (ends_with(lower, "ly")) return "RB";
    for (auto suf : {"ous", "ful", "able", "ible", "ive", "ical"}) {
      if (ends_with(lower, suf)) return "JJ";
    }
    const bool capitalized = tok[0] >= 'A' && tok[0] <= 'Z';
    if (capitalized && i > 0) return "NNP";
    if (ends_with(lower, "s") && !ends_with(lower, "ss") && !ends_with(lower, "us") && !ends_with(lower, "is")) {
      return "NNS";
    }
    return "NN";
  }

  std::unordered_map<std::string, std::string> lexicon_;
};

// Line protocol: one JSON array of token surfaces in, one JSON array of tags out.
class ProcessPosTagger : public PosTagger {
 public:
  explicit ProcessPosTagger(const std::string& command) : proc_(command) {}

  std::string name() const override { return "plugin:" + proc_.command(); }

  std::vector<std::string> tag(const std::vector<std::string>& tokens) override {
    json reply;
    try {
      reply = json::parse(proc_.request(json(tokens).dump()));
    } catch (const json::exception& e) {
      throw Error("plugin_failure", std::string("POS plugin sent invalid JSON: ") + e.what());
    }
    if (!reply.is_array() || reply.size() != tokens.size()) {
      throw Error("plugin_failure", "POS plugin must return one tag per token");
    }
    std::vector<std::string> tags;
    for (const auto& t : reply) {
      if (!t.is_string()) throw Error("plugin_failure", "POS plugin returned a non-string tag");
      tags.push_back(t.get<std::string>());
    }
    return tags;
  }

 private:
  LineProcess proc_;
};

struct PosTagResult {
  Document doc;
  std::optional<std::string> warning;
};

// Fills token POS tags. A failing tagger falls back to the built-in one and leaves a warning.
inline PosTagResult pos_tag(Document doc, PosTagger& tagger) {
  PosTagResult r;
  if (doc.tokens.empty()) {
    r.doc = std::move(doc);
    return r;
  }
  std::vector<std::string> surfaces;
  surfaces.reserve(doc.tokens.size());
  for (const auto& t : doc.tokens) surfaces.push_back(t.surface);
  std::vector<std::string> tags;
  try {
    tags = tagger.tag(surfaces);
    if (tags.size() != surfaces.size()) throw Error("plugin_failure", "tag count mismatch");
  } catch (const std::exception& e) {
    r.warning = "document '" + doc.id + "': tagger " + tagger.name() + " failed (" + e.what() +
                "); used builtin tagger";
    BuiltinPosTagger fallback;
    tags = fallback.tag(surfaces);
  }
  for (std::size_t i = 0; i < tags.size(); ++i) doc.tokens[i].pos = tags[i];
  r.doc = std::move(doc);
  return r;
}

inline constexpr std::string_view kWildcard = "*";
inline constexpr std::string_view kBeforeStart = "BOS";
inline constexpr std::string_view kAfterEnd = "EOS";

// Demotes spans of `from_type` to O when surface and (prev, self, next) POS context match.
// nullopt fields are wildcards.
struct PosRule {
  std::optional<std::string> surface;  // lowercased
  std::array<std::optional<std::string>, 3> context;
  EntityType from_type = EntityType::PKG;

  bool is_valid() const {
    return surface.has_value() || context[0].has_value() || context[1].has_value() || context[2].has_value();
  }

  std::string describe() const {
    auto w = [](const std::optional<std::string>& s) { return s ? *s : std::string(kWildcard); };
    return w(surface) + " (" + w(context[0]) + "," + w(context[1]) + "," + w(context[2]) + ") " +
           std::string(to_string(from_type)) + "->O";
  }
};

// Rules TSV: surface, prev_pos, self_pos, next_pos, from_type; "*" is a wildcard. Lines
// starting with '#' and a leading "surface" header are skipped.
inline std::vector<PosRule> load_pos_rules(const std::string& path) {
  auto in = open_input(path);
  std::vector<PosRule> rules;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    auto cells = split(line, '\t');
    if (lineno == 1 && trim(cells[0]) == "surface") continue;
    if (cells.size() != 5) {
      throw Error("malformed_row", path + ":" + std::to_string(lineno) + ": expected 5 columns");
    }
    auto field = [](const std::string& c) -> std::optional<std::string> {
      std::string v = trim(c);
      if (v == kWildcard || v.empty()) return std::nullopt;
      return v;
    };
    PosRule r;
    r.surface = field(cells[0]);
    if (r.surface) r.surface = to_lower(*r.surface);
    for (int k = 0; k < 3; ++k) r.context[k] = field(cells[1 + k]);
    auto t = parse_entity_type(trim(cells[4]));
    if (!t) throw Error("unknown_entity_type", path + ":" + std::to_string(lineno) + ": bad from_type");
    r.from_type = *t;
    if (!r.is_valid()) {
      throw Error("malformed_row", path + ":" + std::to_string(lineno) + ": rule is all wildcards");
    }
    rules.push_back(std::move(r));
  }
  return rules;
}

struct Demotion {
  std::string doc_id;
  Span span;
  std::string surface;
  std::size_t rule_index = 0;
};

struct DistillResult {
  LabeledDataset dataset;
  std::vector<Demotion> log;
};

namespace detail {

inline std::string pos_at(const Document& doc, std::ptrdiff_t i) {
  if (i < 0) return std::string(kBeforeStart);
  if (static_cast<std::size_t>(i) >= doc.tokens.size()) return std::string(kAfterEnd);
  return doc.tokens[static_cast<std::size_t>(i)].pos.value_or("");
}

inline bool rule_matches(const PosRule& r, const Document& doc, const Span& s) {
  if (r.from_type != s.entity_type) return false;
  if (r.surface && *r.surface != to_lower(span_surface(doc, s))) return false;
  // Multi-token spans are judged on their first token's context.
  const auto self = static_cast<std::ptrdiff_t>(s.token_start);
  const std::array<std::string, 3> ctx = {pos_at(doc, self - 1), pos_at(doc, self), pos_at(doc, self + 1)};
  for (int k = 0; k < 3; ++k) {
    if (r.context[k] && *r.context[k] != ctx[k]) return false;
  }
  return true;
}

}  // namespace detail

inline DistillResult apply_pos_rules(LabeledDataset dataset, const std::vector<PosRule>& rules) {
  DistillResult out;
  for (auto& item : dataset.items) {
    const auto spans = tags_to_spans(item.tags);
    for (const auto& s : spans) {
      for (std::size_t r = 0; r < rules.size(); ++r) {
        if (!detail::rule_matches(rules[r], item.doc, s)) continue;
        for (std::size_t i = s.token_start; i < s.token_end; ++i) item.tags[i] = Tag::O;
        out.log.push_back(Demotion{item.doc.id, s, span_surface(item.doc, s), r});
        break;
      }
    }
  }
  out.dataset = std::move(dataset);
  return out;
}

inline json demotion_to_json(const Demotion& d, const std::vector<PosRule>& rules) {
  json j = span_to_json(d.doc_id, d.span);
  j["surface"] = d.surface;
  j["rule_index"] = d.rule_index;
  if (d.rule_index < rules.size()) j["rule"] = rules[d.rule_index].describe();
  return j;
}

struct DiscardReport {
  std::vector<DictEntry> removed;
  std::map<std::pair<std::string, EntityType>, std::size_t> demotion_counts;
};

namespace detail {
inline std::string normalized_surface(const std::string& s) {
  std::vector<std::string> parts;
  for (const auto& t : tokenize(to_lower(s))) parts.push_back(t.surface);
  return join(parts, " ");
}
}  // namespace detail

// Drops entries demoted at least `threshold` times. Only surfaces that appear in the log are
// ever candidates for removal.
inline std::pair<Dictionary, DiscardReport> discard_entries(Dictionary dict, const std::vector<Demotion>& log,
                                                            std::size_t threshold) {
  DiscardReport report;
  for (const auto& d : log) ++report.demotion_counts[{detail::normalized_surface(d.surface), d.span.entity_type}];
  report.removed = dict.remove_if([&](const DictEntry& e) {
    auto it = report.demotion_counts.find({detail::normalized_surface(e.surface), e.entity_type});
    return it != report.demotion_counts.end() && it->second >= threshold;
  });
  return {std::move(dict), std::move(report)};
}

}  // namespace distner
