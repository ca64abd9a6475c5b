#pragma once

#include <algorithm>
#include <regex>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"
#include "distner/dictionary.hpp"

namespace distner {

inline constexpr const char* kDefaultUrlPattern = R"((?:[A-Za-z][A-Za-z0-9+.\-]*://|www\.)\S+)";

struct MatchConfig {
  std::string url_pattern = kDefaultUrlPattern;
  std::set<std::string> stopwords = default_stopwords();
  std::vector<std::string> regex_rejectors;
};

// Compiled form of a MatchConfig. Building one validates every pattern.
class CompiledMatchConfig {
 public:
  explicit CompiledMatchConfig(const MatchConfig& cfg) : stopwords_(cfg.stopwords) {
    try {
      if (!cfg.url_pattern.empty()) url_ = std::regex(cfg.url_pattern, std::regex::ECMAScript);
      for (const auto& p : cfg.regex_rejectors) rejectors_.emplace_back(p, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw Error("bad_pattern", std::string("pattern does not compile: ") + e.what());
    }
    has_url_ = !cfg.url_pattern.empty();
    std::set<std::string> lowered;
    for (const auto& w : stopwords_) lowered.insert(to_lower(w));
    stopwords_ = std::move(lowered);
  }

  bool has_url_pattern() const { return has_url_; }
  const std::regex& url() const { return url_; }

  bool rejects(const std::string& surface) const {
    if (stopwords_.count(to_lower(surface))) return true;
    for (const auto& re : rejectors_) {
      if (std::regex_search(surface, re)) return true;
    }
    return false;
  }

 private:
  std::set<std::string> stopwords_;
  std::regex url_;
  bool has_url_ = false;
  std::vector<std::regex> rejectors_;
};

// Indices of tokens overlapping any URL match. These can never be annotated.
inline std::vector<bool> strip_urls(const Document& doc, const CompiledMatchConfig& cfg) {
  std::vector<bool> mask(doc.tokens.size(), false);
  if (!cfg.has_url_pattern() || doc.tokens.empty()) return mask;
  for (auto it = std::sregex_iterator(doc.text.begin(), doc.text.end(), cfg.url());
       it != std::sregex_iterator(); ++it) {
    const auto b = static_cast<std::size_t>(it->position(0));
    const auto e = b + static_cast<std::size_t>(it->length(0));
    if (b == e) continue;
    // tokens are sorted by offset; find the first one ending after b
    auto first = std::partition_point(doc.tokens.begin(), doc.tokens.end(),
                                      [&](const Token& t) { return t.char_end <= b; });
    for (auto t = first; t != doc.tokens.end() && t->char_start < e; ++t) {
      mask[static_cast<std::size_t>(t - doc.tokens.begin())] = true;
    }
  }
  return mask;
}

inline std::vector<bool> strip_urls(const Document& doc, const MatchConfig& cfg = {}) {
  return strip_urls(doc, CompiledMatchConfig(cfg));
}

inline std::set<std::size_t> masked_indices(const std::vector<bool>& mask) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.insert(i);
  }
  return out;
}

// Priority order for overlap resolution: longer first, then earlier start, then lower type code.
inline bool higher_priority(const Span& a, const Span& b) {
  const auto la = a.length();
  const auto lb = b.length();
  if (la != lb) return la > lb;
  if (a.token_start != b.token_start) return a.token_start < b.token_start;
  return a.entity_type < b.entity_type;
}

// Greedy: keep the highest-priority remaining candidate, drop everything overlapping it.
// Output is sorted by token_start.
inline std::vector<Span> resolve_overlaps(std::vector<Span> candidates) {
  std::sort(candidates.begin(), candidates.end(), higher_priority);
  candidates.erase(std::unique(candidates.begin(), candidates.end(),
                               [](const Span& a, const Span& b) { return a.same_extent(b); }),
                   candidates.end());
  std::vector<Span> kept;
  for (const auto& c : candidates) {
    bool clash = false;
    for (const auto& k : kept) {
      if (k.overlaps(c)) {
        clash = true;
        break;
      }
    }
    if (!clash) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(),
            [](const Span& a, const Span& b) { return a.token_start < b.token_start; });
  return kept;
}

// Every whole-token dictionary hit outside URLs whose surface survives the stopword and
// rejector filters, before overlap resolution.
inline std::vector<Span> match_candidates(const Document& doc, const Dictionary& dict,
                                          const CompiledMatchConfig& cfg) {
  std::vector<Span> out;
  const auto mask = strip_urls(doc, cfg);
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    if (mask[i]) continue;
    dict.for_each_match_at(doc, i, [&](std::size_t end, EntityType t) {
      for (std::size_t k = i; k < end; ++k) {
        if (mask[k]) return;
      }
      Span s{i, end, t, Provenance::dictionary, 1.0};
      if (cfg.rejects(span_surface(doc, s))) return;
      out.push_back(s);
    });
  }
  return out;
}

inline std::vector<Span> match_document(const Document& doc, const Dictionary& dict,
                                        const CompiledMatchConfig& cfg) {
  return resolve_overlaps(match_candidates(doc, dict, cfg));
}

inline std::vector<Span> match_document(const Document& doc, const Dictionary& dict, const MatchConfig& cfg = {}) {
  return match_document(doc, dict, CompiledMatchConfig(cfg));
}

struct MatchStats {
  std::size_t documents = 0;
  std::size_t documents_with_hits = 0;
  std::size_t total_spans = 0;
  TypeCounts hits_per_type{};
  std::vector<std::pair<std::string, std::string>> failures;  // (doc id, reason)

  json to_json() const {
    json f = json::array();
    for (const auto& [id, why] : failures) f.push_back({{"doc_id", id}, {"reason", why}});
    return json{{"documents", documents},
                {"documents_with_hits", documents_with_hits},
                {"total_spans", total_spans},
                {"hits_per_type", counts_to_json(hits_per_type)},
                {"failures", f}};
  }
};

struct AnnotatedCorpus {
  LabeledDataset dataset;
  Annotations spans;
  MatchStats stats;
};

// Stage-1 annotation of a whole corpus. A failing document becomes a failure record and the
// rest of the corpus is still processed.
inline AnnotatedCorpus annotate_corpus(const std::vector<Document>& corpus, const Dictionary& dict,
                                       const MatchConfig& cfg = {}) {
  const CompiledMatchConfig compiled(cfg);
  AnnotatedCorpus out;
  out.dataset.name = "stage1";
  for (const auto& doc : corpus) {
    ++out.stats.documents;
    try {
      auto spans = match_document(doc, dict, compiled);
      auto tags = spans_to_tags(doc, spans);
      if (!spans.empty()) ++out.stats.documents_with_hits;
      out.stats.total_spans += spans.size();
      for (const auto& s : spans) ++out.stats.hits_per_type[static_cast<std::size_t>(s.entity_type)];
      out.spans[doc.id] = spans;
      out.dataset.items.push_back(LabeledItem{doc, std::move(tags)});
    } catch (const std::exception& e) {
      out.stats.failures.emplace_back(doc.id, e.what());
    }
  }
  return out;
}

}  // namespace distner
