#pragma once

// Slow reference implementations used by the unit tests and the acceptance runner.

#include <algorithm>
#include <regex>
#include <span>
#include <tuple>
#include <vector>

#include "distner/crf_tagger.hpp"
#include "distner/matcher.hpp"

namespace distner::oracle {

inline bool span_less(const Span& a, const Span& b) {
  return std::tie(a.token_start, a.token_end, a.entity_type) < std::tie(b.token_start, b.token_end, b.entity_type);
}

inline std::vector<Span> sorted(std::vector<Span> v) {
  std::sort(v.begin(), v.end(), span_less);
  return v;
}

inline bool same_spans(std::vector<Span> a, std::vector<Span> b) {
  a = sorted(std::move(a));
  b = sorted(std::move(b));
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_extent(b[i])) return false;
  }
  return true;
}

// Every subset that is pairwise disjoint and where each excluded candidate overlaps a kept
// candidate of strictly higher priority. A correct resolver has exactly one.
inline std::vector<std::vector<Span>> keep_sets(std::vector<Span> c) {
  c = sorted(std::move(c));
  c.erase(std::unique(c.begin(), c.end(), [](const Span& a, const Span& b) { return a.same_extent(b); }), c.end());
  const std::size_t n = c.size();
  std::vector<std::vector<Span>> solutions;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      for (std::size_t j = i + 1; j < n && ok; ++j) {
        if ((mask >> i & 1) && (mask >> j & 1) && c[i].overlaps(c[j])) ok = false;
      }
    }
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (mask >> i & 1) continue;
      bool blocked = false;
      for (std::size_t j = 0; j < n; ++j) {
        if ((mask >> j & 1) && c[j].overlaps(c[i]) && higher_priority(c[j], c[i])) blocked = true;
      }
      ok = blocked;
    }
    if (!ok) continue;
    std::vector<Span> keep;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1) keep.push_back(c[i]);
    }
    solutions.push_back(keep);
  }
  return solutions;
}

// O(n*m) matcher: every token position against every entry.
inline std::vector<Span> naive_match(const Document& doc, const Dictionary& dict, const MatchConfig& cfg) {
  CompiledMatchConfig compiled(cfg);
  const auto mask = strip_urls(doc, compiled);
  std::vector<Span> candidates;
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    for (const auto& [key, e] : dict.entries()) {
      const auto entry_doc = make_document("e", e.surface);
      const auto want = lowered_tokens(entry_doc, 0, entry_doc.tokens.size());
      if (want.empty() || i + want.size() > doc.tokens.size()) continue;
      bool hit = true;
      for (std::size_t k = 0; k < want.size() && hit; ++k) {
        hit = to_lower(doc.tokens[i + k].surface) == want[k] && !mask[i + k];
      }
      if (!hit) continue;
      Span s{i, i + want.size(), e.entity_type, Provenance::dictionary};
      const auto surface = span_surface(doc, s);
      if (cfg.stopwords.count(to_lower(surface))) continue;
      bool rejected = false;
      for (const auto& p : cfg.regex_rejectors) rejected = rejected || std::regex_search(surface, std::regex(p));
      if (!rejected) candidates.push_back(s);
    }
  }
  return resolve_overlaps(candidates);
}

// Every sequence over `alphabet` in lexicographic order; returns the first best one.
inline TagSequence brute_force_argmax(const std::vector<TagWeights>& em, const std::array<TagWeights, kTagCount>& trans,
                                      std::span<const Tag> alphabet) {
  const std::size_t n = em.size();
  const std::size_t k = alphabet.size();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= k;
  TagSequence best;
  double best_score = -1e300;
  for (std::size_t code = 0; code < total; ++code) {
    TagSequence seq(n);
    std::size_t c = code;
    for (std::size_t i = n; i-- > 0;) {
      seq[i] = alphabet[c % k];
      c /= k;
    }
    const double s = lattice_score(em, trans, seq);
    if (s > best_score) {
      best_score = s;
      best = seq;
    }
  }
  return best;
}

}  // namespace distner::oracle
