#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"
#include "distner/stopwords.hpp"

namespace distner {

struct DictEntry {
  std::string surface;  // case-preserving
  EntityType entity_type = EntityType::PKG;
  std::string source;
  Date added_at;
};

using TypeCounts = std::array<std::size_t, kEntityTypeCount>;

inline json counts_to_json(const TypeCounts& c) {
  json j = json::object();
  for (auto t : kAllEntityTypes) j[std::string(to_string(t))] = c[static_cast<std::size_t>(t)];
  return j;
}

struct AddReport {
  std::vector<DictEntry> inserted;
  std::vector<DictEntry> already_present;
  std::vector<DictEntry> rejected;  // stopwords or empty surfaces
};

// Per-type lookup tables with a token-level trie over lowercased token sequences.
// Lookup is case-insensitive and only ever sees whole tokens.
class Dictionary {
 public:
  using Key = std::pair<std::string, EntityType>;  // (lowercased trimmed surface, type)

  explicit Dictionary(std::set<std::string> stopwords = default_stopwords())
      : stopwords_(std::move(stopwords)) {
    nodes_.emplace_back();
  }

  const std::set<std::string>& stopwords() const { return stopwords_; }
  void set_stopwords(std::set<std::string> s) { stopwords_ = std::move(s); }

  bool is_stopword(const std::string& lowered_surface) const { return stopwords_.count(lowered_surface) > 0; }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const std::map<Key, DictEntry>& entries() const { return entries_; }

  bool contains(const std::string& surface, EntityType t) const {
    return entries_.count(Key{to_lower(trim(surface)), t}) > 0;
  }

  TypeCounts counts() const {
    TypeCounts c{};
    for (const auto& [k, e] : entries_) ++c[static_cast<std::size_t>(k.second)];
    return c;
  }

  // Longest entry in tokens; bounds how far a match can extend.
  std::size_t max_phrase_tokens() const { return max_tokens_; }

  AddReport add(const std::vector<DictEntry>& batch) {
    AddReport report;
    for (const auto& e : batch) {
      switch (insert_one(e)) {
        case InsertResult::inserted: report.inserted.push_back(e); break;
        case InsertResult::present: report.already_present.push_back(e); break;
        case InsertResult::rejected: report.rejected.push_back(e); break;
      }
    }
    return report;
  }

  // Removes one (surface, type) pair. Returns false when absent.
  bool remove(const std::string& surface, EntityType t) {
    if (entries_.erase(Key{to_lower(trim(surface)), t}) == 0) return false;
    rebuild_index();
    return true;
  }

  template <class Pred>
  std::vector<DictEntry> remove_if(Pred&& pred) {
    std::vector<DictEntry> removed;
    for (auto it = entries_.begin(); it != entries_.end();) {
      if (pred(it->second)) {
        removed.push_back(it->second);
        it = entries_.erase(it);
      } else {
        ++it;
      }
    }
    if (!removed.empty()) rebuild_index();
    return removed;
  }

  // Types whose lexicon contains exactly this lowercased token sequence.
  std::vector<EntityType> query(const std::vector<std::string>& lowered_tokens) const {
    std::uint32_t node = 0;
    for (const auto& tok : lowered_tokens) {
      auto it = nodes_[node].children.find(tok);
      if (it == nodes_[node].children.end()) return {};
      node = it->second;
    }
    if (lowered_tokens.empty()) return {};
    return types_of(nodes_[node].type_mask);
  }

  // Walks the trie from `start`, calling fn(end, type) for every entry that matches
  // tokens [start, end).
  template <class Fn>
  void for_each_match_at(const Document& doc, std::size_t start, Fn&& fn) const {
    std::uint32_t node = 0;
    std::string lowered;
    for (std::size_t i = start; i < doc.tokens.size(); ++i) {
      lowered = to_lower(doc.tokens[i].surface);
      auto it = nodes_[node].children.find(lowered);
      if (it == nodes_[node].children.end()) return;
      node = it->second;
      const std::uint16_t mask = nodes_[node].type_mask;
      if (mask) {
        for (auto t : kAllEntityTypes) {
          if (mask & bit(t)) fn(i + 1, t);
        }
      }
    }
  }

 private:
  enum class InsertResult { inserted, present, rejected };

  struct Node {
    std::unordered_map<std::string, std::uint32_t> children;
    std::uint16_t type_mask = 0;
  };

  static constexpr std::uint16_t bit(EntityType t) {
    return static_cast<std::uint16_t>(1u << static_cast<unsigned>(t));
  }

  static std::vector<EntityType> types_of(std::uint16_t mask) {
    std::vector<EntityType> out;
    for (auto t : kAllEntityTypes) {
      if (mask & bit(t)) out.push_back(t);
    }
    return out;
  }

  InsertResult insert_one(const DictEntry& raw) {
    DictEntry e = raw;
    e.surface = trim(e.surface);
    const std::string lowered = to_lower(e.surface);
    if (lowered.empty() || is_stopword(lowered)) return InsertResult::rejected;
    auto tokens = tokenize(lowered);
    if (tokens.empty()) return InsertResult::rejected;
    Key key{lowered, e.entity_type};
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      if (e.added_at < it->second.added_at) it->second = e;
      return InsertResult::present;
    }
    entries_.emplace(key, e);
    index_tokens(tokens, e.entity_type);
    return InsertResult::inserted;
  }

  void index_tokens(const std::vector<Token>& tokens, EntityType t) {
    std::uint32_t node = 0;
    for (const auto& tok : tokens) {
      auto it = nodes_[node].children.find(tok.surface);
      if (it == nodes_[node].children.end()) {
        const auto next = static_cast<std::uint32_t>(nodes_.size());
        nodes_[node].children.emplace(tok.surface, next);
        nodes_.emplace_back();
        node = next;
      } else {
        node = it->second;
      }
    }
    nodes_[node].type_mask |= bit(t);
    max_tokens_ = std::max(max_tokens_, tokens.size());
  }

  void rebuild_index() {
    nodes_.clear();
    nodes_.emplace_back();
    max_tokens_ = 0;
    for (const auto& [k, e] : entries_) index_tokens(tokenize(k.first), k.second);
  }

  std::set<std::string> stopwords_;
  std::map<Key, DictEntry> entries_;
  std::vector<Node> nodes_;
  std::size_t max_tokens_ = 0;
};

struct LoadReport {
  std::size_t rows = 0;
  std::size_t inserted = 0;
  std::size_t duplicates = 0;
  std::size_t stopword_rejected = 0;
};

namespace detail {

inline void load_table_into(Dictionary& dict, const std::string& path, LoadReport& report) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> col;
  std::optional<EntityType> file_type;
  std::vector<DictEntry> batch;
  auto fail = [&](const std::string& why) {
    throw Error("malformed_row", path + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      auto header = split(line, '\t');
      for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
      if (!col.count("surface")) fail("header must name a 'surface' column");
      if (!col.count("entity_type")) {
        // Per-type file: the type comes from the file name (e.g. PKG.tsv).
        const std::string stem = std::filesystem::path(path).stem().string();
        std::string upper = stem;
        for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        file_type = parse_entity_type(upper);
        if (!file_type) fail("no entity_type column and file name '" + stem + "' is not an entity type");
      }
      continue;
    }
    if (trim(line).empty()) continue;
    auto cells = split(line, '\t');
    if (cells.size() != col.size()) {
      fail("expected " + std::to_string(col.size()) + " columns, got " + std::to_string(cells.size()));
    }
    DictEntry e;
    e.surface = trim(cells[col["surface"]]);
    if (e.surface.empty()) fail("empty surface");
    if (file_type) {
      e.entity_type = *file_type;
    } else {
      const std::string type_cell = trim(cells[col["entity_type"]]);
      auto t = parse_entity_type(type_cell);
      if (!t) throw Error("unknown_entity_type", path + ":" + std::to_string(lineno) + ": unknown entity type '" + type_cell + "'");
      e.entity_type = *t;
    }
    if (col.count("source")) e.source = trim(cells[col["source"]]);
    if (col.count("added_at")) {
      try {
        e.added_at = parse_date(trim(cells[col["added_at"]]));
      } catch (const Error& err) {
        fail(err.what());
      }
    }
    ++report.rows;
    batch.push_back(std::move(e));
  }
  auto r = dict.add(batch);
  report.inserted += r.inserted.size();
  report.duplicates += r.already_present.size();
  report.stopword_rejected += r.rejected.size();
}

}  // namespace detail

// TSV lookup tables: header then surface<TAB>entity_type<TAB>source<TAB>added_at, either one
// combined file or one file per type (no entity_type column, type taken from the file name).
inline Dictionary load_lookup_tables(const std::vector<std::string>& paths,
                                     std::set<std::string> stopwords = default_stopwords(),
                                     LoadReport* report = nullptr) {
  Dictionary dict(std::move(stopwords));
  LoadReport local;
  for (const auto& p : paths) detail::load_table_into(dict, p, local);
  if (report) *report = local;
  return dict;
}

inline Dictionary load_lookup_tables(const std::string& path, std::set<std::string> stopwords = default_stopwords(),
                                     LoadReport* report = nullptr) {
  return load_lookup_tables(std::vector<std::string>{path}, std::move(stopwords), report);
}

inline void save_lookup_tables(const Dictionary& dict, const std::string& path) {
  auto out = open_output(path);
  out << "surface\tentity_type\tsource\tadded_at\n";
  for (const auto& [k, e] : dict.entries()) {
    out << e.surface << '\t' << to_string(e.entity_type) << '\t' << e.source << '\t' << to_string(e.added_at) << '\n';
  }
}

inline std::pair<Dictionary, AddReport> add_entries(Dictionary dict, const std::vector<DictEntry>& entries) {
  AddReport report = dict.add(entries);
  return {std::move(dict), std::move(report)};
}

inline std::vector<EntityType> query(const Dictionary& dict, const std::vector<std::string>& lowered_tokens) {
  return dict.query(lowered_tokens);
}

}  // namespace distner
