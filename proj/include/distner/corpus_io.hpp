#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "distner/core_model.hpp"

namespace distner {

using json = nlohmann::json;

// doc id -> spans. Ordered so that every writer produces the same bytes for the same input.
using Annotations = std::map<std::string, std::vector<Span>>;

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io_error", "cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io_error", "cannot open '" + path + "' for writing");
  return out;
}

template <class Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error("malformed_json", path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      fn(j, lineno);
    } catch (const json::exception& e) {
      throw Error("malformed_record", path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline std::string_view to_string(Source s) { return s == Source::qa ? "qa" : "bug"; }

inline Source source_from(std::string_view s) {
  if (s == "bug") return Source::bug;
  if (s == "qa") return Source::qa;
  throw Error("unknown_source", "unknown document source '" + std::string(s) + "'");
}

inline Document document_from_json(const json& j) {
  Date created{};
  if (j.contains("created_at") && !j["created_at"].is_null()) created = parse_date(j.at("created_at").get<std::string>());
  Source src = Source::bug;
  if (j.contains("source")) src = source_from(j.at("source").get<std::string>());
  Document d = make_document(j.at("id").get<std::string>(), j.at("text").get<std::string>(), created, src);
  if (j.contains("metadata") && j["metadata"].is_object()) {
    for (const auto& [k, v] : j["metadata"].items()) d.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return d;
}

inline json document_to_json(const Document& d) {
  json j;
  j["id"] = d.id;
  j["text"] = d.text;
  j["created_at"] = to_string(d.created_at);
  j["source"] = std::string(to_string(d.source));
  j["metadata"] = json::object();
  for (const auto& [k, v] : d.metadata) j["metadata"][k] = v;
  return j;
}

inline std::vector<Document> read_corpus(const std::string& path) {
  std::vector<Document> out;
  std::map<std::string, std::size_t> seen;
  for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    Document d = document_from_json(j);
    if (seen.count(d.id)) {
      throw Error("duplicate_id", path + ":" + std::to_string(lineno) + ": duplicate document id '" + d.id + "'");
    }
    seen[d.id] = out.size();
    out.push_back(std::move(d));
  });
  return out;
}

inline void write_corpus(const std::string& path, const std::vector<Document>& docs) {
  auto out = open_output(path);
  for (const auto& d : docs) out << document_to_json(d).dump() << '\n';
}

inline json span_to_json(const std::string& doc_id, const Span& s) {
  return json{{"doc_id", doc_id},
              {"token_start", s.token_start},
              {"token_end", s.token_end},
              {"entity_type", std::string(to_string(s.entity_type))},
              {"provenance", std::string(to_string(s.provenance))},
              {"confidence", s.confidence}};
}

inline Span span_from_json(const json& j) {
  Span s;
  s.token_start = j.at("token_start").get<std::size_t>();
  s.token_end = j.at("token_end").get<std::size_t>();
  s.entity_type = entity_type_from(j.at("entity_type").get<std::string>());
  s.provenance = j.contains("provenance") ? provenance_from(j["provenance"].get<std::string>()) : Provenance::dictionary;
  s.confidence = j.contains("confidence") ? j["confidence"].get<double>() : 1.0;
  if (s.token_start >= s.token_end) throw Error("invalid_span", "empty or reversed span");
  if (s.confidence < 0.0 || s.confidence > 1.0) throw Error("invalid_span", "confidence outside [0,1]");
  return s;
}

inline Annotations read_annotations(const std::string& path) {
  Annotations out;
  for_each_jsonl(path, [&](const json& j, std::size_t) {
    out[j.at("doc_id").get<std::string>()].push_back(span_from_json(j));
  });
  for (auto& [id, spans] : out) {
    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
      return std::tie(a.token_start, a.token_end, a.entity_type) < std::tie(b.token_start, b.token_end, b.entity_type);
    });
  }
  return out;
}

inline void write_annotations(const std::string& path, const Annotations& ann) {
  auto out = open_output(path);
  for (const auto& [id, spans] : ann) {
    for (const auto& s : spans) out << span_to_json(id, s).dump() << '\n';
  }
}

// Makes sure every document of `docs` has an entry (possibly empty).
inline Annotations cover_documents(Annotations ann, const std::vector<Document>& docs) {
  for (const auto& d : docs) ann[d.id];
  return ann;
}

// Documents joined with their spans. With `annotated_only`, documents without an entry in
// `ann` are left out; otherwise they come in with all-O tags.
inline LabeledDataset labeled_dataset(const std::vector<Document>& docs, const Annotations& ann, std::string name,
                                      bool annotated_only = false) {
  LabeledDataset ds;
  ds.name = std::move(name);
  for (const auto& d : docs) {
    auto it = ann.find(d.id);
    if (it == ann.end() && annotated_only) continue;
    ds.items.push_back(LabeledItem{d, spans_to_tags(d, it == ann.end() ? std::vector<Span>{} : it->second)});
  }
  return ds;
}

inline void write_json(const std::string& path, const json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

inline json read_json(const std::string& path) {
  auto in = open_input(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("malformed_json", path + ": " + e.what());
  }
}

}  // namespace distner
