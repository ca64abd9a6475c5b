#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"
#include "distner/process.hpp"

namespace distner {

inline constexpr std::string_view kFeatureTemplateVersion = "v1";
inline constexpr int kModelFormatVersion = 1;

inline constexpr std::array<Tag, kTagCount> kAllTags = {Tag::O,     Tag::I_ARC, Tag::I_CMD, Tag::I_ERR, Tag::I_EXT,
                                                        Tag::I_ORG, Tag::I_OS,  Tag::I_PKG, Tag::I_PRP, Tag::I_SOC};

namespace detail {

// Byte offsets of code point starts, plus the end offset.
inline std::vector<std::size_t> code_point_offsets(const std::string& s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) out.push_back(i);
  }
  out.push_back(s.size());
  return out;
}

inline std::string word_shape(const std::string& s) {
  std::string out;
  for (char c : s) {
    char k;
    if (c >= 'A' && c <= 'Z') k = 'X';
    else if (c >= 'a' && c <= 'z') k = 'x';
    else if (is_ascii_digit(c)) k = 'd';
    else if (static_cast<unsigned char>(c) >= 0x80) k = 'u';
    else k = c;
    if (out.empty() || out.back() != k) out.push_back(k);
  }
  return out;
}

}  // namespace detail

// Feature template v1. Names are stable strings and part of the model format.
inline std::vector<std::string> featurize(const Document& doc, std::size_t pos) {
  std::vector<std::string> f;
  const auto& tokens = doc.tokens;
  const std::string& w = tokens[pos].surface;
  const std::string lw = to_lower(w);
  f.reserve(24);
  f.emplace_back("b");
  f.push_back("w=" + lw);
  f.push_back("sh=" + detail::word_shape(w));

  const auto cps = detail::code_point_offsets(lw);
  const std::size_t n_cp = cps.size() - 1;
  for (std::size_t k = 1; k <= 3 && k <= n_cp; ++k) {
    f.push_back("p" + std::to_string(k) + "=" + lw.substr(0, cps[k]));
    f.push_back("s" + std::to_string(k) + "=" + lw.substr(cps[n_cp - k]));
  }

  bool digit = false, all_digit = !w.empty(), hyphen = false, dot = false;
  for (char c : w) {
    digit |= is_ascii_digit(c);
    all_digit &= is_ascii_digit(c);
    hyphen |= c == '-';
    dot |= c == '.';
  }
  if (digit) f.emplace_back("has_digit");
  if (all_digit) f.emplace_back("all_digit");
  if (hyphen) f.emplace_back("has_hyphen");
  if (dot) f.emplace_back("has_dot");

  auto word_at = [&](std::ptrdiff_t i) -> std::string {
    if (i < 0) return "<BOS>";
    if (static_cast<std::size_t>(i) >= tokens.size()) return "<EOS>";
    return to_lower(tokens[static_cast<std::size_t>(i)].surface);
  };
  const auto p = static_cast<std::ptrdiff_t>(pos);
  f.push_back("w-1=" + word_at(p - 1));
  f.push_back("w-2=" + word_at(p - 2));
  f.push_back("w+1=" + word_at(p + 1));
  f.push_back("w+2=" + word_at(p + 2));

  if (tokens[pos].pos) {
    auto pos_at = [&](std::ptrdiff_t i) -> std::string {
      if (i < 0) return "<BOS>";
      if (static_cast<std::size_t>(i) >= tokens.size()) return "<EOS>";
      return tokens[static_cast<std::size_t>(i)].pos.value_or("?");
    };
    f.push_back("pos=" + *tokens[pos].pos);
    f.push_back("pos-1=" + pos_at(p - 1));
    f.push_back("pos+1=" + pos_at(p + 1));
  }
  return f;
}

using TagWeights = std::array<double, kTagCount>;

class CrfModel {
 public:
  std::string template_version = std::string(kFeatureTemplateVersion);
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  double aggressiveness = 1.0;
  std::array<TagWeights, kTagCount> transition{};  // [from][to]

  std::size_t feature_count() const { return names_.size(); }
  const std::string& feature_name(std::size_t id) const { return names_[id]; }

  std::optional<std::size_t> find(const std::string& feature) const {
    auto it = index_.find(feature);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t intern(const std::string& feature) {
    auto [it, inserted] = index_.emplace(feature, names_.size());
    if (inserted) {
      names_.push_back(feature);
      emission_.push_back(TagWeights{});
    }
    return it->second;
  }

  TagWeights& emission(std::size_t id) { return emission_[id]; }
  const TagWeights& emission(std::size_t id) const { return emission_[id]; }

  // Sum of emission rows of every known feature at each position.
  std::vector<TagWeights> emission_scores(const Document& doc) const {
    std::vector<TagWeights> out(doc.tokens.size(), TagWeights{});
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
      for (const auto& f : featurize(doc, i)) {
        if (auto id = find(f)) {
          const auto& row = emission_[*id];
          for (std::size_t t = 0; t < kTagCount; ++t) out[i][t] += row[t];
        }
      }
    }
    return out;
  }

  bool operator==(const CrfModel& o) const {
    if (template_version != o.template_version || iterations != o.iterations || seed != o.seed ||
        aggressiveness != o.aggressiveness || transition != o.transition) {
      return false;
    }
    auto nonzero = [](const CrfModel& m) {
      std::map<std::string, TagWeights> out;
      for (std::size_t i = 0; i < m.names_.size(); ++i) {
        const auto& row = m.emission_[i];
        if (std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; })) out[m.names_[i]] = row;
      }
      return out;
    };
    return nonzero(*this) == nonzero(o);
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> names_;
  std::vector<TagWeights> emission_;
};

inline double lattice_score(const std::vector<TagWeights>& emissions,
                            const std::array<TagWeights, kTagCount>& transition, const TagSequence& tags) {
  double s = 0.0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    s += emissions[i][index_of(tags[i])];
    if (i > 0) s += transition[index_of(tags[i - 1])][index_of(tags[i])];
  }
  return s;
}

// Emission weights summed over positions plus transition weights between consecutive tags.
inline double sequence_score(const CrfModel& model, const Document& doc, const TagSequence& tags) {
  if (tags.size() != doc.tokens.size()) {
    throw Error("length_mismatch", "tag sequence length differs from token count");
  }
  for (Tag t : tags) {
    if (index_of(t) >= kTagCount) throw Error("unknown_tag", "tag outside the IO alphabet");
  }
  return lattice_score(model.emission_scores(doc), model.transition, tags);
}

// Exact argmax over `allowed` tags. Among equal-scoring sequences the lexicographically
// smallest one under the tag order (O, I_ARC, ..., I_SOC) wins: a backward pass computes the
// best completion from every (position, tag), then a forward pass picks the smallest tag
// that still attains the optimum.
inline TagSequence decode_lattice(const std::vector<TagWeights>& emissions,
                                  const std::array<TagWeights, kTagCount>& transition,
                                  std::span<const Tag> allowed = kAllTags) {
  const std::size_t n = emissions.size();
  if (n == 0) return {};
  std::vector<Tag> tags(allowed.begin(), allowed.end());
  std::sort(tags.begin(), tags.end());
  tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
  if (tags.empty()) throw Error("empty_alphabet", "no tags allowed for decoding");

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<TagWeights> best(n);
  for (auto t : tags) best[n - 1][index_of(t)] = emissions[n - 1][index_of(t)];
  for (std::size_t i = n - 1; i-- > 0;) {
    for (auto a : tags) {
      double m = kNegInf;
      for (auto b : tags) m = std::max(m, transition[index_of(a)][index_of(b)] + best[i + 1][index_of(b)]);
      best[i][index_of(a)] = emissions[i][index_of(a)] + m;
    }
  }

  TagSequence out(n, tags.front());
  {
    double m = kNegInf;
    for (auto a : tags) {
      if (best[0][index_of(a)] > m) {
        m = best[0][index_of(a)];
        out[0] = a;
      }
    }
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double m = kNegInf;
    const auto prev = index_of(out[i]);
    for (auto b : tags) {
      const double v = transition[prev][index_of(b)] + best[i + 1][index_of(b)];
      if (v > m) {
        m = v;
        out[i + 1] = b;
      }
    }
  }
  return out;
}

inline TagSequence viterbi_decode(const CrfModel& model, const Document& doc, std::span<const Tag> allowed = kAllTags) {
  return decode_lattice(model.emission_scores(doc), model.transition, allowed);
}

struct PaUpdate {
  std::size_t iteration = 0;
  std::size_t example = 0;
  double loss = 0.0;
  double tau = 0.0;
};

struct TrainOptions {
  std::size_t iterations = 150;
  double aggressiveness = 1.0;  // C
  std::uint64_t seed = 0;
  std::vector<PaUpdate>* trace = nullptr;
};

struct TrainSummary {
  std::size_t updates = 0;
  std::optional<std::size_t> converged_at;  // first iteration without a mistake
  std::vector<std::size_t> mistakes_per_iteration;
};

// Averaged structured passive-aggressive training with Hamming loss. The returned model is
// the mean of the weight snapshots taken after each iteration.
inline CrfModel train_pa(const LabeledDataset& dataset, const TrainOptions& opt = {},
                         TrainSummary* summary = nullptr) {
  check_consistent(dataset);
  if (dataset.items.empty()) throw Error("empty_dataset", "cannot train on an empty dataset");
  if (opt.iterations == 0) throw Error("bad_option", "iterations must be positive");
  if (!(opt.aggressiveness > 0.0)) throw Error("bad_option", "aggressiveness must be positive");

  CrfModel w;
  w.iterations = opt.iterations;
  w.seed = opt.seed;
  w.aggressiveness = opt.aggressiveness;

  struct Example {
    std::vector<std::vector<std::size_t>> features;
    const TagSequence* gold;
  };
  std::vector<Example> examples;
  examples.reserve(dataset.items.size());
  for (const auto& item : dataset.items) {
    Example ex;
    ex.gold = &item.tags;
    for (std::size_t i = 0; i < item.doc.tokens.size(); ++i) {
      std::vector<std::size_t> ids;
      for (const auto& f : featurize(item.doc, i)) ids.push_back(w.intern(f));
      ex.features.push_back(std::move(ids));
    }
    examples.push_back(std::move(ex));
  }

  std::vector<TagWeights> emission_sum(w.feature_count(), TagWeights{});
  std::array<TagWeights, kTagCount> transition_sum{};
  auto accumulate = [&](double times) {
    for (std::size_t f = 0; f < w.feature_count(); ++f) {
      for (std::size_t t = 0; t < kTagCount; ++t) emission_sum[f][t] += times * w.emission(f)[t];
    }
    for (std::size_t a = 0; a < kTagCount; ++a) {
      for (std::size_t b = 0; b < kTagCount; ++b) transition_sum[a][b] += times * w.transition[a][b];
    }
  };

  TrainSummary local;
  Rng rng(opt.seed);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t it = 0; it < opt.iterations; ++it) {
    shuffle_in_place(order, rng);
    std::size_t mistakes = 0;
    for (std::size_t idx : order) {
      const auto& ex = examples[idx];
      const std::size_t n = ex.features.size();
      if (n == 0) continue;
      std::vector<TagWeights> em(n, TagWeights{});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f : ex.features[i]) {
          for (std::size_t t = 0; t < kTagCount; ++t) em[i][t] += w.emission(f)[t];
        }
      }
      const TagSequence pred = decode_lattice(em, w.transition);
      const TagSequence& gold = *ex.gold;
      if (pred == gold) continue;
      ++mistakes;

      std::map<std::pair<std::size_t, std::size_t>, double> d_emit;
      std::array<TagWeights, kTagCount> d_trans{};
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (gold[i] != pred[i]) {
          loss += 1.0;
          for (std::size_t f : ex.features[i]) {
            d_emit[{f, index_of(gold[i])}] += 1.0;
            d_emit[{f, index_of(pred[i])}] -= 1.0;
          }
        }
        if (i > 0) {
          d_trans[index_of(gold[i - 1])][index_of(gold[i])] += 1.0;
          d_trans[index_of(pred[i - 1])][index_of(pred[i])] -= 1.0;
        }
      }
      double norm2 = 0.0;
      for (const auto& [k, v] : d_emit) norm2 += v * v;
      for (const auto& row : d_trans) {
        for (double v : row) norm2 += v * v;
      }
      if (norm2 == 0.0) continue;
      const double tau = std::min(opt.aggressiveness, loss / norm2);
      for (const auto& [k, v] : d_emit) w.emission(k.first)[k.second] += tau * v;
      for (std::size_t a = 0; a < kTagCount; ++a) {
        for (std::size_t b = 0; b < kTagCount; ++b) w.transition[a][b] += tau * d_trans[a][b];
      }
      ++local.updates;
      if (opt.trace) opt.trace->push_back(PaUpdate{it, idx, loss, tau});
    }
    local.mistakes_per_iteration.push_back(mistakes);
    if (mistakes == 0) {
      // Nothing changes any more: the remaining snapshots all equal the current weights.
      if (!local.converged_at) local.converged_at = it;
      accumulate(static_cast<double>(opt.iterations - it));
      break;
    }
    accumulate(1.0);
  }

  const double inv = 1.0 / static_cast<double>(opt.iterations);
  for (std::size_t f = 0; f < w.feature_count(); ++f) {
    for (std::size_t t = 0; t < kTagCount; ++t) w.emission(f)[t] = emission_sum[f][t] * inv;
  }
  for (std::size_t a = 0; a < kTagCount; ++a) {
    for (std::size_t b = 0; b < kTagCount; ++b) w.transition[a][b] = transition_sum[a][b] * inv;
  }
  if (summary) *summary = std::move(local);
  return w;
}

// ---- model files -------------------------------------------------------------------------

inline json model_to_json(const CrfModel& m) {
  json tagset = json::array();
  for (Tag t : kAllTags) tagset.push_back(to_string(t));
  json header = {{"version", kModelFormatVersion}, {"tagset", tagset},         {"template_version", m.template_version},
                 {"iterations", m.iterations},     {"seed", m.seed},          {"aggressiveness", m.aggressiveness}};
  json trans = json::array();
  for (const auto& row : m.transition) trans.push_back(row);
  std::map<std::string, TagWeights> rows;
  for (std::size_t i = 0; i < m.feature_count(); ++i) {
    const auto& row = m.emission(i);
    if (std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; })) rows[m.feature_name(i)] = row;
  }
  json em = json::array();
  for (const auto& [name, row] : rows) em.push_back({{"feature", name}, {"weights", row}});
  return json{{"header", header}, {"transitions", trans}, {"emissions", em}};
}

inline CrfModel model_from_json(const json& j) {
  CrfModel m;
  try {
    const auto& h = j.at("header");
    if (h.at("version").get<int>() != kModelFormatVersion) {
      throw Error("bad_model", "unsupported model version " + h.at("version").dump());
    }
    const auto& tagset = h.at("tagset");
    if (tagset.size() != kTagCount) throw Error("bad_model", "model tag set must have 10 tags");
    for (std::size_t i = 0; i < kTagCount; ++i) {
      if (tagset[i].get<std::string>() != to_string(kAllTags[i])) throw Error("bad_model", "unexpected tag order");
    }
    m.template_version = h.at("template_version").get<std::string>();
    if (m.template_version != kFeatureTemplateVersion) {
      throw Error("bad_model", "model uses feature template " + m.template_version);
    }
    m.iterations = h.at("iterations").get<std::size_t>();
    m.seed = h.at("seed").get<std::uint64_t>();
    m.aggressiveness = h.value("aggressiveness", 1.0);
    const auto& trans = j.at("transitions");
    if (trans.size() != kTagCount) throw Error("bad_model", "transition matrix must be 10x10");
    for (std::size_t a = 0; a < kTagCount; ++a) {
      if (trans[a].size() != kTagCount) throw Error("bad_model", "transition matrix must be 10x10");
      for (std::size_t b = 0; b < kTagCount; ++b) m.transition[a][b] = trans[a][b].get<double>();
    }
    for (const auto& e : j.at("emissions")) {
      const auto id = m.intern(e.at("feature").get<std::string>());
      const auto& ws = e.at("weights");
      if (ws.size() != kTagCount) throw Error("bad_model", "emission rows must have 10 weights");
      for (std::size_t t = 0; t < kTagCount; ++t) m.emission(id)[t] = ws[t].get<double>();
    }
  } catch (const json::exception& e) {
    throw Error("bad_model", std::string("malformed model file: ") + e.what());
  }
  return m;
}

inline void save_model(const CrfModel& m, const std::string& path) {
  auto out = open_output(path);
  out << model_to_json(m).dump(1) << '\n';
}

inline CrfModel load_model(const std::string& path) { return model_from_json(read_json(path)); }

// ---- tagging -----------------------------------------------------------------------------

struct TagCorpusResult {
  Annotations spans;
  std::vector<std::pair<std::string, std::string>> failures;  // (doc id, reason)
};

// Per-span confidence: logistic of the score lost when the span is rewritten to O.
inline std::vector<Span> tag_document(const CrfModel& model, const Document& doc) {
  const auto em = model.emission_scores(doc);
  const auto tags = decode_lattice(em, model.transition);
  auto spans = tags_to_spans(tags, Provenance::model);
  const double best = lattice_score(em, model.transition, tags);
  for (auto& s : spans) {
    TagSequence alt = tags;
    for (std::size_t i = s.token_start; i < s.token_end; ++i) alt[i] = Tag::O;
    const double margin = best - lattice_score(em, model.transition, alt);
    s.confidence = 1.0 / (1.0 + std::exp(-margin));
  }
  return spans;
}

inline TagCorpusResult tag_corpus(const CrfModel& model, const std::vector<Document>& corpus) {
  TagCorpusResult out;
  for (const auto& doc : corpus) out.spans[doc.id] = tag_document(model, doc);
  return out;
}

// Out-of-process tagger. One JSON {doc_id, tokens} per line in, one JSON
// {doc_id, tags, confidence?} per line out.
class TaggerPlugin {
 public:
  explicit TaggerPlugin(const std::string& command) : proc_(command) {}

  std::vector<Span> tag(const Document& doc) {
    json req = {{"doc_id", doc.id}, {"tokens", json::array()}};
    for (const auto& t : doc.tokens) req["tokens"].push_back(t.surface);
    json reply;
    try {
      reply = json::parse(proc_.request(req.dump()));
    } catch (const json::exception& e) {
      throw Error("protocol_violation", std::string("tagger plugin sent invalid JSON: ") + e.what());
    }
    if (!reply.is_object() || reply.value("doc_id", std::string()) != doc.id) {
      throw Error("protocol_violation", "tagger plugin reply does not echo doc_id");
    }
    if (!reply.contains("tags") || !reply["tags"].is_array() || reply["tags"].size() != doc.tokens.size()) {
      throw Error("protocol_violation", "tagger plugin must return one tag per token");
    }
    TagSequence tags;
    for (const auto& t : reply["tags"]) {
      if (!t.is_string()) throw Error("protocol_violation", "tag must be a string");
      try {
        tags.push_back(tag_from(t.get<std::string>()));
      } catch (const Error& e) {
        throw Error("protocol_violation", e.what());
      }
    }
    auto spans = tags_to_spans(tags, Provenance::model);
    double conf = 1.0;
    if (reply.contains("confidence") && reply["confidence"].is_number()) {
      conf = std::clamp(reply["confidence"].get<double>(), 0.0, 1.0);
    }
    for (auto& s : spans) s.confidence = conf;
    return spans;
  }

 private:
  LineProcess proc_;
};

inline TagCorpusResult tag_corpus(TaggerPlugin& plugin, const std::vector<Document>& corpus) {
  TagCorpusResult out;
  for (const auto& doc : corpus) {
    try {
      out.spans[doc.id] = plugin.tag(doc);
    } catch (const std::exception& e) {
      out.failures.emplace_back(doc.id, e.what());
    }
  }
  return out;
}

}  // namespace distner
