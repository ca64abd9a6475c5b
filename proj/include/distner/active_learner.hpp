#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"
#include "distner/dictionary.hpp"
#include "distner/process.hpp"

namespace distner {

// ---- sampling ----------------------------------------------------------------------------

// Up to `per_year` documents per calendar year in [year_from, year_to], uniformly at random
// under the seed. Output keeps corpus order.
inline std::vector<std::size_t> sample_indices_by_year(const std::vector<Document>& corpus, std::size_t per_year,
                                                       int year_from, int year_to, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_year;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const int y = corpus[i].created_at.year;
    if (y >= year_from && y <= year_to) by_year[y].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> out;
  for (auto& [year, idx] : by_year) {
    if (idx.size() > per_year) {
      shuffle_in_place(idx, rng);
      idx.resize(per_year);
    }
    out.insert(out.end(), idx.begin(), idx.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<Document> sample_by_year(const std::vector<Document>& corpus, std::size_t per_year, int year_from,
                                            int year_to, std::uint64_t seed) {
  std::vector<Document> out;
  for (auto i : sample_indices_by_year(corpus, per_year, year_from, year_to, seed)) out.push_back(corpus[i]);
  return out;
}

// ---- mention providers -------------------------------------------------------------------

struct Mention {
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::string surface;
  double score = 0.0;
};

class MentionProvider {
 public:
  virtual ~MentionProvider() = default;
  virtual std::vector<Mention> mentions(const Document& doc) = 0;
};

// Replays a JSONL file of {doc_id, char_start, char_end, surface, score}.
class FixtureProvider : public MentionProvider {
 public:
  explicit FixtureProvider(const std::string& path) {
    for_each_jsonl(path, [&](const json& j, std::size_t) {
      Mention m;
      m.char_start = j.at("char_start").get<std::size_t>();
      m.char_end = j.at("char_end").get<std::size_t>();
      m.surface = j.at("surface").get<std::string>();
      m.score = j.value("score", 0.0);
      by_doc_[j.at("doc_id").get<std::string>()].push_back(std::move(m));
    });
  }

  explicit FixtureProvider(std::map<std::string, std::vector<Mention>> by_doc) : by_doc_(std::move(by_doc)) {}

  std::vector<Mention> mentions(const Document& doc) override {
    auto it = by_doc_.find(doc.id);
    return it == by_doc_.end() ? std::vector<Mention>{} : it->second;
  }

 private:
  std::map<std::string, std::vector<Mention>> by_doc_;
};

// Line protocol: {doc_id, text} in, {mentions: [{char_start, char_end, surface, score}]} out.
class ProcessMentionProvider : public MentionProvider {
 public:
  explicit ProcessMentionProvider(const std::string& command) : proc_(command) {}

  std::vector<Mention> mentions(const Document& doc) override {
    json reply;
    try {
      reply = json::parse(proc_.request(json{{"doc_id", doc.id}, {"text", doc.text}}.dump()));
      std::vector<Mention> out;
      for (const auto& j : reply.at("mentions")) {
        out.push_back(Mention{j.at("char_start").get<std::size_t>(), j.at("char_end").get<std::size_t>(),
                              j.at("surface").get<std::string>(), j.value("score", 0.0)});
      }
      return out;
    } catch (const json::exception& e) {
      throw Error("plugin_failure", std::string("mention provider reply is malformed: ") + e.what());
    }
  }

 private:
  LineProcess proc_;
};

// ---- candidates --------------------------------------------------------------------------

enum class CandidateState { pending, queued, labeled, rejected };

inline std::string_view to_string(CandidateState s) {
  switch (s) {
    case CandidateState::pending: return "pending";
    case CandidateState::queued: return "queued";
    case CandidateState::labeled: return "labeled";
    case CandidateState::rejected: return "rejected";
  }
  return "?";
}

struct Candidate {
  std::uint64_t id = 0;
  std::string doc_id;
  std::size_t token_start = 0;
  std::size_t token_end = 0;
  std::string surface;
  double provider_score = 0.0;
  std::optional<double> confidence;
  CandidateState state = CandidateState::pending;
  std::optional<EntityType> assigned_type;  // set exactly when labeled
  bool human_non_entity = false;            // rejected by a person rather than the classifier
  std::optional<std::string> labeler;
  std::uint64_t version = 0;
  std::optional<std::size_t> round;  // round in which it was classified

  Span span() const { return Span{token_start, token_end, assigned_type.value_or(EntityType::PKG), Provenance::human}; }
};

struct HarvestResult {
  std::vector<Candidate> candidates;
  std::vector<std::string> warnings;
};

// Maps a character range onto whole tokens; nullopt when the range cuts through a token.
inline std::optional<std::pair<std::size_t, std::size_t>> token_range(const Document& doc, std::size_t cb,
                                                                     std::size_t ce) {
  if (cb >= ce || ce > doc.text.size()) return std::nullopt;
  std::optional<std::size_t> first, last;
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    if (doc.tokens[i].char_start == cb) first = i;
    if (doc.tokens[i].char_end == ce) last = i;
  }
  if (!first || !last || *last < *first) return std::nullopt;
  return std::make_pair(*first, *last + 1);
}

// Provider mentions become pending candidates unless they overlap a Stage-1 span. Mentions
// that do not line up with tokens or whose surface disagrees with the text are skipped with
// a warning; repeated (doc, span) mentions keep the first.
inline HarvestResult harvest_candidates(const std::vector<Document>& docs, MentionProvider& provider,
                                        const Annotations& stage1, std::uint64_t first_id = 1) {
  HarvestResult r;
  std::uint64_t next_id = first_id;
  static const std::vector<Span> none;
  for (const auto& doc : docs) {
    std::vector<Mention> ms;
    try {
      ms = provider.mentions(doc);
    } catch (const std::exception& e) {
      r.warnings.push_back("document '" + doc.id + "' skipped: " + e.what());
      continue;
    }
    std::sort(ms.begin(), ms.end(), [](const Mention& a, const Mention& b) {
      return std::tie(a.char_start, a.char_end) < std::tie(b.char_start, b.char_end);
    });
    auto it = stage1.find(doc.id);
    const auto& taken = it == stage1.end() ? none : it->second;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& m : ms) {
      auto range = token_range(doc, m.char_start, m.char_end);
      if (!range) {
        r.warnings.push_back("document '" + doc.id + "': mention [" + std::to_string(m.char_start) + "," +
                             std::to_string(m.char_end) + ") does not align with tokens");
        continue;
      }
      if (doc.text.compare(m.char_start, m.char_end - m.char_start, m.surface) != 0) {
        r.warnings.push_back("document '" + doc.id + "': mention surface '" + m.surface + "' does not match the text");
        continue;
      }
      const Span probe{range->first, range->second, EntityType::PKG};
      if (std::any_of(taken.begin(), taken.end(), [&](const Span& s) { return s.overlaps(probe); })) continue;
      if (!seen.insert(*range).second) continue;
      Candidate c;
      c.id = next_id++;
      c.doc_id = doc.id;
      c.token_start = range->first;
      c.token_end = range->second;
      c.surface = m.surface;
      c.provider_score = m.score;
      r.candidates.push_back(std::move(c));
    }
  }
  return r;
}

// ---- entity / non-entity classifier ------------------------------------------------------

struct ClassifierExample {
  std::string surface;
  std::vector<std::string> left;   // nearest token last
  std::vector<std::string> right;  // nearest token first
};

inline ClassifierExample example_for(const Document& doc, std::size_t start, std::size_t end, std::size_t window = 3) {
  ClassifierExample ex;
  std::vector<std::string> parts;
  for (std::size_t i = start; i < end; ++i) parts.push_back(doc.tokens[i].surface);
  ex.surface = join(parts, " ");
  for (std::size_t i = start >= window ? start - window : 0; i < start; ++i) ex.left.push_back(to_lower(doc.tokens[i].surface));
  for (std::size_t i = end; i < std::min(doc.tokens.size(), end + window); ++i) ex.right.push_back(to_lower(doc.tokens[i].surface));
  return ex;
}

class EntityClassifier {
 public:
  virtual ~EntityClassifier() = default;
  virtual void train(const std::vector<ClassifierExample>& positives, const std::vector<ClassifierExample>& negatives,
                     std::uint64_t seed) = 0;
  // Probability that the example is an entity, in [0, 1].
  virtual double p_entity(const ClassifierExample& ex) = 0;
  virtual std::string name() const = 0;
};

struct LinearClassifierOptions {
  std::size_t dims = 1u << 18;
  std::size_t epochs = 12;
  double learning_rate = 0.2;
  double l2 = 1e-5;
};

// Logistic regression over hashed features: character 2-4 grams of the surface, word shape,
// and the words of the context window by relative position.
class LinearEntityClassifier : public EntityClassifier {
 public:
  explicit LinearEntityClassifier(LinearClassifierOptions opt = {}) : opt_(opt), w_(opt.dims, 0.0) {}

  std::string name() const override { return "linear"; }

  static std::vector<std::string> features(const ClassifierExample& ex) {
    std::vector<std::string> f;
    const std::string s = "^" + to_lower(ex.surface) + "$";
    for (std::size_t n = 2; n <= 4; ++n) {
      for (std::size_t i = 0; i + n <= s.size(); ++i) f.push_back("c" + std::to_string(n) + ":" + s.substr(i, n));
    }
    std::string shape;
    bool digit = false, hyphen = false, upper = false;
    for (char c : ex.surface) {
      char k = c >= 'A' && c <= 'Z' ? 'X' : c >= 'a' && c <= 'z' ? 'x' : is_ascii_digit(c) ? 'd' : c;
      digit |= is_ascii_digit(c);
      hyphen |= c == '-';
      upper |= c >= 'A' && c <= 'Z';
      if (shape.empty() || shape.back() != k) shape.push_back(k);
    }
    f.push_back("shape:" + shape);
    if (digit) f.emplace_back("has_digit");
    if (hyphen) f.emplace_back("has_hyphen");
    if (upper) f.emplace_back("has_upper");
    for (std::size_t i = 0; i < ex.left.size(); ++i) {
      f.push_back("l" + std::to_string(ex.left.size() - i) + ":" + ex.left[i]);
      f.push_back("ctx:" + ex.left[i]);
    }
    for (std::size_t i = 0; i < ex.right.size(); ++i) {
      f.push_back("r" + std::to_string(i + 1) + ":" + ex.right[i]);
      f.push_back("ctx:" + ex.right[i]);
    }
    f.emplace_back("bias");
    return f;
  }

  void train(const std::vector<ClassifierExample>& positives, const std::vector<ClassifierExample>& negatives,
             std::uint64_t seed) override {
    std::fill(w_.begin(), w_.end(), 0.0);
    struct Row {
      std::vector<std::size_t> idx;
      double y;
      double weight;
    };
    std::vector<Row> rows;
    // Balance the two classes so neither dominates the gradient.
    const double total = static_cast<double>(positives.size() + negatives.size());
    const double wp = positives.empty() ? 0.0 : total / (2.0 * static_cast<double>(positives.size()));
    const double wn = negatives.empty() ? 0.0 : total / (2.0 * static_cast<double>(negatives.size()));
    for (const auto& ex : positives) rows.push_back({hashed(ex), 1.0, wp});
    for (const auto& ex : negatives) rows.push_back({hashed(ex), 0.0, wn});
    if (rows.empty()) return;
    Rng rng(seed);
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < opt_.epochs; ++epoch) {
      shuffle_in_place(order, rng);
      const double lr = opt_.learning_rate / (1.0 + static_cast<double>(epoch));
      for (auto i : order) {
        const auto& r = rows[i];
        const double g = (sigmoid(dot(r.idx)) - r.y) * r.weight;
        for (auto k : r.idx) w_[k] -= lr * (g + opt_.l2 * w_[k]);
      }
    }
  }

  double p_entity(const ClassifierExample& ex) override { return sigmoid(dot(hashed(ex))); }

 private:
  static double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

  std::vector<std::size_t> hashed(const ClassifierExample& ex) const {
    std::vector<std::size_t> idx;
    for (const auto& f : features(ex)) idx.push_back(static_cast<std::size_t>(fnv1a(f) % opt_.dims));
    return idx;
  }

  double dot(const std::vector<std::size_t>& idx) const {
    double z = 0.0;
    for (auto k : idx) z += w_[k];
    return z;
  }

  LinearClassifierOptions opt_;
  std::vector<double> w_;
};

// Line protocol: {surface, left_context, right_context} in, {p_entity} out. Training is the
// plugin's own business.
class ProcessEntityClassifier : public EntityClassifier {
 public:
  explicit ProcessEntityClassifier(const std::string& command) : proc_(command) {}

  std::string name() const override { return "plugin:" + proc_.command(); }

  void train(const std::vector<ClassifierExample>&, const std::vector<ClassifierExample>&, std::uint64_t) override {}

  double p_entity(const ClassifierExample& ex) override {
    json req = {{"surface", ex.surface}, {"left_context", ex.left}, {"right_context", ex.right}};
    try {
      const auto reply = json::parse(proc_.request(req.dump()));
      const double p = reply.at("p_entity").get<double>();
      if (!(p >= 0.0 && p <= 1.0)) throw Error("plugin_failure", "p_entity outside [0, 1]");
      return p;
    } catch (const json::exception& e) {
      throw Error("plugin_failure", std::string("classifier reply is malformed: ") + e.what());
    }
  }

 private:
  LineProcess proc_;
};

struct QueueReport {
  std::size_t queued = 0;
  std::size_t rejected = 0;
};

// Confidence >= threshold queues the candidate, anything lower rejects it.
inline QueueReport classify_and_queue(std::vector<Candidate*>& cands, const std::vector<ClassifierExample>& examples,
                                      EntityClassifier& clf, double threshold) {
  QueueReport r;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    auto& c = *cands[i];
    c.confidence = std::clamp(clf.p_entity(examples[i]), 0.0, 1.0);
    if (*c.confidence >= threshold) {
      c.state = CandidateState::queued;
      ++r.queued;
    } else {
      c.state = CandidateState::rejected;
      ++r.rejected;
    }
  }
  return r;
}

// ---- merging -----------------------------------------------------------------------------

struct LabelDecision {
  bool entity = false;
  std::optional<EntityType> entity_type;

  bool operator==(const LabelDecision&) const = default;
};

struct LabeledCandidate {
  std::string doc_id;
  std::size_t token_start = 0;
  std::size_t token_end = 0;
  std::string surface;
  LabelDecision decision;
};

struct MergeReport {
  std::size_t spans_added = 0;
  std::size_t docs_added = 0;
  std::size_t overlap_skipped = 0;  // entity label overlapping an existing span of L
  AddReport dictionary;
  std::vector<LabeledCandidate> negatives;
};

// L ∪ d. Entity labels become spans in L (documents enter L when first covered) and
// (surface, type) pairs in the dictionary; non-entity labels are returned as negatives.
inline MergeReport merge_labels(LabeledDataset& L, const std::vector<LabeledCandidate>& d, Dictionary& dict,
                                const std::map<std::string, const Document*>& docs,
                                std::optional<Date> added_at = std::nullopt) {
  std::map<std::tuple<std::string, std::size_t, std::size_t>, LabelDecision> seen;
  for (const auto& c : d) {
    if (c.decision.entity && !c.decision.entity_type) throw Error("bad_label", "entity label without a type");
    auto [it, inserted] = seen.emplace(std::make_tuple(c.doc_id, c.token_start, c.token_end), c.decision);
    if (!inserted && !(it->second == c.decision)) {
      throw Error("conflict", "conflicting labels for '" + c.surface + "' in document '" + c.doc_id + "'");
    }
  }
  MergeReport r;
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < L.items.size(); ++i) position[L.items[i].doc.id] = i;
  std::vector<DictEntry> entries;
  std::set<std::tuple<std::string, std::size_t, std::size_t>> done;
  for (const auto& c : d) {
    if (!done.insert(std::make_tuple(c.doc_id, c.token_start, c.token_end)).second) continue;
    if (!c.decision.entity) {
      r.negatives.push_back(c);
      continue;
    }
    auto doc_it = docs.find(c.doc_id);
    if (doc_it == docs.end()) throw Error("unknown_document", "label refers to unknown document '" + c.doc_id + "'");
    const Document& doc = *doc_it->second;
    if (c.token_end > doc.tokens.size() || c.token_start >= c.token_end) {
      throw Error("invalid_span", "label span outside document '" + c.doc_id + "'");
    }
    auto pos = position.find(c.doc_id);
    if (pos == position.end()) {
      L.items.push_back(LabeledItem{doc, TagSequence(doc.tokens.size(), Tag::O)});
      pos = position.emplace(c.doc_id, L.items.size() - 1).first;
      ++r.docs_added;
    }
    auto& tags = L.items[pos->second].tags;
    bool clash = false;
    for (std::size_t i = c.token_start; i < c.token_end; ++i) clash |= tags[i] != Tag::O;
    if (clash) {
      ++r.overlap_skipped;
    } else {
      for (std::size_t i = c.token_start; i < c.token_end; ++i) tags[i] = tag_for(*c.decision.entity_type);
      ++r.spans_added;
    }
    entries.push_back(DictEntry{c.surface, *c.decision.entity_type, "active-learning", added_at.value_or(doc.created_at)});
  }
  r.dictionary = dict.add(entries);
  return r;
}

// ---- the loop ----------------------------------------------------------------------------

struct LoopConfig {
  std::size_t per_year = 100;
  int year_from = 2004;
  int year_to = 2019;
  double threshold = 0.5;
  std::optional<std::size_t> max_rounds;
  std::optional<std::size_t> max_human_labels;
  std::uint64_t seed = 0;
  std::size_t context_window = 3;
  std::size_t negatives_per_positive = 3;
  std::optional<Date> added_at;  // dictionary date for merged entries; the document date otherwise
};

enum class LoopStatus { labeling, awaiting_labels, stopped };

inline std::string_view to_string(LoopStatus s) {
  switch (s) {
    case LoopStatus::labeling: return "labeling";
    case LoopStatus::awaiting_labels: return "awaiting_labels";
    case LoopStatus::stopped: return "stopped";
  }
  return "?";
}

struct LabelResult {
  int http_status = 200;  // 200 ok, 400 bad request, 404 unknown, 409 conflict
  std::string message;
  std::optional<Candidate> candidate;
  bool replay = false;  // an identical label was already applied
};

// Stage-2b loop state. Each round samples documents that still hold pending candidates,
// retrains the classifier from scratch on L, queues candidates at or above the threshold and
// waits for labels; advance() merges the round and opens the next one.
class ActiveLearner {
 public:
  ActiveLearner(std::vector<Document> corpus, const LabeledDataset& silver, Dictionary dict, MentionProvider& provider,
                std::unique_ptr<EntityClassifier> classifier, LoopConfig cfg)
      : corpus_(std::move(corpus)), dict_(std::move(dict)), clf_(std::move(classifier)), cfg_(std::move(cfg)) {
    if (!clf_) throw Error("bad_option", "a classifier is required");
    if (!(cfg_.threshold >= 0.0 && cfg_.threshold <= 1.0)) throw Error("bad_option", "threshold must lie in [0, 1]");
    for (const auto& d : corpus_) {
      if (!by_id_.emplace(d.id, &d).second) throw Error("duplicate_id", "duplicate document id '" + d.id + "'");
    }
    L_.name = "L";
    Annotations stage1;
    for (const auto& item : silver.items) {
      auto spans = tags_to_spans(item.tags);
      if (!spans.empty()) {
        L_.items.push_back(item);
        stage1[item.doc.id] = std::move(spans);
      }
    }
    // The pool comes from documents the sampler can ever reach.
    std::vector<Document> reachable;
    for (const auto& d : corpus_) {
      if (d.created_at.year >= cfg_.year_from && d.created_at.year <= cfg_.year_to) reachable.push_back(d);
    }
    auto harvest = harvest_candidates(reachable, provider, stage1);
    pool_ = std::move(harvest.candidates);
    warnings_ = std::move(harvest.warnings);
    for (std::size_t i = 0; i < pool_.size(); ++i) index_[pool_[i].id] = i;
    initial_dict_size_ = dict_.size();
    begin_round();
  }

  // ---- queries ----
  std::size_t round() const { return round_; }
  LoopStatus status() const { return status_; }
  const std::optional<std::string>& stop_reason() const { return stop_reason_; }
  bool stopped() const { return status_ == LoopStatus::stopped; }
  const Dictionary& dictionary() const { return dict_; }
  const LabeledDataset& labeled() const { return L_; }
  const std::vector<Candidate>& pool() const { return pool_; }
  const std::vector<json>& audit() const { return audit_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const LoopConfig& config() const { return cfg_; }
  std::size_t human_labels() const { return human_labels_; }

  const Candidate* find(std::uint64_t id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &pool_[it->second];
  }

  const Document& document(const std::string& id) const { return *by_id_.at(id); }

  std::size_t count(CandidateState s) const {
    return static_cast<std::size_t>(
        std::count_if(pool_.begin(), pool_.end(), [&](const Candidate& c) { return c.state == s; }));
  }

  // Queued candidates of the current round in id order.
  std::vector<const Candidate*> queue() const {
    std::vector<const Candidate*> out;
    for (const auto& c : pool_) {
      if (c.state == CandidateState::queued) out.push_back(&c);
    }
    return out;
  }

  json progress() const {
    json j = {{"round", round_},
              {"status", to_string(status_)},
              {"pool", count(CandidateState::pending)},
              {"queued", count(CandidateState::queued)},
              {"labeled", count(CandidateState::labeled)},
              {"rejected", count(CandidateState::rejected)},
              {"human_labels", human_labels_},
              {"dict_size", dict_.size()},
              {"dict_delta", static_cast<long long>(dict_.size()) - static_cast<long long>(initial_dict_size_)},
              {"dict_counts", counts_to_json(dict_.counts())},
              {"labeled_docs", L_.items.size()}};
    j["stop_reason"] = stop_reason_ ? json(*stop_reason_) : json(nullptr);
    return j;
  }

  json candidate_json(const Candidate& c) const {
    const auto& doc = document(c.doc_id);
    const auto ex = example_for(doc, c.token_start, c.token_end, cfg_.context_window);
    json j = {{"candidate_id", c.id},
              {"version", c.version},
              {"doc_id", c.doc_id},
              {"token_start", c.token_start},
              {"token_end", c.token_end},
              {"char_start", doc.tokens[c.token_start].char_start},
              {"char_end", doc.tokens[c.token_end - 1].char_end},
              {"surface", c.surface},
              {"text", doc.text},
              {"left_context", ex.left},
              {"right_context", ex.right},
              {"provider_score", c.provider_score},
              {"state", to_string(c.state)}};
    j["classifier_confidence"] = c.confidence ? json(*c.confidence) : json(nullptr);
    j["entity_type"] = c.assigned_type ? json(std::string(to_string(*c.assigned_type))) : json(nullptr);
    j["labeler"] = c.labeler ? json(*c.labeler) : json(nullptr);
    return j;
  }

  // ---- labeling ----

  // Version-checked label. A repeat of an already applied label (same version, same decision)
  // succeeds again without changing anything.
  // Outcome of submit_label without touching any state.
  LabelResult check_label(std::uint64_t id, std::uint64_t version, const LabelDecision& decision,
                          const std::string& annotator) const {
    auto it = index_.find(id);
    if (it == index_.end()) return {404, "unknown candidate", std::nullopt, false};
    if (decision.entity && !decision.entity_type) return {400, "entity decision requires entity_type", std::nullopt, false};
    if (!decision.entity && decision.entity_type) return {400, "non-entity decision must not carry a type", std::nullopt, false};
    const Candidate& c = pool_[it->second];
    auto last = last_decision_.find(id);
    if (version + 1 == c.version && c.labeler && *c.labeler == annotator && last != last_decision_.end() &&
        last->second == decision) {
      return {200, "already applied", c, true};
    }
    if (c.state != CandidateState::queued) return {409, "candidate is not queued", c, false};
    if (version != c.version) return {409, "stale version", c, false};
    if (cfg_.max_human_labels && human_labels_ >= *cfg_.max_human_labels) return {409, "label budget exhausted", c, false};
    return {200, "ok", c, false};
  }

  LabelResult submit_label(std::uint64_t id, std::uint64_t version, const LabelDecision& decision,
                           const std::string& annotator) {
    auto r = check_label(id, version, decision, annotator);
    if (r.http_status != 200 || r.replay) return r;
    Candidate& c = pool_[index_.at(id)];
    if (decision.entity) {
      c.state = CandidateState::labeled;
      c.assigned_type = decision.entity_type;
    } else {
      c.state = CandidateState::rejected;
      c.human_non_entity = true;
      blocked_.insert(to_lower(c.surface));
    }
    c.labeler = annotator;
    ++c.version;
    ++human_labels_;
    last_decision_[id] = decision;
    round_labels_.push_back(id);
    r.candidate = c;
    return r;
  }

  // Why advance() would fail right now, if it would.
  std::optional<std::string> advance_blocker() const {
    if (stopped()) return "the loop has stopped: " + stop_reason_.value_or("");
    if (count(CandidateState::queued) > 0) return std::string("the labeling queue has not drained");
    return std::nullopt;
  }

  // Merges the finished round and opens the next one. Fails while candidates are queued.
  void advance() {
    if (stopped()) throw Error("stopped", "the loop has stopped: " + stop_reason_.value_or(""));
    if (count(CandidateState::queued) > 0) throw Error("queue_not_empty", "the labeling queue has not drained");
    std::vector<LabeledCandidate> d;
    for (auto id : round_labels_) {
      const auto& c = pool_[index_.at(id)];
      d.push_back(LabeledCandidate{c.doc_id, c.token_start, c.token_end, c.surface,
                                   LabelDecision{c.assigned_type.has_value(), c.assigned_type}});
    }
    const std::size_t dict_before = dict_.size();
    const std::size_t L_before = L_.items.size();
    auto merged = merge_labels(L_, d, dict_, by_id_, cfg_.added_at);
    for (const auto& n : merged.negatives) {
      negatives_.push_back(example_for(document(n.doc_id), n.token_start, n.token_end, cfg_.context_window));
    }
    std::size_t entity_labels = 0;
    for (const auto& x : d) entity_labels += x.decision.entity;
    json line = {{"round", round_},
                 {"pool_before", round_stats_.pool_before},
                 {"sampled_docs", round_stats_.sampled_docs},
                 {"batch", round_stats_.batch},
                 {"queued", round_stats_.queued},
                 {"rejected", round_stats_.rejected},
                 {"blocked", round_stats_.blocked},
                 {"labeled_entity", entity_labels},
                 {"labeled_non_entity", d.size() - entity_labels},
                 {"dict_size", dict_.size()},
                 {"dict_delta", dict_.size() - dict_before},
                 {"L_size", L_.items.size()},
                 {"L_delta", L_.items.size() - L_before},
                 {"overlap_skipped", merged.overlap_skipped},
                 {"classifier", clf_->name()}};
    audit_.push_back(line);
    if (audit_sink_) *audit_sink_ << line.dump() << '\n' << std::flush;
    round_labels_.clear();
    ++round_;
    begin_round();
  }

  // Every audit line is also written to `out` as it is produced.
  void set_audit_sink(std::ostream* out) {
    audit_sink_ = out;
    if (out) {
      for (const auto& l : audit_) *out << l.dump() << '\n';
      out->flush();
    }
  }

  void park() {
    if (!stopped()) status_ = LoopStatus::awaiting_labels;
  }
  void resume() {
    if (status_ == LoopStatus::awaiting_labels) status_ = LoopStatus::labeling;
  }

 private:
  struct RoundStats {
    std::size_t pool_before = 0;
    std::size_t sampled_docs = 0;
    std::size_t batch = 0;
    std::size_t queued = 0;
    std::size_t rejected = 0;
    std::size_t blocked = 0;
  };

  void stop(std::string reason) {
    status_ = LoopStatus::stopped;
    stop_reason_ = std::move(reason);
  }

  void begin_round() {
    round_stats_ = {};
    status_ = LoopStatus::labeling;
    const std::size_t pending = count(CandidateState::pending);
    if (pending == 0) return stop("pool_exhausted");
    if (cfg_.max_rounds && round_ >= *cfg_.max_rounds) return stop("budget");
    if (cfg_.max_human_labels && human_labels_ >= *cfg_.max_human_labels) return stop("budget");
    round_stats_.pool_before = pending;

    std::set<std::string> pending_docs;
    for (const auto& c : pool_) {
      if (c.state == CandidateState::pending) pending_docs.insert(c.doc_id);
    }
    std::vector<Document> eligible;
    for (const auto& d : corpus_) {
      if (pending_docs.count(d.id)) eligible.push_back(d);
    }
    const auto sampled = sample_by_year(eligible, cfg_.per_year, cfg_.year_from, cfg_.year_to, cfg_.seed + round_);
    round_stats_.sampled_docs = sampled.size();
    std::set<std::string> sampled_ids;
    for (const auto& d : sampled) sampled_ids.insert(d.id);

    train_classifier();

    std::vector<Candidate*> batch;
    std::vector<ClassifierExample> examples;
    for (auto& c : pool_) {
      if (c.state != CandidateState::pending || !sampled_ids.count(c.doc_id)) continue;
      c.round = round_;
      if (blocked_.count(to_lower(c.surface))) {
        // A person already called this surface a non-entity.
        c.state = CandidateState::rejected;
        ++round_stats_.blocked;
        continue;
      }
      batch.push_back(&c);
      examples.push_back(example_for(document(c.doc_id), c.token_start, c.token_end, cfg_.context_window));
    }
    round_stats_.batch = batch.size() + round_stats_.blocked;
    const auto q = classify_and_queue(batch, examples, *clf_, cfg_.threshold);
    round_stats_.queued = q.queued;
    round_stats_.rejected = q.rejected;
  }

  // Positives are the spans of L; negatives are human non-entity labels plus O tokens of L
  // sampled under the round seed.
  void train_classifier() {
    std::vector<ClassifierExample> pos;
    std::vector<std::pair<std::size_t, std::size_t>> o_tokens;  // (item, token)
    for (std::size_t k = 0; k < L_.items.size(); ++k) {
      const auto& item = L_.items[k];
      for (const auto& s : tags_to_spans(item.tags)) {
        pos.push_back(example_for(item.doc, s.token_start, s.token_end, cfg_.context_window));
      }
      for (std::size_t i = 0; i < item.tags.size(); ++i) {
        const auto& surf = item.doc.tokens[i].surface;
        if (item.tags[i] == Tag::O && !(surf.size() == 1 && is_ascii_punct(surf[0]))) o_tokens.emplace_back(k, i);
      }
    }
    Rng rng(cfg_.seed * 1000003ULL + round_);
    shuffle_in_place(o_tokens, rng);
    const std::size_t want = std::min(o_tokens.size(), pos.size() * cfg_.negatives_per_positive);
    std::vector<ClassifierExample> neg = negatives_;
    for (std::size_t j = 0; j < want; ++j) {
      const auto [k, i] = o_tokens[j];
      neg.push_back(example_for(L_.items[k].doc, i, i + 1, cfg_.context_window));
    }
    clf_->train(pos, neg, cfg_.seed + round_);
  }

  std::vector<Document> corpus_;
  std::map<std::string, const Document*> by_id_;
  Dictionary dict_;
  std::unique_ptr<EntityClassifier> clf_;
  LoopConfig cfg_;

  LabeledDataset L_;
  std::vector<Candidate> pool_;
  std::map<std::uint64_t, std::size_t> index_;
  std::vector<std::string> warnings_;
  std::vector<ClassifierExample> negatives_;
  std::set<std::string> blocked_;
  std::map<std::uint64_t, LabelDecision> last_decision_;
  std::vector<std::uint64_t> round_labels_;
  std::vector<json> audit_;
  std::ostream* audit_sink_ = nullptr;

  std::size_t round_ = 0;
  std::size_t human_labels_ = 0;
  std::size_t initial_dict_size_ = 0;
  LoopStatus status_ = LoopStatus::labeling;
  std::optional<std::string> stop_reason_;
  RoundStats round_stats_;
};

// ---- annotators --------------------------------------------------------------------------

class Annotator {
 public:
  virtual ~Annotator() = default;
  // nullopt: no answer available right now.
  virtual std::optional<LabelDecision> label(const Candidate& c, const Document& doc) = 0;
  virtual std::string id() const = 0;
};

// Answers from a JSONL script of {surface, entity_type|null}; surfaces compare case-insensitively.
class ScriptedAnnotator : public Annotator {
 public:
  explicit ScriptedAnnotator(const std::string& path) {
    for_each_jsonl(path, [&](const json& j, std::size_t) {
      const auto surface = to_lower(j.at("surface").get<std::string>());
      const auto& t = j.at("entity_type");
      answers_[surface] = t.is_null() ? LabelDecision{false, std::nullopt}
                                      : LabelDecision{true, entity_type_from(t.get<std::string>())};
    });
  }

  explicit ScriptedAnnotator(std::map<std::string, std::optional<EntityType>> answers) {
    for (const auto& [s, t] : answers) answers_[to_lower(s)] = LabelDecision{t.has_value(), t};
  }

  std::optional<LabelDecision> label(const Candidate& c, const Document&) override {
    auto it = answers_.find(to_lower(c.surface));
    if (it == answers_.end()) return std::nullopt;
    return it->second;
  }

  std::string id() const override { return "scripted"; }

 private:
  std::map<std::string, LabelDecision> answers_;
};

// Drives the loop with an in-process annotator until it stops or the annotator has no answer.
inline LoopStatus run_loop(ActiveLearner& learner, Annotator& annotator,
                           const std::function<void(const ActiveLearner&)>& after_round = {}) {
  learner.resume();
  while (!learner.stopped()) {
    for (const Candidate* c : learner.queue()) {
      auto decision = annotator.label(*c, learner.document(c->doc_id));
      if (!decision) {
        learner.park();
        return learner.status();
      }
      auto r = learner.submit_label(c->id, c->version, *decision, annotator.id());
      if (r.http_status != 200) throw Error("label_rejected", r.message);
    }
    learner.advance();
    if (after_round) after_round(learner);
  }
  return learner.status();
}

}  // namespace distner
