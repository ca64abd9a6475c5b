#pragma once

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"
#include "distner/crf_tagger.hpp"
#include "distner/evaluator.hpp"
#include "distner/process.hpp"

namespace distner {

enum class RelationType : std::uint8_t { dependency, affected_versions, cause_and_effect, interaction_control };

inline constexpr std::size_t kRelationCount = 4;
inline constexpr std::array<RelationType, kRelationCount> kAllRelations = {
    RelationType::dependency, RelationType::affected_versions, RelationType::cause_and_effect,
    RelationType::interaction_control};

inline std::string_view to_string(RelationType r) {
  switch (r) {
    case RelationType::dependency: return "dependency";
    case RelationType::affected_versions: return "affected_versions";
    case RelationType::cause_and_effect: return "cause_and_effect";
    case RelationType::interaction_control: return "interaction_control";
  }
  return "?";
}

// nullopt for "conflict", which is recognized but never used.
inline std::optional<RelationType> relation_from(std::string_view s) {
  for (auto r : kAllRelations) {
    if (to_string(r) == s) return r;
  }
  if (s == "conflict") return std::nullopt;
  throw Error("unknown_relation", "unknown relation type '" + std::string(s) + "'");
}

struct Triplet {
  std::string doc_id;
  Span head;
  Span tail;
  RelationType relation = RelationType::dependency;
  std::optional<std::string> annotator;
};

struct TripletSet {
  std::vector<Triplet> triplets;
  std::size_t conflicts_dropped = 0;
};

inline Span relation_span_from_json(const json& j) {
  Span s;
  s.token_start = j.at("start").get<std::size_t>();
  s.token_end = j.at("end").get<std::size_t>();
  s.entity_type = entity_type_from(j.at("type").get<std::string>());
  s.provenance = Provenance::human;
  if (s.token_end <= s.token_start) throw Error("invalid_span", "span end must exceed start");
  return s;
}

inline json relation_span_to_json(const Span& s) {
  return {{"start", s.token_start}, {"end", s.token_end}, {"type", to_string(s.entity_type)}};
}

inline void add_triplet_json(TripletSet& out, const json& j) {
  auto rel = relation_from(j.at("relation").get<std::string>());
  if (!rel) {
    ++out.conflicts_dropped;
    return;
  }
  Triplet t{j.at("doc_id").get<std::string>(), relation_span_from_json(j.at("head")),
            relation_span_from_json(j.at("tail")), *rel, std::nullopt};
  if (j.contains("annotator") && j["annotator"].is_string()) t.annotator = j["annotator"].get<std::string>();
  out.triplets.push_back(std::move(t));
}

inline TripletSet read_triplets(const std::string& path) {
  TripletSet out;
  for_each_jsonl(path, [&](const json& j, std::size_t) { add_triplet_json(out, j); });
  return out;
}

inline json triplet_to_json(const Triplet& t) {
  json j = {{"doc_id", t.doc_id},
            {"head", relation_span_to_json(t.head)},
            {"tail", relation_span_to_json(t.tail)},
            {"relation", to_string(t.relation)}};
  if (t.annotator) j["annotator"] = *t.annotator;
  return j;
}

inline void check_triplet(const Triplet& t, const Document& doc) {
  for (const Span* s : {&t.head, &t.tail}) {
    if (s->token_end <= s->token_start || s->token_end > doc.tokens.size()) {
      throw Error("invalid_span", "triplet span outside document '" + doc.id + "'");
    }
  }
  if (t.head.token_start == t.tail.token_start && t.head.token_end == t.tail.token_end) {
    throw Error("invalid_span", "head and tail are the same span in document '" + doc.id + "'");
  }
}

// ---- entity encoders ---------------------------------------------------------------------

class EntityEncoder {
 public:
  virtual ~EntityEncoder() = default;
  virtual std::string mode() const = 0;
  virtual std::size_t dims() const = 0;
  virtual std::vector<double> encode(const Document& doc, const Span& span) = 0;
  // Whether pair vectors include the entity-type pair one-hot.
  virtual bool uses_types() const { return true; }
};

inline void check_span(const Document& doc, const Span& s) {
  if (s.token_end <= s.token_start || s.token_end > doc.tokens.size()) {
    throw Error("invalid_span", "span [" + std::to_string(s.token_start) + "," + std::to_string(s.token_end) +
                                    ") outside document '" + doc.id + "'");
  }
}

// Averaged emission rows of the tagger: one block over the span tokens and one over the
// surrounding window.
class NativeCrfEncoder : public EntityEncoder {
 public:
  explicit NativeCrfEncoder(const CrfModel& model, std::size_t window = 2) : model_(model), window_(window) {}

  std::string mode() const override { return "native-crf"; }
  std::size_t dims() const override { return 2 * kTagCount; }

  std::vector<double> encode(const Document& doc, const Span& s) override {
    check_span(doc, s);
    if (cached_doc_ != &doc || cached_id_ != doc.id) {
      cache_ = model_.emission_scores(doc);
      cached_doc_ = &doc;
      cached_id_ = doc.id;
    }
    std::vector<double> v(dims(), 0.0);
    for (std::size_t i = s.token_start; i < s.token_end; ++i) {
      for (std::size_t t = 0; t < kTagCount; ++t) v[t] += cache_[i][t];
    }
    for (std::size_t t = 0; t < kTagCount; ++t) v[t] /= static_cast<double>(s.length());
    std::size_t n_ctx = 0;
    const std::size_t lo = s.token_start >= window_ ? s.token_start - window_ : 0;
    const std::size_t hi = std::min(doc.tokens.size(), s.token_end + window_);
    for (std::size_t i = lo; i < hi; ++i) {
      if (i >= s.token_start && i < s.token_end) continue;
      for (std::size_t t = 0; t < kTagCount; ++t) v[kTagCount + t] += cache_[i][t];
      ++n_ctx;
    }
    if (n_ctx) {
      for (std::size_t t = 0; t < kTagCount; ++t) v[kTagCount + t] /= static_cast<double>(n_ctx);
    }
    return v;
  }

 private:
  const CrfModel& model_;
  std::size_t window_;
  const Document* cached_doc_ = nullptr;
  std::string cached_id_;
  std::vector<TagWeights> cache_;
};

// Ablation: hashed bag of lowercased words of the span and its window, without entity types.
class BagOfWordsEncoder : public EntityEncoder {
 public:
  explicit BagOfWordsEncoder(std::size_t window = 2) : window_(window) {}

  std::string mode() const override { return "bow"; }
  std::size_t dims() const override { return 32; }
  bool uses_types() const override { return false; }

  std::vector<double> encode(const Document& doc, const Span& s) override {
    check_span(doc, s);
    std::vector<double> v(dims(), 0.0);
    const std::size_t lo = s.token_start >= window_ ? s.token_start - window_ : 0;
    const std::size_t hi = std::min(doc.tokens.size(), s.token_end + window_);
    for (std::size_t i = lo; i < hi; ++i) v[fnv1a(to_lower(doc.tokens[i].surface)) % dims()] += 1.0;
    return v;
  }

 private:
  std::size_t window_;
};

// Line protocol: {doc_id, tokens, start, end} in, {vector} out; the vector length is fixed
// by the declared dimensionality.
class ProcessEntityEncoder : public EntityEncoder {
 public:
  ProcessEntityEncoder(const std::string& command, std::size_t dims) : proc_(command), dims_(dims) {}

  std::string mode() const override { return "plugin"; }
  std::size_t dims() const override { return dims_; }

  std::vector<double> encode(const Document& doc, const Span& s) override {
    check_span(doc, s);
    json req = {{"doc_id", doc.id}, {"tokens", json::array()}, {"start", s.token_start}, {"end", s.token_end}};
    for (const auto& t : doc.tokens) req["tokens"].push_back(t.surface);
    try {
      auto v = json::parse(proc_.request(req.dump())).at("vector").get<std::vector<double>>();
      if (v.size() != dims_) {
        throw Error("plugin_failure", "encoder returned " + std::to_string(v.size()) + " dimensions, expected " +
                                          std::to_string(dims_));
      }
      return v;
    } catch (const json::exception& e) {
      throw Error("plugin_failure", std::string("encoder reply is malformed: ") + e.what());
    }
  }

 private:
  LineProcess proc_;
  std::size_t dims_;
};

// ---- pair features -----------------------------------------------------------------------

inline std::size_t pair_feature_dims(const EntityEncoder& enc) {
  return 2 * enc.dims() + 2 + (enc.uses_types() ? kEntityTypeCount * kEntityTypeCount : 0);
}

// [head | tail | distance, order | type-pair one-hot]
inline std::vector<double> featurize_pair(const Document& doc, const Span& head, const Span& tail,
                                          EntityEncoder& enc) {
  check_span(doc, head);
  check_span(doc, tail);
  auto v = enc.encode(doc, head);
  auto t = enc.encode(doc, tail);
  v.insert(v.end(), t.begin(), t.end());
  const double hs = static_cast<double>(head.token_start), ts = static_cast<double>(tail.token_start);
  v.push_back(std::abs(ts - hs));
  v.push_back(head.token_start <= tail.token_start ? 1.0 : -1.0);
  if (enc.uses_types()) {
    std::vector<double> onehot(kEntityTypeCount * kEntityTypeCount, 0.0);
    onehot[static_cast<std::size_t>(head.entity_type) * kEntityTypeCount + static_cast<std::size_t>(tail.entity_type)] = 1.0;
    v.insert(v.end(), onehot.begin(), onehot.end());
  }
  return v;
}

// ---- classifier --------------------------------------------------------------------------

struct RelationModel {
  std::string encoder_mode;
  std::size_t dims = 0;
  std::vector<double> mean, scale;                      // standardization
  std::array<std::vector<double>, kRelationCount> w;    // per class, dims + bias
  std::size_t train_size = 0;

  static RelationModel zero(const std::string& mode, std::size_t dims) {
    RelationModel m;
    m.encoder_mode = mode;
    m.dims = dims;
    m.mean.assign(dims, 0.0);
    m.scale.assign(dims, 1.0);
    for (auto& row : m.w) row.assign(dims + 1, 0.0);
    return m;
  }

  std::array<double, kRelationCount> scores(const std::vector<double>& x) const {
    std::array<double, kRelationCount> z{};
    for (std::size_t c = 0; c < kRelationCount; ++c) {
      double s = w[c][dims];
      for (std::size_t k = 0; k < dims; ++k) s += w[c][k] * (x[k] - mean[k]) / scale[k];
      z[c] = s;
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) sum += v = std::exp(v - mx);
    for (auto& v : z) v /= sum;
    return z;
  }

  json to_json() const {
    json j = {{"encoder_mode", encoder_mode}, {"dims", dims}, {"mean", mean}, {"scale", scale},
              {"train_size", train_size}, {"weights", json::object()}};
    for (auto r : kAllRelations) j["weights"][std::string(to_string(r))] = w[static_cast<std::size_t>(r)];
    return j;
  }

  static RelationModel from_json(const json& j) {
    RelationModel m = zero(j.at("encoder_mode").get<std::string>(), j.at("dims").get<std::size_t>());
    m.mean = j.at("mean").get<std::vector<double>>();
    m.scale = j.at("scale").get<std::vector<double>>();
    m.train_size = j.value("train_size", std::size_t{0});
    for (auto r : kAllRelations) m.w[static_cast<std::size_t>(r)] = j.at("weights").at(std::string(to_string(r))).get<std::vector<double>>();
    if (m.mean.size() != m.dims || m.scale.size() != m.dims) throw Error("bad_model", "relation model dimensions disagree");
    for (const auto& row : m.w) {
      if (row.size() != m.dims + 1) throw Error("bad_model", "relation model dimensions disagree");
    }
    return m;
  }
};

struct RelationTrainOptions {
  double train_fraction = 0.03;
  std::uint64_t seed = 0;
  std::size_t epochs = 400;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

struct RelationTrainResult {
  RelationModel model;
  std::vector<std::size_t> train_indices;  // into the triplet vector
  std::vector<std::size_t> held_out_indices;
};

using DocumentIndex = std::map<std::string, const Document*>;

inline DocumentIndex index_documents(const std::vector<Document>& docs) {
  DocumentIndex idx;
  for (const auto& d : docs) idx[d.id] = &d;
  return idx;
}

inline const Document& document_for(const DocumentIndex& docs, const std::string& id) {
  auto it = docs.find(id);
  if (it == docs.end()) throw Error("unknown_document", "triplet refers to unknown document '" + id + "'");
  return *it->second;
}

// Per class: shuffle under the seed and take round(fraction * n_c) triplets for training.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_slice(
    const std::vector<Triplet>& triplets, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("bad_option", "train fraction must lie in (0, 1]");
  std::array<std::vector<std::size_t>, kRelationCount> by_class;
  for (std::size_t i = 0; i < triplets.size(); ++i) by_class[static_cast<std::size_t>(triplets[i].relation)].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> train, rest;
  for (auto r : kAllRelations) {
    auto& idx = by_class[static_cast<std::size_t>(r)];
    shuffle_in_place(idx, rng);
    const auto take = std::min<std::size_t>(idx.size(), static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    if (take == 0) {
      throw Error("class_missing", "no '" + std::string(to_string(r)) + "' triplet in the training slice (" +
                                       std::to_string(idx.size()) + " available); use a larger train fraction");
    }
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    rest.insert(rest.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(rest.begin(), rest.end());
  return {train, rest};
}

// Multinomial logistic regression, full-batch gradient descent on standardized features.
inline RelationModel fit_softmax(const std::vector<std::vector<double>>& X, const std::vector<RelationType>& y,
                                 const std::string& mode, const RelationTrainOptions& opt) {
  const std::size_t n = X.size(), d = X.empty() ? 0 : X[0].size();
  RelationModel m = RelationModel::zero(mode, d);
  m.train_size = n;
  if (n == 0) return m;
  for (std::size_t k = 0; k < d; ++k) {
    double mu = 0.0;
    for (const auto& x : X) mu += x[k];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& x : X) var += (x[k] - mu) * (x[k] - mu);
    var /= static_cast<double>(n);
    m.mean[k] = mu;
    m.scale[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  std::vector<std::vector<double>> Z(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) Z[i][k] = (X[i][k] - m.mean[k]) / m.scale[k];
  }
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::array<std::vector<double>, kRelationCount> grad;
    for (auto& g : grad) g.assign(d + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = m.scores(X[i]);  // standardizes internally
      for (std::size_t c = 0; c < kRelationCount; ++c) {
        const double err = p[c] - (static_cast<std::size_t>(y[i]) == c ? 1.0 : 0.0);
        for (std::size_t k = 0; k < d; ++k) grad[c][k] += err * Z[i][k];
        grad[c][d] += err;
      }
    }
    for (std::size_t c = 0; c < kRelationCount; ++c) {
      for (std::size_t k = 0; k <= d; ++k) {
        const double reg = k < d ? opt.l2 * m.w[c][k] : 0.0;
        m.w[c][k] -= opt.learning_rate * (grad[c][k] / static_cast<double>(n) + reg);
      }
    }
  }
  return m;
}

inline RelationTrainResult train_relation_clf(const std::vector<Triplet>& triplets, const DocumentIndex& docs,
                                              EntityEncoder& enc, const RelationTrainOptions& opt = {}) {
  auto [train, rest] = stratified_slice(triplets, opt.train_fraction, opt.seed);
  std::vector<std::vector<double>> X;
  std::vector<RelationType> y;
  for (auto i : train) {
    const auto& t = triplets[i];
    const auto& doc = document_for(docs, t.doc_id);
    check_triplet(t, doc);
    X.push_back(featurize_pair(doc, t.head, t.tail, enc));
    y.push_back(t.relation);
  }
  RelationTrainResult r{fit_softmax(X, y, enc.mode(), opt), std::move(train), std::move(rest)};
  return r;
}

struct RelationPrediction {
  RelationType relation = RelationType::dependency;
  std::array<double, kRelationCount> scores{};
};

inline RelationPrediction classify_triplet(const RelationModel& model, const Document& doc, const Span& head,
                                           const Span& tail, EntityEncoder& enc) {
  if (model.encoder_mode != enc.mode()) {
    throw Error("encoder_mismatch", "model was trained with encoder '" + model.encoder_mode + "', not '" + enc.mode() + "'");
  }
  const auto x = featurize_pair(doc, head, tail, enc);
  if (x.size() != model.dims) throw Error("encoder_mismatch", "feature dimensionality differs from the model");
  RelationPrediction p;
  p.scores = model.scores(x);
  std::size_t best = 0;
  for (std::size_t c = 1; c < kRelationCount; ++c) {
    if (p.scores[c] > p.scores[best]) best = c;  // strict: earlier class wins ties
  }
  p.relation = kAllRelations[best];
  return p;
}

struct RelationReport {
  std::size_t n = 0;
  double accuracy = 1.0;  // 1 on an empty set
  std::array<ClassScores, kRelationCount> per_class{};
  double macro_f1 = 1.0;

  json to_json() const {
    json c = json::object();
    for (auto r : kAllRelations) {
      const auto& s = per_class[static_cast<std::size_t>(r)];
      c[std::string(to_string(r))] = {{"gold", s.gold}, {"predicted", s.predicted}, {"matched", s.matched},
                                      {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    }
    return {{"n", n}, {"accuracy", accuracy}, {"macro_f1", macro_f1}, {"per_class", c}};
  }
};

inline RelationReport evaluate_relations(const RelationModel& model, const std::vector<Triplet>& triplets,
                                         const DocumentIndex& docs, EntityEncoder& enc) {
  std::array<std::size_t, kRelationCount> gold{}, pred{}, hit{};
  RelationReport r;
  for (const auto& t : triplets) {
    const auto& doc = document_for(docs, t.doc_id);
    const auto p = classify_triplet(model, doc, t.head, t.tail, enc).relation;
    ++gold[static_cast<std::size_t>(t.relation)];
    ++pred[static_cast<std::size_t>(p)];
    hit[static_cast<std::size_t>(p)] += p == t.relation;
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < kRelationCount; ++c) {
    r.per_class[c] = class_scores(hit[c], gold[c], pred[c]);
    correct += hit[c];
  }
  r.n = triplets.size();
  if (r.n) r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  r.macro_f1 = macro_f1(r.per_class);
  return r;
}

// Ordered pairs of distinct entities that fit together inside a window of `window` tokens.
inline std::vector<std::pair<Span, Span>> candidate_pairs(const std::vector<Span>& entities, std::size_t window = 40) {
  std::vector<std::pair<Span, Span>> out;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    for (std::size_t j = 0; j < entities.size(); ++j) {
      if (i == j) continue;
      const auto& a = entities[i];
      const auto& b = entities[j];
      const std::size_t lo = std::min(a.token_start, b.token_start), hi = std::max(a.token_end, b.token_end);
      if (hi - lo <= window) out.emplace_back(a, b);
    }
  }
  return out;
}

}  // namespace distner
