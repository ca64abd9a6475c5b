#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"
#include "distner/dictionary.hpp"

namespace distner {

enum class Matching { exact, type_at_token };

inline std::string_view to_string(Matching m) { return m == Matching::exact ? "exact" : "type-at-token"; }

inline Matching matching_from(std::string_view s) {
  if (s == "exact") return Matching::exact;
  if (s == "type-at-token" || s == "type_at_token") return Matching::type_at_token;
  throw Error("bad_option", "unknown matching mode '" + std::string(s) + "'");
}

struct ClassScores {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t matched = 0;
  double recall = 0.0;     // 0 when gold == 0
  double precision = 0.0;  // 0 when predicted == 0
  double f1 = 0.0;
};

inline ClassScores class_scores(std::size_t matched, std::size_t gold, std::size_t predicted) {
  ClassScores c{gold, predicted, matched};
  if (gold) c.recall = static_cast<double>(matched) / static_cast<double>(gold);
  if (predicted) c.precision = static_cast<double>(matched) / static_cast<double>(predicted);
  if (c.precision + c.recall > 0.0) c.f1 = 2.0 * c.precision * c.recall / (c.precision + c.recall);
  return c;
}

// Unweighted mean of F1 over classes that occur in gold or predictions. With no such class
// there is nothing to get wrong and the result is 1.
template <class Range>
double macro_f1(const Range& classes) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const ClassScores& c : classes) {
    if (c.gold == 0 && c.predicted == 0) continue;
    sum += c.f1;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 1.0;
}

struct EvalReport {
  Matching matching = Matching::exact;
  std::array<ClassScores, kEntityTypeCount> per_class{};
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t matched = 0;
  double recall = 1.0;  // overall recall rate; 1 when there is no gold entity
  double macro_f1 = 1.0;
  json config = json::object();

  const ClassScores& of(EntityType t) const { return per_class[static_cast<std::size_t>(t)]; }

  json to_json() const {
    json classes = json::object();
    for (auto t : kAllEntityTypes) {
      const auto& c = of(t);
      json j = {{"gold", c.gold}, {"predicted", c.predicted}, {"matched", c.matched}, {"f1", c.f1}};
      j["recall"] = c.gold ? json(c.recall) : json(nullptr);
      j["precision"] = c.predicted ? json(c.precision) : json(nullptr);
      j["in_macro"] = c.gold + c.predicted > 0;
      classes[std::string(to_string(t))] = j;
    }
    return json{{"matching", to_string(matching)},
                {"recall", recall},
                {"macro_f1", macro_f1},
                {"counts", {{"gold", gold}, {"predicted", predicted}, {"matched", matched}}},
                {"per_class", classes},
                {"config", config}};
  }
};

namespace detail {

// Maximum one-to-one matching where an edge joins overlapping gold and predicted spans.
inline std::size_t max_overlap_matching(const std::vector<Span>& gold, const std::vector<Span>& pred) {
  std::vector<int> owner(pred.size(), -1);
  std::function<bool(std::size_t, std::vector<char>&)> augment = [&](std::size_t g, std::vector<char>& seen) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (seen[p] || !gold[g].overlaps(pred[p])) continue;
      seen[p] = 1;
      if (owner[p] < 0 || augment(static_cast<std::size_t>(owner[p]), seen)) {
        owner[p] = static_cast<int>(g);
        return true;
      }
    }
    return false;
  };
  std::size_t matched = 0;
  for (std::size_t g = 0; g < gold.size(); ++g) {
    std::vector<char> seen(pred.size(), 0);
    if (augment(g, seen)) ++matched;
  }
  return matched;
}

inline std::vector<Span> unique_spans(std::vector<Span> v) {
  auto key = [](const Span& s) { return std::tie(s.token_start, s.token_end, s.entity_type); };
  std::sort(v.begin(), v.end(), [&](const Span& a, const Span& b) { return key(a) < key(b); });
  v.erase(std::unique(v.begin(), v.end(), [&](const Span& a, const Span& b) { return key(a) == key(b); }), v.end());
  return v;
}

inline void check_same_documents(const Annotations& gold, const Annotations& pred) {
  for (const auto& [id, s] : pred) {
    if (!gold.count(id)) throw Error("doc_mismatch", "predicted document '" + id + "' has no gold entry");
  }
  for (const auto& [id, s] : gold) {
    if (!pred.count(id)) throw Error("doc_mismatch", "gold document '" + id + "' has no prediction entry");
  }
}

}  // namespace detail

// Mention-level scores. "exact" credits identical (start, end, type); "type-at-token" credits a
// gold mention when a predicted mention of the same type shares at least one token with it,
// each prediction crediting at most one gold mention.
inline EvalReport evaluate(const Annotations& gold, const Annotations& pred, Matching matching) {
  detail::check_same_documents(gold, pred);
  std::array<std::size_t, kEntityTypeCount> g{}, p{}, m{};
  for (const auto& [id, gold_spans_raw] : gold) {
    const auto gold_spans = detail::unique_spans(gold_spans_raw);
    const auto pred_spans = detail::unique_spans(pred.at(id));
    for (auto t : kAllEntityTypes) {
      std::vector<Span> gc, pc;
      for (const auto& s : gold_spans) {
        if (s.entity_type == t) gc.push_back(s);
      }
      for (const auto& s : pred_spans) {
        if (s.entity_type == t) pc.push_back(s);
      }
      const auto k = static_cast<std::size_t>(t);
      g[k] += gc.size();
      p[k] += pc.size();
      if (matching == Matching::exact) {
        for (const auto& s : gc) {
          m[k] += std::any_of(pc.begin(), pc.end(), [&](const Span& q) { return q.same_extent(s); });
        }
      } else {
        m[k] += detail::max_overlap_matching(gc, pc);
      }
    }
  }
  EvalReport r;
  r.matching = matching;
  for (std::size_t k = 0; k < kEntityTypeCount; ++k) {
    r.per_class[k] = class_scores(m[k], g[k], p[k]);
    r.gold += g[k];
    r.predicted += p[k];
    r.matched += m[k];
  }
  r.recall = r.gold ? static_cast<double>(r.matched) / static_cast<double>(r.gold) : 1.0;
  r.macro_f1 = distner::macro_f1(r.per_class);
  return r;
}

inline EvalReport recall_rate(const Annotations& gold, const Annotations& pred, Matching matching) {
  return evaluate(gold, pred, matching);
}

inline EvalReport precision_f1_macro(const Annotations& gold, const Annotations& pred, Matching matching) {
  return evaluate(gold, pred, matching);
}

inline Annotations annotations_of(const LabeledDataset& ds, Provenance prov = Provenance::human) {
  Annotations out;
  for (const auto& item : ds.items) out[item.doc.id] = tags_to_spans(item.tags, prov);
  return out;
}

// ---- agreement ---------------------------------------------------------------------------

// Token-level Cohen's kappa over the IO alphabet.
inline double cohen_kappa(const std::vector<TagSequence>& a, const std::vector<TagSequence>& b) {
  if (a.size() != b.size()) throw Error("length_mismatch", "annotation sets cover different numbers of documents");
  std::array<std::array<double, kTagCount>, kTagCount> table{};
  double n = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d].size() != b[d].size()) {
      throw Error("length_mismatch", "document " + std::to_string(d) + " has different token counts");
    }
    for (std::size_t i = 0; i < a[d].size(); ++i) {
      table[index_of(a[d][i])][index_of(b[d][i])] += 1.0;
      n += 1.0;
    }
  }
  if (n == 0.0) return 1.0;
  double po = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < kTagCount; ++i) {
    po += table[i][i];
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < kTagCount; ++j) {
      row += table[i][j];
      col += table[j][i];
    }
    pe += (row / n) * (col / n);
  }
  po /= n;
  if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

inline double agreement(const Annotations& ann_a, const Annotations& ann_b, const std::vector<Document>& docs) {
  std::vector<TagSequence> a, b;
  static const std::vector<Span> none;
  for (const auto& d : docs) {
    auto ia = ann_a.find(d.id);
    auto ib = ann_b.find(d.id);
    a.push_back(spans_to_tags(d, ia == ann_a.end() ? none : ia->second));
    b.push_back(spans_to_tags(d, ib == ann_b.end() ? none : ib->second));
  }
  return cohen_kappa(a, b);
}

// ---- splits ------------------------------------------------------------------------------

enum class TrainingMode { HIn, HOn };

inline std::string_view to_string(TrainingMode m) { return m == TrainingMode::HIn ? "HIn" : "HOn"; }

inline TrainingMode training_mode_from(std::string_view s) {
  if (s == "HIn" || s == "hin") return TrainingMode::HIn;
  if (s == "HOn" || s == "hon") return TrainingMode::HOn;
  throw Error("bad_option", "unknown training mode '" + std::string(s) + "'");
}

struct SplitConfig {
  TrainingMode mode = TrainingMode::HIn;
  double train = 0.1;
  double valid = 0.2;
  double test = 0.7;
  std::uint64_t seed = 0;
};

struct Splits {
  LabeledDataset train;
  LabeledDataset valid;
  LabeledDataset test;
};

inline void validate_fractions(double train, double valid, double test) {
  for (double f : {train, valid, test}) {
    if (!(f >= 0.0 && f <= 1.0)) throw Error("bad_fractions", "split fractions must lie in [0, 1]");
  }
  if (std::abs(train + valid + test - 1.0) > 1e-9) throw Error("bad_fractions", "split fractions must sum to 1");
}

// Human documents are shuffled under the seed and cut by the fractions (train and valid sizes
// rounded, test takes the rest). HIn adds every silver document that is not one of the
// human documents; the human label wins for documents present in both.
inline Splits make_splits(const LabeledDataset& human, const LabeledDataset& silver, const SplitConfig& cfg) {
  validate_fractions(cfg.train, cfg.valid, cfg.test);
  if (human.items.empty()) throw Error("empty_dataset", "the human-annotated set is empty");
  check_consistent(human);
  const std::size_t n = human.items.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(cfg.seed);
  shuffle_in_place(order, rng);
  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.train)));
  const auto n_valid =
      std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.valid)));

  Splits s;
  s.train.name = human.name + "/train/" + std::string(to_string(cfg.mode));
  s.valid.name = human.name + "/valid";
  s.test.name = human.name + "/test";
  if (cfg.mode == TrainingMode::HIn) {
    check_consistent(silver);
    std::set<std::string> human_ids;
    for (const auto& item : human.items) human_ids.insert(item.doc.id);
    for (const auto& item : silver.items) {
      if (!human_ids.count(item.doc.id)) s.train.items.push_back(item);
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto& item = human.items[order[k]];
    if (k < n_train) s.train.items.push_back(item);
    else if (k < n_train + n_valid) s.valid.items.push_back(item);
    else s.test.items.push_back(item);
  }
  return s;
}

// ---- progressive learning ----------------------------------------------------------------

// Stratum of a document: its most frequent entity type by span count (lowest code on ties),
// or "none" without entities.
inline std::string dominant_type(const LabeledItem& item) {
  std::array<std::size_t, kEntityTypeCount> c{};
  for (const auto& s : tags_to_spans(item.tags)) ++c[static_cast<std::size_t>(s.entity_type)];
  const auto it = std::max_element(c.begin(), c.end());
  if (*it == 0) return "none";
  return std::string(to_string(static_cast<EntityType>(it - c.begin())));
}

// Nested stratified subsets: each stratum is shuffled once and every step takes a prefix of
// round(fraction * stratum size). Returns item indices per step, in step order.
inline std::vector<std::vector<std::size_t>> progressive_subsets(const LabeledDataset& train,
                                                                 std::vector<double> steps, std::uint64_t seed) {
  if (train.items.empty()) throw Error("empty_dataset", "progressive runner needs training data");
  for (double f : steps) {
    if (!(f > 0.0 && f <= 1.0)) throw Error("bad_option", "progressive steps must lie in (0, 1]");
  }
  std::sort(steps.begin(), steps.end());
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < train.items.size(); ++i) strata[dominant_type(train.items[i])].push_back(i);
  Rng rng(seed);
  for (auto& [name, idx] : strata) shuffle_in_place(idx, rng);

  std::vector<std::vector<std::size_t>> out;
  for (double f : steps) {
    std::vector<std::size_t> subset;
    for (const auto& [name, idx] : strata) {
      const auto take = static_cast<std::size_t>(std::llround(f * static_cast<double>(idx.size())));
      subset.insert(subset.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(take, idx.size())));
    }
    std::sort(subset.begin(), subset.end());
    out.push_back(std::move(subset));
  }
  return out;
}

struct CurvePoint {
  double fraction = 0.0;
  std::size_t train_size = 0;
  EvalReport exact;
  EvalReport type_at_token;
};

inline json curve_to_json(const std::vector<CurvePoint>& curve) {
  json j = json::array();
  for (const auto& p : curve) {
    j.push_back({{"fraction", p.fraction},
                 {"train_size", p.train_size},
                 {"exact", p.exact.to_json()},
                 {"type_at_token", p.type_at_token.to_json()}});
  }
  return j;
}

inline std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "fraction,train_size,recall_exact,recall_type_at_token,macro_f1_exact,macro_f1_type_at_token\n";
  for (const auto& p : curve) {
    out << p.fraction << ',' << p.train_size << ',' << p.exact.recall << ',' << p.type_at_token.recall << ','
        << p.exact.macro_f1 << ',' << p.type_at_token.macro_f1 << '\n';
  }
  return out.str();
}

// `trainer(train_subset, eval_set)` returns predicted annotations for the eval documents.
template <class Trainer>
std::vector<CurvePoint> progressive_runner(const LabeledDataset& train, const std::vector<double>& steps,
                                           Trainer&& trainer, const LabeledDataset& eval, std::uint64_t seed = 0) {
  auto sorted_steps = steps;
  std::sort(sorted_steps.begin(), sorted_steps.end());
  const auto subsets = progressive_subsets(train, sorted_steps, seed);
  const auto gold = annotations_of(eval);
  std::vector<CurvePoint> curve;
  for (std::size_t k = 0; k < subsets.size(); ++k) {
    LabeledDataset part{train.name + "@" + std::to_string(sorted_steps[k]), {}};
    for (auto i : subsets[k]) part.items.push_back(train.items[i]);
    Annotations pred = trainer(static_cast<const LabeledDataset&>(part), eval);
    for (const auto& [id, s] : gold) pred[id];
    CurvePoint p;
    p.fraction = sorted_steps[k];
    p.train_size = part.items.size();
    p.exact = evaluate(gold, pred, Matching::exact);
    p.type_at_token = evaluate(gold, pred, Matching::type_at_token);
    curve.push_back(std::move(p));
  }
  return curve;
}

// ---- stage coverage ----------------------------------------------------------------------

struct StageCoverage {
  TypeCounts stage1{};
  TypeCounts stage2_only{};
  std::array<double, kEntityTypeCount> stage1_share{};
  std::array<double, kEntityTypeCount> stage2_share{};

  json to_json() const {
    json j = json::object();
    for (auto t : kAllEntityTypes) {
      const auto k = static_cast<std::size_t>(t);
      j[std::string(to_string(t))] = {{"stage1", stage1[k]},
                                      {"stage2_only", stage2_only[k]},
                                      {"stage1_share", stage1_share[k]},
                                      {"stage2_share", stage2_share[k]}};
    }
    return j;
  }
};

// Mentions are identified by (document, start, end, type).
inline StageCoverage stage_coverage(const Annotations& stage1, const Annotations& stage2) {
  StageCoverage c;
  for (const auto& [id, spans] : stage1) {
    for (const auto& s : detail::unique_spans(spans)) ++c.stage1[static_cast<std::size_t>(s.entity_type)];
  }
  for (const auto& [id, spans] : stage2) {
    auto it = stage1.find(id);
    for (const auto& s : detail::unique_spans(spans)) {
      const bool seen = it != stage1.end() && std::any_of(it->second.begin(), it->second.end(),
                                                          [&](const Span& q) { return q.same_extent(s); });
      if (!seen) ++c.stage2_only[static_cast<std::size_t>(s.entity_type)];
    }
  }
  for (std::size_t k = 0; k < kEntityTypeCount; ++k) {
    const double total = static_cast<double>(c.stage1[k] + c.stage2_only[k]);
    if (total > 0.0) {
      c.stage1_share[k] = static_cast<double>(c.stage1[k]) / total;
      c.stage2_share[k] = static_cast<double>(c.stage2_only[k]) / total;
    }
  }
  return c;
}

}  // namespace distner
