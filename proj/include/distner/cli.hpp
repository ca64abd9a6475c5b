#pragma once

#include <filesystem>
#include <iostream>
#include <list>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"

#include "distner/active_learner.hpp"
#include "distner/config.hpp"
#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"
#include "distner/crf_tagger.hpp"
#include "distner/dictionary.hpp"
#include "distner/distiller.hpp"
#include "distner/evaluator.hpp"
#include "distner/matcher.hpp"
#include "distner/relation_extractor.hpp"
#include "distner/service.hpp"
#include "distner/stopwords.hpp"
#include "distner/testing/synthetic.hpp"

namespace distner {

namespace cli {

namespace fs = std::filesystem;

inline std::string in_output_dir(const PipelineConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir()) / name).string();
}

// An explicit --out style flag wins over the default name under the output directory.
inline std::string output_path(const PipelineConfig& cfg, const std::string& flag, const std::string& default_name) {
  if (!flag.empty()) {
    if (auto parent = fs::path(flag).parent_path(); !parent.empty()) fs::create_directories(parent);
    return flag;
  }
  return in_output_dir(cfg, default_name);
}

inline std::vector<Document> read_corpora(const std::vector<std::string>& paths) {
  std::vector<Document> all;
  std::set<std::string> ids;
  for (const auto& p : paths) {
    for (auto& d : read_corpus(p)) {
      if (!ids.insert(d.id).second) throw Error("duplicate_id", p + ": duplicate document id '" + d.id + "'");
      all.push_back(std::move(d));
    }
  }
  return all;
}

inline std::set<std::string> stopwords_for(const PipelineConfig& cfg) {
  if (auto p = cfg.path("paths.stopwords")) {
    if (!fs::exists(*p)) throw Error("missing_input", "'" + *p + "' (paths.stopwords) does not exist");
    return load_stopwords(*p);
  }
  return default_stopwords();
}

inline Dictionary load_dictionary(const PipelineConfig& cfg, LoadReport* report = nullptr) {
  return load_lookup_tables(cfg.require_paths("paths.dictionaries"), stopwords_for(cfg), report);
}

inline MatchConfig match_config(const PipelineConfig& cfg) {
  MatchConfig m;
  m.url_pattern = cfg.get("match.url_pattern");
  m.stopwords = stopwords_for(cfg);
  return m;
}

inline TrainOptions train_options(const PipelineConfig& cfg) {
  TrainOptions opt;
  opt.iterations = cfg.as<std::size_t>("train.iterations");
  opt.aggressiveness = cfg.as<double>("train.aggressiveness");
  opt.seed = cfg.as<std::uint64_t>("train.seed");
  return opt;
}

inline std::string metrics_path(const PipelineConfig& cfg) {
  if (auto p = cfg.path("paths.metrics")) return *p;
  return in_output_dir(cfg, "report.json");
}

// ---- subcommands -------------------------------------------------------------------------

inline json run_ingest(const PipelineConfig& cfg, const std::string& out_flag) {
  const auto raw = cfg.require_path("paths.raw");
  const auto vcfg = cfg.validation();
  std::vector<Document> accepted;
  json rejected = json::array();
  std::map<std::string, std::size_t> by_reason;
  const auto docs = read_corpus(raw);
  for (const auto& d : docs) {
    const auto v = validate_document(d, vcfg);
    if (v == Verdict::accept) {
      accepted.push_back(d);
    } else {
      rejected.push_back({{"doc_id", d.id}, {"reason", std::string(to_string(v))}});
      ++by_reason[std::string(to_string(v))];
    }
  }
  const auto out = output_path(cfg, out_flag, "corpus.jsonl");
  write_corpus(out, accepted);
  json report = {{"read", docs.size()}, {"accepted", accepted.size()}, {"rejected_by_reason", by_reason},
                 {"rejected", rejected}, {"corpus", out}};
  write_json(in_output_dir(cfg, "ingest_report.json"), report);
  return {{"command", "ingest"}, {"read", docs.size()}, {"accepted", accepted.size()}, {"corpus", out}};
}

inline json run_build_dict(const PipelineConfig& cfg, const std::string& out_flag) {
  LoadReport lr;
  const auto dict = load_dictionary(cfg, &lr);
  const auto out = output_path(cfg, out_flag, "dictionary.tsv");
  save_lookup_tables(dict, out);
  json report = {{"rows", lr.rows},          {"inserted", lr.inserted},
                 {"duplicates", lr.duplicates}, {"stopword_rejected", lr.stopword_rejected},
                 {"size", dict.size()},        {"counts", counts_to_json(dict.counts())}};
  write_json(in_output_dir(cfg, "dictionary_report.json"), report);
  return {{"command", "build-dict"}, {"size", dict.size()}, {"dictionary", out}};
}

inline json run_match(const PipelineConfig& cfg, const std::string& out_flag, const std::string& stats_flag) {
  const auto corpus = read_corpora(cfg.require_paths("paths.corpus"));
  const auto dict = load_dictionary(cfg);
  const auto annotated = annotate_corpus(corpus, dict, match_config(cfg));
  const auto out = output_path(cfg, out_flag, "annotations.jsonl");
  const auto stats = output_path(cfg, stats_flag, "match_stats.json");
  write_annotations(out, annotated.spans);
  write_json(stats, annotated.stats.to_json());
  return {{"command", "match"},
          {"documents", annotated.stats.documents},
          {"spans", annotated.stats.total_spans},
          {"annotations", out},
          {"stats", stats}};
}

inline json run_distill(const PipelineConfig& cfg, const std::string& out_flag) {
  const auto corpus = read_corpora(cfg.require_paths("paths.corpus"));
  const auto ann = read_annotations(cfg.require_path("paths.annotations"));
  const auto rules = load_pos_rules(cfg.require_path("paths.rules"));
  auto dict = load_dictionary(cfg);
  const auto tagger_name = cfg.get("distill.pos_tagger");
  std::unique_ptr<PosTagger> tagger;
  if (tagger_name == "builtin") tagger = std::make_unique<BuiltinPosTagger>();
  else tagger = std::make_unique<ProcessPosTagger>(tagger_name);

  auto ds = labeled_dataset(corpus, ann, "stage1", true);
  json warnings = json::array();
  for (auto& item : ds.items) {
    auto r = pos_tag(std::move(item.doc), *tagger);
    item.doc = std::move(r.doc);
    if (r.warning) warnings.push_back(*r.warning);
  }
  auto result = apply_pos_rules(std::move(ds), rules);
  auto [kept, discard] = discard_entries(std::move(dict), result.log, cfg.as<std::size_t>("distill.discard_threshold"));

  const auto out = output_path(cfg, out_flag, "annotations.distilled.jsonl");
  write_annotations(out, annotations_of(result.dataset, Provenance::dictionary));
  {
    auto log = open_output(in_output_dir(cfg, "demotions.jsonl"));
    for (const auto& d : result.log) log << demotion_to_json(d, rules).dump() << '\n';
  }
  save_lookup_tables(kept, in_output_dir(cfg, "dictionary.distilled.tsv"));
  json removed = json::array();
  for (const auto& e : discard.removed) removed.push_back({{"surface", e.surface}, {"entity_type", std::string(to_string(e.entity_type))}});
  json report = {{"documents", result.dataset.items.size()},
                 {"demotions", result.log.size()},
                 {"removed_entries", removed},
                 {"dictionary_size", kept.size()},
                 {"tagger_warnings", warnings}};
  write_json(in_output_dir(cfg, "distill_report.json"), report);
  return {{"command", "distill"}, {"demotions", result.log.size()}, {"removed", discard.removed.size()}, {"annotations", out}};
}

// Everything an active-learning run needs, owned in one place.
struct LoopSetup {
  std::unique_ptr<MentionProvider> provider;
  std::unique_ptr<ActiveLearner> learner;
};

inline LoopConfig loop_config(const PipelineConfig& cfg) {
  LoopConfig lc;
  lc.per_year = cfg.as<std::size_t>("loop.per_year");
  lc.year_from = cfg.as_int("loop.year_from");
  lc.year_to = cfg.as_int("loop.year_to");
  lc.threshold = cfg.as<double>("loop.threshold");
  lc.max_rounds = cfg.optional_as<std::size_t>("loop.max_rounds");
  lc.max_human_labels = cfg.optional_as<std::size_t>("loop.max_human_labels");
  lc.seed = cfg.as<std::uint64_t>("loop.seed");
  lc.context_window = cfg.as<std::size_t>("loop.context_window");
  if (const auto d = cfg.get("loop.added_at"); !d.empty()) lc.added_at = parse_date(d);
  return lc;
}

inline LoopSetup make_loop(const PipelineConfig& cfg) {
  auto corpus = read_corpora(cfg.require_paths("paths.corpus"));
  const auto silver = labeled_dataset(corpus, read_annotations(cfg.require_path("paths.annotations")), "silver", true);
  auto dict = load_dictionary(cfg);
  LoopSetup s;
  const auto provider = cfg.get("loop.provider");
  if (provider == "fixture") {
    s.provider = std::make_unique<FixtureProvider>(cfg.require_path("paths.provider_fixture"));
  } else if (provider == "process") {
    const auto cmd = cfg.get("loop.provider_command");
    if (cmd.empty()) throw Error("bad_config", "loop.provider=process needs loop.provider_command");
    s.provider = std::make_unique<ProcessMentionProvider>(cmd);
  } else {
    throw Error("bad_config", "loop.provider must be 'fixture' or 'process'");
  }
  std::unique_ptr<EntityClassifier> clf;
  const auto classifier = cfg.get("loop.classifier");
  if (classifier == "linear") {
    clf = std::make_unique<LinearEntityClassifier>();
  } else if (classifier == "process") {
    const auto cmd = cfg.get("loop.classifier_command");
    if (cmd.empty()) throw Error("bad_config", "loop.classifier=process needs loop.classifier_command");
    clf = std::make_unique<ProcessEntityClassifier>(cmd);
  } else {
    throw Error("bad_config", "loop.classifier must be 'linear' or 'process'");
  }
  s.learner = std::make_unique<ActiveLearner>(std::move(corpus), silver, std::move(dict), *s.provider, std::move(clf),
                                              loop_config(cfg));
  return s;
}

inline json run_al_loop(const PipelineConfig& cfg) {
  if (cfg.get("loop.annotator") != "scripted") {
    throw Error("bad_config", "al-loop runs with loop.annotator=scripted; use 'serve' for people");
  }
  auto answers_path = cfg.require_path("paths.answers");
  auto setup = make_loop(cfg);
  auto& learner = *setup.learner;
  ScriptedAnnotator annotator(answers_path);
  const auto dir = cfg.output_dir();
  auto audit = open_output(in_output_dir(cfg, "audit.jsonl"));
  learner.set_audit_sink(&audit);
  const auto status = run_loop(learner, annotator, [&](const ActiveLearner& l) {
    const auto finished = l.audit().back()["round"].get<std::size_t>();
    save_lookup_tables(l.dictionary(), in_output_dir(cfg, "dictionary.round" + std::to_string(finished) + ".tsv"));
  });
  learner.set_audit_sink(nullptr);
  save_lookup_tables(learner.dictionary(), in_output_dir(cfg, "dictionary.final.tsv"));
  write_annotations(in_output_dir(cfg, "labeled.jsonl"), annotations_of(learner.labeled(), Provenance::dictionary));
  json report = {{"status", std::string(to_string(status))},
                 {"rounds", learner.audit().size()},
                 {"progress", learner.progress()},
                 {"warnings", learner.warnings()}};
  write_json(in_output_dir(cfg, "al_report.json"), report);
  return {{"command", "al-loop"},
          {"status", std::string(to_string(status))},
          {"stop_reason", learner.progress()["stop_reason"]},
          {"rounds", learner.audit().size()},
          {"dict_size", learner.dictionary().size()}};
}

inline json run_train(const PipelineConfig& cfg, const std::string& out_flag) {
  const auto corpus = read_corpora(cfg.require_paths("paths.corpus"));
  const auto ds = labeled_dataset(corpus, read_annotations(cfg.require_path("paths.annotations")), "train", true);
  TrainSummary summary;
  const auto model = train_pa(ds, train_options(cfg), &summary);
  const auto out = output_path(cfg, out_flag, "model.json");
  save_model(model, out);
  json report = {{"documents", ds.items.size()}, {"updates", summary.updates},
                 {"mistakes_per_iteration", summary.mistakes_per_iteration}};
  report["converged_at"] = summary.converged_at ? json(*summary.converged_at) : json(nullptr);
  write_json(in_output_dir(cfg, "train_summary.json"), report);
  return {{"command", "train"}, {"documents", ds.items.size()}, {"model", out}};
}

inline json run_tag(const PipelineConfig& cfg, const std::string& out_flag) {
  const auto corpus = read_corpora(cfg.require_paths("paths.corpus"));
  TagCorpusResult result;
  if (const auto cmd = cfg.get("train.tagger_command"); !cmd.empty()) {
    TaggerPlugin plugin(cmd);
    result = tag_corpus(plugin, corpus);
  } else {
    result = tag_corpus(load_model(cfg.require_path("paths.model")), corpus);
  }
  const auto out = output_path(cfg, out_flag, "predictions.jsonl");
  write_annotations(out, result.spans);
  std::size_t spans = 0;
  for (const auto& [id, s] : result.spans) spans += s.size();
  json failures = json::array();
  for (const auto& [id, why] : result.failures) failures.push_back({{"doc_id", id}, {"reason", why}});
  write_json(in_output_dir(cfg, "tag_report.json"), {{"documents", corpus.size()}, {"spans", spans}, {"failures", failures}});
  return {{"command", "tag"}, {"documents", corpus.size()}, {"spans", spans}, {"predictions", out}};
}

// Annotation files hold one line per span, so a document without spans is simply absent.
// Both sides are extended to the union of their documents.
inline void cover_each_other(Annotations& a, Annotations& b) {
  for (const auto& [id, s] : a) b[id];
  for (const auto& [id, s] : b) a[id];
}

// Every annotated document must belong to `corpus`.
inline void require_in_corpus(const Annotations& ann, const std::vector<Document>& corpus, const std::string& what) {
  std::set<std::string> ids;
  for (const auto& d : corpus) ids.insert(d.id);
  for (const auto& [id, s] : ann) {
    if (!ids.count(id)) {
      throw Error("doc_mismatch", what + " document '" + id + "' is not in the corpus (paths.corpus)");
    }
  }
}

inline json run_eval(const PipelineConfig& cfg, const std::string& out_flag) {
  auto gold = read_annotations(cfg.require_path("paths.gold"));
  auto pred = read_annotations(cfg.require_path("paths.predictions"));
  if (cfg.path("paths.corpus")) {
    // The corpus is the annotated document set; its span-less documents count too.
    const auto corpus = read_corpora(cfg.require_paths("paths.corpus"));
    require_in_corpus(gold, corpus, "gold");
    require_in_corpus(pred, corpus, "predicted");
    gold = cover_documents(std::move(gold), corpus);
    pred = cover_documents(std::move(pred), corpus);
  } else {
    cover_each_other(gold, pred);
  }
  const auto matching = cfg.get("eval.matching");
  json report = json::object();
  if (matching == "both" || matching == "exact") report["exact"] = evaluate(gold, pred, Matching::exact).to_json();
  if (matching == "both" || matching == "type-at-token") {
    report["type_at_token"] = evaluate(gold, pred, Matching::type_at_token).to_json();
  }
  if (report.empty()) throw Error("bad_config", "eval.matching must be 'exact', 'type-at-token' or 'both'");
  const auto out = out_flag.empty() ? metrics_path(cfg) : output_path(cfg, out_flag, "");
  if (auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_json(out, report);
  json summary = {{"command", "eval"}, {"report", out}};
  for (const auto& [k, r] : report.items()) summary[k] = {{"recall", r["recall"]}, {"macro_f1", r["macro_f1"]}};
  return summary;
}

inline json run_progressive(const PipelineConfig& cfg) {
  const auto corpus = read_corpora(cfg.require_paths("paths.corpus"));
  const auto gold = read_annotations(cfg.require_path("paths.gold"));
  require_in_corpus(gold, corpus, "gold");
  const auto human = labeled_dataset(corpus, gold, "human", true);
  const auto mode = training_mode_from(cfg.get("eval.mode"));
  LabeledDataset silver{"silver", {}};
  if (mode == TrainingMode::HIn) {
    silver = labeled_dataset(corpus, read_annotations(cfg.require_path("paths.annotations")), "silver", true);
  }
  SplitConfig sc{mode, cfg.as<double>("eval.train"), cfg.as<double>("eval.valid"), cfg.as<double>("eval.test"),
                 cfg.as<std::uint64_t>("eval.seed")};
  const auto splits = make_splits(human, silver, sc);
  const auto opt = train_options(cfg);
  auto trainer = [&](const LabeledDataset& part, const LabeledDataset& eval) {
    const auto model = train_pa(part, opt);
    Annotations pred;
    for (const auto& item : eval.items) pred[item.doc.id] = tag_document(model, item.doc);
    return pred;
  };
  const auto curve = progressive_runner(splits.train, cfg.as_list("eval.steps"), trainer, splits.test, sc.seed);
  json report = {{"mode", std::string(to_string(mode))},
                 {"train_size", splits.train.items.size()},
                 {"valid_size", splits.valid.items.size()},
                 {"test_size", splits.test.items.size()},
                 {"curve", curve_to_json(curve)}};
  write_json(in_output_dir(cfg, "curve.json"), report);
  open_output(in_output_dir(cfg, "curve.csv")) << curve_to_csv(curve);
  json points = json::array();
  for (const auto& p : curve) points.push_back({{"fraction", p.fraction}, {"recall", p.exact.recall}});
  return {{"command", "eval"}, {"progressive", points}, {"curve", in_output_dir(cfg, "curve.json")}};
}

inline json run_agreement(const PipelineConfig& cfg) {
  const auto corpus = read_corpora(cfg.require_paths("paths.corpus"));
  const auto a = read_annotations(cfg.require_path("paths.gold"));
  const auto b = read_annotations(cfg.require_path("paths.other_annotations"));
  require_in_corpus(a, corpus, "gold");
  require_in_corpus(b, corpus, "other");
  std::vector<Document> docs;
  for (const auto& d : corpus) {
    if (a.count(d.id) || b.count(d.id)) docs.push_back(d);
  }
  if (docs.empty()) throw Error("missing_input", "neither annotation file has a span");
  const double kappa = agreement(a, b, docs);
  write_json(in_output_dir(cfg, "agreement.json"), {{"documents", docs.size()}, {"kappa", kappa}});
  return {{"command", "eval"}, {"documents", docs.size()}, {"kappa", kappa}};
}

inline json run_relex(const PipelineConfig& cfg) {
  const auto set = read_triplets(cfg.require_path("paths.triplets"));
  const auto docs = read_corpora(cfg.require_paths("paths.triplet_corpus"));
  const auto index = index_documents(docs);
  RelationTrainOptions opt;
  opt.train_fraction = cfg.as<double>("relex.train_fraction");
  opt.seed = cfg.as<std::uint64_t>("relex.seed");

  const auto which = cfg.get("relex.encoder");
  std::optional<CrfModel> crf;
  std::unique_ptr<EntityEncoder> enc;
  if (which == "native") {
    crf = load_model(cfg.require_path("paths.model"));
    enc = std::make_unique<NativeCrfEncoder>(*crf);
  } else if (which == "bow") {
    enc = std::make_unique<BagOfWordsEncoder>();
  } else if (which == "plugin") {
    const auto cmd = cfg.get("relex.encoder_command");
    const auto dims = cfg.as<std::size_t>("relex.encoder_dims");
    if (cmd.empty() || dims == 0) throw Error("bad_config", "relex.encoder=plugin needs encoder_command and encoder_dims");
    enc = std::make_unique<ProcessEntityEncoder>(cmd, dims);
  } else {
    throw Error("bad_config", "relex.encoder must be 'native', 'bow' or 'plugin'");
  }

  auto held_out = [&](const RelationTrainResult& r) {
    std::vector<Triplet> out;
    for (auto i : r.held_out_indices) out.push_back(set.triplets[i]);
    return out;
  };
  const auto trained = train_relation_clf(set.triplets, index, *enc, opt);
  const auto eval_set = held_out(trained);
  const auto report = evaluate_relations(trained.model, eval_set, index, *enc);
  write_json(in_output_dir(cfg, "relex_model.json"), trained.model.to_json());
  json out = {{"encoder", enc->mode()},
              {"triplets", set.triplets.size()},
              {"conflicts_dropped", set.conflicts_dropped},
              {"train_size", trained.train_indices.size()},
              {"held_out_size", trained.held_out_indices.size()},
              {"report", report.to_json()}};
  if (which != "bow") {
    BagOfWordsEncoder bow;
    const auto ablation = train_relation_clf(set.triplets, index, bow, opt);
    out["ablation_bow"] = evaluate_relations(ablation.model, held_out(ablation), index, bow).to_json();
  }
  write_json(in_output_dir(cfg, "relex_report.json"), out);
  json summary = {{"command", "relex"}, {"encoder", enc->mode()}, {"accuracy", report.accuracy}};
  if (out.contains("ablation_bow")) summary["ablation_accuracy"] = out["ablation_bow"]["accuracy"];
  return summary;
}

inline json run_report(const PipelineConfig& cfg) {
  json summary = json::object();
  const auto stage1 = cfg.path("paths.annotations");
  const auto stage2 = cfg.path("paths.predictions");
  if (stage1 && stage2) {
    summary["stage_coverage"] =
        stage_coverage(read_annotations(cfg.require_path("paths.annotations")), read_annotations(cfg.require_path("paths.predictions")))
            .to_json();
  }
  if (!cfg.paths("paths.dictionaries").empty()) {
    const auto dict = load_dictionary(cfg);
    summary["dictionary"] = {{"size", dict.size()}, {"counts", counts_to_json(dict.counts())}};
  }
  if (const auto audit = in_output_dir(cfg, "audit.jsonl"); fs::exists(audit)) {
    json rounds = json::array();
    for_each_jsonl(audit, [&](const json& j, std::size_t) { rounds.push_back(j); });
    summary["loop"] = {{"rounds", rounds.size()}};
    if (!rounds.empty()) summary["loop"]["last"] = rounds.back();
  }
  if (const auto m = metrics_path(cfg); fs::exists(m)) summary["metrics"] = read_json(m);
  if (summary.empty()) {
    throw Error("missing_input", "nothing to report: set paths.annotations and paths.predictions, paths.dictionaries, "
                                 "or run other subcommands into the output directory first");
  }
  write_json(in_output_dir(cfg, "summary.json"), summary);
  json brief = {{"command", "report"}, {"sections", json::array()}};
  for (const auto& [k, v] : summary.items()) brief["sections"].push_back(k);
  return brief;
}

inline int run_serve(const PipelineConfig& cfg, std::ostream& out) {
  auto setup = make_loop(cfg);
  ServiceOptions opt;
  opt.journal_path = in_output_dir(cfg, "journal.jsonl");
  opt.audit_path = in_output_dir(cfg, "audit.jsonl");
  opt.metrics_path = metrics_path(cfg);
  opt.snapshot_dir = in_output_dir(cfg, "snapshots");
  opt.claim_ttl_seconds = cfg.as<double>("loop.claim_ttl_seconds");
  AnnotationService service(*setup.learner, opt);
  httplib::Server server;
  mount_annotation_api(server, service);
  const auto host = cfg.get("service.host");
  int port = static_cast<int>(cfg.as<std::size_t>("service.port"));
  if (port == 0) {
    port = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    port = -1;
  }
  if (port < 0) throw Error("bind_failed", "cannot listen on " + host + ":" + cfg.get("service.port"));
  out << json{{"command", "serve"}, {"host", host}, {"port", port}, {"replayed", service.replayed()}}.dump() << std::endl;
  server.listen_after_bind();
  return 0;
}

// Demonstration inputs for every subcommand, plus a configuration that points at them.
inline json run_synth(const std::string& dir_arg, std::uint64_t seed) {
  const fs::path dir = fs::absolute(dir_arg);
  fs::create_directories(dir);
  auto f = synthetic::active_learning_fixture(120, 80, 60, seed);

  // Frame documents are short; pad them to a realistic length. Padding goes at the end so
  // the provider's character offsets stay valid.
  static const std::string pad =
      " The report lists the steps that were tried before the problem showed up and the output that followed ."
      " Nothing else on the system was changed during that time and the problem happens every time .";
  std::vector<Document> raw;
  for (const auto& d : f.corpus) {
    std::string text = d.text;
    while (tokenize(text).size() < 70) text += pad;
    raw.push_back(make_document(d.id, text, d.created_at, d.source));
  }
  raw.push_back(make_document("short0", "the upgrade failed again on this machine", Date{2010, 1, 1}));
  {
    std::string text;
    for (int i = 0; i < 30; ++i) text += pad;
    raw.push_back(make_document("long0", text, Date{2011, 2, 2}));
  }
  raw.push_back(make_document("imported0", "Automatically imported from Debian bug report #12345", Date{2012, 3, 3}));
  write_corpus((dir / "raw.jsonl").string(), raw);

  auto dict = f.seed_dictionary;
  dict.add({DictEntry{"release", EntityType::PKG, "demo", Date{2003, 1, 1}}});
  save_lookup_tables(dict, (dir / "dictionary.tsv").string());
  open_output((dir / "rules.tsv").string()) << "surface\tprev_pos\tself_pos\tnext_pos\tfrom_type\n"
                                            << "release\t*\t*\t*\tPKG\n";
  {
    auto out = open_output((dir / "mentions.jsonl").string());
    for (const auto& [doc_id, ms] : f.mentions) {
      for (const auto& m : ms) {
        out << json{{"doc_id", doc_id}, {"char_start", m.char_start}, {"char_end", m.char_end}, {"surface", m.surface},
                    {"score", m.score}}
                   .dump()
            << '\n';
      }
    }
  }
  {
    auto out = open_output((dir / "answers.jsonl").string());
    for (const auto& [surface, type] : f.answers) {
      out << json{{"surface", surface}, {"entity_type", type ? json(std::string(to_string(*type))) : json(nullptr)}}.dump()
          << '\n';
    }
  }
  write_corpus((dir / "held_out.jsonl").string(), f.held_out);
  write_annotations((dir / "gold.jsonl").string(), f.held_out_gold);
  // A second annotator who missed every third mention.
  Annotations other;
  std::size_t k = 0;
  for (const auto& [id, spans] : f.held_out_gold) {
    for (const auto& s : spans) {
      if (k++ % 3 != 0) other[id].push_back(s);
    }
  }
  write_annotations((dir / "gold_b.jsonl").string(), other);

  const auto tri = synthetic::triplet_corpus(642, seed);
  write_corpus((dir / "triplet_docs.jsonl").string(), tri.docs);
  {
    auto out = open_output((dir / "triplets.jsonl").string());
    for (const auto& l : tri.lines) out << l.dump() << '\n';
  }
  write_annotations((dir / "triplet_entities.jsonl").string(), annotations_of(tri.tagged, Provenance::human));

  open_output((dir / "pipeline.ini").string())
      << "; Demonstration pipeline over the files in this directory. Relative paths resolve\n"
         "; against this file; outputs go to out/.\n"
         "[paths]\n"
         "raw = raw.jsonl\n"
         "corpus = out/corpus.jsonl\n"
         "dictionaries = dictionary.tsv\n"
         "rules = rules.tsv\n"
         "annotations = out/annotations.jsonl\n"
         "gold = gold.jsonl\n"
         "predictions = out/predictions.jsonl\n"
         "other_annotations = gold_b.jsonl\n"
         "provider_fixture = mentions.jsonl\n"
         "answers = answers.jsonl\n"
         "triplets = triplets.jsonl\n"
         "triplet_corpus = triplet_docs.jsonl\n"
         "model = out/model.json\n"
         "output_dir = out\n"
         "\n"
         "[validation]\n"
         "min_words = 60\n"
         "max_words = 400\n"
         "\n"
         "[distill]\n"
         "pos_tagger = builtin\n"
         "discard_threshold = 10\n"
         "\n"
         "[loop]\n"
         "per_year = 100\n"
         "year_from = 2004\n"
         "year_to = 2019\n"
         "threshold = 0.5\n"
         "seed = 0\n"
         "provider = fixture\n"
         "classifier = linear\n"
         "annotator = scripted\n"
         "\n"
         "[train]\n"
         "iterations = 150\n"
         "aggressiveness = 1.0\n"
         "seed = 0\n"
         "\n"
         "[eval]\n"
         "matching = both\n"
         "mode = HIn\n"
         "train = 0.1\n"
         "valid = 0.2\n"
         "test = 0.7\n"
         "steps = 0.25,0.5,0.75,1.0\n"
         "\n"
         "[relex]\n"
         "encoder = native\n"
         "train_fraction = 0.03\n"
         "seed = 0\n"
         "\n"
         "[service]\n"
         "host = 127.0.0.1\n"
         "port = 8080\n";
  return {{"command", "synth"}, {"dir", dir.string()}, {"raw_documents", raw.size()}, {"triplets", tri.lines.size()}};
}

// ---- dispatch ----------------------------------------------------------------------------

struct Binding {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

// Adds a flag that overrides one configuration key. The flag name is the key without its
// section, with '-' for '_'; `extra` adds aliases such as "--dict".
inline void expose(CLI::App* sub, std::list<Binding>& bindings, const std::string& key, const std::string& extra = "") {
  auto dashed = [](std::string s) {
    for (auto& c : s) c = (c == '_' || c == '.') ? '-' : c;
    return s;
  };
  std::string names = "--" + dashed(key.substr(key.find('.') + 1));
  // When two sections share a key name, the later one keeps its section, e.g. --train-seed.
  if (sub->get_option_no_throw(names)) names = "--" + dashed(key);
  auto& b = bindings.emplace_back(Binding{key, "", nullptr});
  if (!extra.empty()) names += "," + extra;
  b.option = sub->add_option(names, b.value, "overrides " + key);
}

}  // namespace cli

// Runs one subcommand. Returns 0 on success, 1 on a runtime failure (a JSON error object on
// `err`) and 2 on a usage error.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using cli::expose;
  CLI::App app{"Distantly supervised entity recognition pipeline for software-ecosystem text."};
  app.name("distner");
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_file;
  std::vector<std::string> sets;
  app.add_option("--config", config_file, "configuration file (INI with sections)");
  app.add_option("--set", sets, "section.key=value override, repeatable")->allow_extra_args(false);

  std::list<cli::Binding> bindings;
  std::string out_flag, stats_flag, synth_dir = "data";
  bool progressive = false, agreement_mode = false;
  std::uint64_t synth_seed = 7;

  auto* ingest = app.add_subcommand("ingest", "validate raw documents into a corpus");
  for (auto k : {"paths.raw", "paths.output_dir", "validation.min_words", "validation.max_words",
                 "validation.cross_reference_pattern"}) {
    expose(ingest, bindings, k);
  }
  ingest->add_option("--out", out_flag, "corpus output file");

  auto* build = app.add_subcommand("build-dict", "merge lookup tables into one dictionary");
  expose(build, bindings, "paths.dictionaries", "--dict");
  expose(build, bindings, "paths.stopwords");
  expose(build, bindings, "paths.output_dir");
  build->add_option("--out", out_flag, "dictionary output file");

  auto* match = app.add_subcommand("match", "annotate a corpus with dictionary matches");
  expose(match, bindings, "paths.corpus");
  expose(match, bindings, "paths.dictionaries", "--dict");
  expose(match, bindings, "paths.stopwords");
  expose(match, bindings, "paths.output_dir");
  expose(match, bindings, "match.url_pattern");
  match->add_option("--out", out_flag, "annotations output file");
  match->add_option("--stats", stats_flag, "statistics output file");

  auto* distill = app.add_subcommand("distill", "demote spans by POS rules and prune the dictionary");
  for (auto k : {"paths.corpus", "paths.annotations", "paths.rules", "paths.stopwords", "paths.output_dir",
                 "distill.pos_tagger", "distill.discard_threshold"}) {
    expose(distill, bindings, k);
  }
  expose(distill, bindings, "paths.dictionaries", "--dict");
  distill->add_option("--out", out_flag, "distilled annotations output file");

  auto* loop = app.add_subcommand("al-loop", "run the active-learning loop with a scripted annotator");
  for (auto k : {"paths.corpus", "paths.annotations", "paths.stopwords", "paths.provider_fixture", "paths.answers",
                 "paths.output_dir", "loop.per_year", "loop.year_from", "loop.year_to", "loop.threshold",
                 "loop.max_rounds", "loop.max_human_labels", "loop.seed", "loop.context_window", "loop.provider",
                 "loop.provider_command", "loop.classifier", "loop.classifier_command", "loop.annotator",
                 "loop.added_at"}) {
    expose(loop, bindings, k);
  }
  expose(loop, bindings, "paths.dictionaries", "--dict");

  auto* train = app.add_subcommand("train", "train the sequence tagger");
  for (auto k : {"paths.corpus", "paths.annotations", "paths.output_dir", "train.iterations", "train.aggressiveness",
                 "train.seed"}) {
    expose(train, bindings, k);
  }
  train->add_option("--out", out_flag, "model output file");

  auto* tag = app.add_subcommand("tag", "tag a corpus with a trained model or a tagger plugin");
  for (auto k : {"paths.corpus", "paths.model", "paths.output_dir", "train.tagger_command"}) expose(tag, bindings, k);
  tag->add_option("--out", out_flag, "predictions output file");

  auto* eval = app.add_subcommand("eval", "score predictions, run the progressive curve, or measure agreement");
  for (auto k : {"paths.corpus", "paths.gold", "paths.annotations", "paths.other_annotations", "paths.metrics",
                 "paths.output_dir", "eval.matching", "eval.mode", "eval.train", "eval.valid", "eval.test", "eval.seed",
                 "eval.steps", "train.iterations", "train.aggressiveness", "train.seed"}) {
    expose(eval, bindings, k);
  }
  expose(eval, bindings, "paths.predictions", "--pred");
  eval->add_option("--out", out_flag, "report output file");
  auto* progressive_flag = eval->add_flag("--progressive", progressive, "learning curve over nested training subsets");
  eval->add_flag("--agreement", agreement_mode, "token-level kappa between two annotation files")->excludes(progressive_flag);

  auto* relex = app.add_subcommand("relex", "train and evaluate the relation classifier");
  for (auto k : {"paths.triplets", "paths.triplet_corpus", "paths.model", "paths.output_dir", "relex.encoder",
                 "relex.encoder_command", "relex.encoder_dims", "relex.train_fraction", "relex.seed"}) {
    expose(relex, bindings, k);
  }

  auto* serve = app.add_subcommand("serve", "serve the annotation API over the active-learning loop");
  for (auto k : {"paths.corpus", "paths.annotations", "paths.stopwords", "paths.provider_fixture", "paths.metrics",
                 "paths.output_dir", "loop.per_year", "loop.year_from", "loop.year_to", "loop.threshold",
                 "loop.max_rounds", "loop.max_human_labels", "loop.seed", "loop.context_window", "loop.provider",
                 "loop.provider_command", "loop.classifier", "loop.classifier_command", "loop.added_at",
                 "loop.claim_ttl_seconds", "service.host", "service.port"}) {
    expose(serve, bindings, k);
  }
  expose(serve, bindings, "paths.dictionaries", "--dict");

  auto* report = app.add_subcommand("report", "summarize stage coverage, dictionary, loop and metrics");
  for (auto k : {"paths.annotations", "paths.predictions", "paths.stopwords", "paths.metrics", "paths.output_dir"}) {
    expose(report, bindings, k);
  }
  expose(report, bindings, "paths.dictionaries", "--dict");

  auto* synth = app.add_subcommand("synth", "write demonstration inputs and a matching configuration");
  synth->add_option("--out-dir", synth_dir, "target directory");
  synth->add_option("--seed", synth_seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string message = e.what();
    if (!app.remaining().empty() && app.get_subcommands().empty()) {
      message = "unknown subcommand '" + app.remaining().front() + "'";
    }
    err << app.help() << '\n' << json{{"error", {{"code", "usage"}, {"message", message}}}}.dump() << '\n';
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub == synth) {
      out << cli::run_synth(synth_dir, synth_seed).dump() << '\n';
      return 0;
    }
    PipelineConfig cfg = config_file.empty() ? PipelineConfig{} : PipelineConfig::load(config_file);
    cfg.apply_env();
    for (const auto& s : sets) cfg.set_assignment(s);
    for (const auto& b : bindings) {
      if (b.option->count() > 0) cfg.set_external(b.key, b.value);
    }
    {
      auto eff = open_output(cli::in_output_dir(cfg, "config.effective.ini"));
      eff << cfg.to_ini();
    }
    json summary;
    if (sub == ingest) summary = cli::run_ingest(cfg, out_flag);
    else if (sub == build) summary = cli::run_build_dict(cfg, out_flag);
    else if (sub == match) summary = cli::run_match(cfg, out_flag, stats_flag);
    else if (sub == distill) summary = cli::run_distill(cfg, out_flag);
    else if (sub == loop) summary = cli::run_al_loop(cfg);
    else if (sub == train) summary = cli::run_train(cfg, out_flag);
    else if (sub == tag) summary = cli::run_tag(cfg, out_flag);
    else if (sub == eval) {
      summary = progressive ? cli::run_progressive(cfg) : agreement_mode ? cli::run_agreement(cfg) : cli::run_eval(cfg, out_flag);
    } else if (sub == relex) summary = cli::run_relex(cfg);
    else if (sub == serve) return cli::run_serve(cfg, out);
    else if (sub == report) summary = cli::run_report(cfg);
    out << summary.dump() << '\n';
    return 0;
  } catch (const Error& e) {
    err << json{{"error", {{"code", e.code()}, {"message", e.what()}}}}.dump() << '\n';
  } catch (const std::exception& e) {
    err << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << '\n';
  }
  return 1;
}

}  // namespace distner
