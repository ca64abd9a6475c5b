#pragma once

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include "httplib.h"

#include "distner/active_learner.hpp"
#include "distner/corpus_io.hpp"
#include "distner/dictionary.hpp"

namespace distner {

inline json error_body(const std::string& code, const std::string& message) {
  return json{{"error", {{"code", code}, {"message", message}}}};
}

// Append-only JSONL file; every line is flushed and synced before append() returns.
class Journal {
 public:
  explicit Journal(const std::string& path) : path_(path) {
    if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty()) {
      std::filesystem::create_directories(parent);
    }
    f_ = std::fopen(path.c_str(), "a");
    if (!f_) throw Error("io_error", "cannot open journal '" + path + "'");
  }
  Journal(const Journal&) = delete;
  Journal& operator=(const Journal&) = delete;
  ~Journal() {
    if (f_) std::fclose(f_);
  }

  void append(const json& event) {
    const std::string line = event.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), f_) != line.size() || std::fflush(f_) != 0 || ::fsync(fileno(f_)) != 0) {
      throw Error("io_error", "cannot write journal '" + path_ + "'");
    }
  }

  static std::vector<json> read(const std::string& path) {
    std::vector<json> out;
    if (!std::filesystem::exists(path)) return out;
    for_each_jsonl(path, [&](const json& j, std::size_t) { out.push_back(j); });
    return out;
  }

 private:
  std::string path_;
  std::FILE* f_ = nullptr;
};

struct ServiceOptions {
  std::string journal_path;
  std::optional<std::string> audit_path;
  std::optional<std::string> metrics_path;   // latest evaluation report, read on request
  std::optional<std::string> snapshot_dir;   // dictionary snapshot after every round
  double claim_ttl_seconds = 300.0;
  std::function<double()> clock;             // seconds; steady clock when empty
};

struct ServiceResponse {
  int status = 200;
  json body;  // empty for 204
};

// Annotation service state: claims, version-checked labels and round advancement over an
// ActiveLearner. Labels and advances go to the journal before they are applied, and the
// journal is replayed on construction.
class AnnotationService {
 public:
  AnnotationService(ActiveLearner& learner, ServiceOptions opt) : learner_(learner), opt_(std::move(opt)) {
    if (!opt_.clock) {
      opt_.clock = [] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
      };
    }
    for (const auto& e : Journal::read(opt_.journal_path)) replay(e);
    journal_.emplace(opt_.journal_path);
    if (opt_.audit_path) {
      audit_out_.open(*opt_.audit_path, std::ios::trunc);
      if (!audit_out_) throw Error("io_error", "cannot write audit log '" + *opt_.audit_path + "'");
      learner_.set_audit_sink(&audit_out_);
    }
  }

  ~AnnotationService() { learner_.set_audit_sink(nullptr); }

  std::size_t replayed() const { return replayed_; }

  ServiceResponse next_candidate(const std::string& annotator) {
    std::lock_guard<std::mutex> lock(mu_);
    if (annotator.empty()) return {400, error_body("missing_annotator", "X-Annotator-Id header is required")};
    const double now = opt_.clock();
    // An annotator holds at most one live claim.
    for (const auto& [id, claim] : claims_) {
      const Candidate* c = learner_.find(id);
      if (claim.annotator == annotator && claim.expires > now && c && c->state == CandidateState::queued) {
        return {200, claimed_json(*c, claim)};
      }
    }
    for (const Candidate* c : learner_.queue()) {
      auto it = claims_.find(c->id);
      if (it != claims_.end() && it->second.expires > now && it->second.annotator != annotator) continue;
      Claim claim{annotator, now + opt_.claim_ttl_seconds};
      claims_[c->id] = claim;
      return {200, claimed_json(*c, claim)};
    }
    return {204, json()};
  }

  ServiceResponse post_label(const json& body, const std::string& annotator) {
    std::lock_guard<std::mutex> lock(mu_);
    if (annotator.empty()) return {400, error_body("missing_annotator", "X-Annotator-Id header is required")};
    std::uint64_t id = 0, version = 0;
    LabelDecision decision;
    try {
      id = body.at("candidate_id").get<std::uint64_t>();
      version = body.at("version").get<std::uint64_t>();
      const auto d = body.at("decision").get<std::string>();
      if (d == "entity") decision.entity = true;
      else if (d != "non-entity") return {400, error_body("bad_request", "decision must be 'entity' or 'non-entity'")};
      if (body.contains("entity_type") && !body["entity_type"].is_null()) {
        auto t = parse_entity_type(body["entity_type"].get<std::string>());
        if (!t) return {400, error_body("unknown_entity_type", "unknown entity type")};
        decision.entity_type = *t;
      }
    } catch (const json::exception& e) {
      return {400, error_body("bad_request", e.what())};
    }
    auto claim = claims_.find(id);
    if (claim != claims_.end() && claim->second.expires > opt_.clock() && claim->second.annotator != annotator) {
      return {409, error_body("claimed", "candidate is claimed by another annotator")};
    }
    auto check = learner_.check_label(id, version, decision, annotator);
    if (check.http_status != 200) return {check.http_status, error_body(code_for(check.http_status), check.message)};
    if (!check.replay) {
      journal_->append(label_event(id, version, decision, annotator));
      check = learner_.submit_label(id, version, decision, annotator);
      claims_.erase(id);
    }
    return {200, json{{"status", check.replay ? "already_applied" : "ok"},
                      {"candidate", learner_.candidate_json(*check.candidate)},
                      {"progress", learner_.progress()}}};
  }

  ServiceResponse progress() {
    std::lock_guard<std::mutex> lock(mu_);
    return {200, learner_.progress()};
  }

  ServiceResponse advance() {
    std::lock_guard<std::mutex> lock(mu_);
    if (auto why = learner_.advance_blocker()) return {409, error_body("cannot_advance", *why)};
    journal_->append(json{{"event", "advance"}, {"round", learner_.round()}});
    learner_.advance();
    claims_.clear();
    snapshot();
    return {200, learner_.progress()};
  }

  ServiceResponse metrics() {
    std::lock_guard<std::mutex> lock(mu_);
    if (!opt_.metrics_path || !std::filesystem::exists(*opt_.metrics_path)) {
      return {404, error_body("no_metrics", "no evaluation report has been written yet")};
    }
    try {
      return {200, read_json(*opt_.metrics_path)};
    } catch (const std::exception& e) {
      return {500, error_body("bad_metrics", e.what())};
    }
  }

 private:
  struct Claim {
    std::string annotator;
    double expires = 0.0;
  };

  static std::string code_for(int status) {
    switch (status) {
      case 400: return "bad_request";
      case 404: return "not_found";
      case 409: return "conflict";
      default: return "error";
    }
  }

  static json label_event(std::uint64_t id, std::uint64_t version, const LabelDecision& d, const std::string& who) {
    json e = {{"event", "label"}, {"candidate_id", id}, {"version", version},
              {"decision", d.entity ? "entity" : "non-entity"}, {"annotator", who}};
    e["entity_type"] = d.entity_type ? json(std::string(to_string(*d.entity_type))) : json(nullptr);
    return e;
  }

  json claimed_json(const Candidate& c, const Claim& claim) const {
    auto j = learner_.candidate_json(c);
    j["claimed_by"] = claim.annotator;
    j["claim_expires_in"] = claim.expires - opt_.clock();
    return j;
  }

  void replay(const json& e) {
    const auto kind = e.value("event", std::string());
    if (kind == "label") {
      LabelDecision d;
      d.entity = e.at("decision").get<std::string>() == "entity";
      if (!e.at("entity_type").is_null()) d.entity_type = entity_type_from(e["entity_type"].get<std::string>());
      auto r = learner_.submit_label(e.at("candidate_id").get<std::uint64_t>(), e.at("version").get<std::uint64_t>(), d,
                                     e.at("annotator").get<std::string>());
      if (r.http_status != 200) throw Error("journal_mismatch", "journal label does not replay: " + r.message);
    } else if (kind == "advance") {
      learner_.advance();
      snapshot();
    } else {
      throw Error("journal_mismatch", "unknown journal event '" + kind + "'");
    }
    ++replayed_;
  }

  void snapshot() {
    if (!opt_.snapshot_dir) return;
    std::filesystem::create_directories(*opt_.snapshot_dir);
    save_lookup_tables(learner_.dictionary(),
                       (std::filesystem::path(*opt_.snapshot_dir) / ("dictionary.round" + std::to_string(learner_.round()) + ".tsv")).string());
  }

  ActiveLearner& learner_;
  ServiceOptions opt_;
  std::optional<Journal> journal_;
  std::ofstream audit_out_;
  std::map<std::uint64_t, Claim> claims_;
  std::mutex mu_;
  std::size_t replayed_ = 0;
};

// Routes the HTTP API onto a service.
inline void mount_annotation_api(httplib::Server& server, AnnotationService& svc) {
  auto send = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    if (r.status != 204) res.set_content(r.body.dump(), "application/json");
  };
  auto annotator = [](const httplib::Request& req) { return req.get_header_value("X-Annotator-Id"); };
  server.Get("/api/candidates/next", [&svc, send, annotator](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.next_candidate(annotator(req)));
  });
  server.Post("/api/labels", [&svc, send, annotator](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send(res, {400, error_body("bad_request", std::string("body is not JSON: ") + e.what())});
    }
    send(res, svc.post_label(body, annotator(req)));
  });
  server.Get("/api/progress", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.progress()); });
  server.Post("/api/rounds/advance", [&svc, send](const httplib::Request&, httplib::Response& res) {
    send(res, svc.advance());
  });
  server.Get("/api/metrics", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.metrics()); });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string code = "internal", msg = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      code = e.code();
      msg = e.what();
    } catch (const std::exception& e) {
      msg = e.what();
    }
    res.status = 500;
    res.set_content(error_body(code, msg).dump(), "application/json");
  });
}

}  // namespace distner
