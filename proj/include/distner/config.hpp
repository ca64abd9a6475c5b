#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "distner/core_model.hpp"
#include "distner/error.hpp"
#include "distner/matcher.hpp"

namespace distner {

// Sectioned key-value configuration. Every key has a default, so a run is fully described
// by the effective configuration written next to its outputs.
class PipelineConfig {
 public:
  using Tree = boost::property_tree::ptree;

  PipelineConfig() {
    const std::vector<std::pair<const char*, std::string>> defaults = {
        {"paths.raw", ""},
        {"paths.corpus", ""},
        {"paths.dictionaries", ""},
        {"paths.stopwords", ""},
        {"paths.rules", ""},
        {"paths.annotations", ""},
        {"paths.gold", ""},
        {"paths.predictions", ""},
        {"paths.other_annotations", ""},
        {"paths.provider_fixture", ""},
        {"paths.answers", ""},
        {"paths.triplets", ""},
        {"paths.triplet_corpus", ""},
        {"paths.model", ""},
        {"paths.metrics", ""},
        {"paths.output_dir", "out"},
        {"validation.min_words", "60"},
        {"validation.max_words", "400"},
        {"validation.cross_reference_pattern", ValidationConfig{}.cross_reference_pattern},
        {"match.url_pattern", kDefaultUrlPattern},
        {"distill.pos_tagger", "builtin"},
        {"distill.discard_threshold", "10"},
        {"loop.per_year", "100"},
        {"loop.year_from", "2004"},
        {"loop.year_to", "2019"},
        {"loop.threshold", "0.5"},
        {"loop.max_rounds", ""},
        {"loop.max_human_labels", ""},
        {"loop.seed", "0"},
        {"loop.context_window", "3"},
        {"loop.provider", "fixture"},
        {"loop.provider_command", ""},
        {"loop.classifier", "linear"},
        {"loop.classifier_command", ""},
        {"loop.annotator", "scripted"},
        {"loop.added_at", ""},
        {"loop.claim_ttl_seconds", "300"},
        {"train.iterations", "150"},
        {"train.aggressiveness", "1.0"},
        {"train.seed", "0"},
        {"train.tagger_command", ""},
        {"eval.matching", "both"},
        {"eval.mode", "HIn"},
        {"eval.train", "0.1"},
        {"eval.valid", "0.2"},
        {"eval.test", "0.7"},
        {"eval.seed", "0"},
        {"eval.steps", "0.25,0.5,0.75,1.0"},
        {"relex.encoder", "native"},
        {"relex.encoder_command", ""},
        {"relex.encoder_dims", "0"},
        {"relex.train_fraction", "0.03"},
        {"relex.seed", "0"},
        {"service.host", "127.0.0.1"},
        {"service.port", "8080"},
    };
    for (const auto& [k, v] : defaults) {
      tree_.put(Tree::path_type(k, '.'), v);
      keys_.emplace_back(k);
    }
  }

  // Defaults overlaid with the file. Relative paths in [paths] resolve against the file's directory.
  static PipelineConfig load(const std::string& file) {
    PipelineConfig cfg;
    Tree t;
    try {
      boost::property_tree::read_ini(file, t);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw Error("bad_config", e.what());
    }
    cfg.base_dir_ = std::filesystem::absolute(file).parent_path().string();
    for (const auto& [section, body] : t) {
      for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
    }
    return cfg;
  }

  bool known(const std::string& key) const { return std::find(keys_.begin(), keys_.end(), key) != keys_.end(); }
  const std::vector<std::string>& keys() const { return keys_; }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw Error("bad_config", "unknown configuration key '" + key + "'");
    tree_.put(Tree::path_type(key, '.'), value);
  }

  // Like set(), for values given outside the file: relative paths resolve against the
  // working directory instead of the file's directory.
  void set_external(const std::string& key, const std::string& value) {
    if (key.rfind("paths.", 0) != 0) return set(key, value);
    std::string joined;
    for (const auto& p : split_list(value)) {
      joined += (joined.empty() ? "" : ",") + std::filesystem::absolute(p).lexically_normal().string();
    }
    set(key, joined);
  }

  // "section.key=value"
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw Error("bad_config", "expected section.key=value, got '" + assignment + "'");
    set_external(assignment.substr(0, eq), assignment.substr(eq + 1));
  }

  // DISTNER_<SECTION>_<KEY> overrides, e.g. DISTNER_LOOP_SEED=3.
  void apply_env() {
    for (const auto& key : keys_) {
      std::string name = "DISTNER_" + key;
      for (auto& c : name) c = c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (const char* v = std::getenv(name.c_str())) set_external(key, v);
    }
  }

  std::string get(const std::string& key) const {
    if (!known(key)) throw Error("bad_config", "unknown configuration key '" + key + "'");
    return tree_.get<std::string>(Tree::path_type(key, '.'));
  }

  template <class T>
  T as(const std::string& key) const {
    const auto v = get(key);
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        return v;
      } else if constexpr (std::is_same_v<T, double>) {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
      } else {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        std::size_t used = 0;
        const auto n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return static_cast<T>(n);
      }
    } catch (const std::logic_error&) {
      throw Error("bad_config", "configuration key '" + key + "' has invalid value '" + v + "'");
    }
  }

  template <class T>
  std::optional<T> optional_as(const std::string& key) const {
    if (get(key).empty()) return std::nullopt;
    return as<T>(key);
  }

  int as_int(const std::string& key) const {
    const auto v = get(key);
    try {
      std::size_t used = 0;
      const int n = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::logic_error&) {
      throw Error("bad_config", "configuration key '" + key + "' has invalid value '" + v + "'");
    }
  }

  std::vector<double> as_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : split_list(get(key))) {
      try {
        out.push_back(std::stod(part));
      } catch (const std::logic_error&) {
        throw Error("bad_config", "configuration key '" + key + "' has invalid entry '" + part + "'");
      }
    }
    return out;
  }

  static std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) {
      const auto b = part.find_first_not_of(" \t");
      if (b == std::string::npos) continue;
      out.push_back(part.substr(b, part.find_last_not_of(" \t") - b + 1));
    }
    return out;
  }

  // Path for a [paths] key, resolved against the config file directory; nullopt when unset.
  std::optional<std::string> path(const std::string& key) const {
    const auto v = get(key);
    if (v.empty()) return std::nullopt;
    return resolve(v);
  }

  std::vector<std::string> paths(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& p : split_list(get(key))) out.push_back(resolve(p));
    return out;
  }

  // Existing file for a required [paths] key.
  std::string require_path(const std::string& key) const {
    auto p = path(key);
    if (!p) throw Error("missing_input", "configuration key '" + key + "' must be set");
    if (!std::filesystem::exists(*p)) throw Error("missing_input", "'" + *p + "' (" + key + ") does not exist");
    return *p;
  }

  std::vector<std::string> require_paths(const std::string& key) const {
    auto ps = paths(key);
    if (ps.empty()) throw Error("missing_input", "configuration key '" + key + "' must be set");
    for (const auto& p : ps) {
      if (!std::filesystem::exists(p)) throw Error("missing_input", "'" + p + "' (" + key + ") does not exist");
    }
    return ps;
  }

  std::string output_dir() const {
    const auto dir = resolve(get("paths.output_dir"));
    std::filesystem::create_directories(dir);
    return dir;
  }

  // Paths are written resolved so the file stands on its own.
  std::string to_ini() const {
    Tree t = tree_;
    for (const auto& key : keys_) {
      if (key.rfind("paths.", 0) != 0) continue;
      std::string joined;
      for (const auto& p : paths(key)) joined += (joined.empty() ? "" : ",") + p;
      t.put(Tree::path_type(key, '.'), key == "paths.output_dir" ? resolve(get(key)) : joined);
    }
    std::ostringstream out;
    boost::property_tree::write_ini(out, t);
    return out.str();
  }

  ValidationConfig validation() const {
    return ValidationConfig{as<std::size_t>("validation.min_words"), as<std::size_t>("validation.max_words"),
                            get("validation.cross_reference_pattern")};
  }

 private:
  std::string resolve(const std::string& p) const {
    if (base_dir_.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (std::filesystem::path(base_dir_) / p).lexically_normal().string();
  }

  Tree tree_;
  std::vector<std::string> keys_;
  std::string base_dir_;
};

}  // namespace distner
