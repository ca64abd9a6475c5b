#pragma once

#include <array>
#include <set>
#include <string>
#include <string_view>

#include "distner/corpus_io.hpp"

namespace distner {

// Common English function words. Deliberately leaves out words that double as software
// entities and are handled by POS rules instead ("less", "find", "file", "cat", ...).
inline constexpr std::array<std::string_view, 310> kDefaultStopwords = {
    "a", "about", "above", "across", "after", "afterwards", "again", "against", "ago", "ah",
    "all", "almost", "alone", "along", "already", "also", "although", "always", "am", "among",
    "amongst", "an", "and", "another", "any", "anybody", "anyhow", "anyone", "anything", "anyway",
    "anywhere", "are", "aren't", "around", "as", "aside", "at", "away", "be", "became",
    "because", "become", "becomes", "been", "before", "beforehand", "behind", "being", "below", "beside",
    "besides", "between", "beyond", "both", "but", "by", "can", "cannot", "can't", "could",
    "couldn't", "did", "didn't", "do", "does", "doesn't", "doing", "done", "don't", "down",
    "due", "during", "each", "either", "else", "elsewhere", "enough", "etc", "even", "ever",
    "every", "everybody", "everyone", "everything", "everywhere", "except", "few", "for", "former", "formerly",
    "from", "further", "furthermore", "had", "hadn't", "has", "hasn't", "have", "haven't", "having",
    "he", "hence", "her", "here", "hereafter", "hereby", "herein", "hers", "herself", "him",
    "himself", "his", "how", "however", "i", "i'm", "i've", "ie", "if", "in",
    "indeed", "inside", "instead", "into", "is", "isn't", "it", "it's", "its", "itself",
    "just", "latter", "latterly", "least", "let", "lets", "like", "likely", "many", "may",
    "maybe", "me", "meanwhile", "might", "mine", "more", "moreover", "most", "mostly", "much",
    "must", "mustn't", "my", "myself", "namely", "neither", "never", "nevertheless", "next", "no",
    "nobody", "none", "noone", "nor", "not", "nothing", "now", "nowhere", "of", "off",
    "often", "oh", "ok", "okay", "on", "once", "one", "ones", "only", "onto",
    "or", "other", "others", "otherwise", "ought", "our", "ours", "ourselves", "out", "outside",
    "over", "own", "per", "perhaps", "please", "quite", "rather", "really", "same", "seem",
    "seemed", "seeming", "seems", "several", "shall", "she", "should", "shouldn't", "since", "so",
    "some", "somebody", "somehow", "someone", "something", "sometime", "sometimes", "somewhat", "somewhere", "still",
    "such", "than", "that", "that's", "the", "their", "theirs", "them", "themselves", "then",
    "thence", "there", "thereafter", "thereby", "therefore", "therein", "there's", "these", "they", "they're",
    "this", "those", "though", "through", "throughout", "thru", "thus", "to", "together", "too",
    "toward", "towards", "under", "unless", "unlike", "until", "unto", "up", "upon", "us",
    "very", "via", "was", "wasn't", "we", "we're", "we've", "well", "were", "weren't",
    "what", "whatever", "what's", "when", "whence", "whenever", "where", "whereafter", "whereas", "whereby",
    "wherein", "whereupon", "wherever", "whether", "which", "while", "whither", "who", "whoever", "whole",
    "whom", "whose", "why", "will", "with", "within", "without", "won't", "would", "wouldn't",
    "yes", "yet", "you", "you'd", "you'll", "your", "you're", "yours", "yourself", "yourselves"};

inline std::set<std::string> default_stopwords() {
  std::set<std::string> out;
  for (auto w : kDefaultStopwords) out.emplace(w);
  return out;
}

// One word per line; blank lines and '#' comments ignored.
inline std::set<std::string> load_stopwords(const std::string& path) {
  auto in = open_input(path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    std::string w = trim(line);
    if (w.empty() || w[0] == '#') continue;
    out.insert(to_lower(w));
  }
  return out;
}

}  // namespace distner
