// Stand-in for the out-of-process plugins, driven by a mode argument.
#include <iostream>
#include <string>

#include "json.hpp"

using json = nlohmann::json;

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "";
  std::string line;
  while (std::getline(std::cin, line)) {
    json in = json::parse(line, nullptr, false);
    json out;
    if (mode == "pos-nn") {
      out = json::array();
      for (std::size_t i = 0; i < in.size(); ++i) out.push_back("NN");
    } else if (mode == "pos-short") {
      out = json::array({"NN"});
    } else if (mode == "tagger-all-o") {
      out = {{"doc_id", in["doc_id"]}, {"tags", json::array()}};
      for (std::size_t i = 0; i < in["tokens"].size(); ++i) out["tags"].push_back("O");
    } else if (mode == "tagger-first-pkg") {
      out = {{"doc_id", in["doc_id"]}, {"tags", json::array()}, {"confidence", 0.8}};
      for (std::size_t i = 0; i < in["tokens"].size(); ++i) out["tags"].push_back(i == 0 ? "I_PKG" : "O");
    } else if (mode == "tagger-bad") {
      out = {{"doc_id", in["doc_id"]}, {"tags", json::array({"I_FOO"})}};
    } else if (mode == "classifier-dash") {
      // entity when the surface contains a hyphen or a digit
      const std::string s = in.value("surface", "");
      const bool ent = s.find_first_of("-0123456789") != std::string::npos;
      out = {{"p_entity", ent ? 0.9 : 0.1}};
    } else if (mode == "encoder-length") {
      out = {{"vector", json::array({static_cast<double>(in["tokens"].size()), 1.0})}};
    } else if (mode == "garbage") {
      std::cout << "not json" << std::endl;
      continue;
    } else if (mode == "exit") {
      return 0;
    } else {
      std::cerr << "unknown mode " << mode << '\n';
      return 2;
    }
    std::cout << out.dump() << std::endl;
  }
  return 0;
}
