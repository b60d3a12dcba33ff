#include "dne/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "dne/error.hpp"

namespace dne {

Dataset ingest_tsv(const std::filesystem::path& path, const Vocabulary& vocab,
                   std::size_t class_count, std::size_t max_len, const std::string& split,
                   IngestStats* stats) {
  if (class_count < 2) throw ParameterError("class_count must be at least 2");
  if (max_len < 1) throw ParameterError("max_len must be at least 1");
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open dataset " + path.string(), 0);

  Dataset data;
  data.split = split;
  data.class_count = class_count;
  IngestStats local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++local.lines;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw LoadError(path.string() + ": missing tab separator", line_no);
    const std::string_view label_text(line.data(), tab);
    std::size_t label = 0;
    const auto [end, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc{} || end != label_text.data() + label_text.size())
      throw LoadError(path.string() + ": bad label '" + std::string(label_text) + "'", line_no);
    if (label >= class_count)
      throw LoadError(path.string() + ": label " + std::to_string(label) + " not below class count " +
                          std::to_string(class_count),
                      line_no);

    std::string text = line.substr(tab + 1);
    std::transform(text.begin(), text.end(), text.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    Example ex;
    ex.label = label;
    std::istringstream words(text);
    std::string word;
    bool cut = false;
    while (words >> word) {
      if (ex.ids.size() == max_len) {
        cut = true;
        break;
      }
      const TokenId id = vocab.lookup_or_unk(word);
      if (id == kUnkId) ++local.oov;
      ++local.tokens;
      ex.ids.push_back(id);
    }
    local.truncated += cut;
    if (ex.ids.empty()) {
      ++local.dropped_empty;
      continue;
    }
    data.examples.push_back(std::move(ex));
  }
  if (stats) *stats = local;
  return data;
}

}  // namespace dne
