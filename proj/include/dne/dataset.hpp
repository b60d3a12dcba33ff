#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dne/lexicon.hpp"

namespace dne {

struct Example {
  std::vector<TokenId> ids;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Example> examples;
  std::string split = "train";
  std::size_t class_count = 2;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

struct IngestStats {
  std::size_t lines = 0;
  std::size_t tokens = 0;
  std::size_t oov = 0;
  std::size_t truncated = 0;
  std::size_t dropped_empty = 0;
};

/// Reads `label<TAB>text` lines; text is lowercased and split on whitespace,
/// unknown tokens map to UNK and sequences are cut at max_len. Throws
/// LoadError (with the line number) on a malformed line or a label >= classes.
Dataset ingest_tsv(const std::filesystem::path& path, const Vocabulary& vocab,
                   std::size_t class_count, std::size_t max_len, const std::string& split = "train",
                   IngestStats* stats = nullptr);

}  // namespace dne
