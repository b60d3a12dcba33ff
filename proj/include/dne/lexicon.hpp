#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dne {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Dense token <-> id mapping. PAD and UNK always occupy ids 0 and 1.
class Vocabulary {
 public:
  Vocabulary();

  /// Appends a token; throws LoadError on a duplicate.
  TokenId add(std::string token);

  std::optional<TokenId> find(std::string_view token) const;
  TokenId lookup_or_unk(std::string_view token) const {
    return find(token).value_or(kUnkId);
  }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Row-major |V| x dim table of embedding vectors.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t dim) : dim_(dim), data_(rows * dim, 0.0) {}

  std::size_t rows() const { return dim_ ? data_.size() / dim_ : 0; }
  std::size_t dim() const { return dim_; }

  std::span<double> row(TokenId id) {
    return {data_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  std::span<const double> row(TokenId id) const {
    return {data_.data() + static_cast<std::size_t>(id) * dim_, dim_};
  }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

/// Directed substitution relation. Storage excludes self loops; the exposed
/// substitution set S(id) always starts with id itself.
class SynonymGraph {
 public:
  SynonymGraph() = default;
  explicit SynonymGraph(std::size_t vocab_size) : adjacency_(vocab_size) {}

  /// Adds head -> synonym. Self loops and edges touching PAD/UNK are ignored.
  void add_edge(TokenId head, TokenId synonym);
  /// Adds the reverse of every stored edge.
  void symmetrize();

  std::size_t vocab_size() const { return adjacency_.size(); }
  /// Stored synonyms, ascending, self excluded.
  std::span<const TokenId> synonyms(TokenId id) const {
    return adjacency_.at(static_cast<std::size_t>(id));
  }
  /// S(id): id first, then its synonyms ascending.
  std::vector<TokenId> substitutes(TokenId id) const;
  std::size_t edge_count() const;

 private:
  std::vector<std::vector<TokenId>> adjacency_;
};

/// One-hop set S(center) and the extra vertices of the two-hop union B(center).
struct Neighborhood {
  TokenId center = kPadId;
  std::vector<TokenId> one_hop;       // center first, then ascending
  std::vector<TokenId> two_hop_only;  // ascending, disjoint from one_hop

  std::size_t size() const { return one_hop.size() + two_hop_only.size(); }
  TokenId at(std::size_t j) const {
    return j < one_hop.size() ? one_hop[j] : two_hop_only[j - one_hop.size()];
  }
  /// one_hop ++ two_hop_only.
  std::vector<TokenId> vertices() const;
};

/// expand=false gives S(center); expand=true adds the two-hop vertices.
Neighborhood neighborhood(const SynonymGraph& graph, TokenId center, bool expand);

struct LoadedEmbeddings {
  Vocabulary vocab;
  EmbeddingMatrix embeddings;
};

/// Reads `token v1 ... vd` lines. PAD gets the zero row, UNK the mean of the
/// loaded rows (zero when the file is empty).
LoadedEmbeddings load_embeddings(const std::filesystem::path& path, std::size_t expected_dim);

struct LoadedSynonyms {
  SynonymGraph graph;
  std::size_t dropped = 0;  // tokens (heads or synonyms) missing from the vocabulary
};

/// Reads `head<TAB>syn1,syn2,...` lines.
LoadedSynonyms load_synonyms(const std::filesystem::path& path, const Vocabulary& vocab,
                             bool symmetrize = false);

/// Everything a model and the attacks need about words.
struct Lexicon {
  Vocabulary vocab;
  EmbeddingMatrix embeddings;
  SynonymGraph synonyms;
};

Lexicon load_lexicon(const std::filesystem::path& embeddings_path,
                     const std::filesystem::path& synonyms_path, std::size_t dim,
                     bool symmetrize = false);

}  // namespace dne
