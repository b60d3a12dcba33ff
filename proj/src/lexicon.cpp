#include "dne/lexicon.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dne/error.hpp"

namespace dne {

namespace {

void insert_sorted(std::vector<TokenId>& list, TokenId id) {
  auto it = std::lower_bound(list.begin(), list.end(), id);
  if (it == list.end() || *it != id) list.insert(it, id);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
    if (pos >= line.size()) break;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t' && line[end] != '\r') ++end;
    fields.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return fields;
}

}  // namespace

Vocabulary::Vocabulary() {
  add(std::string(kPadToken));
  add(std::string(kUnkToken));
}

TokenId Vocabulary::add(std::string token) {
  if (index_.count(token)) throw LoadError("duplicate token '" + token + "'");
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void SynonymGraph::add_edge(TokenId head, TokenId synonym) {
  if (head == synonym) return;
  if (head == kPadId || head == kUnkId || synonym == kPadId || synonym == kUnkId) return;
  const auto n = static_cast<TokenId>(adjacency_.size());
  if (head < 0 || head >= n || synonym < 0 || synonym >= n)
    throw ParameterError("synonym edge references an id outside the vocabulary");
  insert_sorted(adjacency_[static_cast<std::size_t>(head)], synonym);
}

void SynonymGraph::symmetrize() {
  const auto snapshot = adjacency_;
  for (std::size_t head = 0; head < snapshot.size(); ++head)
    for (TokenId syn : snapshot[head]) insert_sorted(adjacency_[static_cast<std::size_t>(syn)], static_cast<TokenId>(head));
}

std::vector<TokenId> SynonymGraph::substitutes(TokenId id) const {
  std::vector<TokenId> out;
  const auto syns = synonyms(id);
  out.reserve(syns.size() + 1);
  out.push_back(id);
  out.insert(out.end(), syns.begin(), syns.end());
  return out;
}

std::size_t SynonymGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& list : adjacency_) n += list.size();
  return n;
}

std::vector<TokenId> Neighborhood::vertices() const {
  std::vector<TokenId> out(one_hop);
  out.insert(out.end(), two_hop_only.begin(), two_hop_only.end());
  return out;
}

Neighborhood neighborhood(const SynonymGraph& graph, TokenId center, bool expand) {
  Neighborhood nbh;
  nbh.center = center;
  nbh.one_hop = graph.substitutes(center);
  if (!expand) return nbh;

  std::vector<TokenId> sorted_one_hop(nbh.one_hop);
  std::sort(sorted_one_hop.begin(), sorted_one_hop.end());
  std::vector<TokenId> reach;
  for (TokenId j : nbh.one_hop)
    for (TokenId k : graph.synonyms(j))
      if (!std::binary_search(sorted_one_hop.begin(), sorted_one_hop.end(), k)) reach.push_back(k);
  std::sort(reach.begin(), reach.end());
  reach.erase(std::unique(reach.begin(), reach.end()), reach.end());
  nbh.two_hop_only = std::move(reach);
  return nbh;
}

LoadedEmbeddings load_embeddings(const std::filesystem::path& path, std::size_t expected_dim) {
  if (expected_dim == 0) throw ParameterError("embedding dimension must be positive");
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open embedding file " + path.string());

  LoadedEmbeddings out;
  std::vector<double> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_whitespace(line);
    if (fields.empty()) continue;
    if (fields.size() != expected_dim + 1)
      throw LoadError("expected " + std::to_string(expected_dim) + " values, found " +
                          std::to_string(fields.size() - 1),
                      line_no);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double v = 0.0;
      const auto f = fields[k];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || ptr != f.data() + f.size() || !std::isfinite(v))
        throw LoadError("bad number '" + std::string(f) + "'", line_no);
      rows.push_back(v);
    }
    try {
      out.vocab.add(std::string(fields[0]));
    } catch (const LoadError& e) {
      throw LoadError(e.what(), line_no);
    }
  }

  const std::size_t loaded = rows.size() / expected_dim;
  out.embeddings = EmbeddingMatrix(out.vocab.size(), expected_dim);
  auto& data = out.embeddings.data();
  std::copy(rows.begin(), rows.end(), data.begin() + 2 * static_cast<std::ptrdiff_t>(expected_dim));
  if (loaded > 0) {
    auto unk = out.embeddings.row(kUnkId);
    for (std::size_t r = 0; r < loaded; ++r)
      for (std::size_t c = 0; c < expected_dim; ++c) unk[c] += rows[r * expected_dim + c];
    for (double& v : unk) v /= static_cast<double>(loaded);
  }
  return out;
}

LoadedSynonyms load_synonyms(const std::filesystem::path& path, const Vocabulary& vocab,
                             bool symmetrize) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open synonym file " + path.string());

  LoadedSynonyms out{SynonymGraph(vocab.size()), 0};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (trim(view).empty()) continue;
    const auto tab = view.find('\t');
    const auto head_text = trim(view.substr(0, tab));
    const auto head = vocab.find(head_text);
    if (!head) {
      ++out.dropped;
      continue;
    }
    if (tab == std::string_view::npos) continue;
    std::string_view rest = view.substr(tab + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      auto comma = rest.find(',', pos);
      if (comma == std::string_view::npos) comma = rest.size();
      const auto token = trim(rest.substr(pos, comma - pos));
      if (!token.empty()) {
        if (auto syn = vocab.find(token))
          out.graph.add_edge(*head, *syn);
        else
          ++out.dropped;
      }
      pos = comma + 1;
    }
  }
  if (symmetrize) out.graph.symmetrize();
  return out;
}

Lexicon load_lexicon(const std::filesystem::path& embeddings_path,
                     const std::filesystem::path& synonyms_path, std::size_t dim, bool symmetrize) {
  auto emb = load_embeddings(embeddings_path, dim);
  auto syn = load_synonyms(synonyms_path, emb.vocab, symmetrize);
  return Lexicon{std::move(emb.vocab), std::move(emb.embeddings), std::move(syn.graph)};
}

}  // namespace dne
