#pragma once

#include <vector>

#include "dne/lexicon.hpp"
#include "dne/simplex.hpp"

namespace dne {

/// A sentence whose every position is a point in the convex hull of its
/// neighborhood's embeddings.
struct VirtualSentence {
  std::vector<TokenId> ids;
  std::vector<Neighborhood> nbhs;
  std::vector<SimplexPoint> points;

  std::size_t size() const { return ids.size(); }

  /// Throws ShapeError when lengths disagree.
  void validate() const;

  /// Per-position vertex lists (one_hop ++ two_hop_only).
  std::vector<std::vector<TokenId>> vertex_lists() const;

  /// beta = 1 on the center at every position, over the given neighborhoods.
  static VirtualSentence at_centers(std::vector<TokenId> ids, std::vector<Neighborhood> nbhs);
};

}  // namespace dne
