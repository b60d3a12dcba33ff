#include "dne/virtual_sentence.hpp"

#include <string>

#include "dne/error.hpp"

namespace dne {

void VirtualSentence::validate() const {
  if (nbhs.size() != ids.size() || points.size() != ids.size())
    throw ShapeError("virtual sentence has " + std::to_string(ids.size()) + " ids, " +
                     std::to_string(nbhs.size()) + " neighborhoods and " +
                     std::to_string(points.size()) + " points");
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (points[i].size() != nbhs[i].size() || points[i].eta.size() != nbhs[i].size())
      throw ShapeError("position " + std::to_string(i) + ": point of size " +
                       std::to_string(points[i].size()) + " over " +
                       std::to_string(nbhs[i].size()) + " vertices");
}

std::vector<std::vector<TokenId>> VirtualSentence::vertex_lists() const {
  std::vector<std::vector<TokenId>> out;
  out.reserve(nbhs.size());
  for (const auto& n : nbhs) out.push_back(n.vertices());
  return out;
}

VirtualSentence VirtualSentence::at_centers(std::vector<TokenId> ids, std::vector<Neighborhood> nbhs) {
  VirtualSentence vs{std::move(ids), std::move(nbhs), {}};
  vs.points.reserve(vs.nbhs.size());
  for (const auto& n : vs.nbhs) vs.points.push_back(SimplexPoint::vertex(n.size(), 0));
  return vs;
}

}  // namespace dne
