#include "gpatch/common.hpp"

#include <algorithm>

namespace gpatch {

std::string to_string(NodeRef node) { return std::string(side_name(node.side)) + " #" + std::to_string(node.index); }

std::size_t NodeMatrix::present_count() const {
  return static_cast<std::size_t>(std::count(present_.begin(), present_.end(), std::uint8_t{1}));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

}  // namespace gpatch
