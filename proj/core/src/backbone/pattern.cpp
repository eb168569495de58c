#include "hmap/backbone/pattern.hpp"

#include "hmap/errors.hpp"

namespace hmap::backbone {

std::string BackbonePattern::str() const {
  std::string out;
  out.reserve(blocks.size());
  for (auto b : blocks) out += static_cast<char>(b);
  return out;
}

BackbonePattern parse_pattern(std::string_view text) {
  if (text.empty()) throw ParseError("backbone pattern must not be empty");
  BackbonePattern pattern;
  for (std::size_t i = 0; i < text.size(); ++i) {
    switch (text[i]) {
      case 'M': pattern.blocks.push_back(BlockKind::mamba); break;
      case 'T': pattern.blocks.push_back(BlockKind::transformer); break;
      default:
        throw ParseError("backbone pattern '" + std::string(text) + "': unexpected '" +
                         std::string(1, text[i]) + "' at position " + std::to_string(i) +
                         " (only M and T are allowed)");
    }
  }
  return pattern;
}

}  // namespace hmap::backbone
