#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace hmap::backbone {

enum class BlockKind : char { mamba = 'M', transformer = 'T' };

/// Block stacking order, e.g. "MMMTMMMT" = three SSM blocks then one
/// attention block, twice.
struct BackbonePattern {
  std::vector<BlockKind> blocks;

  std::size_t size() const { return blocks.size(); }
  std::string str() const;
  friend bool operator==(const BackbonePattern&, const BackbonePattern&) = default;
};

/// One block per character of [MT]+; anything else throws ParseError.
BackbonePattern parse_pattern(std::string_view text);

}  // namespace hmap::backbone
