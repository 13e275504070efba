#pragma once

#include "attenmia/attn_data.h"

namespace attenmia {

// Anything that maps a token sequence to its per-layer, per-head attention.
// Implementations must be pure: the same tokens give the same stack.
class AttentionModel {
 public:
  virtual ~AttentionModel() = default;
  virtual AttentionStack attention(const TokenSequence& tokens) const = 0;
  virtual int vocab_size() const = 0;
};

}  // namespace attenmia
