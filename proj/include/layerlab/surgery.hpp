#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace layerlab {

enum class PlanKind { kIdentity, kSkip, kSwap, kRepeat, kCustom };

// Executable order of layer-block indices for one forward pass. Provenance is
// normalized: any plan whose steps equal [0..L) is tagged identity.
struct LayerPlan {
  std::vector<int64_t> steps;
  PlanKind kind = PlanKind::kCustom;
  int64_t a = -1;  // skip: removed layer; swap: first; repeat: repeated layer
  int64_t b = -1;  // swap: second; repeat: count

  // Compact form used in reports: "identity", "skip:2", "swap:1-3", "repeat:1x3".
  std::string label() const;

  bool is_identity(int64_t layer_count) const;

  // Every entry must lie in [0, layer_count); throws PlanError otherwise.
  void validate(int64_t layer_count) const;
};

LayerPlan plan_identity(int64_t layer_count);
LayerPlan plan_skip(int64_t layer_count, int64_t skipped);
LayerPlan plan_swap(int64_t layer_count, int64_t i, int64_t j);
LayerPlan plan_repeat(int64_t layer_count, int64_t layer, int64_t count);
LayerPlan plan_custom(int64_t layer_count, std::vector<int64_t> steps);

}  // namespace layerlab
