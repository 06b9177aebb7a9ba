#include "layerlab/surgery.hpp"

#include <numeric>

#include "layerlab/errors.hpp"

namespace layerlab {

namespace {

void check_index(int64_t layer_count, int64_t i, const char* what) {
  if (layer_count < 1) throw PlanError("layer count must be >= 1");
  if (i < 0 || i >= layer_count)
    throw PlanError(std::string(what) + " index " + std::to_string(i) +
                    " out of range [0, " + std::to_string(layer_count) + ")");
}

std::vector<int64_t> identity_steps(int64_t layer_count) {
  std::vector<int64_t> s(static_cast<size_t>(layer_count));
  std::iota(s.begin(), s.end(), int64_t{0});
  return s;
}

}  // namespace

std::string LayerPlan::label() const {
  switch (kind) {
    case PlanKind::kIdentity:
      return "identity";
    case PlanKind::kSkip:
      return "skip:" + std::to_string(a);
    case PlanKind::kSwap:
      return "swap:" + std::to_string(a) + "-" + std::to_string(b);
    case PlanKind::kRepeat:
      return "repeat:" + std::to_string(a) + "x" + std::to_string(b);
    case PlanKind::kCustom: {
      std::string s = "custom:";
      for (size_t i = 0; i < steps.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(steps[i]);
      }
      return s;
    }
  }
  return "?";
}

bool LayerPlan::is_identity(int64_t layer_count) const {
  if (static_cast<int64_t>(steps.size()) != layer_count) return false;
  for (int64_t i = 0; i < layer_count; ++i)
    if (steps[static_cast<size_t>(i)] != i) return false;
  return true;
}

void LayerPlan::validate(int64_t layer_count) const {
  if (layer_count < 1) throw PlanError("layer count must be >= 1");
  for (int64_t s : steps)
    if (s < 0 || s >= layer_count)
      throw PlanError("plan " + label() + " references layer " + std::to_string(s) +
                      " outside [0, " + std::to_string(layer_count) + ")");
}

LayerPlan plan_identity(int64_t layer_count) {
  if (layer_count < 1) throw PlanError("layer count must be >= 1");
  return {identity_steps(layer_count), PlanKind::kIdentity, -1, -1};
}

LayerPlan plan_skip(int64_t layer_count, int64_t skipped) {
  check_index(layer_count, skipped, "skip");
  LayerPlan p{{}, PlanKind::kSkip, skipped, -1};
  for (int64_t i = 0; i < layer_count; ++i)
    if (i != skipped) p.steps.push_back(i);
  return p;
}

LayerPlan plan_swap(int64_t layer_count, int64_t i, int64_t j) {
  check_index(layer_count, i, "swap");
  check_index(layer_count, j, "swap");
  if (i == j) return plan_identity(layer_count);
  LayerPlan p{identity_steps(layer_count), PlanKind::kSwap, std::min(i, j), std::max(i, j)};
  std::swap(p.steps[static_cast<size_t>(i)], p.steps[static_cast<size_t>(j)]);
  return p;
}

LayerPlan plan_repeat(int64_t layer_count, int64_t layer, int64_t count) {
  check_index(layer_count, layer, "repeat");
  if (count < 1) throw PlanError("repeat count must be >= 1, got " + std::to_string(count));
  if (count == 1) return plan_identity(layer_count);
  LayerPlan p{{}, PlanKind::kRepeat, layer, count};
  for (int64_t i = 0; i < layer_count; ++i) {
    p.steps.push_back(i);
    if (i == layer)
      for (int64_t r = 1; r < count; ++r) p.steps.push_back(i);
  }
  return p;
}

LayerPlan plan_custom(int64_t layer_count, std::vector<int64_t> steps) {
  LayerPlan p{std::move(steps), PlanKind::kCustom, -1, -1};
  p.validate(layer_count);
  if (p.is_identity(layer_count)) p.kind = PlanKind::kIdentity;
  return p;
}

}  // namespace layerlab
