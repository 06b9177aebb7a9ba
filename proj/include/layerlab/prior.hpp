#pragma once

#include <cstdint>

#include "layerlab/table.hpp"

namespace layerlab {

struct IntRange {
  int64_t lo = 0;
  int64_t hi = 0;
  bool valid() const { return lo >= 1 && hi >= lo; }
};

enum class Teacher { kLinear, kRandomMlp };

// Synthetic supervised-task prior. Tasks are drawn i.i.d.: standard-normal
// features, a random teacher scores each row, and labels split the rows at
// the empirical median of the noisy teacher output, so both classes are
// always present for n >= 2.
struct TaskPrior {
  IntRange feature_count{4, 8};
  IntRange sample_count{64, 96};
  Teacher teacher = Teacher::kLinear;
  double noise_std = 0.0;
  uint64_t seed = 0;
};

// Deterministic in (prior, stream): the same pair always yields the same
// table. `stream` distinguishes tasks drawn from one prior.
Table sample_task(const TaskPrior& prior, uint64_t stream);

inline constexpr double kDefaultSupportFraction = 0.25;
inline constexpr double kDefaultProbeFraction = 0.25;

// Stratified three-way split into support / probe-train / query index sets.
// With the defaults the probe-train partition equals half of the nominal
// train split (support plus probe-train). Throws SplitError when any split
// would receive fewer than two rows of either class.
Episode split_episode(std::shared_ptr<const Table> table, double support_fraction,
                      double probe_fraction, uint64_t seed);

// Episode -> model-ready matrices. When standardize is set, feature columns
// are shifted/scaled by support-row statistics (zero-variance columns map to
// zero) and the same transform is applied to probe and query rows.
EpisodeView materialize(const Episode& episode, bool standardize = true);

}  // namespace layerlab
