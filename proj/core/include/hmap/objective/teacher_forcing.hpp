#pragma once

#include "hmap/backbone/encoder.hpp"
#include "hmap/masking/mask_plan.hpp"
#include "hmap/masking/visibility.hpp"
#include "hmap/objective/decoder.hpp"

namespace hmap::objective {

struct EquivalenceReport {
  double max_abs_deviation = 0.0;  // over masked predictions
  std::size_t compared = 0;        // masked tokens compared
};

/// Row-wise factorization check for one sample.
///
/// (a) decodes all L positions at once under `vis`; (b) decodes row by row,
/// feeding only the prefix rows 0..i (identical encoder features) with the
/// leading block of `vis`, and keeps row i's predictions. A matrix that never
/// lets a query see a later row yields identical predictions.
/// enc is [1, L, De].
EquivalenceReport teacher_forcing_equivalence(const Decoder& decoder, const Tensor& enc,
                                              const masking::MaskPlan& plan,
                                              const masking::VisibilityMatrix& vis);

/// Same check starting from raw tokens [1, L, P]: encodes under the plan first.
EquivalenceReport teacher_forcing_equivalence(const backbone::Encoder& encoder,
                                              const Decoder& decoder, const Tensor& tokens,
                                              const masking::MaskPlan& plan,
                                              const masking::VisibilityMatrix& vis);

}  // namespace hmap::objective
