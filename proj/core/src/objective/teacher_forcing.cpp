#include "hmap/objective/teacher_forcing.hpp"

#include <algorithm>
#include <cmath>

#include "hmap/errors.hpp"

namespace hmap::objective {

EquivalenceReport teacher_forcing_equivalence(const Decoder& decoder, const Tensor& enc,
                                              const masking::MaskPlan& plan,
                                              const masking::VisibilityMatrix& vis) {
  if (enc.ndim() != 3 || enc.dim(0) != 1) {
    throw ContractError("teacher_forcing_equivalence expects a single sample [1,L,D]");
  }
  const std::size_t N = plan.cols;
  const Tensor detached = enc.detach();
  const Tensor parallel = decode(decoder, detached, plan, vis);
  const std::size_t P = parallel.dim(2);
  const auto par = parallel.data();
  const auto flags = plan.flags();

  EquivalenceReport report;
  const std::size_t D = detached.dim(2);
  const auto all = detached.data();
  for (std::size_t i = 0; i < plan.rows; ++i) {
    const std::size_t prefix = (i + 1) * N;
    const Tensor enc_prefix = Tensor::from(
        {1, prefix, D}, std::vector<real>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(prefix * D)));
    const auto block = masking::leading_block(vis, prefix);
    const Tensor seq = decoder.forward(enc_prefix, masking::to_bool_mask({&block, 1}));
    const auto s = seq.data();
    for (std::size_t k = i * N; k < prefix; ++k) {
      if (!flags[k]) continue;
      ++report.compared;
      for (std::size_t j = 0; j < P; ++j) {
        const double dev = std::abs(static_cast<double>(par[k * P + j]) - static_cast<double>(s[k * P + j]));
        report.max_abs_deviation = std::max(report.max_abs_deviation, dev);
      }
    }
  }
  return report;
}

EquivalenceReport teacher_forcing_equivalence(const backbone::Encoder& encoder,
                                              const Decoder& decoder, const Tensor& tokens,
                                              const masking::MaskPlan& plan,
                                              const masking::VisibilityMatrix& vis) {
  const Tensor enc = encoder.forward(tokens, plan);
  return teacher_forcing_equivalence(decoder, enc, plan, vis);
}

}  // namespace hmap::objective
