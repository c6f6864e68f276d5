#include "vtmig/forecast/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vtmig::forecast {

double batch_gradient_reference(const ForecastModel& model, std::span<const Sample* const> batch,
                                std::span<double> grad) {
  double sse = 0.0;
  for (const Sample* s : batch) sse += model.accumulate_gradient(s->inputs, s->target, grad);
  return sse;
}

double batch_gradient(const ForecastModel& model, std::span<const Sample* const> batch,
                      std::span<double> grad, Exec exec) {
  const std::size_t n_chunks = (batch.size() + kGradientChunk - 1) / kGradientChunk;
  if (n_chunks <= 1) return batch_gradient_reference(model, batch, grad);
  const std::size_t width = grad.size();
  std::vector<double> partial(n_chunks * width, 0.0);
  std::vector<double> sse(n_chunks, 0.0);
  const auto chunks = static_cast<std::ptrdiff_t>(n_chunks);
#pragma omp parallel for schedule(static) if (exec == Exec::OpenMP)
  for (std::ptrdiff_t c = 0; c < chunks; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const std::size_t begin = ci * kGradientChunk;
    const std::size_t end = std::min(batch.size(), begin + kGradientChunk);
    std::span<double> slot(partial.data() + ci * width, width);
    for (std::size_t i = begin; i < end; ++i) {
      sse[ci] += model.accumulate_gradient(batch[i]->inputs, batch[i]->target, slot);
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    const double* src = partial.data() + c * width;
    for (std::size_t i = 0; i < width; ++i) grad[i] += src[i];
    total += sse[c];
  }
  return total;
}

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace vtmig::forecast
