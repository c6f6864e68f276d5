#pragma once

// Minibatch gradient kernels. The batch is cut into fixed chunks of
// kGradientChunk samples, each chunk is summed serially, and the chunk sums
// are reduced in chunk order. The result therefore does not depend on the
// thread count, and the serial and OpenMP paths agree bit for bit.

#include <span>

#include "vtmig/forecast/forecast.hpp"

namespace vtmig::forecast {

inline constexpr std::size_t kGradientChunk = 8;

/// Plain left-to-right accumulation; the reference the chunked kernels are
/// checked against.
double batch_gradient_reference(const ForecastModel& model, std::span<const Sample* const> batch,
                                std::span<double> grad);

/// Sum of squared errors over the batch; grad receives the summed gradient.
double batch_gradient(const ForecastModel& model, std::span<const Sample* const> batch,
                      std::span<double> grad, Exec exec);

bool openmp_available();

}  // namespace vtmig::forecast
