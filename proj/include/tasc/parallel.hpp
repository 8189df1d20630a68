#pragma once

#include <cstddef>
#include <functional>

namespace tasc {

/// Number of worker threads used by intra-stage loops. Defaults to 1.
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Runs fn(begin, end) over [0, n) split into contiguous chunks of `grain`
/// items. Chunk boundaries depend only on n and grain, never on the thread
/// count, so any per-chunk partial result combined in chunk order is
/// bitwise identical for every thread setting.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace tasc
