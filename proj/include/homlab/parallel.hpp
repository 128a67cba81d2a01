#pragma once

#include <cstddef>
#include <functional>

namespace homlab {

/// Worker count used by parallel_for; 1 means run inline.
void set_thread_count(int threads);
int thread_count();

/// Calls body(i) for i in [0, n). Iterations must write disjoint state; the
/// caller reduces afterwards in index order so results do not depend on
/// scheduling. Calls made from inside a worker run inline.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace homlab
