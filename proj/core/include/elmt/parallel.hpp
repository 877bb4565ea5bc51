#ifndef ELMT_PARALLEL_HPP
#define ELMT_PARALLEL_HPP

#include <cstdint>
#include <functional>

namespace elmt {

// Resolve an effective worker count: `requested` if positive, otherwise the
// ELMT_THREADS environment variable, otherwise hardware concurrency.
int resolve_threads(int requested);

// Run fn(i) for i in [0, count) on up to `threads` workers. Work items are
// handed out through a shared atomic counter; every item must write only to
// its own output slot, which keeps results identical for any worker count.
// Exceptions thrown by fn are captured and the first one is rethrown.
void parallel_for(std::int64_t count, int threads, const std::function<void(std::int64_t)>& fn);

}  // namespace elmt

#endif
