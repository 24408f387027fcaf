#pragma once

namespace mbflow {

/// Keeps large temporaries on the heap instead of fresh mappings. The solver
/// allocates many short-lived matrices of a few megabytes per iteration; with
/// glibc defaults each one is a separate mmap/munmap pair. No-op elsewhere.
void tune_allocator();

/// Worker count for parallel sections: `requested` if positive, otherwise 1,
/// capped by the MBFLOW_THREADS environment variable when it is set.
int thread_limit(int requested);

}  // namespace mbflow
