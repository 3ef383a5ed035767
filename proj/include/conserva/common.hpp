// Shared error types, exit-code mapping and the thread helper used by every
// stage of the toolkit.
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace conserva {

// Thrown on bad configuration (unknown system, invalid parameter ranges...).
// The CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a numerical guard fires (degenerate gradients, diverging
// integration, too many skipped samples...). CLI exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a pipeline stage can't find an upstream artifact. CLI exit 4.
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitArtifact = 4;

inline constexpr const char* kToolkitVersion = "0.1.0";

// Worker count: CONSERVA_THREADS if set (>=1), otherwise the hardware count.
int worker_count();

// Runs fn(begin, end) over disjoint chunks of [0, n). Deterministic results
// are the caller's contract: workers must only write to per-index slots.
// With worker_count()==1 this is a plain loop.
void parallel_chunks(std::int64_t n,
                     const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace conserva
