#pragma once

#include <stdexcept>
#include <string>

namespace hdexpit {

/// Invalid configuration, shapes, indices or preconditions. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Corrupt or inconsistent data: digest/version mismatches, truncated
/// payloads, trajectories that fail their own integrity checks. Exit code 3.
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered in a numerical pipeline. Exit code 4.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The scripted expert gave up on a context after bounded replans.
/// Callers resample the context; this never escapes to the CLI.
struct ExpertFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace hdexpit
