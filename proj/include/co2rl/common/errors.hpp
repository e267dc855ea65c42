#pragma once

#include <stdexcept>
#include <string>

namespace co2rl {

// Error categories map onto CLI exit codes: config/contract problems are
// validation failures (exit 2), solver/integrity/training problems are
// numerical failures (exit 3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ContractViolation : Error {
    using Error::Error;
};

struct SolverFailure : Error {
    using Error::Error;
};

struct IntegrityFailure : Error {
    using Error::Error;
};

struct TrainingError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace co2rl
