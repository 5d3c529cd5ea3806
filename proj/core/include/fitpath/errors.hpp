#ifndef FITPATH_ERRORS_HPP
#define FITPATH_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace fitpath {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// exit codes: ConfigError -> 2, InfeasibleError -> 3, DivergenceError -> 4,
// everything else -> 1.

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Requested compression target is below the achievable floor.
struct InfeasibleError : std::runtime_error {
    InfeasibleError(const std::string& msg, double achievable_floor)
        : std::runtime_error(msg), floor(achievable_floor) {}
    double floor;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fitpath

#endif
