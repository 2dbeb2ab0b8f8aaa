#pragma once

#include <stdexcept>
#include <string>

namespace bwsim {

// Base for everything thrown by the simulator and the experiment suites.
struct SimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidConfig : SimError {
    explicit InvalidConfig(const std::string& reason)
        : SimError("invalid config: " + reason) {}
};

struct DomainError : SimError {
    using SimError::SimError;
};

struct ConfigParseError : SimError {
    ConfigParseError(const std::string& file, int line, const std::string& what)
        : SimError(file + ":" + std::to_string(line) + ": " + what) {}
};

struct BufferPlacementFailed : SimError {
    using SimError::SimError;
};

struct KneeNotFound : SimError {
    using SimError::SimError;
};

struct UnknownScenario : SimError {
    using SimError::SimError;
};

struct NotCalibrated : SimError {
    using SimError::SimError;
};

struct ClustersInseparable : SimError {
    using SimError::SimError;
};

struct AlignmentFailed : SimError {
    using SimError::SimError;
};

struct Uncalibrated : SimError {
    using SimError::SimError;
};

struct SpeculationDisabled : SimError {
    using SimError::SimError;
};

struct IoError : SimError {
    using SimError::SimError;
};

struct UnknownSubcommand : SimError {
    using SimError::SimError;
};

}  // namespace bwsim
