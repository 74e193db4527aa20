#pragma once

#include <stdexcept>
#include <string>

namespace multipoet {

/// Base class for all library errors. `exit_code` mirrors the CLI
/// convention: 2 = configuration/input error, 3 = numerical failure.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& what, int exit_code)
        : std::runtime_error(name + ": " + what),
          name_(std::move(name)),
          exit_code_(exit_code) {}

    const std::string& name() const noexcept { return name_; }
    int exit_code() const noexcept { return exit_code_; }

private:
    std::string name_;
    int exit_code_;
};

struct ConfigError : Error {
    ConfigError(const std::string& name, const std::string& what) : Error(name, what, 2) {}
};

struct NumericError : Error {
    NumericError(const std::string& name, const std::string& what) : Error(name, what, 3) {}
};

struct InvalidMatrix : NumericError {
    explicit InvalidMatrix(const std::string& what) : NumericError("InvalidMatrix", what) {}
};

struct NotPositiveDefinite : NumericError {
    explicit NotPositiveDefinite(const std::string& what)
        : NumericError("NotPositiveDefinite", what) {}
};

struct InvalidResidualDiagonal : NumericError {
    explicit InvalidResidualDiagonal(const std::string& what)
        : NumericError("InvalidResidualDiagonal", what) {}
};

struct ClusteringFailed : NumericError {
    explicit ClusteringFailed(const std::string& what) : NumericError("ClusteringFailed", what) {}
};

struct GenerationFailed : NumericError {
    explicit GenerationFailed(const std::string& what) : NumericError("GenerationFailed", what) {}
};

struct InsufficientData : ConfigError {
    explicit InsufficientData(const std::string& what) : ConfigError("InsufficientData", what) {}
};

struct InvalidFactorCount : ConfigError {
    explicit InvalidFactorCount(const std::string& what)
        : ConfigError("InvalidFactorCount", what) {}
};

struct InvalidKMax : ConfigError {
    explicit InvalidKMax(const std::string& what) : ConfigError("InvalidKMax", what) {}
};

struct InvalidInput : ConfigError {
    explicit InvalidInput(const std::string& what) : ConfigError("InvalidInput", what) {}
};

struct InvalidConfig : ConfigError {
    explicit InvalidConfig(const std::string& what) : ConfigError("InvalidConfig", what) {}
};

struct UnknownGroup : ConfigError {
    explicit UnknownGroup(const std::string& what) : ConfigError("UnknownGroup", what) {}
};

struct InfeasibleConstraint : ConfigError {
    explicit InfeasibleConstraint(const std::string& what)
        : ConfigError("InfeasibleConstraint", what) {}
};

}  // namespace multipoet
