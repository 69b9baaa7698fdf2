#pragma once

#include <stdexcept>
#include <string>

namespace forumfuse {

// Base of every error the library throws. `code()` is a stable
// machine-readable identifier reused by the HTTP layer and the CLI.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& message) : Error("validation_error", message) {}
};

class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& message) : Error("schema_error", message) {}
};

class InfeasibleError : public Error {
public:
    explicit InfeasibleError(const std::string& message) : Error("infeasible_configuration", message) {}
};

class EmptyEnsembleError : public Error {
public:
    explicit EmptyEnsembleError(const std::string& message = "fusion requires at least one score block")
        : Error("empty_ensemble", message) {}
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& message, std::string dimension = {})
        : Error("training_error", message), dimension_(std::move(dimension)) {}

    // Empty when the failure is not tied to a single dimension.
    const std::string& dimension() const noexcept { return dimension_; }

private:
    std::string dimension_;
};

class ProviderUnavailable : public Error {
public:
    explicit ProviderUnavailable(const std::string& message) : Error("provider_unavailable", message) {}
};

class ScoringError : public Error {
public:
    ScoringError(const std::string& message, std::string raw_response)
        : Error("scoring_error", message), raw_response_(std::move(raw_response)) {}

    const std::string& raw_response() const noexcept { return raw_response_; }

private:
    std::string raw_response_;
};

class ConflictError : public Error {
public:
    explicit ConflictError(const std::string& message) : Error("conflict", message) {}
};

class NotFoundError : public Error {
public:
    explicit NotFoundError(const std::string& message) : Error("not_found", message) {}
};

}  // namespace forumfuse
