#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mmcav {

/// Base for every error raised by the workbench. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input outside the domain where a formula or model is defined.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Unknown named item (preset, pipeline, command).
class LookupError : public Error {
public:
    using Error::Error;
};

/// Input that carries no usable signal (zero field, empty geometry).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    CapacityError(const std::string& what, int suggested_resolution)
        : Error(what), suggested_resolution_(suggested_resolution) {}
    int suggested_resolution() const noexcept { return suggested_resolution_; }

private:
    int suggested_resolution_;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> residuals)
        : Error(what), residuals_(std::move(residuals)) {}
    const std::vector<double>& residuals() const noexcept { return residuals_; }

private:
    std::vector<double> residuals_;
};

class EmptySelectionError : public Error {
public:
    using Error::Error;
};

class NoResonanceError : public Error {
public:
    using Error::Error;
};

class UnderConstrainedError : public Error {
public:
    UnderConstrainedError(const std::string& what, std::vector<std::string> free_parameters)
        : Error(what), free_parameters_(std::move(free_parameters)) {}
    const std::vector<std::string>& free_parameters() const noexcept { return free_parameters_; }

private:
    std::vector<std::string> free_parameters_;
};

class NoBifurcationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    ShapeError(const std::string& what, int peak_count) : Error(what), peak_count_(peak_count) {}
    int peak_count() const noexcept { return peak_count_; }

private:
    int peak_count_;
};

/// Malformed configuration or command line; carries the offending field path.
class UsageError : public Error {
public:
    UsageError(const std::string& what, std::string field = {})
        : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class PlotSpecError : public Error {
public:
    using Error::Error;
};

}  // namespace mmcav
