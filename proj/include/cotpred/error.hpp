#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cotpred {

/// Root of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    explicit SchemaError(std::string column)
        : Error("schema error: missing column for field '" + column + "'"), column_(std::move(column)) {}
    const std::string &column() const noexcept { return column_; }

private:
    std::string column_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t row, const std::string &what)
        : Error("parse error at row " + std::to_string(row) + ": " + what), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class CleaningError : public Error {
public:
    explicit CleaningError(std::string column)
        : Error("cleaning error: column '" + column + "' has no valid values"), column_(std::move(column)) {}
    const std::string &column() const noexcept { return column_; }

private:
    std::string column_;
};

class SplitError : public Error {
public:
    using Error::Error;
};

class WindowError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class SelectionError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    GenerationError(std::size_t example_index, std::size_t completed, const std::string &what)
        : Error("generation error at example " + std::to_string(example_index) + ": " + what),
          example_index_(example_index), completed_(completed) {}
    std::size_t example_index() const noexcept { return example_index_; }
    /// Demonstrations already persisted to the checkpoint when the error hit.
    std::size_t completed() const noexcept { return completed_; }

private:
    std::size_t example_index_;
    std::size_t completed_;
};

class AssemblyError : public Error {
public:
    using Error::Error;
};

class PredictionParseError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    BackendError(int last_status, const std::string &what)
        : Error("backend error (status " + std::to_string(last_status) + "): " + what), last_status_(last_status) {}
    /// HTTP status of the final attempt, 0 for transport failures and mocks.
    int last_status() const noexcept { return last_status_; }

private:
    int last_status_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CacheError : public Error {
public:
    CacheError(std::size_t line, const std::string &what)
        : Error("cache error at line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace cotpred
