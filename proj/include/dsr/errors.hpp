#pragma once

#include <stdexcept>
#include <string>

namespace dsr {

// Base for every error raised by the library. kind() is a stable
// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept = 0;
};

#define DSR_DEFINE_ERROR(Name, tag)                                   \
    class Name : public Error {                                       \
    public:                                                           \
        using Error::Error;                                           \
        const char* kind() const noexcept override { return tag; }    \
    }

DSR_DEFINE_ERROR(DimensionError, "dimension_error");
DSR_DEFINE_ERROR(ConfigError, "config_error");
DSR_DEFINE_ERROR(NumericError, "numeric_error");
DSR_DEFINE_ERROR(UsageError, "usage_error");
DSR_DEFINE_ERROR(CoverageError, "coverage_error");
DSR_DEFINE_ERROR(DegenerateDirectionError, "degenerate_direction");
DSR_DEFINE_ERROR(IoError, "io_error");

#undef DSR_DEFINE_ERROR

class MissingArtifactError : public Error {
public:
    explicit MissingArtifactError(std::string path)
        : Error("missing artifact: " + path), path_(std::move(path)) {}
    const char* kind() const noexcept override { return "missing_artifact"; }
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace dsr
