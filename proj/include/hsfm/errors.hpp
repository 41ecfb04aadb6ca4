#ifndef HSFM_ERRORS_HPP
#define HSFM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace hsfm {

// Process exit codes used by the CLI.
enum class ExitCode : int { ok = 0, config = 2, data = 3, numeric = 4 };

// Base class for every error the library raises. The exit code tells the CLI
// how to report it.
class Error : public std::runtime_error {
  public:
    Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

  private:
    ExitCode code_;
};

class InputError : public Error {
  public:
    explicit InputError(const std::string& what) : Error("input error: " + what, ExitCode::data) {}
};

class GeometryError : public Error {
  public:
    explicit GeometryError(const std::string& what) : Error("geometry error: " + what, ExitCode::numeric) {}
};

class ResourceError : public Error {
  public:
    explicit ResourceError(const std::string& what) : Error("resource error: " + what, ExitCode::numeric) {}
};

class CollinearityError : public Error {
  public:
    explicit CollinearityError(const std::string& what) : Error("collinearity error: " + what, ExitCode::numeric) {}
};

class ConditioningError : public Error {
  public:
    explicit ConditioningError(const std::string& what) : Error("conditioning error: " + what, ExitCode::numeric) {}
};

class SchemaError : public Error {
  public:
    explicit SchemaError(const std::string& what) : Error("schema error: " + what, ExitCode::data) {}
};

class DataError : public Error {
  public:
    explicit DataError(const std::string& what) : Error("data error: " + what, ExitCode::data) {}
};

class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& what) : Error("config error: " + what, ExitCode::config) {}
};

class IoError : public Error {
  public:
    explicit IoError(const std::string& what) : Error("io error: " + what, ExitCode::data) {}
};

// Wraps an error raised inside a named pipeline stage, keeping its exit code.
class StageError : public Error {
  public:
    StageError(const std::string& stage, const Error& inner)
        : Error("[" + stage + "] " + inner.what(), inner.code()) {}
};

} // namespace hsfm

#endif
