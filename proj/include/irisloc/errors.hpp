#ifndef IRISLOC_ERRORS_HPP
#define IRISLOC_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace irisloc {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or map dimensions do not agree with what an operation needs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied configuration or input data (CLI exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// File system or file format failure (CLI exit code 2).
class IoError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public ValidationError {
 public:
  ManifestError(std::size_t line, std::string field, const std::string& what)
      : ValidationError("manifest line " + std::to_string(line) +
                        (field.empty() ? std::string() : " field '" + field + "'") + ": " +
                        what),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class CheckpointError : public IoError {
 public:
  CheckpointError(std::string section, const std::string& what)
      : IoError("checkpoint " + section + ": " + what), section_(std::move(section)) {}

  /// Which part of the file was rejected: "magic", "version", "config",
  /// "parameter '<name>'", "checksum", ...
  const std::string& section() const noexcept { return section_; }

 private:
  std::string section_;
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::size_t step, std::vector<std::string> sample_ids)
      : Error(make_message(step, sample_ids)), step_(step), sample_ids_(std::move(sample_ids)) {}

  std::size_t step() const noexcept { return step_; }
  const std::vector<std::string>& sample_ids() const noexcept { return sample_ids_; }

 private:
  static std::string make_message(std::size_t step, const std::vector<std::string>& ids) {
    std::string msg = "non-finite loss at step " + std::to_string(step) + " (samples:";
    for (const auto& id : ids) msg += " " + id;
    return msg + ")";
  }

  std::size_t step_;
  std::vector<std::string> sample_ids_;
};

}  // namespace irisloc

#endif  // IRISLOC_ERRORS_HPP
