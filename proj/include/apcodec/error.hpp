#pragma once

#include <stdexcept>
#include <string>

namespace apcodec {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller handed in data that violates an operation's precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An empty waveform or spectrum where content is required.
class EmptyInputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Inconsistent or unsupported configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Frame counts that do not line up with the downsampling ratio.
class FramingError : public Error {
 public:
  using Error::Error;
};

/// Operation requested on a model in the wrong causality mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared inside a network; `where` names the layer.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& where, const std::string& what)
      : Error(where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Audio that cannot be used as codec input (stereo, wrong rate, bad encoding).
class AudioFormatError : public Error {
 public:
  using Error::Error;
};

class BitstreamError : public Error {
 public:
  enum class Kind { bad_magic, bad_version, truncated, invalid };
  BitstreamError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace apcodec
