#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace elastic {

// Root of every error raised by the library. Each subclass maps to one
// failure category; the CLI translates them into exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericsError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class UnstableSystemError : public Error {
 public:
  using Error::Error;
};

class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ReplayMismatchError : public Error {
 public:
  ReplayMismatchError(const std::string& what, std::size_t event_index)
      : Error(what + " (event " + std::to_string(event_index) + ")"),
        index_(event_index) {}
  std::size_t event_index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class WorkerAbort : public Error {
 public:
  WorkerAbort(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace elastic
