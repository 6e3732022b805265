#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace create {

std::string shape_str(const std::vector<std::size_t>& shape);

/// Base class for all engine errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Operand shapes incompatible with an operation.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, std::vector<std::size_t> lhs, std::vector<std::size_t> rhs);

  const std::string op;
  const std::vector<std::size_t> lhs;
  const std::vector<std::size_t> rhs;
};

/// An operation produced NaN or infinity.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(std::string op);

  const std::string op;
};

/// Malformed external data (IDX files, tables, checkpoints).
class FormatError : public Error {
 public:
  FormatError(std::string context, const std::string& what);

  const std::string context;
};

/// Bad configuration key or value.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what);

  const std::string key;
};

}  // namespace create
