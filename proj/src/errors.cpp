#include "create/errors.hpp"

#include <sstream>

namespace create {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

ShapeError::ShapeError(std::string op_, std::vector<std::size_t> lhs_, std::vector<std::size_t> rhs_)
    : Error(op_ + ": incompatible shapes " + shape_str(lhs_) + " and " + shape_str(rhs_)),
      op(std::move(op_)),
      lhs(std::move(lhs_)),
      rhs(std::move(rhs_)) {}

NonFiniteError::NonFiniteError(std::string op_)
    : Error(op_ + ": produced a non-finite value"), op(std::move(op_)) {}

FormatError::FormatError(std::string context_, const std::string& what)
    : Error(context_ + ": " + what), context(std::move(context_)) {}

ConfigError::ConfigError(std::string key_, const std::string& what)
    : Error("config key '" + key_ + "': " + what), key(std::move(key_)) {}

}  // namespace create
