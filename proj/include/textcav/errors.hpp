#pragma once

#include <stdexcept>
#include <string>

namespace textcav {

/// Coarse failure class, used by the CLI to pick an exit code.
enum class ErrorKind {
  usage = 1,
  data = 2,
  numerical = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TEXTCAV_DATA_ERROR(Name)                                     \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what)                           \
        : Error(ErrorKind::data, what) {}                            \
  }

TEXTCAV_DATA_ERROR(ShapeError);
TEXTCAV_DATA_ERROR(FormatError);
TEXTCAV_DATA_ERROR(ConsistencyError);
TEXTCAV_DATA_ERROR(ValidationError);
TEXTCAV_DATA_ERROR(DuplicateError);
TEXTCAV_DATA_ERROR(ParseError);
TEXTCAV_DATA_ERROR(PreconditionError);
TEXTCAV_DATA_ERROR(IndexError);
TEXTCAV_DATA_ERROR(IncompleteAnnotationError);
TEXTCAV_DATA_ERROR(NotFoundError);
TEXTCAV_DATA_ERROR(UnavailableError);
TEXTCAV_DATA_ERROR(ContractError);

#undef TEXTCAV_DATA_ERROR

/// Zero or near-zero vector where a direction is required.
class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& what)
      : Error(ErrorKind::numerical, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorKind::numerical, what) {}
};

}  // namespace textcav
