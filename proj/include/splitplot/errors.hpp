#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace splitplot {

// Exit-code buckets used by the CLI: configuration problems map to exit
// code 2, numerical failures to 3.
enum class ErrorKind { config = 2, numerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string name, const std::string& message)
      : std::runtime_error(message), kind_(kind), name_(std::move(name)) {}

  ErrorKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

 private:
  ErrorKind kind_;
  std::string name_;
};

#define SPLITPLOT_ERROR(Name, Kind)                                        \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& message)                              \
        : Error(ErrorKind::Kind, #Name, message) {}                        \
  }

SPLITPLOT_ERROR(InvalidDesign, config);
SPLITPLOT_ERROR(ConfigError, config);
SPLITPLOT_ERROR(SchemaError, config);
SPLITPLOT_ERROR(CountMismatch, config);
SPLITPLOT_ERROR(DegenerateWholePlot, config);

SPLITPLOT_ERROR(SpaceTooLarge, numerical);
SPLITPLOT_ERROR(NotPsd, numerical);
SPLITPLOT_ERROR(Underflow, numerical);
SPLITPLOT_ERROR(RejectionBudgetExceeded, numerical);
SPLITPLOT_ERROR(EmptyArm, numerical);
SPLITPLOT_ERROR(InsufficientArms, numerical);
SPLITPLOT_ERROR(SingularSigmaXX, numerical);
SPLITPLOT_ERROR(SingularSigmaVV, numerical);
SPLITPLOT_ERROR(SingularPerp, numerical);
SPLITPLOT_ERROR(RankDeficientDesignMatrix, numerical);
SPLITPLOT_ERROR(IoError, config);

#undef SPLITPLOT_ERROR

}  // namespace splitplot
