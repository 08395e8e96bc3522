#pragma once

#include <stdexcept>
#include <string>

namespace greylag {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GREYLAG_DEFINE_ERROR(name)     \
  class name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

// graph
GREYLAG_DEFINE_ERROR(CycleError);
GREYLAG_DEFINE_ERROR(MissingInputError);
GREYLAG_DEFINE_ERROR(ShapeError);
GREYLAG_DEFINE_ERROR(WeakWriteError);
GREYLAG_DEFINE_ERROR(NonDifferentiableError);

// distributions
GREYLAG_DEFINE_ERROR(DomainError);
GREYLAG_DEFINE_ERROR(UnsupportedTransformError);

// kernels
GREYLAG_DEFINE_ERROR(DivergenceError);
GREYLAG_DEFINE_ERROR(StateError);

// engine
GREYLAG_DEFINE_ERROR(ScheduleError);
GREYLAG_DEFINE_ERROR(CoverageError);
GREYLAG_DEFINE_ERROR(InitError);
GREYLAG_DEFINE_ERROR(ExhaustedError);

// regression
GREYLAG_DEFINE_ERROR(DegenerateError);
GREYLAG_DEFINE_ERROR(LinkDomainError);

// diagnostics
GREYLAG_DEFINE_ERROR(DiagnosticError);

// cli
GREYLAG_DEFINE_ERROR(ConfigError);
GREYLAG_DEFINE_ERROR(DataError);

#undef GREYLAG_DEFINE_ERROR

/// Raised when a weak function or a density fails while updating the graph.
class EvaluationError : public Error {
 public:
  EvaluationError(std::string node, const std::string& what)
      : Error("evaluation of node '" + node + "' failed: " + what),
        node_(std::move(node)) {}

  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

}  // namespace greylag
