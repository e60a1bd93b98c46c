#ifndef DDRACE_ERRORS_HPP
#define DDRACE_ERRORS_HPP

#include <stdexcept>

namespace ddrace {

// Data or validation problem; the CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical abort (non-finite likelihood etc.); CLI exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ddrace

#endif
