#ifndef ELMT_ERRORS_HPP
#define ELMT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace elmt {

// Problems with the input data itself: malformed CSV, duplicate cells under
// the `error` policy, contrasts that are not estimable on the given design.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures of the numerical machinery: singular plug-in matrices, bootstrap
// redraw caps, calibration breakdowns.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace elmt

#endif
