#pragma once

#include <stdexcept>
#include <string>

namespace dal {

// Every failure raised by the library derives from Error so callers can
// catch the family at once and still dispatch on the concrete kind.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
  public:
    using Error::Error;
};

// A propagated line left the region it was supposed to describe.
class ConsistencyError : public Error {
  public:
    using Error::Error;
};

class ScheduleError : public Error {
  public:
    using Error::Error;
};

class TrainingError : public Error {
  public:
    using Error::Error;
};

class ResourceError : public Error {
  public:
    ResourceError(const std::string &what, double coverage)
        : Error(what), coverage_(coverage) {}
    // Fraction of the requested z range that was scanned before giving up.
    double coverage() const noexcept { return coverage_; }

  private:
    double coverage_;
};

class UnderflowError : public Error {
  public:
    using Error::Error;
};

class UndefinedTestError : public Error {
  public:
    using Error::Error;
};

class CovarianceError : public Error {
  public:
    using Error::Error;
};

class CalibrationError : public Error {
  public:
    using Error::Error;
};

class FormatError : public Error {
  public:
    using Error::Error;
};

} // namespace dal
