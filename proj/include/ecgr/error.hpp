#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ecgr {

// Invalid input, configuration or precondition. The CLI maps it to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A training loss or gradient became non-finite. Carries the training log
// (CSV) recorded up to the failure. The CLI maps it to exit code 2.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what, std::string log_csv = {})
      : std::runtime_error(what), log_csv_(std::move(log_csv)) {}

  [[nodiscard]] const std::string& log_csv() const { return log_csv_; }

 private:
  std::string log_csv_;
};

}  // namespace ecgr
