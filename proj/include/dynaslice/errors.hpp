#pragma once

#include <stdexcept>
#include <string>

namespace dynaslice {

// Error taxonomy; the CLI maps each type to a distinct exit code.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated call contract (bad shapes, bad ranges, sequence too long).
struct precondition_error : error {
  using error::error;
};

// Malformed or inconsistent on-disk artifacts.
struct format_error : error {
  using error::error;
};

// Infeasible slice schedules.
struct schedule_error : error {
  using error::error;
};

// Iteration caps, non-finite values inside numeric kernels.
struct numerical_error : error {
  using error::error;
};

// Non-finite loss during optimization.
struct training_error : error {
  using error::error;
};

// Malformed evaluation task items.
struct task_error : error {
  using error::error;
};

struct io_error : error {
  using error::error;
};

}  // namespace dynaslice
