#pragma once

#include <stdexcept>
#include <string>

namespace pse {

// Invalid argument / precondition violation on an operation.
struct invalid_argument_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Tensor shapes incompatible with the requested operation.
struct shape_error : invalid_argument_error {
  using invalid_argument_error::invalid_argument_error;
};

// Gather/scatter index outside the addressed extent.
struct index_error : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Inconsistent configuration (K vs N/n, r not dividing N, unknown family, ...).
struct config_error : invalid_argument_error {
  using invalid_argument_error::invalid_argument_error;
};

// Bad data: unreadable files, non-finite coordinates, malformed checkpoints.
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed text or binary input, with a 1-based line number where known.
struct parse_error : data_error {
  int line = 0;
  parse_error(const std::string& msg, int line_no)
      : data_error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
  explicit parse_error(const std::string& msg) : data_error(msg) {}
};

}  // namespace pse
