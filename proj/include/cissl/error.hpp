#pragma once

#include <stdexcept>
#include <string>

namespace cissl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or truncated corpus files, label bytes out of range.
struct CorpusError : Error {
  using Error::Error;
};

// Invalid specs, bad run configs, schema violations.
struct ConfigError : Error {
  using Error::Error;
};

// Tensor dimension mismatches, unknown head indices.
struct ShapeError : Error {
  using Error::Error;
};

// Degenerate numeric inputs (zero-norm rows and the like).
struct NumericError : Error {
  using Error::Error;
};

// Stage failures inside a pipeline (empty partition, missing artifact).
struct PipelineError : Error {
  using Error::Error;
};

// Unreadable/unwritable paths, corrupt checkpoints.
struct IoError : Error {
  using Error::Error;
};

}  // namespace cissl
