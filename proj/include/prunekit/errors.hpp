#pragma once

#include <stdexcept>
#include <string>

namespace prunekit {

// Base class for every error the toolkit throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not line up for the requested operation.
struct DimensionError : Error {
  using Error::Error;
};

// A documented API precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// A configuration value is missing, unknown, or out of range.
struct ConfigError : Error {
  using Error::Error;
};

// Runtime input data is unusable (empty corpus, token out of range, ...).
struct InputError : Error {
  using Error::Error;
};

// An index addresses a position that does not exist.
struct IndexError : Error {
  using Error::Error;
};

// A file's structure does not match the expected format.
struct FormatError : Error {
  using Error::Error;
};

// A file's format version is not supported by this build.
struct VersionError : Error {
  using Error::Error;
};

// Stored checksum does not match the recomputed one.
struct CorruptionError : Error {
  using Error::Error;
};

// The filesystem refused a read or write.
struct IoError : Error {
  using Error::Error;
};

}  // namespace prunekit
