#pragma once

#include <stdexcept>
#include <string>

namespace dcsmc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every log-weight of a population is -inf; no valid reweighting exists.
struct AllWeightsZero : Error {
  AllWeightsZero() : Error("all importance weights are zero") {}
  explicit AllWeightsZero(const std::string& what) : Error(what) {}
};

struct MalformedTree : Error {
  int node_id;
  MalformedTree(int id, const std::string& what)
      : Error("node " + std::to_string(id) + ": " + what), node_id(id) {}
};

struct ProposalUnsupported : Error {
  using Error::Error;
};

struct ArityTooLarge : Error {
  using Error::Error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

struct NotPowerOfTwo : Error {
  using Error::Error;
};

struct QuadratureNonFinite : Error {
  using Error::Error;
};

struct NonPositiveVariance : Error {
  using Error::Error;
};

struct RootImproperPosterior : Error {
  using Error::Error;
};

struct TooLarge : Error {
  using Error::Error;
};

struct ChecksumMismatch : Error {
  using Error::Error;
};

struct UnknownModelTag : Error {
  using Error::Error;
};

struct TruncatedPayload : Error {
  using Error::Error;
};

struct WorkerUnreachable : Error {
  using Error::Error;
};

struct MalformedRow : Error {
  long line;
  MalformedRow(long line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
};

struct ProprietyViolation : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace dcsmc
