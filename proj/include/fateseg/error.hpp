#pragma once

#include <stdexcept>
#include <string>

namespace fateseg {

// Error kinds surfaced by the engine. The CLI maps these onto its exit-code
// contract; library callers can switch on code() instead of parsing messages.
enum class Err {
  MissingFile,
  HeaderParse,
  SizeMismatch,
  NonFiniteData,
  IoFailure,
  IndexOutOfRange,
  OverlapPolicyViolation,
  NonFiniteInput,
  GeometryMismatch,
  EmptySupportSet,
  LengthMismatch,
  ZeroVector,
  EmptyLibrary,
  JTooLarge,
  FingerprintMismatch,
  GridLargerThanMask,
  ShapeMismatch,
  EmptyAnatomicalSet,
  HeterogeneousShapes,
  ResidualModeInvalid,
  MissingAttn,
  LabelUnknown,
  DimMismatch,
  TooFewVolumes,
  InvalidAxisValue,
  ConfigParse,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}

  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& what) { throw Error(code, what); }

}  // namespace fateseg
