#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vfr {

// Root of every error raised by the library. `category()` is a stable
// machine-readable tag (the CLI prints it and maps it to an exit code).
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define VFR_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                   \
   public:                                                      \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  };

// numcore
VFR_DEFINE_ERROR(ShapeMismatch)
VFR_DEFINE_ERROR(NonBinaryLabel)
VFR_DEFINE_ERROR(NotScalarLoss)

// dataio
VFR_DEFINE_ERROR(EmptyDataset)
VFR_DEFINE_ERROR(DuplicateInteraction)
VFR_DEFINE_ERROR(InsufficientNegatives)
VFR_DEFINE_ERROR(UnsupportedFormat)
VFR_DEFINE_ERROR(DimensionMismatch)
VFR_DEFINE_ERROR(InfeasibleDensity)
VFR_DEFINE_ERROR(TooFewPositives)
VFR_DEFINE_ERROR(IoError)

// recmodels / fedsim
VFR_DEFINE_ERROR(UnknownItem)
VFR_DEFINE_ERROR(EmptyLocalData)
VFR_DEFINE_ERROR(StaleUpload)
VFR_DEFINE_ERROR(DivergedRun)
VFR_DEFINE_ERROR(CorruptCheckpoint)

// attacks
VFR_DEFINE_ERROR(NotTargetOwner)

// gdmpd
VFR_DEFINE_ERROR(InvalidScheduleBounds)
VFR_DEFINE_ERROR(StepOutOfRange)
VFR_DEFINE_ERROR(EmptyCorpus)

// harness
VFR_DEFINE_ERROR(NoEligibleUsers)
VFR_DEFINE_ERROR(MissingSplit)
VFR_DEFINE_ERROR(UnknownSubcommand)
VFR_DEFINE_ERROR(InvalidConfig)

#undef VFR_DEFINE_ERROR

class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t line_no, const std::string& what)
      : Error("MalformedLine", "line " + std::to_string(line_no) + ": " + what),
        line_no_(line_no) {}
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

class ConfigParseError : public Error {
 public:
  ConfigParseError(std::size_t line, const std::string& what)
      : Error("ConfigParseError",
              line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace vfr
