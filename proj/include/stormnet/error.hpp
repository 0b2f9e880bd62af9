#pragma once

#include <stdexcept>
#include <string>

namespace stormnet {

/// Broad failure classes; the CLI maps each one to a process exit code.
enum class ErrorCategory {
  io = 1,
  bad_input = 2,
  data_quality = 3,
  numerical = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

#define STORMNET_DEFINE_ERROR(Name, Category)                                  \
  class Name : public Error {                                                  \
   public:                                                                     \
    explicit Name(const std::string& what)                                     \
        : Error(ErrorCategory::Category, std::string(#Name ": ") + what) {}    \
  }

// numerics
STORMNET_DEFINE_ERROR(ShapeMismatch, bad_input);
STORMNET_DEFINE_ERROR(EmptyNeighborhood, numerical);
STORMNET_DEFINE_ERROR(DetachedTensor, bad_input);
// geo_graph
STORMNET_DEFINE_ERROR(ZeroVariance, data_quality);
STORMNET_DEFINE_ERROR(LengthMismatch, bad_input);
// ingest
STORMNET_DEFINE_ERROR(DegenerateDataset, data_quality);
STORMNET_DEFINE_ERROR(UnknownStorm, bad_input);
STORMNET_DEFINE_ERROR(StormTooShort, data_quality);
STORMNET_DEFINE_ERROR(MissingData, data_quality);
STORMNET_DEFINE_ERROR(ParseError, bad_input);
STORMNET_DEFINE_ERROR(IoError, io);
// model
STORMNET_DEFINE_ERROR(InvalidVariant, bad_input);
STORMNET_DEFINE_ERROR(CorruptCheckpoint, bad_input);
STORMNET_DEFINE_ERROR(VersionMismatch, bad_input);
STORMNET_DEFINE_ERROR(GraphMismatch, bad_input);
// training
STORMNET_DEFINE_ERROR(NonFiniteLoss, numerical);
STORMNET_DEFINE_ERROR(EmptyDataset, bad_input);
// correction
STORMNET_DEFINE_ERROR(AlignmentError, bad_input);
STORMNET_DEFINE_ERROR(EmptyWindow, bad_input);
STORMNET_DEFINE_ERROR(StationMismatch, bad_input);
// synth
STORMNET_DEFINE_ERROR(InvalidSpec, bad_input);
STORMNET_DEFINE_ERROR(NotPSD, bad_input);

#undef STORMNET_DEFINE_ERROR

}  // namespace stormnet
