#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedsim {

enum class ErrorCode {
  kInvalidArgument,
  kInvalidConfig,
  kDatasetNotFound,
  kAlreadyRegistered,
  kRunInProgress,
  kTrainingDiverged,
  kWorkerFailure,
  kInfeasiblePartition,
  kMalformedManifest,
  kShapeMismatch,
  kUnknownFormatVersion,
  kLayoutMismatch,
  kRatioOutOfRange,
  kUnknownClient,
  kInstanceTooLarge,
  kOrphanRecord,
  kStorageIo,
  kTaskNotFound,
  kTruncatedFrame,
  kBadMagic,
  kVersionMismatch,
  kOversizePayload,
  kUnknownMessageType,
  kMalformedPayload,
  kRegistryUnreachable,
  kBindFailure,
  kConnectionFailed,
  kTimeout,
  kQuorumLost,
  kClientFailure,
  kRemoteError,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fedsim
