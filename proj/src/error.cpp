#include "fedsim/error.hpp"

namespace fedsim {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kDatasetNotFound: return "dataset-not-found";
    case ErrorCode::kAlreadyRegistered: return "already-registered";
    case ErrorCode::kRunInProgress: return "run-in-progress";
    case ErrorCode::kTrainingDiverged: return "training-diverged";
    case ErrorCode::kWorkerFailure: return "worker-failure";
    case ErrorCode::kInfeasiblePartition: return "infeasible-partition";
    case ErrorCode::kMalformedManifest: return "malformed-manifest";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kUnknownFormatVersion: return "unknown-format-version";
    case ErrorCode::kLayoutMismatch: return "layout-mismatch";
    case ErrorCode::kRatioOutOfRange: return "ratio-out-of-range";
    case ErrorCode::kUnknownClient: return "unknown-client";
    case ErrorCode::kInstanceTooLarge: return "instance-too-large";
    case ErrorCode::kOrphanRecord: return "orphan-record";
    case ErrorCode::kStorageIo: return "storage-io";
    case ErrorCode::kTaskNotFound: return "task-not-found";
    case ErrorCode::kTruncatedFrame: return "truncated-frame";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kOversizePayload: return "oversize-payload";
    case ErrorCode::kUnknownMessageType: return "unknown-message-type";
    case ErrorCode::kMalformedPayload: return "malformed-payload";
    case ErrorCode::kRegistryUnreachable: return "registry-unreachable";
    case ErrorCode::kBindFailure: return "bind-failure";
    case ErrorCode::kConnectionFailed: return "connection-failed";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kQuorumLost: return "quorum-lost";
    case ErrorCode::kClientFailure: return "client-failure";
    case ErrorCode::kRemoteError: return "remote-error";
  }
  return "unknown";
}

}  // namespace fedsim
