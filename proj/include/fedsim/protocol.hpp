#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedsim/bytes.hpp"
#include "fedsim/model.hpp"
#include "fedsim/types.hpp"

namespace fedsim::proto {

// Frame: 'F' 'L', u8 version, u8 msg_type, u32 payload_len, payload.
inline constexpr std::uint8_t kMagic0 = 0x46;
inline constexpr std::uint8_t kMagic1 = 0x4C;
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 8;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MsgType : std::uint8_t {
  kRegister = 1,
  kRegisterAck = 2,
  kListClients = 3,
  kClientList = 4,
  kHeartbeat = 5,
  kTrainRequest = 6,
  kTrainResult = 7,
  kTestRequest = 8,
  kTestResult = 9,
  kMetrics = 10,
  kStop = 11,
  kError = 15,
};

// ERROR reply codes. 0 doubles as the plain acknowledgement.
enum class Status : std::uint16_t {
  kOk = 0,
  kBusy = 1,
  kProtocol = 2,
  kBadRequest = 3,
  kNotFound = 4,
  kInternal = 5,
};

// An empty listen_addr withdraws the registration; ttl_s = 0 asks for the
// registry default.
struct Register {
  ClientId client_id;
  std::string listen_addr;
  std::uint32_t ttl_s = 0;
  bool operator==(const Register&) const = default;
};

struct RegisterAck {
  std::uint32_t ttl_s = 0;
  bool operator==(const RegisterAck&) const = default;
};

struct ListClients {
  bool operator==(const ListClients&) const = default;
};

struct ClientEntry {
  ClientId client_id;
  std::string addr;
  bool operator==(const ClientEntry&) const = default;
};

struct ClientList {
  std::vector<ClientEntry> entries;
  bool operator==(const ClientList&) const = default;
};

struct Heartbeat {
  ClientId client_id;
  bool operator==(const Heartbeat&) const = default;
};

struct Hyperparams {
  std::uint32_t epochs = 1;
  std::uint32_t batch_size = 32;
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool operator==(const Hyperparams&) const = default;
};

Hyperparams to_hyperparams(const TrainOptions& o);
TrainOptions to_train_options(const Hyperparams& h);

// `update` holds an encoded CompressedUpdate.
struct TrainRequest {
  std::string task_id;
  std::uint32_t round = 0;
  Hyperparams hyper;
  Bytes update;
  bool operator==(const TrainRequest&) const = default;
};

struct TrainResult {
  ClientId client_id;
  std::uint32_t round = 0;
  std::uint32_t num_samples = 0;
  double train_loss = 0.0;
  Bytes update;
  bool operator==(const TrainResult&) const = default;
};

struct TestRequest {
  std::string task_id;
  std::uint32_t round = 0;
  Bytes model;
  bool operator==(const TestRequest&) const = default;
};

struct TestResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::uint32_t num_samples = 0;
  bool operator==(const TestResult&) const = default;
};

// level: 0 task, 1 round, 2 client. The body is a u32-length UTF-8 JSON
// document since round records can outgrow a u16 string.
struct Metrics {
  std::uint8_t level = 0;
  std::string body;
  bool operator==(const Metrics&) const = default;
};

struct Stop {
  bool operator==(const Stop&) const = default;
};

struct ErrorReply {
  std::uint16_t code = 0;
  std::string detail;
  bool operator==(const ErrorReply&) const = default;
};

using Message = std::variant<Register, RegisterAck, ListClients, ClientList, Heartbeat, TrainRequest, TrainResult,
                             TestRequest, TestResult, Metrics, Stop, ErrorReply>;

MsgType type_of(const Message& m);
std::string_view type_name(MsgType t);

struct FrameHeader {
  MsgType type;
  std::uint32_t payload_len = 0;
};

// Validates magic, version, type and length. Throws kBadMagic,
// kVersionMismatch, kUnknownMessageType, kOversizePayload.
FrameHeader parse_header(std::span<const std::uint8_t, kHeaderSize> header);

Bytes encode_payload(const Message& m);
// Throws kMalformedPayload on short, overlong or non-UTF-8 payloads.
Message decode_payload(MsgType type, std::span<const std::uint8_t> payload);

Bytes encode(const Message& m);
// Exactly one complete frame. Throws kTruncatedFrame when bytes end early,
// kMalformedPayload on bytes past the frame, plus parse_header errors.
Message decode(std::span<const std::uint8_t> bytes);

bool valid_utf8(std::string_view s);

ErrorReply ok_reply();
ErrorReply error_reply(Status status, std::string detail);

}  // namespace fedsim::proto
