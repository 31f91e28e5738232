#include "fedsim/protocol.hpp"

namespace fedsim::proto {

namespace {

std::string read_str(ByteReader& r) {
  auto s = r.str16();
  if (!valid_utf8(s)) throw Error(ErrorCode::kMalformedPayload, "string is not valid UTF-8");
  return s;
}

std::string read_long_str(ByteReader& r) {
  auto b = r.blob32();
  std::string s(b.begin(), b.end());
  if (!valid_utf8(s)) throw Error(ErrorCode::kMalformedPayload, "string is not valid UTF-8");
  return s;
}

void write_long_str(ByteWriter& w, std::string_view s) {
  w.blob32(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

struct PayloadWriter {
  ByteWriter& w;

  void operator()(const Register& m) {
    w.str16(m.client_id);
    w.str16(m.listen_addr);
    w.u32(m.ttl_s);
  }
  void operator()(const RegisterAck& m) { w.u32(m.ttl_s); }
  void operator()(const ListClients&) {}
  void operator()(const ClientList& m) {
    w.u32(static_cast<std::uint32_t>(m.entries.size()));
    for (const auto& e : m.entries) {
      w.str16(e.client_id);
      w.str16(e.addr);
    }
  }
  void operator()(const Heartbeat& m) { w.str16(m.client_id); }
  void operator()(const TrainRequest& m) {
    w.str16(m.task_id);
    w.u32(m.round);
    w.u32(m.hyper.epochs);
    w.u32(m.hyper.batch_size);
    w.f64(m.hyper.learning_rate);
    w.f64(m.hyper.momentum);
    w.u64(m.hyper.seed);
    w.blob32(m.update);
  }
  void operator()(const TrainResult& m) {
    w.str16(m.client_id);
    w.u32(m.round);
    w.u32(m.num_samples);
    w.f64(m.train_loss);
    w.blob32(m.update);
  }
  void operator()(const TestRequest& m) {
    w.str16(m.task_id);
    w.u32(m.round);
    w.blob32(m.model);
  }
  void operator()(const TestResult& m) {
    w.f64(m.loss);
    w.f64(m.accuracy);
    w.u32(m.num_samples);
  }
  void operator()(const Metrics& m) {
    w.u8(m.level);
    write_long_str(w, m.body);
  }
  void operator()(const Stop&) {}
  void operator()(const ErrorReply& m) {
    w.u16(m.code);
    w.str16(m.detail);
  }
};

Message read_payload(MsgType type, ByteReader& r) {
  switch (type) {
    case MsgType::kRegister: {
      Register m;
      m.client_id = read_str(r);
      m.listen_addr = read_str(r);
      m.ttl_s = r.u32();
      return m;
    }
    case MsgType::kRegisterAck: return RegisterAck{r.u32()};
    case MsgType::kListClients: return ListClients{};
    case MsgType::kClientList: {
      ClientList m;
      auto n = r.u32();
      // Each entry needs at least its two length prefixes.
      if (static_cast<std::uint64_t>(n) * 4 > r.remaining()) throw Error(ErrorCode::kMalformedPayload, "entry count too large");
      m.entries.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        ClientEntry e;
        e.client_id = read_str(r);
        e.addr = read_str(r);
        m.entries.push_back(std::move(e));
      }
      return m;
    }
    case MsgType::kHeartbeat: return Heartbeat{read_str(r)};
    case MsgType::kTrainRequest: {
      TrainRequest m;
      m.task_id = read_str(r);
      m.round = r.u32();
      m.hyper.epochs = r.u32();
      m.hyper.batch_size = r.u32();
      m.hyper.learning_rate = r.f64();
      m.hyper.momentum = r.f64();
      m.hyper.seed = r.u64();
      m.update = r.blob32();
      return m;
    }
    case MsgType::kTrainResult: {
      TrainResult m;
      m.client_id = read_str(r);
      m.round = r.u32();
      m.num_samples = r.u32();
      m.train_loss = r.f64();
      m.update = r.blob32();
      return m;
    }
    case MsgType::kTestRequest: {
      TestRequest m;
      m.task_id = read_str(r);
      m.round = r.u32();
      m.model = r.blob32();
      return m;
    }
    case MsgType::kTestResult: {
      TestResult m;
      m.loss = r.f64();
      m.accuracy = r.f64();
      m.num_samples = r.u32();
      return m;
    }
    case MsgType::kMetrics: {
      Metrics m;
      m.level = r.u8();
      m.body = read_long_str(r);
      return m;
    }
    case MsgType::kStop: return Stop{};
    case MsgType::kError: {
      ErrorReply m;
      m.code = r.u16();
      m.detail = read_str(r);
      return m;
    }
  }
  throw Error(ErrorCode::kUnknownMessageType, "message type " + std::to_string(static_cast<int>(type)));
}

bool known_type(std::uint8_t t) { return (t >= 1 && t <= 11) || t == 15; }

}  // namespace

Hyperparams to_hyperparams(const TrainOptions& o) {
  return {o.epochs, o.batch_size, o.learning_rate, o.momentum, o.seed};
}

TrainOptions to_train_options(const Hyperparams& h) {
  TrainOptions o;
  o.epochs = h.epochs;
  o.batch_size = h.batch_size;
  o.learning_rate = h.learning_rate;
  o.momentum = h.momentum;
  o.seed = h.seed;
  return o;
}

MsgType type_of(const Message& m) {
  static constexpr MsgType kTypes[] = {
      MsgType::kRegister,    MsgType::kRegisterAck, MsgType::kListClients, MsgType::kClientList,
      MsgType::kHeartbeat,   MsgType::kTrainRequest, MsgType::kTrainResult, MsgType::kTestRequest,
      MsgType::kTestResult,  MsgType::kMetrics,     MsgType::kStop,        MsgType::kError,
  };
  static_assert(std::size(kTypes) == std::variant_size_v<Message>);
  return kTypes[m.index()];
}

std::string_view type_name(MsgType t) {
  switch (t) {
    case MsgType::kRegister: return "REGISTER";
    case MsgType::kRegisterAck: return "REGISTER_ACK";
    case MsgType::kListClients: return "LIST_CLIENTS";
    case MsgType::kClientList: return "CLIENT_LIST";
    case MsgType::kHeartbeat: return "HEARTBEAT";
    case MsgType::kTrainRequest: return "TRAIN_REQUEST";
    case MsgType::kTrainResult: return "TRAIN_RESULT";
    case MsgType::kTestRequest: return "TEST_REQUEST";
    case MsgType::kTestResult: return "TEST_RESULT";
    case MsgType::kMetrics: return "METRICS";
    case MsgType::kStop: return "STOP";
    case MsgType::kError: return "ERROR";
  }
  return "?";
}

FrameHeader parse_header(std::span<const std::uint8_t, kHeaderSize> h) {
  if (h[0] != kMagic0 || h[1] != kMagic1) throw Error(ErrorCode::kBadMagic, "not a frame");
  if (h[2] != kVersion) throw Error(ErrorCode::kVersionMismatch, "protocol version " + std::to_string(h[2]));
  ByteReader r(h.subspan(4));
  auto len = r.u32();
  if (len > kMaxPayload) throw Error(ErrorCode::kOversizePayload, std::to_string(len) + " byte payload");
  if (!known_type(h[3])) throw Error(ErrorCode::kUnknownMessageType, "message type " + std::to_string(h[3]));
  return {static_cast<MsgType>(h[3]), len};
}

Bytes encode_payload(const Message& m) {
  Bytes out;
  ByteWriter w(out);
  std::visit(PayloadWriter{w}, m);
  return out;
}

Message decode_payload(MsgType type, std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  auto m = read_payload(type, r);
  if (!r.done()) throw Error(ErrorCode::kMalformedPayload, "trailing bytes in " + std::string(type_name(type)));
  return m;
}

Bytes encode(const Message& m) {
  auto payload = encode_payload(m);
  if (payload.size() > kMaxPayload) throw Error(ErrorCode::kOversizePayload, std::to_string(payload.size()) + " byte payload");
  Bytes out;
  out.reserve(kHeaderSize + payload.size());
  ByteWriter w(out);
  w.u8(kMagic0);
  w.u8(kMagic1);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(type_of(m)));
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  return out;
}

Message decode(std::span<const std::uint8_t> bytes) {
  // Report a wrong magic or version even on a short read.
  if (!bytes.empty() && bytes[0] != kMagic0) throw Error(ErrorCode::kBadMagic, "not a frame");
  if (bytes.size() > 1 && bytes[1] != kMagic1) throw Error(ErrorCode::kBadMagic, "not a frame");
  if (bytes.size() > 2 && bytes[2] != kVersion) {
    throw Error(ErrorCode::kVersionMismatch, "protocol version " + std::to_string(bytes[2]));
  }
  if (bytes.size() < kHeaderSize) throw Error(ErrorCode::kTruncatedFrame, "short header");
  auto h = parse_header(bytes.first<kHeaderSize>());
  auto rest = bytes.subspan(kHeaderSize);
  if (rest.size() < h.payload_len) throw Error(ErrorCode::kTruncatedFrame, "short payload");
  if (rest.size() > h.payload_len) throw Error(ErrorCode::kMalformedPayload, "bytes after frame");
  return decode_payload(h.type, rest);
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t k = 1; k < len; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates, beyond U+10FFFF.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

ErrorReply ok_reply() { return ErrorReply{static_cast<std::uint16_t>(Status::kOk), ""}; }

ErrorReply error_reply(Status status, std::string detail) {
  if (detail.size() > 1024) detail.resize(1024);
  // Keep the detail valid after truncation by dropping a cut sequence.
  while (!detail.empty() && !valid_utf8(detail)) detail.pop_back();
  return ErrorReply{static_cast<std::uint16_t>(status), std::move(detail)};
}

}  // namespace fedsim::proto
