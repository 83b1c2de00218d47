#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <hoversim/control.h>
#include <hoversim/session.h>

/*
 * Binary wire protocol. Every frame is a 12-byte header followed by a payload:
 *
 *   u32 payload_len | u16 version | u16 type | u32 session_id | payload
 *
 * All integers and floats are little-endian. See docs/protocol.md for the
 * payload layouts.
 */

namespace hoversim::wire
{

constexpr std::uint16_t kVersion    = 1;
constexpr std::size_t   kHeaderSize = 12;
constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MsgType : std::uint16_t
{
  // requests
  CreateSession = 0x01,
  SetControl    = 0x02,
  Step          = 0x03,
  SetHitlPose   = 0x04,
  SensorRequest = 0x05,
  Status        = 0x06,
  PollFrames    = 0x07,
  CloseSession  = 0x08,

  // replies
  Ack            = 0x80,
  SessionCreated = 0x81,
  StepResult     = 0x83,
  SensorFrames   = 0x85,
  StatusReply    = 0x86,
  Error          = 0xFF,
};

/// Framing violation; the connection is closed after a final error frame.
class FrameError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A payload that does not match its declared type's layout.
class PayloadError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Header
{
  std::uint32_t payload_len = 0;
  std::uint16_t version     = kVersion;
  std::uint16_t type        = 0;
  std::uint32_t session     = 0;
};

struct Message
{
  MsgType     type    = MsgType::Ack;
  std::uint32_t session = 0;
  std::string payload;
};

/* byte buffers //{ */

class Writer {
public:
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void vec3(const Eigen::Vector3d& v);
  void bytes(std::string_view b);
  /// u32 length followed by the bytes
  void str(std::string_view s);

  const std::string& data() const {
    return buf_;
  }

  std::string take() {
    return std::move(buf_);
  }

private:
  std::string buf_;
};

class Reader {
public:
  explicit Reader(std::string_view data) : data_(data) {
  }

  std::uint8_t    u8();
  std::uint16_t   u16();
  std::uint32_t   u32();
  std::uint64_t   u64();
  float           f32();
  double          f64();
  Eigen::Vector3d vec3();
  std::string     str();
  std::string_view bytes(std::size_t n);

  std::size_t remaining() const {
    return data_.size() - pos_;
  }

  /// Throws PayloadError if bytes are left over.
  void end() const;

private:
  std::string_view data_;
  std::size_t      pos_ = 0;
};

//}

/* framing //{ */

std::string encode(const Message& m);

/// Parses and checks a 12-byte header (version, size bound).
Header decodeHeader(std::string_view bytes);

//}

/* payloads //{ */

void        writeControl(Writer& w, std::uint32_t uav, const ControlInput& input);
std::pair<std::uint32_t, ControlInput> readControl(Reader& r);

void     writeState(Writer& w, const UavState& s);
UavState readState(Reader& r);

void        writeFrame(Writer& w, const TaggedFrame& f);
TaggedFrame readFrame(Reader& r);

void       writeStepResult(Writer& w, const StepResult& s);
StepResult readStepResult(Reader& r);

void          writeStatus(Writer& w, const SessionStatus& s);
SessionStatus readStatus(Reader& r);

std::string errorPayload(std::string_view code, std::string_view message);

struct ErrorReply
{
  std::string code;
  std::string message;
};

ErrorReply readError(Reader& r);

//}

}  // namespace hoversim::wire
