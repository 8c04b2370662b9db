#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

namespace takin {

// Length-prefixed binary framing: length u32 big-endian (payload bytes,
// excluding this 5-byte header), type u8, payload.
enum FrameType : uint8_t {
    FRAME_CONTROL = 0x01, // JSON
    FRAME_AUDIO = 0x02,   // whole PCM frames, s16le
    FRAME_TOKENS = 0x03,  // codec token ids, u32le each
    FRAME_DONE = 0x04,    // JSON stats
    FRAME_ERROR = 0x7F,   // JSON {code, message}
};

inline bool frame_type_valid(uint8_t t) {
    return t == FRAME_CONTROL || t == FRAME_AUDIO || t == FRAME_TOKENS || t == FRAME_DONE ||
           t == FRAME_ERROR;
}

constexpr uint32_t kDefaultMaxFramePayload = 1u << 20; // 1 MiB

struct Frame {
    uint8_t type = FRAME_CONTROL;
    std::string payload;
};

struct ProtocolError : std::runtime_error {
    enum class Kind { BadType, TooLarge, Truncated };
    Kind kind;
    ProtocolError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

inline std::string encode_frame(const Frame& f, uint32_t max_payload = kDefaultMaxFramePayload) {
    if (!frame_type_valid(f.type)) {
        throw ProtocolError(ProtocolError::Kind::BadType, "encode: invalid frame type");
    }
    if (f.payload.size() > max_payload) {
        throw ProtocolError(ProtocolError::Kind::TooLarge, "encode: payload exceeds frame limit");
    }
    const uint32_t len = uint32_t(f.payload.size());
    std::string out;
    out.reserve(5 + f.payload.size());
    out.push_back(char((len >> 24) & 0xFF));
    out.push_back(char((len >> 16) & 0xFF));
    out.push_back(char((len >> 8) & 0xFF));
    out.push_back(char(len & 0xFF));
    out.push_back(char(f.type));
    out.append(f.payload);
    return out;
}

// Reads exactly `n` bytes via the reader, which returns the byte count
// actually read (0 = peer closed).
using ByteReader = std::function<size_t(char*, size_t)>;

// nullopt on clean EOF at a frame boundary; ProtocolError on anything
// malformed (oversized length, unknown type, mid-frame EOF).
inline std::optional<Frame> read_frame(const ByteReader& reader,
                                       uint32_t max_payload = kDefaultMaxFramePayload) {
    unsigned char header[5];
    size_t got = 0;
    while (got < 5) {
        const size_t n = reader(reinterpret_cast<char*>(header) + got, 5 - got);
        if (n == 0) {
            if (got == 0) return std::nullopt;
            throw ProtocolError(ProtocolError::Kind::Truncated, "read: EOF inside frame header");
        }
        got += n;
    }
    const uint32_t len = (uint32_t(header[0]) << 24) | (uint32_t(header[1]) << 16) |
                         (uint32_t(header[2]) << 8) | uint32_t(header[3]);
    if (len > max_payload) {
        throw ProtocolError(ProtocolError::Kind::TooLarge, "read: frame length exceeds limit");
    }
    if (!frame_type_valid(header[4])) {
        throw ProtocolError(ProtocolError::Kind::BadType, "read: unknown frame type");
    }
    Frame f;
    f.type = header[4];
    f.payload.resize(len);
    size_t off = 0;
    while (off < len) {
        const size_t n = reader(f.payload.data() + off, len - off);
        if (n == 0) throw ProtocolError(ProtocolError::Kind::Truncated, "read: EOF inside payload");
        off += n;
    }
    return f;
}

// In-memory decode used by tests and by buffered consumers. Advances `off`
// past the frame on success.
inline Frame decode_frame(const std::string& buf, size_t& off,
                          uint32_t max_payload = kDefaultMaxFramePayload) {
    size_t cursor = off;
    auto reader = [&](char* dst, size_t want) -> size_t {
        const size_t avail = buf.size() - cursor;
        const size_t n = std::min(want, avail);
        std::memcpy(dst, buf.data() + cursor, n);
        cursor += n;
        return n;
    };
    auto f = read_frame(reader, max_payload);
    if (!f) throw ProtocolError(ProtocolError::Kind::Truncated, "decode: empty buffer");
    off = cursor;
    return std::move(*f);
}

} // namespace takin
