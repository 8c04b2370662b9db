#pragma once

#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "takin/net.hpp"
#include "takin/protocol.hpp"

namespace takin {

struct SynthesisResult {
    std::vector<int16_t> pcm;            // all audio-chunk payloads concatenated
    std::vector<int32_t> token_chunks;   // codec indices from 0x03 frames, if requested
    std::vector<size_t> chunk_samples;   // samples per 0x02 frame, in arrival order
    nlohmann::json done;                 // 0x04 payload
    std::optional<nlohmann::json> error; // set instead of done on 0x7F
    double first_packet_ms = -1.0;       // request-written -> first 0x02 read, client side
};

// Minimal protocol client used by the bench tool and the tests.
class Client {
public:
    Client(const std::string& host, uint16_t port, uint32_t max_frame = kDefaultMaxFramePayload)
        : stream_(TcpStream::connect(host, port)), max_frame_(max_frame) {}

    // send a control frame and read exactly one reply frame
    nlohmann::json control(const nlohmann::json& msg) {
        send(msg);
        Frame f = read();
        return nlohmann::json::parse(f.payload);
    }

    SynthesisResult synthesize(const nlohmann::json& msg) {
        send(msg);
        const auto t0 = std::chrono::steady_clock::now();
        SynthesisResult result;
        while (true) {
            Frame f = read();
            if (f.type == FRAME_AUDIO) {
                if (result.first_packet_ms < 0) {
                    result.first_packet_ms =
                        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                            .count();
                }
                const size_t samples = f.payload.size() / 2;
                const size_t off = result.pcm.size();
                result.pcm.resize(off + samples);
                std::memcpy(result.pcm.data() + off, f.payload.data(), samples * 2);
                result.chunk_samples.push_back(samples);
            } else if (f.type == FRAME_TOKENS) {
                for (size_t i = 0; i + 4 <= f.payload.size(); i += 4) {
                    uint32_t v = 0;
                    for (int b = 3; b >= 0; --b) v = (v << 8) | uint8_t(f.payload[i + size_t(b)]);
                    result.token_chunks.push_back(int32_t(v));
                }
            } else if (f.type == FRAME_DONE) {
                result.done = nlohmann::json::parse(f.payload);
                return result;
            } else if (f.type == FRAME_ERROR) {
                result.error = nlohmann::json::parse(f.payload);
                return result;
            } else {
                throw std::runtime_error("client: unexpected frame type " + std::to_string(f.type));
            }
        }
    }

    void send(const nlohmann::json& msg) {
        stream_.write_all(encode_frame(Frame{FRAME_CONTROL, msg.dump()}, max_frame_));
    }

    Frame read() {
        auto reader = [this](char* dst, size_t n) { return stream_.read_some(dst, n); };
        auto f = read_frame(reader, max_frame_);
        if (!f) throw std::runtime_error("client: connection closed by server");
        return std::move(*f);
    }

    void send_raw(const std::string& bytes) { stream_.write_all(bytes); }

private:
    TcpStream stream_;
    uint32_t max_frame_;
};

} // namespace takin
