#include <catch2/catch_amalgamated.hpp>

#include "takin/protocol.hpp"
#include "takin/rng.hpp"

using namespace takin;

namespace {

std::string random_payload(SplitMix64& rng, size_t max_len) {
    std::string s(rng.next_below(max_len + 1), '\0');
    for (char& c : s) c = char(rng.next_below(256));
    return s;
}

uint8_t random_type(SplitMix64& rng) {
    constexpr uint8_t types[] = {FRAME_CONTROL, FRAME_AUDIO, FRAME_TOKENS, FRAME_DONE, FRAME_ERROR};
    return types[rng.next_below(5)];
}

} // namespace

TEST_CASE("frame header layout: u32 big-endian length, u8 type") {
    const std::string wire = encode_frame(Frame{FRAME_AUDIO, "abc"});
    REQUIRE(wire.size() == 8);
    CHECK(uint8_t(wire[0]) == 0);
    CHECK(uint8_t(wire[1]) == 0);
    CHECK(uint8_t(wire[2]) == 0);
    CHECK(uint8_t(wire[3]) == 3);
    CHECK(uint8_t(wire[4]) == FRAME_AUDIO);
    CHECK(wire.substr(5) == "abc");

    size_t off = 0;
    const Frame back = decode_frame(wire, off);
    CHECK(off == wire.size());
    CHECK(back.type == FRAME_AUDIO);
    CHECK(back.payload == "abc");
}

TEST_CASE("encode/decode round trip over random frames") {
    SplitMix64 rng(4242);
    for (int i = 0; i < 2000; ++i) {
        Frame f;
        f.type = random_type(rng);
        f.payload = random_payload(rng, 300);
        const std::string wire = encode_frame(f);
        size_t off = 0;
        const Frame back = decode_frame(wire, off);
        CHECK(back.type == f.type);
        CHECK(back.payload == f.payload);
        CHECK(off == wire.size());
    }
}

TEST_CASE("back-to-back frames decode in sequence") {
    SplitMix64 rng(9);
    std::vector<Frame> frames;
    std::string wire;
    for (int i = 0; i < 20; ++i) {
        frames.push_back(Frame{random_type(rng), random_payload(rng, 64)});
        wire += encode_frame(frames.back());
    }
    size_t off = 0;
    for (const auto& f : frames) {
        const Frame back = decode_frame(wire, off);
        CHECK(back.type == f.type);
        CHECK(back.payload == f.payload);
    }
    CHECK(off == wire.size());
}

TEST_CASE("malformed frames raise typed errors") {
    SECTION("unknown type byte") {
        std::string wire = encode_frame(Frame{FRAME_DONE, "x"});
        wire[4] = 0x2A;
        size_t off = 0;
        try {
            decode_frame(wire, off);
            FAIL("expected ProtocolError");
        } catch (const ProtocolError& e) {
            CHECK(e.kind == ProtocolError::Kind::BadType);
        }
    }
    SECTION("length beyond the configured maximum") {
        std::string wire = encode_frame(Frame{FRAME_CONTROL, std::string(100, 'a')});
        size_t off = 0;
        try {
            decode_frame(wire, off, /*max_payload=*/64);
            FAIL("expected ProtocolError");
        } catch (const ProtocolError& e) {
            CHECK(e.kind == ProtocolError::Kind::TooLarge);
        }
    }
    SECTION("truncated header and payload") {
        const std::string wire = encode_frame(Frame{FRAME_TOKENS, "abcdef"});
        for (size_t cut : {1ul, 3ul, 4ul, 7ul, wire.size() - 1}) {
            const std::string part = wire.substr(0, cut);
            size_t off = 0;
            try {
                decode_frame(part, off);
                FAIL("expected ProtocolError at cut " << cut);
            } catch (const ProtocolError& e) {
                CHECK(e.kind == ProtocolError::Kind::Truncated);
            }
        }
    }
    SECTION("oversized payload refuses to encode") {
        CHECK_THROWS_AS(encode_frame(Frame{FRAME_AUDIO, std::string(100, 'x')}, 64), ProtocolError);
    }
    SECTION("invalid type refuses to encode") {
        CHECK_THROWS_AS(encode_frame(Frame{0x00, ""}), ProtocolError);
    }
}

TEST_CASE("read_frame: clean EOF at a boundary is not an error") {
    const std::string empty;
    size_t cursor = 0;
    auto reader = [&](char* dst, size_t want) -> size_t {
        const size_t n = std::min(want, empty.size() - cursor);
        std::memcpy(dst, empty.data() + cursor, n);
        cursor += n;
        return n;
    };
    CHECK_FALSE(read_frame(reader).has_value());
}

TEST_CASE("read_frame handles dribbling single-byte reads") {
    const Frame f{FRAME_CONTROL, "{\"op\":\"metrics\"}"};
    const std::string wire = encode_frame(f);
    size_t cursor = 0;
    auto reader = [&](char* dst, size_t want) -> size_t {
        if (cursor >= wire.size() || want == 0) return 0;
        *dst = wire[cursor++];
        return 1;
    };
    const auto back = read_frame(reader);
    REQUIRE(back.has_value());
    CHECK(back->payload == f.payload);
}
