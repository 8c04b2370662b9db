#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace takin {

using TokenId = int32_t;

// Fixed special-token ids. Phonemes and codec tokens follow in two
// contiguous ranges.
enum SpecialToken : TokenId {
    TOK_PAD = 0,
    TOK_BP  = 1, // begin of phone sequence
    TOK_EP  = 2, // end of phone sequence
    TOK_S   = 3, // start of codec tokens
    TOK_E   = 4, // end of sequence
};

enum class TokenClass { Special, Phoneme, Codec };

struct VocabLayout {
    int32_t phoneme_count = 0;
    int32_t codec_count   = 0;

    static constexpr int32_t kSpecialCount = 5;

    VocabLayout() = default;
    VocabLayout(int32_t phonemes, int32_t codecs)
        : phoneme_count(phonemes), codec_count(codecs) {
        if (phonemes < 1 || codecs < 1) {
            throw std::invalid_argument("vocab: phoneme_count and codec_count must be >= 1");
        }
        const int64_t total = int64_t(kSpecialCount) + phonemes + codecs;
        if (total > std::numeric_limits<int32_t>::max()) {
            throw std::invalid_argument("vocab: counts overflow the id space");
        }
    }

    int32_t phoneme_base() const { return kSpecialCount; }
    int32_t codec_base() const { return kSpecialCount + phoneme_count; }
    int32_t total_size() const { return kSpecialCount + phoneme_count + codec_count; }

    bool is_phoneme(TokenId id) const {
        return id >= phoneme_base() && id < codec_base();
    }
    bool is_codec(TokenId id) const {
        return id >= codec_base() && id < total_size();
    }
    bool is_special(TokenId id) const { return id >= 0 && id < kSpecialCount; }

    TokenClass classify(TokenId id) const {
        if (is_special(id)) return TokenClass::Special;
        if (is_phoneme(id)) return TokenClass::Phoneme;
        if (is_codec(id)) return TokenClass::Codec;
        throw std::invalid_argument("vocab: id out of range");
    }

    // codec token id <-> zero-based codec index
    int32_t codec_index(TokenId id) const {
        if (!is_codec(id)) throw std::invalid_argument("vocab: not a codec id");
        return id - codec_base();
    }
    TokenId codec_id(int32_t index) const {
        if (index < 0 || index >= codec_count) throw std::invalid_argument("vocab: codec index out of range");
        return codec_base() + index;
    }
    TokenId phoneme_id(int32_t index) const {
        if (index < 0 || index >= phoneme_count) throw std::invalid_argument("vocab: phoneme index out of range");
        return phoneme_base() + index;
    }
};

inline VocabLayout build_vocab(int32_t phoneme_count, int32_t codec_count) {
    return VocabLayout(phoneme_count, codec_count);
}

// Ordered phoneme-range ids, excludes BP/EP. Must be nonempty.
struct PhonemeSeq {
    std::vector<TokenId> ids;
};

// Ordered codec-range ids; may be empty.
struct CodecSeq {
    std::vector<TokenId> ids;
};

inline PhonemeSeq make_phoneme_seq(const VocabLayout& vocab, std::vector<TokenId> ids) {
    if (ids.empty()) throw std::invalid_argument("phoneme sequence must be nonempty");
    for (TokenId id : ids) {
        if (!vocab.is_phoneme(id)) throw std::invalid_argument("phoneme sequence: id outside phoneme range");
    }
    return PhonemeSeq{std::move(ids)};
}

inline CodecSeq make_codec_seq(const VocabLayout& vocab, std::vector<TokenId> ids) {
    for (TokenId id : ids) {
        if (!vocab.is_codec(id)) throw std::invalid_argument("codec sequence: id outside codec range");
    }
    return CodecSeq{std::move(ids)};
}

// A composed LM input. condition_len continuous condition slots precede
// token_ids[0] in positional indexing; they carry no token id.
// Training layout:  [BP, phones..., EP, S, codec..., E]
// Inference prefix: [BP, phones..., EP, S]
struct ComposedSequence {
    int32_t condition_len = 0;
    std::vector<TokenId> token_ids;
    size_t bp_pos = 0;
    size_t ep_pos = 0;
    size_t s_pos  = 0;
    std::optional<size_t> e_pos;

    bool has_end() const { return e_pos.has_value(); }
    // total model positions when fully consumed
    size_t total_positions() const { return size_t(condition_len) + token_ids.size(); }
};

inline ComposedSequence compose_training_sequence(int32_t condition_len, const PhonemeSeq& phones,
                                                  const CodecSeq& codec) {
    if (condition_len < 0) throw std::invalid_argument("compose: negative condition_len");
    if (phones.ids.empty()) throw std::invalid_argument("compose: empty phoneme sequence");
    ComposedSequence seq;
    seq.condition_len = condition_len;
    seq.token_ids.reserve(phones.ids.size() + codec.ids.size() + 4);
    seq.token_ids.push_back(TOK_BP);
    seq.bp_pos = 0;
    seq.token_ids.insert(seq.token_ids.end(), phones.ids.begin(), phones.ids.end());
    seq.ep_pos = seq.token_ids.size();
    seq.token_ids.push_back(TOK_EP);
    seq.s_pos = seq.token_ids.size();
    seq.token_ids.push_back(TOK_S);
    seq.token_ids.insert(seq.token_ids.end(), codec.ids.begin(), codec.ids.end());
    seq.e_pos = seq.token_ids.size();
    seq.token_ids.push_back(TOK_E);
    return seq;
}

inline ComposedSequence compose_inference_prefix(int32_t condition_len, const PhonemeSeq& phones) {
    if (condition_len < 0) throw std::invalid_argument("compose: negative condition_len");
    if (phones.ids.empty()) throw std::invalid_argument("compose: empty phoneme sequence");
    ComposedSequence seq;
    seq.condition_len = condition_len;
    seq.token_ids.reserve(phones.ids.size() + 3);
    seq.token_ids.push_back(TOK_BP);
    seq.bp_pos = 0;
    seq.token_ids.insert(seq.token_ids.end(), phones.ids.begin(), phones.ids.end());
    seq.ep_pos = seq.token_ids.size();
    seq.token_ids.push_back(TOK_EP);
    seq.s_pos = seq.token_ids.size();
    seq.token_ids.push_back(TOK_S);
    return seq;
}

// True exactly at codec positions after S and at E; the LM is trained to
// predict only those.
inline std::vector<bool> prediction_mask(const ComposedSequence& seq) {
    size_t s = seq.token_ids.size();
    for (size_t i = 0; i < seq.token_ids.size(); ++i) {
        if (seq.token_ids[i] == TOK_S) { s = i; break; }
    }
    if (s == seq.token_ids.size()) throw std::invalid_argument("prediction_mask: sequence has no S token");
    std::vector<bool> mask(seq.token_ids.size(), false);
    for (size_t i = s + 1; i < mask.size(); ++i) mask[i] = true;
    return mask;
}

// Inverse of compose_training_sequence. Throws on any layout violation.
inline std::pair<PhonemeSeq, CodecSeq> parse_training_sequence(const VocabLayout& vocab,
                                                               const ComposedSequence& seq) {
    const auto& t = seq.token_ids;
    if (t.size() < 4 || t.front() != TOK_BP || t.back() != TOK_E) {
        throw std::invalid_argument("parse: not a training-layout sequence");
    }
    PhonemeSeq phones;
    size_t i = 1;
    while (i < t.size() && vocab.is_phoneme(t[i])) phones.ids.push_back(t[i++]);
    if (phones.ids.empty() || i + 1 >= t.size() || t[i] != TOK_EP || t[i + 1] != TOK_S) {
        throw std::invalid_argument("parse: malformed phone segment");
    }
    i += 2;
    CodecSeq codec;
    while (i + 1 < t.size()) {
        if (!vocab.is_codec(t[i])) throw std::invalid_argument("parse: non-codec id in codec segment");
        codec.ids.push_back(t[i++]);
    }
    return {std::move(phones), std::move(codec)};
}

} // namespace takin
