#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support/oracles.hpp"
#include "takin/model.hpp"

using namespace takin;
using takin::testing::ContiguousKvStream;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.ffn_dim = 64;
    cfg.max_positions = 128;
    cfg.vocab = VocabLayout(16, 32);
    cfg.condition_len = 4;
    cfg.cond_source_dim = 8;
    cfg.seed = 7;
    return cfg;
}

Matrix random_cond(const ModelConfig& cfg, uint64_t seed) {
    Matrix cond(cfg.condition_len, cfg.cond_source_dim);
    SplitMix64 rng(seed);
    for (float& v : cond.data) v = rng.uniform(-1.0f, 1.0f);
    return cond;
}

// All-zero model except: position embeddings put 1 in dim 0, and the given
// token's embedding row is 1 in dim 0. With zero norm gains every block is a
// no-op, so logits reduce to emb[v] . e0 and greedy always emits `token`.
Parameters rig_always_emit(const ModelConfig& cfg, TokenId token) {
    Parameters p = init_params(cfg);
    auto zero = [](Matrix& m) { std::fill(m.data.begin(), m.data.end(), 0.0f); };
    zero(p.token_embedding);
    zero(p.position_embedding);
    zero(p.cond_proj);
    for (auto& l : p.layers) {
        zero(l.wq);
        zero(l.wk);
        zero(l.wv);
        zero(l.wo);
        zero(l.wffn1);
        zero(l.wffn2);
        std::fill(l.ln1_gain.begin(), l.ln1_gain.end(), 0.0f);
        std::fill(l.ln1_bias.begin(), l.ln1_bias.end(), 0.0f);
        std::fill(l.ln2_gain.begin(), l.ln2_gain.end(), 0.0f);
        std::fill(l.ln2_bias.begin(), l.ln2_bias.end(), 0.0f);
    }
    for (int32_t r = 0; r < p.position_embedding.rows; ++r) p.position_embedding.at(r, 0) = 1.0f;
    p.token_embedding.at(token, 0) = 1.0f;
    return p;
}

} // namespace

TEST_CASE("init_params is deterministic with pinned checksums") {
    ModelConfig cfg; // defaults: d=128, 4 layers, vocab 128/1024
    cfg.seed = 42;
    const Parameters a = init_params(cfg);
    const Parameters b = init_params(cfg);
    CHECK(params_checksum(a) == params_checksum(b));
    CHECK(params_checksum(a) == 0xc951e0dcab773ab1ULL);

    cfg.seed = 43;
    const Parameters c = init_params(cfg);
    CHECK(params_checksum(c) == 0xb4640d3293c57644ULL);
    CHECK(params_checksum(c) != params_checksum(a));
}

TEST_CASE("init_params stays within [-0.02, 0.02]") {
    const ModelConfig cfg = small_config();
    const Parameters p = init_params(cfg);
    auto in_range = [](const Matrix& m) {
        for (float v : m.data) {
            if (!(v >= -0.02f && v <= 0.02f)) return false;
        }
        return true;
    };
    CHECK(in_range(p.token_embedding));
    CHECK(in_range(p.position_embedding));
    CHECK(in_range(p.cond_proj));
    for (const auto& l : p.layers) {
        CHECK(in_range(l.wq));
        CHECK(in_range(l.wffn2));
        for (float v : l.ln1_gain) CHECK((v >= -0.02f && v <= 0.02f));
    }
}

TEST_CASE("greedy_step argmax with lowest-id ties") {
    std::vector<float> one_hot(16, 0.0f);
    one_hot[7] = 3.0f;
    CHECK(greedy_step(one_hot) == 7);

    std::vector<float> equal(9, 0.5f);
    CHECK(greedy_step(equal) == 0);

    std::vector<float> bad = {0.0f, std::numeric_limits<float>::infinity()};
    CHECK_THROWS_AS(greedy_step(bad), NumericError);

    // linear scan oracle over random vectors
    SplitMix64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<float> logits(64);
        for (float& v : logits) v = rng.uniform(-4.0f, 4.0f);
        TokenId best = 0;
        for (size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > logits[size_t(best)]) best = TokenId(i);
        }
        CHECK(greedy_step(logits) == best);
    }
}

TEST_CASE("sample_step: determinism, top_k=1 degeneracy, softmax frequencies") {
    std::vector<float> logits = {1.2f, -0.3f, 2.5f, 0.0f, 2.4f, -1.0f, 0.7f, 1.9f, -2.0f, 0.1f, 0.3f, 1.0f};

    DecodeParams greedy_like;
    greedy_like.mode = DecodeParams::Mode::Sampled;
    greedy_like.top_k = 1;
    greedy_like.temperature = 0.25f;
    SplitMix64 rng(3);
    for (int i = 0; i < 20; ++i) CHECK(sample_step(logits, greedy_like, rng) == greedy_step(logits));

    DecodeParams dp;
    dp.mode = DecodeParams::Mode::Sampled;
    dp.top_k = 5;
    dp.temperature = 0.7f;
    {
        SplitMix64 r1(99), r2(99);
        for (int i = 0; i < 50; ++i) CHECK(sample_step(logits, dp, r1) == sample_step(logits, dp, r2));
    }

    // exact softmax oracle over the top-5 ids {2, 4, 7, 0, 11}
    std::vector<size_t> topk = {2, 4, 7, 0, 11};
    std::vector<double> probs;
    double sum = 0.0;
    for (size_t id : topk) {
        probs.push_back(std::exp(double(logits[id]) / 0.7));
        sum += probs.back();
    }
    for (double& p : probs) p /= sum;

    const int n = 100000;
    std::vector<int> counts(logits.size(), 0);
    SplitMix64 rng2(1234);
    for (int i = 0; i < n; ++i) ++counts[size_t(sample_step(logits, dp, rng2))];
    for (size_t i = 0; i < logits.size(); ++i) {
        const bool in_topk = std::find(topk.begin(), topk.end(), i) != topk.end();
        if (!in_topk) CHECK(counts[i] == 0);
    }
    for (size_t k = 0; k < topk.size(); ++k) {
        const double freq = double(counts[topk[k]]) / n;
        const double sigma = std::sqrt(probs[k] * (1.0 - probs[k]) / n);
        CHECK(std::abs(freq - probs[k]) <= 3.0 * sigma);
    }

    DecodeParams bad = dp;
    bad.top_k = int32_t(logits.size()) + 1;
    SplitMix64 rng3(0);
    CHECK_THROWS_AS(sample_step(logits, bad, rng3), std::invalid_argument);
}

TEST_CASE("forward validates positions and condition shape") {
    const ModelConfig cfg = small_config();
    const Model model(cfg);
    const Matrix cond = random_cond(cfg, 1);

    ContiguousKvStream stream(cfg.kv_elems_per_token());
    std::vector<TokenId> too_long(size_t(cfg.max_positions), cfg.vocab.phoneme_id(0));
    CHECK_THROWS_AS(model.forward({}, cond, too_long, stream), std::invalid_argument);

    Matrix bad_cond(cfg.condition_len, cfg.cond_source_dim + 1);
    std::vector<TokenId> tokens = {TOK_BP, cfg.vocab.phoneme_id(0), TOK_EP, TOK_S};
    CHECK_THROWS_AS(model.forward({}, bad_cond, tokens, stream), std::invalid_argument);
}

TEST_CASE("decode emits E immediately on a rigged model") {
    const ModelConfig cfg = small_config();
    const Model model(cfg, rig_always_emit(cfg, TOK_E));
    const Matrix cond = random_cond(cfg, 2);
    const auto prefix = compose_inference_prefix(cfg.condition_len,
                                                 PhonemeSeq{{cfg.vocab.phoneme_id(1)}});

    ContiguousKvStream stream(cfg.kv_elems_per_token());
    DecodeParams dp;
    dp.max_new_tokens = 16;
    const DecodeResult res = decode(model, {}, prefix, cond, dp, stream);
    CHECK(res.terminated);
    CHECK(res.codec.ids.empty());
    CHECK(res.generated.empty());
}

TEST_CASE("decode respects max_new_tokens and records foreign ids") {
    const ModelConfig cfg = small_config();
    // rig to always emit a phoneme id: non-codec, non-E, decoding continues
    const TokenId phoneme = cfg.vocab.phoneme_id(3);
    const Model model(cfg, rig_always_emit(cfg, phoneme));
    const Matrix cond = random_cond(cfg, 2);
    const auto prefix = compose_inference_prefix(cfg.condition_len,
                                                 PhonemeSeq{{cfg.vocab.phoneme_id(1)}});

    DecodeParams dp;
    dp.max_new_tokens = 0;
    {
        ContiguousKvStream stream(cfg.kv_elems_per_token());
        const DecodeResult res = decode(model, {}, prefix, cond, dp, stream);
        CHECK_FALSE(res.terminated);
        CHECK(res.generated.empty());
    }

    dp.max_new_tokens = 5;
    {
        ContiguousKvStream stream(cfg.kv_elems_per_token());
        const DecodeResult res = decode(model, {}, prefix, cond, dp, stream);
        CHECK_FALSE(res.terminated);
        CHECK(res.generated == std::vector<TokenId>(5, phoneme));
        CHECK(res.foreign_count == 5);
        CHECK(res.codec.ids.empty());
    }

    ContiguousKvStream scratch(cfg.kv_elems_per_token());
    const auto not_a_prefix = compose_training_sequence(
        cfg.condition_len, PhonemeSeq{{cfg.vocab.phoneme_id(0)}}, CodecSeq{});
    CHECK_THROWS_AS(decode(model, {}, not_a_prefix, cond, dp, scratch), std::invalid_argument);
}

TEST_CASE("decode is deterministic across repeated runs") {
    const ModelConfig cfg = small_config();
    const Model model(cfg);
    const Matrix cond = random_cond(cfg, 3);
    const auto prefix = compose_inference_prefix(
        cfg.condition_len, PhonemeSeq{{cfg.vocab.phoneme_id(0), cfg.vocab.phoneme_id(5)}});

    for (auto mode : {DecodeParams::Mode::Greedy, DecodeParams::Mode::Sampled}) {
        DecodeParams dp;
        dp.mode = mode;
        dp.top_k = 8;
        dp.rng_seed = 77;
        dp.max_new_tokens = 12;
        ContiguousKvStream s1(cfg.kv_elems_per_token()), s2(cfg.kv_elems_per_token());
        const DecodeResult r1 = decode(model, {}, prefix, cond, dp, s1);
        const DecodeResult r2 = decode(model, {}, prefix, cond, dp, s2);
        CHECK(r1.generated == r2.generated);
        CHECK(r1.terminated == r2.terminated);
        CHECK(s1.raw() == s2.raw());
    }
}

TEST_CASE("sequence_logprob: uniform logits give -log(V)") {
    ModelConfig cfg = small_config();
    Parameters zero = rig_always_emit(cfg, TOK_E);
    zero.token_embedding.at(TOK_E, 0) = 0.0f; // fully zero logits -> uniform softmax
    const Model model(cfg, std::move(zero));

    const auto seq = compose_training_sequence(
        cfg.condition_len, PhonemeSeq{{cfg.vocab.phoneme_id(0)}},
        CodecSeq{{cfg.vocab.codec_id(1), cfg.vocab.codec_id(2)}});
    const double lp = model.sequence_logprob(seq, random_cond(cfg, 4));
    CHECK_THAT(lp, Catch::Matchers::WithinAbs(-std::log(double(cfg.vocab.total_size())), 1e-6));
}

TEST_CASE("sequence_logprob matches per-position softmax accumulation") {
    const ModelConfig cfg = small_config();
    const Model model(cfg);
    const Matrix cond = random_cond(cfg, 5);

    SplitMix64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        PhonemeSeq phones;
        for (int i = 0; i < 3 + int(rng.next_below(4)); ++i) {
            phones.ids.push_back(cfg.vocab.phoneme_id(int32_t(rng.next_below(16))));
        }
        CodecSeq codec;
        for (int i = 0; i < int(rng.next_below(6)); ++i) {
            codec.ids.push_back(cfg.vocab.codec_id(int32_t(rng.next_below(32))));
        }
        const auto seq = compose_training_sequence(cfg.condition_len, phones, codec);
        const auto mask = prediction_mask(seq);

        // oracle: fresh forward per masked position, log-softmax in double
        double total = 0.0;
        int64_t masked = 0;
        for (size_t i = 0; i < seq.token_ids.size(); ++i) {
            if (!mask[i]) continue;
            ContiguousKvStream stream(cfg.kv_elems_per_token());
            const std::span<const TokenId> ctx(seq.token_ids.data(), i);
            const auto res = model.forward({}, cond, ctx, stream);
            REQUIRE(res.status == ForwardStatus::Ok);
            double mx = -HUGE_VAL;
            for (float v : res.logits) mx = std::max(mx, double(v));
            double sum = 0.0;
            for (float v : res.logits) sum += std::exp(double(v) - mx);
            total += double(res.logits[size_t(seq.token_ids[i])]) - mx - std::log(sum);
            ++masked;
        }
        const double expected = total / double(masked);
        CHECK_THAT(model.sequence_logprob(seq, cond), Catch::Matchers::WithinAbs(expected, 1e-9));
    }

    // sequences without masked positions are rejected
    ComposedSequence bare;
    bare.condition_len = cfg.condition_len;
    bare.token_ids = {TOK_BP, cfg.vocab.phoneme_id(0), TOK_EP, TOK_S};
    bare.s_pos = 3;
    CHECK_THROWS_AS(model.sequence_logprob(bare, cond), std::invalid_argument);
}
