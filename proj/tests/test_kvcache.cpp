#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "support/oracles.hpp"
#include "takin/kvcache.hpp"
#include "takin/model.hpp"

using namespace takin;
using takin::testing::ContiguousKvStream;

namespace {

PageConfig page_config(int32_t page_size, int32_t num_pages, int64_t elems = 4) {
    PageConfig cfg;
    cfg.page_size = page_size;
    cfg.num_pages = num_pages;
    cfg.kv_elems_per_token = elems;
    return cfg;
}

std::vector<float> payload(int64_t elems, float base) {
    std::vector<float> p(static_cast<size_t>(elems));
    for (size_t i = 0; i < p.size(); ++i) p[i] = base + float(i);
    return p;
}

} // namespace

TEST_CASE("allocate/free lifecycle and errors") {
    PagedKvCache cache(page_config(16, 8));
    const BlockTable& t = cache.allocate_sequence(1);
    CHECK(t.pages.empty());
    CHECK(t.filled_tokens == 0);
    CHECK_THROWS_AS(cache.allocate_sequence(1), std::invalid_argument);

    CHECK(cache.free_sequence(1) == 0);
    CHECK_NOTHROW(cache.allocate_sequence(1)); // id reusable after free
    cache.free_sequence(1);
    CHECK_THROWS_AS(cache.free_sequence(1), std::invalid_argument);
    CHECK_THROWS_AS(cache.append_kv(42, payload(4, 0)), std::invalid_argument);
}

TEST_CASE("append claims pages exactly at page boundaries") {
    PagedKvCache cache(page_config(16, 8));
    cache.allocate_sequence(7);
    for (int i = 0; i < 16; ++i) {
        CHECK(cache.append_kv(7, payload(4, float(i))) == i);
        CHECK(cache.table(7).pages.size() == 1);
    }
    CHECK(cache.append_kv(7, payload(4, 16)) == 16);
    CHECK(cache.table(7).pages.size() == 2);
    CHECK(cache.pages_free() == 6);
}

TEST_CASE("pool exhaustion returns the out-of-pages signal without side effects") {
    PagedKvCache cache(page_config(4, 1));
    cache.allocate_sequence(1);
    for (int i = 0; i < 4; ++i) CHECK(cache.append_kv(1, payload(4, float(i))) == i);
    CHECK(cache.append_kv(1, payload(4, 99)) == -1);
    CHECK(cache.table(1).filled_tokens == 4);
    CHECK(cache.pages_free() == 0);
    // the stored tokens are untouched
    CHECK(cache.read_kv(1, 3)[0] == 3.0f);
}

TEST_CASE("stored payloads read back bit-identical") {
    PagedKvCache cache(page_config(3, 4, 6));
    cache.allocate_sequence(2);
    std::vector<std::vector<float>> written;
    for (int i = 0; i < 10; ++i) {
        written.push_back(payload(6, float(i) * 1.5f));
        cache.append_kv(2, written.back());
    }
    for (int i = 0; i < 10; ++i) {
        const auto view = cache.read_kv(2, i);
        CHECK(std::vector<float>(view.begin(), view.end()) == written[size_t(i)]);
    }
    CHECK_THROWS_AS(cache.read_kv(2, 10), std::out_of_range);
}

TEST_CASE("gather equals a contiguous reference across page boundaries") {
    const int64_t elems = 5;
    PagedKvCache cache(page_config(4, 8, elems));
    cache.allocate_sequence(1);
    ContiguousKvStream reference(elems);

    SplitMix64 rng(17);
    for (int i = 0; i < 11; ++i) { // spans 3 pages
        std::vector<float> p(static_cast<size_t>(elems));
        for (float& v : p) v = rng.uniform(-2.0f, 2.0f);
        cache.append_kv(1, p);
        reference.try_append(p);
    }

    std::vector<float> scratch;
    for (int64_t upto : {0, 1, 4, 7, 11}) {
        const auto got = cache.gather(1, upto, scratch);
        const auto want = reference.gather(upto);
        CHECK(std::vector<float>(got.begin(), got.end()) ==
              std::vector<float>(want.begin(), want.end()));
    }
    CHECK(cache.gather(1, 0, scratch).empty());
    CHECK_THROWS_AS(cache.gather(1, 12, scratch), std::out_of_range);
}

TEST_CASE("free reclaims ceil(tokens/page_size) pages") {
    PagedKvCache cache(page_config(16, 8));
    cache.allocate_sequence(3);
    for (int i = 0; i < 33; ++i) cache.append_kv(3, payload(4, float(i)));
    CHECK(cache.table(3).pages.size() == 3);
    CHECK(cache.free_sequence(3) == 3);
    CHECK(cache.pages_free() == 8);
}

TEST_CASE("LIFO free list hands out deterministic page ids") {
    PagedKvCache cache(page_config(2, 4));
    cache.allocate_sequence(1);
    cache.append_kv(1, payload(4, 0));
    cache.append_kv(1, payload(4, 1));
    cache.append_kv(1, payload(4, 2));
    CHECK(cache.table(1).pages == std::vector<int32_t>{0, 1});
    cache.allocate_sequence(2);
    cache.append_kv(2, payload(4, 0));
    CHECK(cache.table(2).pages == std::vector<int32_t>{2});
    cache.free_sequence(1); // pages return so that page 0 is claimed first again
    cache.allocate_sequence(3);
    cache.append_kv(3, payload(4, 0));
    CHECK(cache.table(3).pages == std::vector<int32_t>{0});
}

TEST_CASE("fuzz trace: conservation and no page aliasing") {
    const PageConfig cfg = page_config(4, 16, 3);
    PagedKvCache cache(cfg);
    SplitMix64 rng(2718);
    std::map<int64_t, int64_t> live; // id -> appended count
    int64_t next_id = 1;
    int64_t evictions = 0;

    for (int step = 0; step < 3000; ++step) {
        const uint64_t action = rng.next_below(10);
        if (action < 3 && live.size() < 8) {
            cache.allocate_sequence(next_id);
            live[next_id] = 0;
            ++next_id;
        } else if (action < 8 && !live.empty()) {
            auto it = live.begin();
            std::advance(it, long(rng.next_below(live.size())));
            if (cache.append_kv(it->first, payload(3, float(step))) >= 0) ++it->second;
        } else if (!live.empty()) {
            auto it = live.begin();
            std::advance(it, long(rng.next_below(live.size())));
            if (rng.next_below(4) == 0) {
                cache.evict_sequence(it->first);
                ++evictions;
            } else {
                cache.free_sequence(it->first);
            }
            live.erase(it);
        }

        const CacheStats stats = cache.stats();
        int64_t held = 0;
        for (const auto& [id, pages] : stats.pages_per_sequence) held += pages;
        CHECK(stats.pages_free + held == stats.pages_total);
        CHECK(stats.eviction_count == evictions);

        // no aliasing: every page id appears in at most one live table
        std::set<int32_t> seen;
        for (const auto& [id, count] : live) {
            for (int32_t page : cache.table(id).pages) {
                CHECK(seen.insert(page).second);
            }
            CHECK(cache.table(id).filled_tokens == count);
        }
    }
}

TEST_CASE("model decode through the paged cache is bit-identical to contiguous") {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.ffn_dim = 64;
    cfg.max_positions = 256;
    cfg.vocab = VocabLayout(16, 32);
    cfg.condition_len = 4;
    cfg.cond_source_dim = 8;
    cfg.seed = 3;
    const Model model(cfg);

    SplitMix64 rng(404);
    Matrix cond(cfg.condition_len, cfg.cond_source_dim);
    for (float& v : cond.data) v = rng.uniform(-1.0f, 1.0f);

    PhonemeSeq phones;
    for (int i = 0; i < 37; ++i) {
        phones.ids.push_back(cfg.vocab.phoneme_id(int32_t(rng.next_below(16))));
    }
    const auto prefix = compose_inference_prefix(cfg.condition_len, phones);

    DecodeParams dp;
    dp.max_new_tokens = 20;

    PageConfig pc;
    pc.page_size = 16;
    pc.num_pages = 16;
    pc.kv_elems_per_token = cfg.kv_elems_per_token();
    PagedKvCache cache(pc);
    cache.allocate_sequence(1);
    PagedKvStream paged(cache, 1);
    ContiguousKvStream contiguous(cfg.kv_elems_per_token());

    const DecodeResult a = decode(model, {}, prefix, cond, dp, paged);
    const DecodeResult b = decode(model, {}, prefix, cond, dp, contiguous);
    CHECK(a.generated == b.generated);
    CHECK(a.terminated == b.terminated);

    // final-position logits, same check
    std::vector<TokenId> all = prefix.token_ids;
    all.insert(all.end(), a.generated.begin(), a.generated.end());
    PagedKvCache cache2(pc);
    cache2.allocate_sequence(9);
    PagedKvStream paged2(cache2, 9);
    ContiguousKvStream contiguous2(cfg.kv_elems_per_token());
    const auto la = model.forward({}, cond, all, paged2);
    const auto lb = model.forward({}, cond, all, contiguous2);
    CHECK(la.logits == lb.logits);
}
