#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace takin {

// Per-sequence KV sink/source the model runs against. Payload layout per
// token: [layer][k/v][head][head_dim] floats, flattened.
class KvStream {
public:
    virtual ~KvStream() = default;
    // false means the backing pool is exhausted (caller decides preemption)
    virtual bool try_append(std::span<const float> token_kv) = 0;
    // contiguous view of positions [0, upto); valid until the next call
    virtual std::span<const float> gather(int64_t upto) = 0;
    virtual int64_t size() const = 0;
};

struct PageConfig {
    int32_t page_size = 16;    // tokens per page
    int32_t num_pages = 512;   // pool size
    int64_t kv_elems_per_token = 0;

    void validate() const {
        if (page_size < 1) throw std::invalid_argument("kvcache: page_size must be >= 1");
        if (num_pages < 1) throw std::invalid_argument("kvcache: num_pages must be >= 1");
        if (kv_elems_per_token < 1) throw std::invalid_argument("kvcache: kv payload size must be >= 1");
    }
};

struct BlockTable {
    int64_t seq_id = -1;
    std::vector<int32_t> pages; // ordered; logical position p lives in pages[p / page_size]
    int64_t filled_tokens = 0;
};

struct CacheStats {
    int32_t pages_total = 0;
    int32_t pages_free = 0;
    std::map<int64_t, int32_t> pages_per_sequence;
    int64_t eviction_count = 0;
};

class PagedKvCache {
public:
    explicit PagedKvCache(const PageConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        pool_.resize(size_t(cfg_.num_pages) * cfg_.page_size * cfg_.kv_elems_per_token);
        free_list_.reserve(size_t(cfg_.num_pages));
        // LIFO free list, seeded so page ids are claimed in ascending order
        for (int32_t p = cfg_.num_pages - 1; p >= 0; --p) free_list_.push_back(p);
    }

    const PageConfig& config() const { return cfg_; }

    BlockTable& allocate_sequence(int64_t seq_id) {
        auto [it, inserted] = tables_.try_emplace(seq_id);
        if (!inserted) throw std::invalid_argument("kvcache: sequence id already allocated");
        it->second.seq_id = seq_id;
        return it->second;
    }

    bool has_sequence(int64_t seq_id) const { return tables_.count(seq_id) != 0; }

    const BlockTable& table(int64_t seq_id) const {
        auto it = tables_.find(seq_id);
        if (it == tables_.end()) throw std::invalid_argument("kvcache: unknown sequence id");
        return it->second;
    }

    // Pages a sequence would need to grow by n_tokens.
    int32_t pages_needed(int64_t seq_id, int64_t n_tokens) const {
        const BlockTable& t = table(seq_id);
        const int64_t have = int64_t(t.pages.size()) * cfg_.page_size;
        const int64_t want = t.filled_tokens + n_tokens;
        if (want <= have) return 0;
        return int32_t((want - have + cfg_.page_size - 1) / cfg_.page_size);
    }

    static int64_t pages_for_tokens(int64_t n_tokens, int32_t page_size) {
        return (n_tokens + page_size - 1) / page_size;
    }

    int32_t pages_free() const { return int32_t(free_list_.size()); }
    int32_t pages_total() const { return cfg_.num_pages; }

    // Stores one token's payload at the next logical position. Returns the
    // position, or -1 when the pool is exhausted (no state is changed then).
    int64_t append_kv(int64_t seq_id, std::span<const float> token_kv) {
        BlockTable& t = mutable_table(seq_id);
        if (int64_t(token_kv.size()) != cfg_.kv_elems_per_token) {
            throw std::invalid_argument("kvcache: payload size mismatch");
        }
        if (t.filled_tokens % cfg_.page_size == 0 &&
            t.filled_tokens == int64_t(t.pages.size()) * cfg_.page_size) {
            if (free_list_.empty()) return -1;
            t.pages.push_back(free_list_.back());
            free_list_.pop_back();
        }
        const int64_t pos = t.filled_tokens;
        std::memcpy(slot_ptr(t, pos), token_kv.data(), size_t(cfg_.kv_elems_per_token) * sizeof(float));
        t.filled_tokens = pos + 1;
        return pos;
    }

    std::span<const float> read_kv(int64_t seq_id, int64_t pos) const {
        const BlockTable& t = table(seq_id);
        if (pos < 0 || pos >= t.filled_tokens) throw std::out_of_range("kvcache: position out of range");
        return {slot_ptr(t, pos), size_t(cfg_.kv_elems_per_token)};
    }

    // Materializes positions [0, upto) into the given scratch buffer and
    // returns a view over it, bit-identical to a contiguous cache.
    std::span<const float> gather(int64_t seq_id, int64_t upto, std::vector<float>& scratch) const {
        const BlockTable& t = table(seq_id);
        if (upto < 0 || upto > t.filled_tokens) throw std::out_of_range("kvcache: gather past filled tokens");
        const size_t elems = size_t(cfg_.kv_elems_per_token);
        scratch.resize(size_t(upto) * elems);
        int64_t pos = 0;
        while (pos < upto) {
            const int64_t run = std::min<int64_t>(cfg_.page_size - pos % cfg_.page_size, upto - pos);
            std::memcpy(scratch.data() + size_t(pos) * elems, slot_ptr(t, pos),
                        size_t(run) * elems * sizeof(float));
            pos += run;
        }
        return {scratch.data(), size_t(upto) * elems};
    }

    int32_t free_sequence(int64_t seq_id) {
        auto it = tables_.find(seq_id);
        if (it == tables_.end()) throw std::invalid_argument("kvcache: free of unknown sequence id");
        const int32_t reclaimed = int32_t(it->second.pages.size());
        for (auto p = it->second.pages.rbegin(); p != it->second.pages.rend(); ++p) {
            free_list_.push_back(*p);
        }
        tables_.erase(it);
        return reclaimed;
    }

    // free_sequence for preemption bookkeeping
    int32_t evict_sequence(int64_t seq_id) {
        const int32_t reclaimed = free_sequence(seq_id);
        ++eviction_count_;
        return reclaimed;
    }

    CacheStats stats() const {
        CacheStats s;
        s.pages_total = cfg_.num_pages;
        s.pages_free = int32_t(free_list_.size());
        for (const auto& [id, t] : tables_) s.pages_per_sequence[id] = int32_t(t.pages.size());
        s.eviction_count = eviction_count_;
        return s;
    }

private:
    BlockTable& mutable_table(int64_t seq_id) {
        auto it = tables_.find(seq_id);
        if (it == tables_.end()) throw std::invalid_argument("kvcache: unknown sequence id");
        return it->second;
    }

    const float* slot_ptr(const BlockTable& t, int64_t pos) const {
        const int32_t page = t.pages[size_t(pos / cfg_.page_size)];
        const int64_t offset = pos % cfg_.page_size;
        return pool_.data() +
               (size_t(page) * cfg_.page_size + size_t(offset)) * size_t(cfg_.kv_elems_per_token);
    }
    float* slot_ptr(const BlockTable& t, int64_t pos) {
        return const_cast<float*>(std::as_const(*this).slot_ptr(t, pos));
    }

    PageConfig cfg_;
    std::vector<float> pool_;
    std::vector<int32_t> free_list_;
    std::map<int64_t, BlockTable> tables_;
    int64_t eviction_count_ = 0;
};

// KvStream over one paged-cache sequence.
class PagedKvStream final : public KvStream {
public:
    PagedKvStream(PagedKvCache& cache, int64_t seq_id) : cache_(cache), seq_id_(seq_id) {}

    bool try_append(std::span<const float> token_kv) override {
        return cache_.append_kv(seq_id_, token_kv) >= 0;
    }

    std::span<const float> gather(int64_t upto) override {
        return cache_.gather(seq_id_, upto, scratch_);
    }

    int64_t size() const override { return cache_.table(seq_id_).filled_tokens; }

private:
    PagedKvCache& cache_;
    int64_t seq_id_;
    std::vector<float> scratch_;
};

} // namespace takin
