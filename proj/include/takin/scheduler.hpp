#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "takin/kvcache.hpp"
#include "takin/model.hpp"
#include "takin/vocab.hpp"

namespace takin {

enum class RequestPhase { Queued, Prefill, Decode, Complete, Failed };

enum class FailCode { None, UnknownAdapter, QueueFull, AdapterKindConflict, PositionOverflow,
                      ResourceExhausted, BadRequest };

inline const char* fail_code_name(FailCode c) {
    switch (c) {
        case FailCode::None: return "none";
        case FailCode::UnknownAdapter: return "unknown-adapter";
        case FailCode::QueueFull: return "queue-full";
        case FailCode::AdapterKindConflict: return "adapter-kind-conflict";
        case FailCode::PositionOverflow: return "position-overflow";
        case FailCode::ResourceExhausted: return "resource-exhausted";
        default: return "bad-request";
    }
}

struct Request {
    ComposedSequence prefix; // must end at S
    Matrix cond;             // condition embeddings, condition_len x cond_source_dim
    std::vector<std::string> adapter_names; // <=1 domain + <=1 speaker
    DecodeParams decode;
    bool streaming = false;
};

enum class EventKind { Admitted, PrefillStart, Token, Preempted, Completed, Failed };

inline const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::Admitted: return "admitted";
        case EventKind::PrefillStart: return "prefill";
        case EventKind::Token: return "token";
        case EventKind::Preempted: return "preempted";
        case EventKind::Completed: return "completed";
        default: return "failed";
    }
}

struct RequestEvent {
    int64_t request_id = -1;
    EventKind kind = EventKind::Admitted;
    int64_t t_us = 0;
    TokenId token = -1;            // Token events
    bool terminated = false;       // Completed events
    FailCode fail = FailCode::None; // Failed events
};

using EventSink = std::function<void(const RequestEvent&)>;

struct RequestRecord {
    int64_t id = -1;
    RequestPhase phase = RequestPhase::Queued;
    Request request;
    AdapterStack adapters;

    std::vector<TokenId> generated; // everything fed back
    CodecSeq codec;                 // codec-range subset of generated
    int64_t foreign_count = 0;
    bool terminated = false;
    FailCode fail = FailCode::None;

    SplitMix64 rng{0};
    int64_t preemptions = 0;
    int64_t arrival_us = 0;
    int64_t first_token_us = -1;
    int64_t completion_us = -1;

    EventSink sink;

    // positions the cache must hold when fully (re)computed
    int64_t total_positions() const {
        return int64_t(request.prefix.condition_len) + int64_t(request.prefix.token_ids.size()) +
               int64_t(generated.size());
    }
};

struct AdmitResult {
    bool accepted = false;
    int64_t request_id = -1;
    FailCode fail = FailCode::None;
};

struct BatchPlan {
    enum class Kind { Prefill, Decode };
    Kind kind = Kind::Decode;
    std::vector<int64_t> request_ids;
    std::vector<AdapterStack> adapter_stacks; // parallel to request_ids
};

enum class PreemptPolicy { YoungestFirst, OldestFirst };

inline PreemptPolicy preempt_policy_from_name(const std::string& s) {
    if (s == "youngest") return PreemptPolicy::YoungestFirst;
    if (s == "oldest") return PreemptPolicy::OldestFirst;
    throw std::invalid_argument("scheduler: unknown preempt policy '" + s + "'");
}

struct EngineConfig {
    int32_t max_batch = 8;
    int32_t queue_capacity = 64;
    PreemptPolicy preempt_policy = PreemptPolicy::YoungestFirst;
};

// Resolves adapter names at admission; in the server this is backed by the
// registry, in tests by a lambda. Returning nullptr means unknown.
using AdapterResolver = std::function<std::shared_ptr<const LoraAdapter>(const std::string&)>;

// Single-owner continuous-batching engine. One prefill per step, prefill
// before decode, decode advances every in-flight request by one token.
// Not thread-safe by design: one scheduling loop owns it.
class Engine {
public:
    Engine(std::shared_ptr<const Model> model, const PageConfig& pages, EngineConfig cfg,
           AdapterResolver resolver = {})
        : model_(std::move(model)),
          cache_(pages),
          cfg_(cfg),
          resolver_(std::move(resolver)),
          epoch_(std::chrono::steady_clock::now()) {
        if (cfg_.max_batch < 1) throw std::invalid_argument("scheduler: max_batch must be >= 1");
        if (cfg_.queue_capacity < 1) throw std::invalid_argument("scheduler: queue_capacity must be >= 1");
        if (pages.kv_elems_per_token != model_->config().kv_elems_per_token()) {
            throw std::invalid_argument("scheduler: page payload size mismatch vs model");
        }
    }

    const ModelConfig& model_config() const { return model_->config(); }
    PagedKvCache& cache() { return cache_; }
    const PagedKvCache& cache() const { return cache_; }

    void set_event_log(std::ostream* os) { event_log_ = os; }
    void set_use_quant(bool v) { use_quant_ = v; }

    AdmitResult admit(Request req, EventSink sink = {}) {
        AdmitResult result;
        if (int32_t(queued_.size()) >= cfg_.queue_capacity) {
            result.fail = FailCode::QueueFull;
            return result;
        }
        if (req.prefix.token_ids.empty() || req.prefix.token_ids.back() != TOK_S) {
            result.fail = FailCode::BadRequest;
            return result;
        }
        if (req.prefix.condition_len != model_->config().condition_len) {
            result.fail = FailCode::BadRequest;
            return result;
        }
        const int64_t max_total = int64_t(req.prefix.condition_len) +
                                  int64_t(req.prefix.token_ids.size()) + req.decode.max_new_tokens;
        if (max_total > model_->config().max_positions) {
            result.fail = FailCode::PositionOverflow;
            return result;
        }
        if (req.decode.max_new_tokens < 0) {
            result.fail = FailCode::BadRequest;
            return result;
        }
        if (req.decode.mode == DecodeParams::Mode::Sampled &&
            (req.decode.top_k < 1 || req.decode.top_k > model_->config().vocab.total_size() ||
             !(req.decode.temperature > 0.0f))) {
            result.fail = FailCode::BadRequest;
            return result;
        }

        AdapterStack stack;
        bool have_domain = false, have_speaker = false;
        for (const auto& name : req.adapter_names) {
            std::shared_ptr<const LoraAdapter> ad = resolver_ ? resolver_(name) : nullptr;
            if (!ad) {
                result.fail = FailCode::UnknownAdapter;
                return result;
            }
            bool& have = ad->kind == AdapterKind::Domain ? have_domain : have_speaker;
            if (have) {
                result.fail = FailCode::AdapterKindConflict;
                return result;
            }
            have = true;
            stack.push_back(std::move(ad));
        }
        // applied order: domain before speaker
        std::stable_sort(stack.begin(), stack.end(), [](const auto& a, const auto& b) {
            return a->kind == AdapterKind::Domain && b->kind == AdapterKind::Speaker;
        });

        const int64_t id = next_id_++;
        auto rec = std::make_unique<RequestRecord>();
        rec->id = id;
        rec->request = std::move(req);
        rec->adapters = std::move(stack);
        rec->rng = SplitMix64(rec->request.decode.rng_seed);
        rec->arrival_us = now_us();
        rec->sink = std::move(sink);
        emit(*rec, {id, EventKind::Admitted, rec->arrival_us});
        records_[id] = std::move(rec);
        queued_.push_back(id);

        result.accepted = true;
        result.request_id = id;
        return result;
    }

    // Prefill the oldest queued request that fits; otherwise decode every
    // in-flight request up to max_batch; idle when nothing is runnable.
    // A queued request whose next prefill cannot fit even an empty pool is
    // failed here rather than starving the queue behind it.
    std::optional<BatchPlan> plan_step() {
        while (true) {
            const int64_t qid = oldest_queued();
            if (qid < 0) break;
            RequestRecord& rec = *records_.at(qid);
            const int64_t needed = PagedKvCache::pages_for_tokens(rec.total_positions(),
                                                                  cache_.config().page_size);
            if (needed > cache_.pages_total()) {
                remove_queued(qid);
                fail_request(rec, FailCode::ResourceExhausted);
                continue;
            }
            if (needed <= cache_.pages_free()) {
                BatchPlan plan;
                plan.kind = BatchPlan::Kind::Prefill;
                plan.request_ids.push_back(qid);
                plan.adapter_stacks.push_back(rec.adapters);
                return plan;
            }
            break; // fits eventually; wait for pages
        }

        BatchPlan plan;
        plan.kind = BatchPlan::Kind::Decode;
        for (int64_t id : sorted_decode_ids()) {
            if (int32_t(plan.request_ids.size()) >= cfg_.max_batch) break;
            plan.request_ids.push_back(id);
            plan.adapter_stacks.push_back(records_.at(id)->adapters);
        }
        if (plan.request_ids.empty()) return std::nullopt;
        return plan;
    }

    std::vector<RequestEvent> execute_step(const BatchPlan& plan) {
        step_events_.clear();
        if (plan.kind == BatchPlan::Kind::Prefill) {
            const int64_t id = plan.request_ids.front();
            try {
                execute_prefill(id);
            } catch (const std::exception&) {
                fail_request(*records_.at(id), FailCode::BadRequest);
            }
        } else {
            for (int64_t id : plan.request_ids) {
                RequestRecord& rec = *records_.at(id);
                if (rec.phase != RequestPhase::Decode) continue; // preempted earlier this step
                try {
                    execute_decode_row(rec);
                } catch (const std::exception&) {
                    fail_request(rec, FailCode::BadRequest);
                }
            }
        }
        return step_events_;
    }

    // One plan+execute cycle. Returns false when idle.
    bool step() {
        auto plan = plan_step();
        if (!plan) return false;
        execute_step(*plan);
        return true;
    }

    // Test/offline helper: run until no request is runnable.
    int64_t run_until_idle(int64_t max_steps = 1'000'000) {
        int64_t steps = 0;
        while (steps < max_steps && step()) ++steps;
        return steps;
    }

    bool has_work() const { return !queued_.empty() || !decode_ids_.empty(); }

    const RequestRecord& record(int64_t id) const { return *records_.at(id); }
    bool has_record(int64_t id) const { return records_.count(id) != 0; }

    int64_t preemption_count() const { return preemption_count_; }
    int64_t total_tokens_emitted() const { return total_tokens_; }
    int64_t now_us() const {
        return std::chrono::duration_cast<std::chrono::microseconds>(
                   std::chrono::steady_clock::now() - epoch_)
            .count();
    }

private:
    int64_t oldest_queued() const {
        int64_t best = -1;
        for (int64_t id : queued_) {
            if (best < 0 || id < best) best = id;
        }
        return best;
    }

    void remove_queued(int64_t id) {
        for (auto it = queued_.begin(); it != queued_.end(); ++it) {
            if (*it == id) {
                queued_.erase(it);
                return;
            }
        }
    }

    std::vector<int64_t> sorted_decode_ids() const {
        std::vector<int64_t> ids(decode_ids_.begin(), decode_ids_.end());
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    void execute_prefill(int64_t id) {
        RequestRecord& rec = *records_.at(id);
        remove_queued(id);
        rec.phase = RequestPhase::Prefill;
        emit(rec, {id, EventKind::PrefillStart, now_us()});

        if (!cache_.has_sequence(id)) cache_.allocate_sequence(id);
        PagedKvStream stream(cache_, id);
        std::vector<TokenId> tokens = full_token_list(rec);
        auto res = model_->forward(rec.adapters, rec.request.cond, tokens, stream,
                                   /*want_logits=*/true, use_quant_);
        if (res.status == ForwardStatus::OutOfPages) {
            // plan guaranteed capacity; treat as a hard invariant breach
            throw std::logic_error("scheduler: prefill ran out of pages despite capacity check");
        }

        if (rec.request.decode.max_new_tokens <= int32_t(rec.generated.size())) {
            complete_request(rec, /*terminated=*/false);
            return;
        }
        rec.phase = RequestPhase::Decode;
        decode_ids_.push_back(id);
        process_emission(rec, res.logits);
    }

    void execute_decode_row(RequestRecord& rec) {
        const int32_t needed = cache_.pages_needed(rec.id, 1);
        while (needed > cache_.pages_free()) {
            if (!preempt_for_pages(rec)) return; // rec itself was evicted or failed
        }
        PagedKvStream stream(cache_, rec.id);
        std::vector<TokenId> tokens = full_token_list(rec);
        auto res = model_->forward(rec.adapters, rec.request.cond, tokens, stream,
                                   /*want_logits=*/true, use_quant_);
        if (res.status == ForwardStatus::OutOfPages) {
            throw std::logic_error("scheduler: decode ran out of pages despite capacity check");
        }
        process_emission(rec, res.logits);
    }

    // Frees pages by evicting per policy. Returns false when `trigger` is no
    // longer decodable (it was the victim, or it failed).
    bool preempt_for_pages(RequestRecord& trigger) {
        int64_t victim = -1;
        for (int64_t id : decode_ids_) {
            if (victim < 0) {
                victim = id;
            } else if (cfg_.preempt_policy == PreemptPolicy::YoungestFirst ? id > victim
                                                                           : id < victim) {
                victim = id;
            }
        }
        if (victim < 0) {
            fail_request(trigger, FailCode::ResourceExhausted);
            return false;
        }
        RequestRecord& vrec = *records_.at(victim);
        cache_.evict_sequence(victim);
        ++preemption_count_;
        ++vrec.preemptions;
        vrec.phase = RequestPhase::Queued;
        decode_ids_.erase(std::find(decode_ids_.begin(), decode_ids_.end(), victim));
        queued_.push_back(victim);
        emit(vrec, {victim, EventKind::Preempted, now_us()});
        return victim != trigger.id;
    }

    void process_emission(RequestRecord& rec, std::span<const float> logits) {
        const DecodeParams& dp = rec.request.decode;
        const TokenId next = dp.mode == DecodeParams::Mode::Greedy ? greedy_step(logits)
                                                                   : sample_step(logits, dp, rec.rng);
        if (next == TOK_E) {
            rec.terminated = true;
            complete_request(rec, /*terminated=*/true);
            return;
        }
        rec.generated.push_back(next);
        const VocabLayout& vocab = model_->config().vocab;
        if (vocab.is_codec(next)) {
            rec.codec.ids.push_back(next);
        } else {
            ++rec.foreign_count;
        }
        ++total_tokens_;
        const int64_t t = now_us();
        if (rec.first_token_us < 0) rec.first_token_us = t;
        RequestEvent ev{rec.id, EventKind::Token, t};
        ev.token = next;
        emit(rec, ev);

        if (int32_t(rec.generated.size()) >= dp.max_new_tokens) {
            complete_request(rec, /*terminated=*/false);
        }
    }

    void complete_request(RequestRecord& rec, bool terminated) {
        rec.terminated = terminated;
        rec.phase = RequestPhase::Complete;
        rec.completion_us = now_us();
        if (rec.first_token_us < 0) rec.first_token_us = rec.completion_us;
        if (cache_.has_sequence(rec.id)) cache_.free_sequence(rec.id);
        auto it = std::find(decode_ids_.begin(), decode_ids_.end(), rec.id);
        if (it != decode_ids_.end()) decode_ids_.erase(it);
        RequestEvent ev{rec.id, EventKind::Completed, rec.completion_us};
        ev.terminated = terminated;
        emit(rec, ev);
    }

    void fail_request(RequestRecord& rec, FailCode code) {
        rec.phase = RequestPhase::Failed;
        rec.fail = code;
        rec.completion_us = now_us();
        if (cache_.has_sequence(rec.id)) cache_.free_sequence(rec.id);
        auto it = std::find(decode_ids_.begin(), decode_ids_.end(), rec.id);
        if (it != decode_ids_.end()) decode_ids_.erase(it);
        RequestEvent ev{rec.id, EventKind::Failed, rec.completion_us};
        ev.fail = code;
        emit(rec, ev);
    }

    std::vector<TokenId> full_token_list(const RequestRecord& rec) const {
        std::vector<TokenId> tokens = rec.request.prefix.token_ids;
        tokens.insert(tokens.end(), rec.generated.begin(), rec.generated.end());
        return tokens;
    }

    void emit(RequestRecord& rec, const RequestEvent& ev) {
        step_events_.push_back(ev);
        if (event_log_) {
            (*event_log_) << "ts_us=" << ev.t_us << " req=" << ev.request_id
                          << " event=" << event_kind_name(ev.kind);
            if (ev.kind == EventKind::Token) (*event_log_) << " id=" << ev.token;
            if (ev.kind == EventKind::Failed) (*event_log_) << " code=" << fail_code_name(ev.fail);
            (*event_log_) << "\n";
        }
        if (rec.sink) rec.sink(ev);
    }

    std::shared_ptr<const Model> model_;
    PagedKvCache cache_;
    EngineConfig cfg_;
    AdapterResolver resolver_;
    std::chrono::steady_clock::time_point epoch_;

    std::unordered_map<int64_t, std::unique_ptr<RequestRecord>> records_;
    std::deque<int64_t> queued_;
    std::vector<int64_t> decode_ids_;
    int64_t next_id_ = 1;
    int64_t preemption_count_ = 0;
    int64_t total_tokens_ = 0;
    bool use_quant_ = false;
    std::ostream* event_log_ = nullptr;
    std::vector<RequestEvent> step_events_;
};

} // namespace takin
