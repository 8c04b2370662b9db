#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "takin/base64.hpp"
#include "takin/codec.hpp"
#include "takin/config.hpp"
#include "takin/model.hpp"
#include "takin/net.hpp"
#include "takin/protocol.hpp"
#include "takin/registry.hpp"
#include "takin/scheduler.hpp"

namespace takin {

// Fixed bucket edges for the first-packet latency histogram, in ms; a final
// overflow bin catches everything above the last edge.
inline const std::vector<double>& latency_bucket_edges_ms() {
    static const std::vector<double> edges = {1, 2, 5, 10, 20, 50, 100, 200, 300, 500, 1000};
    return edges;
}

class LatencyHistogram {
public:
    LatencyHistogram() : counts_(latency_bucket_edges_ms().size() + 1) {
        for (auto& c : counts_) c.store(0);
    }

    void record(double ms) {
        const auto& edges = latency_bucket_edges_ms();
        size_t bin = edges.size();
        for (size_t i = 0; i < edges.size(); ++i) {
            if (ms <= edges[i]) {
                bin = i;
                break;
            }
        }
        counts_[bin].fetch_add(1);
        total_.fetch_add(1);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["edges_ms"] = latency_bucket_edges_ms();
        std::vector<int64_t> counts;
        for (const auto& c : counts_) counts.push_back(c.load());
        j["counts"] = counts;
        j["total"] = total_.load();
        return j;
    }

    int64_t total() const { return total_.load(); }

private:
    std::vector<std::atomic<int64_t>> counts_;
    std::atomic<int64_t> total_{0};
};

// Monotone counters only; snapshots are not cross-field consistent.
class Metrics {
public:
    Metrics() : start_(std::chrono::steady_clock::now()) {}

    std::atomic<int64_t> admitted{0};
    std::atomic<int64_t> completed{0};
    std::atomic<int64_t> failed{0};
    std::atomic<int64_t> tokens{0};
    std::atomic<int64_t> preemptions{0};
    std::atomic<int64_t> cache_pages_total{0};
    std::atomic<int64_t> cache_pages_free{0};
    std::atomic<int64_t> cache_evictions{0};
    LatencyHistogram first_packet;

    double uptime_s() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    nlohmann::json snapshot() const {
        const double up = uptime_s();
        nlohmann::json j;
        j["admitted"] = admitted.load();
        j["completed"] = completed.load();
        j["failed"] = failed.load();
        j["tokens_total"] = tokens.load();
        j["tokens_per_sec"] = up > 0 ? double(tokens.load()) / up : 0.0;
        j["uptime_s"] = up;
        j["preemptions"] = preemptions.load();
        j["first_packet_ms"] = first_packet.to_json();
        j["cache"] = {{"pages_total", cache_pages_total.load()},
                      {"pages_free", cache_pages_free.load()},
                      {"evictions", cache_evictions.load()}};
        return j;
    }

private:
    std::chrono::steady_clock::time_point start_;
};

// Unbounded MPSC event queue; the engine thread pushes, one handler pops.
class EventQueue {
public:
    void push(const RequestEvent& ev) {
        {
            std::lock_guard lock(mu_);
            q_.push_back(ev);
        }
        cv_.notify_one();
    }

    RequestEvent pop() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !q_.empty(); });
        RequestEvent ev = q_.front();
        q_.pop_front();
        return ev;
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<RequestEvent> q_;
};

// Owns the Engine and the single scheduling thread. Admission crosses in
// via a submission queue; results come back through per-request sinks.
class EngineLoop {
public:
    EngineLoop(std::shared_ptr<const Model> model, const PageConfig& pages, EngineConfig cfg,
               AdapterResolver resolver, Metrics* metrics = nullptr)
        : engine_(std::move(model), pages, cfg, std::move(resolver)), metrics_(metrics) {
        publish_engine_stats();
    }

    ~EngineLoop() { stop(); }

    void set_event_log(std::ostream* os) { engine_.set_event_log(os); }
    // call before start(); the loop thread owns the engine afterwards
    void set_use_quant(bool v) { engine_.set_use_quant(v); }

    void start() {
        if (thread_.joinable()) return;
        stop_flag_.store(false);
        thread_ = std::thread([this] { run(); });
    }

    // Blocks until the loop has drained every in-flight request.
    void stop() {
        if (!thread_.joinable()) return;
        {
            std::lock_guard lock(mu_);
            stop_flag_.store(true);
        }
        cv_.notify_all();
        thread_.join();
    }

    AdmitResult submit(Request req, EventSink sink) {
        Submission sub;
        sub.req = std::move(req);
        sub.sink = std::move(sink);
        auto fut = sub.result.get_future();
        {
            std::lock_guard lock(mu_);
            if (stop_flag_.load()) {
                AdmitResult r;
                r.fail = FailCode::QueueFull;
                return r;
            }
            subs_.push_back(std::move(sub));
        }
        cv_.notify_all();
        return fut.get();
    }

private:
    struct Submission {
        Request req;
        EventSink sink;
        std::promise<AdmitResult> result;
    };

    void run() {
        while (true) {
            drain_submissions();
            if (engine_.has_work()) {
                engine_.step();
                publish_engine_stats();
                continue;
            }
            std::unique_lock lock(mu_);
            if (stop_flag_.load() && subs_.empty()) break;
            cv_.wait_for(lock, std::chrono::milliseconds(20),
                         [&] { return stop_flag_.load() || !subs_.empty(); });
        }
    }

    void drain_submissions() {
        std::deque<Submission> batch;
        {
            std::lock_guard lock(mu_);
            batch.swap(subs_);
        }
        for (auto& sub : batch) {
            AdmitResult r = engine_.admit(std::move(sub.req), std::move(sub.sink));
            if (metrics_) {
                if (r.accepted) {
                    metrics_->admitted.fetch_add(1);
                } else {
                    metrics_->failed.fetch_add(1);
                }
            }
            sub.result.set_value(r);
        }
    }

    void publish_engine_stats() {
        if (!metrics_) return;
        const CacheStats s = engine_.cache().stats();
        metrics_->cache_pages_total.store(s.pages_total);
        metrics_->cache_pages_free.store(s.pages_free);
        metrics_->cache_evictions.store(s.eviction_count);
        metrics_->preemptions.store(engine_.preemption_count());
    }

    Engine engine_;
    Metrics* metrics_;
    std::thread thread_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Submission> subs_;
    std::atomic<bool> stop_flag_{false};
};

// TCP front end speaking the length-prefixed frame protocol.
class Server {
public:
    explicit Server(Config cfg)
        : cfg_(validated(std::move(cfg))),
          model_(build_model(cfg_)),
          registry_(cfg_.n_layers, cfg_.d_model),
          loop_(model_, cfg_.page_config(), cfg_.engine_config(),
                [this](const std::string& name) { return registry_.resolve(name); }, &metrics_) {
        loop_.set_use_quant(cfg_.quantized);
    }

    ~Server() { stop(); }

    // Binds (port 0 = ephemeral) and spawns the accept and engine threads.
    void start() {
        listener_ = TcpListener::listen_on(cfg_.port);
        stopping_.store(false);
        loop_.start();
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    // Graceful shutdown: stop accepting, let in-flight requests finish
    // streaming, then drain the engine.
    void stop() {
        if (stopping_.exchange(true)) return;
        if (accept_thread_.joinable()) accept_thread_.join();
        listener_.close();
        {
            std::lock_guard lock(conn_mu_);
            for (auto& c : conns_) c->stream.shutdown_read();
        }
        for (auto& c : conns_) {
            if (c->thread.joinable()) c->thread.join();
        }
        conns_.clear();
        loop_.stop();
    }

    uint16_t port() const { return listener_.bound_port(); }
    const Config& config() const { return cfg_; }
    AdapterRegistry& registry() { return registry_; }
    Metrics& metrics() { return metrics_; }
    void set_event_log(std::ostream* os) { loop_.set_event_log(os); }

private:
    struct Conn {
        TcpStream stream;
        std::thread thread;
    };

    void accept_loop() {
        while (!stopping_.load()) {
            auto stream = listener_.accept(stopping_);
            if (!stream) break;
            auto conn = std::make_shared<Conn>();
            conn->stream = std::move(*stream);
            {
                std::lock_guard lock(conn_mu_);
                conns_.push_back(conn);
            }
            conn->thread = std::thread([this, conn] { handle_connection(conn->stream); });
        }
    }

    void handle_connection(TcpStream& stream) {
        auto reader = [&stream](char* dst, size_t n) { return stream.read_some(dst, n); };
        try {
            while (true) {
                std::optional<Frame> frame;
                try {
                    frame = read_frame(reader, cfg_.max_frame);
                } catch (const ProtocolError& e) {
                    write_error(stream, "bad-request", e.what());
                    return;
                }
                if (!frame) return; // clean EOF
                const auto t_request_read = std::chrono::steady_clock::now();
                if (frame->type != FRAME_CONTROL) {
                    write_error(stream, "bad-request", "expected a control frame");
                    return;
                }
                nlohmann::json msg;
                try {
                    msg = nlohmann::json::parse(frame->payload);
                } catch (const nlohmann::json::exception& e) {
                    write_error(stream, "bad-request", std::string("control JSON: ") + e.what());
                    return;
                }
                const std::string op = msg.value("op", "");
                if (op == "synthesize") {
                    handle_synthesize(stream, msg, t_request_read);
                } else if (op == "load_adapter") {
                    handle_load_adapter(stream, msg);
                } else if (op == "unload_adapter") {
                    handle_unload_adapter(stream, msg);
                } else if (op == "metrics") {
                    write_frame(stream, FRAME_CONTROL, metrics_.snapshot().dump());
                } else {
                    write_error(stream, "bad-request", "unknown op '" + op + "'");
                }
            }
        } catch (const std::exception&) {
            // peer went away mid-write; nothing to clean up beyond the socket
        }
    }

    void handle_synthesize(TcpStream& stream, const nlohmann::json& msg,
                           std::chrono::steady_clock::time_point t_request_read) {
        const CodecSpec spec = cfg_.codec_spec();
        Request req;
        int32_t chunk_tokens = cfg_.chunk_tokens;
        bool streaming = true;
        bool send_tokens = false;
        try {
            const auto phone_ids = msg.at("phones").get<std::vector<TokenId>>();
            const VocabLayout vocab = model_->config().vocab;
            PhonemeSeq phones = make_phoneme_seq(vocab, phone_ids);

            PromptAudio prompt;
            if (msg.contains("prompt_b64")) {
                const std::string bytes = base64_decode(msg.at("prompt_b64").get<std::string>());
                prompt = wav_parse(std::span<const unsigned char>(
                    reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
            } else {
                prompt = preset_prompt(spec, msg.value("prompt_preset", "default"));
            }

            req.prefix = compose_inference_prefix(cfg_.condition_len, phones);
            req.cond = prompt_embed(spec, prompt, cfg_.condition_len, cfg_.cond_source_dim, cfg_.seed);
            if (msg.contains("adapters")) {
                req.adapter_names = msg.at("adapters").get<std::vector<std::string>>();
            }
            if (msg.contains("decode")) {
                const auto& d = msg.at("decode");
                const std::string mode = d.value("mode", "greedy");
                if (mode == "sampled") {
                    req.decode.mode = DecodeParams::Mode::Sampled;
                } else if (mode != "greedy") {
                    throw std::invalid_argument("decode.mode must be 'greedy' or 'sampled'");
                }
                req.decode.temperature = d.value("temperature", 1.0f);
                req.decode.top_k = d.value("top_k", 50);
                req.decode.rng_seed = d.value("seed", uint64_t(0));
                req.decode.max_new_tokens = d.value("max_new_tokens", 64);
            }
            streaming = msg.value("stream", true);
            send_tokens = msg.value("tokens", false);
            chunk_tokens = msg.value("chunk_tokens", cfg_.chunk_tokens);
            if (chunk_tokens < 1) throw std::invalid_argument("chunk_tokens must be >= 1");
            req.streaming = streaming;
            // every audio reply is a single frame per flush; make sure it can fit
            const uint64_t frame_bytes = uint64_t(spec.frame_len) * 2;
            if (uint64_t(chunk_tokens) * frame_bytes > cfg_.max_frame) {
                throw std::invalid_argument("chunk_tokens * codec frame size exceeds server.max_frame");
            }
            const uint64_t worst = uint64_t(req.decode.max_new_tokens) * frame_bytes;
            if (!streaming && worst > cfg_.max_frame) {
                throw std::invalid_argument("non-streamed audio would exceed server.max_frame");
            }
        } catch (const std::exception& e) {
            write_error(stream, "bad-request", e.what());
            return;
        }

        auto events = std::make_shared<EventQueue>();
        AdmitResult admitted = loop_.submit(std::move(req),
                                            [events](const RequestEvent& ev) { events->push(ev); });
        if (!admitted.accepted) {
            write_error(stream, error_code_for(admitted.fail), fail_code_name(admitted.fail));
            return;
        }

        const VocabLayout vocab = model_->config().vocab;
        std::vector<int32_t> pending; // codec indices awaiting a flush
        int64_t generated = 0, codec_tokens = 0, foreign = 0, preempts = 0;
        bool first_audio_sent = false;
        double first_packet_ms = -1.0;

        auto flush = [&]() {
            if (pending.empty()) return;
            std::string tokens_payload;
            Pcm pcm;
            pcm.reserve(pending.size() * size_t(spec.frame_len));
            for (int32_t idx : pending) {
                const Pcm frame = token_to_frame(spec, idx);
                pcm.insert(pcm.end(), frame.begin(), frame.end());
                if (send_tokens) {
                    for (int shift = 0; shift < 32; shift += 8) {
                        tokens_payload.push_back(char((uint32_t(idx) >> shift) & 0xFF));
                    }
                }
            }
            pending.clear();
            if (send_tokens) write_frame(stream, FRAME_TOKENS, tokens_payload);
            if (!first_audio_sent) {
                first_audio_sent = true;
                first_packet_ms = std::chrono::duration<double, std::milli>(
                                      std::chrono::steady_clock::now() - t_request_read)
                                      .count();
                metrics_.first_packet.record(first_packet_ms);
            }
            write_frame(stream, FRAME_AUDIO,
                        std::string(reinterpret_cast<const char*>(pcm.data()), pcm.size() * 2));
        };

        while (true) {
            const RequestEvent ev = events->pop();
            if (ev.kind == EventKind::Token) {
                ++generated;
                metrics_.tokens.fetch_add(1);
                if (vocab.is_codec(ev.token)) {
                    ++codec_tokens;
                    pending.push_back(vocab.codec_index(ev.token));
                    if (streaming && int32_t(pending.size()) >= chunk_tokens) flush();
                } else {
                    ++foreign;
                }
            } else if (ev.kind == EventKind::Preempted) {
                ++preempts;
            } else if (ev.kind == EventKind::Completed) {
                flush();
                metrics_.completed.fetch_add(1);
                nlohmann::json done;
                done["request_id"] = ev.request_id;
                done["tokens"] = generated;
                done["codec_tokens"] = codec_tokens;
                done["foreign"] = foreign;
                done["terminated"] = ev.terminated;
                done["preemptions"] = preempts;
                done["first_packet_ms"] = first_packet_ms;
                write_frame(stream, FRAME_DONE, done.dump());
                return;
            } else if (ev.kind == EventKind::Failed) {
                metrics_.failed.fetch_add(1);
                write_error(stream, error_code_for(ev.fail), fail_code_name(ev.fail));
                return;
            }
        }
    }

    void handle_load_adapter(TcpStream& stream, const nlohmann::json& msg) {
        try {
            LoraAdapter adapter;
            if (msg.contains("blob")) {
                const std::string bytes = base64_decode(msg.at("blob").get<std::string>());
                adapter = tkla_parse(std::span<const unsigned char>(
                    reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
            } else if (msg.contains("path")) {
                adapter = tkla_read_file(msg.at("path").get<std::string>());
            } else {
                write_error(stream, "bad-request", "load_adapter needs 'blob' or 'path'");
                return;
            }
            nlohmann::json ack;
            ack["ok"] = true;
            ack["name"] = adapter.name;
            ack["kind"] = adapter_kind_name(adapter.kind);
            ack["rank"] = adapter.rank;
            registry_.load(std::move(adapter));
            write_frame(stream, FRAME_CONTROL, ack.dump());
        } catch (const std::exception& e) {
            write_error(stream, "bad-container", e.what());
        }
    }

    void handle_unload_adapter(TcpStream& stream, const nlohmann::json& msg) {
        const std::string name = msg.value("name", "");
        if (registry_.unload(name)) {
            write_frame(stream, FRAME_CONTROL, nlohmann::json{{"ok", true}, {"name", name}}.dump());
        } else {
            write_error(stream, "unknown-adapter", "no adapter named '" + name + "'");
        }
    }

    static Config validated(Config cfg) {
        cfg.validate();
        return cfg;
    }

    static std::shared_ptr<const Model> build_model(const Config& cfg) {
        auto model = std::make_shared<Model>(cfg.model_config());
        if (cfg.quantized) model->enable_quantized();
        return model;
    }

    static const char* error_code_for(FailCode code) {
        switch (code) {
            case FailCode::UnknownAdapter: return "unknown-adapter";
            case FailCode::QueueFull:
            case FailCode::ResourceExhausted: return "resource-exhausted";
            default: return "bad-request";
        }
    }

    void write_frame(TcpStream& stream, uint8_t type, const std::string& payload) {
        stream.write_all(encode_frame(Frame{type, payload}, cfg_.max_frame));
    }

    void write_error(TcpStream& stream, const std::string& code, const std::string& message) {
        try {
            write_frame(stream, FRAME_ERROR,
                        nlohmann::json{{"code", code}, {"message", message}}.dump());
        } catch (const std::exception&) {
            // peer already gone
        }
    }

    Config cfg_;
    std::shared_ptr<const Model> model_;
    AdapterRegistry registry_;
    Metrics metrics_;
    EngineLoop loop_;
    TcpListener listener_;
    std::thread accept_thread_;
    std::atomic<bool> stopping_{true};
    std::mutex conn_mu_;
    std::vector<std::shared_ptr<Conn>> conns_;
};

} // namespace takin
