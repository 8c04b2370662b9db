// takin CLI: serve the streaming TTS engine, synthesize offline, benchmark
// first-packet latency, run evaluations, and pack/inspect adapter files.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "takin/takin.hpp"

namespace {

using nlohmann::json;

std::atomic<bool> g_shutdown{false};

void handle_signal(int) { g_shutdown.store(true); }

takin::Config resolve_config(const std::string& config_path) {
    std::string path = config_path;
    if (path.empty()) {
        if (const char* env = std::getenv("TAKIN_CONFIG")) path = env;
    }
    if (path.empty()) {
        takin::Config cfg;
        cfg.validate();
        return cfg;
    }
    return takin::load_config_file(path);
}

std::vector<takin::TokenId> parse_phones_arg(const takin::VocabLayout& vocab, const std::string& arg) {
    std::string text = arg;
    std::ifstream in(arg);
    if (in) {
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
        // file form: one utterance per line; single-utterance commands take line 1
        const size_t nl = text.find('\n');
        if (nl != std::string::npos) text.resize(nl);
    }
    std::istringstream is(text);
    std::vector<takin::TokenId> ids;
    int64_t v = 0;
    while (is >> v) ids.push_back(takin::TokenId(v));
    if (ids.empty()) throw std::runtime_error("no phoneme ids in '" + arg + "'");
    for (takin::TokenId id : ids) {
        if (!vocab.is_phoneme(id)) {
            throw std::runtime_error("phoneme id " + std::to_string(id) + " outside phoneme range [" +
                                     std::to_string(vocab.phoneme_base()) + ", " +
                                     std::to_string(vocab.codec_base()) + ")");
        }
    }
    return ids;
}

std::vector<takin::TokenId> random_phones(const takin::VocabLayout& vocab, int32_t len, uint64_t seed) {
    takin::SplitMix64 rng(seed);
    std::vector<takin::TokenId> ids(static_cast<size_t>(len));
    for (auto& id : ids) {
        id = vocab.phoneme_base() + takin::TokenId(rng.next_below(uint64_t(vocab.phoneme_count)));
    }
    return ids;
}

double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double idx = p / 100.0 * double(v.size() - 1);
    const size_t lo = size_t(idx);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = idx - double(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << content;
}

void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

int cmd_serve(const std::string& config_path, int32_t port_override, int32_t pages_override,
              int32_t page_size_override, bool quantized,
              const std::vector<std::string>& adapter_files, const std::string& event_log_path) {
    takin::Config cfg = resolve_config(config_path);
    if (port_override >= 0) cfg.port = uint16_t(port_override);
    if (pages_override > 0) cfg.pages = pages_override;
    if (page_size_override > 0) cfg.page_size = page_size_override;
    if (quantized) cfg.quantized = true;
    cfg.validate();

    takin::Server server(cfg);
    std::ofstream event_log;
    if (!event_log_path.empty()) {
        event_log.open(event_log_path);
        if (!event_log) throw std::runtime_error("cannot open event log " + event_log_path);
        server.set_event_log(&event_log);
    }
    for (const auto& file : adapter_files) {
        takin::LoraAdapter ad = takin::tkla_read_file(file);
        std::cout << "loaded adapter name=" << ad.name << " kind=" << adapter_kind_name(ad.kind)
                  << " rank=" << ad.rank << " from " << file << "\n";
        server.registry().load(std::move(ad));
    }
    server.start();

    char checksum[32];
    std::snprintf(checksum, sizeof(checksum), "%016llx",
                  static_cast<unsigned long long>(cfg.checksum()));
    std::cout << "takin serve listening port=" << server.port() << " config_checksum=0x" << checksum
              << " pages=" << cfg.pages << " page_size=" << cfg.page_size
              << " max_batch=" << cfg.max_batch << std::endl;

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_shutdown.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    std::cout << "shutting down, draining in-flight requests" << std::endl;
    server.stop();
    std::cout << "bye" << std::endl;
    return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, const std::string& phones_arg,
              const std::string& prompt_path, const std::string& preset,
              const std::vector<std::string>& adapter_files, const std::string& out_path,
              const std::string& mode, float temperature, int32_t top_k, uint64_t seed,
              int32_t max_new_tokens, bool quantized) {
    takin::Config cfg = resolve_config(config_path);
    if (quantized) cfg.quantized = true;
    const takin::CodecSpec spec = cfg.codec_spec();
    const takin::ModelConfig mc = cfg.model_config();

    const auto phone_ids = parse_phones_arg(mc.vocab, phones_arg);
    takin::PromptAudio prompt;
    if (!prompt_path.empty()) {
        prompt = takin::wav_read_file(prompt_path);
    } else {
        prompt = takin::preset_prompt(spec, preset);
    }

    auto mutable_model = std::make_shared<takin::Model>(mc);
    if (cfg.quantized) mutable_model->enable_quantized();
    std::shared_ptr<const takin::Model> model = mutable_model;
    takin::AdapterRegistry registry(cfg.n_layers, cfg.d_model);
    std::vector<std::string> adapter_names;
    for (const auto& file : adapter_files) {
        takin::LoraAdapter ad = takin::tkla_read_file(file);
        adapter_names.push_back(ad.name);
        registry.load(std::move(ad));
    }

    takin::Engine engine(model, cfg.page_config(), cfg.engine_config(),
                         [&registry](const std::string& n) { return registry.resolve(n); });
    engine.set_use_quant(cfg.quantized);

    takin::Request req;
    req.prefix = takin::compose_inference_prefix(cfg.condition_len,
                                                 takin::make_phoneme_seq(mc.vocab, phone_ids));
    req.cond = takin::prompt_embed(spec, prompt, cfg.condition_len, cfg.cond_source_dim, cfg.seed);
    req.adapter_names = adapter_names;
    req.decode.mode = mode == "sampled" ? takin::DecodeParams::Mode::Sampled
                                        : takin::DecodeParams::Mode::Greedy;
    req.decode.temperature = temperature;
    req.decode.top_k = top_k;
    req.decode.rng_seed = seed;
    req.decode.max_new_tokens = max_new_tokens;

    auto admitted = engine.admit(std::move(req));
    if (!admitted.accepted) {
        throw std::runtime_error(std::string("request rejected: ") + fail_code_name(admitted.fail));
    }
    engine.run_until_idle();
    const takin::RequestRecord& rec = engine.record(admitted.request_id);
    if (rec.phase == takin::RequestPhase::Failed) {
        throw std::runtime_error(std::string("request failed: ") + fail_code_name(rec.fail));
    }

    takin::Pcm pcm;
    std::vector<int32_t> indices;
    for (takin::TokenId id : rec.codec.ids) indices.push_back(mc.vocab.codec_index(id));
    for (int32_t idx : indices) {
        const takin::Pcm frame = takin::token_to_frame(spec, idx);
        pcm.insert(pcm.end(), frame.begin(), frame.end());
    }
    takin::wav_write_file(out_path, pcm, spec.sample_rate);

    // self-check: inverting the written audio must reproduce the token log
    double per_self = 0.0;
    if (!indices.empty()) {
        std::vector<takin::TokenId> recovered;
        for (size_t f = 0; f + size_t(spec.frame_len) <= pcm.size(); f += size_t(spec.frame_len)) {
            recovered.push_back(takin::frame_to_token(
                spec, std::span<const int16_t>(pcm.data() + f, size_t(spec.frame_len))));
        }
        std::vector<takin::TokenId> reference(indices.begin(), indices.end());
        per_self = takin::per(reference, recovered).rate();
    }

    std::cout << "tokens=" << rec.generated.size() << " codec=" << rec.codec.ids.size()
              << " foreign=" << rec.foreign_count << " terminated=" << (rec.terminated ? "true" : "false")
              << " per_self=" << per_self << " out=" << out_path << std::endl;
    return per_self == 0.0 ? 0 : 2;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct PhonesLenSpec {
    int32_t lo = 20;
    int32_t hi = 20;
};

PhonesLenSpec parse_len_spec(const std::string& s) {
    PhonesLenSpec spec;
    if (s.rfind("uniform:", 0) == 0) {
        const auto body = s.substr(8);
        const auto comma = body.find(',');
        if (comma == std::string::npos) throw std::runtime_error("bad --phones-len, want uniform:a,b");
        spec.lo = std::stoi(body.substr(0, comma));
        spec.hi = std::stoi(body.substr(comma + 1));
    } else {
        spec.lo = spec.hi = std::stoi(s);
    }
    if (spec.lo < 1 || spec.hi < spec.lo) throw std::runtime_error("bad --phones-len range");
    return spec;
}

int cmd_bench(const std::string& config_path, const std::string& connect, int32_t concurrency,
              int32_t total_requests, const std::string& len_spec_s, double latency_budget_ms,
              int32_t max_new_tokens, const std::string& mode, int32_t chunk_tokens, uint64_t seed,
              bool quantized) {
    takin::Config cfg = resolve_config(config_path);
    if (quantized) cfg.quantized = true;
    const PhonesLenSpec len_spec = parse_len_spec(len_spec_s);

    std::unique_ptr<takin::Server> local;
    std::string host = "127.0.0.1";
    uint16_t port = 0;
    if (connect.empty()) {
        cfg.port = 0; // ephemeral
        local = std::make_unique<takin::Server>(cfg);
        local->start();
        port = local->port();
    } else {
        const auto colon = connect.rfind(':');
        if (colon == std::string::npos) throw std::runtime_error("--connect wants host:port");
        host = connect.substr(0, colon);
        port = uint16_t(std::stoi(connect.substr(colon + 1)));
    }

    const takin::VocabLayout vocab(cfg.phoneme_count, cfg.codec_count);
    std::atomic<int32_t> next_request{0};
    std::atomic<int64_t> failures{0};
    std::atomic<int64_t> tokens_done{0};
    std::mutex agg_mu;
    std::vector<double> latencies;
    int64_t no_audio = 0;

    const auto t_start = std::chrono::steady_clock::now();
    std::vector<std::thread> workers;
    for (int32_t w = 0; w < concurrency; ++w) {
        workers.emplace_back([&] {
            while (true) {
                const int32_t idx = next_request.fetch_add(1);
                if (idx >= total_requests) break;
                try {
                    takin::SplitMix64 rng(seed + uint64_t(idx));
                    const int32_t len =
                        len_spec.lo + int32_t(rng.next_below(uint64_t(len_spec.hi - len_spec.lo + 1)));
                    json msg;
                    msg["op"] = "synthesize";
                    msg["phones"] = random_phones(vocab, len, seed ^ (uint64_t(idx) << 20));
                    msg["prompt_preset"] = "default";
                    msg["stream"] = true;
                    msg["chunk_tokens"] = chunk_tokens;
                    msg["decode"] = {{"mode", mode},
                                     {"max_new_tokens", max_new_tokens},
                                     {"top_k", std::min(64, vocab.total_size())},
                                     {"seed", seed + uint64_t(idx) * 7919}};
                    takin::Client client(host, port, cfg.max_frame);
                    auto res = client.synthesize(msg);
                    if (res.error) {
                        failures.fetch_add(1);
                        continue;
                    }
                    tokens_done.fetch_add(res.done.value("tokens", int64_t(0)));
                    std::lock_guard lock(agg_mu);
                    if (res.first_packet_ms >= 0) {
                        latencies.push_back(res.first_packet_ms);
                    } else {
                        ++no_audio;
                    }
                } catch (const std::exception& e) {
                    failures.fetch_add(1);
                    std::lock_guard lock(agg_mu);
                    std::cerr << "bench: request error: " << e.what() << "\n";
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    const double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    json server_metrics;
    try {
        takin::Client client(host, port, cfg.max_frame);
        server_metrics = client.control({{"op", "metrics"}});
    } catch (const std::exception&) {
        server_metrics = json::object();
    }
    if (local) local->stop();

    const double p50 = percentile(latencies, 50), p95 = percentile(latencies, 95),
                 p99 = percentile(latencies, 99);
    const int64_t preemptions = server_metrics.value("preemptions", int64_t(0));
    const int64_t histogram_total =
        server_metrics.contains("first_packet_ms")
            ? server_metrics["first_packet_ms"].value("total", int64_t(0))
            : 0;

    std::cout << "requests=" << total_requests << " concurrency=" << concurrency
              << " failures=" << failures.load() << " no_audio=" << no_audio << "\n";
    std::cout << "first_packet_ms p50=" << p50 << " p95=" << p95 << " p99=" << p99
              << " samples=" << latencies.size() << " server_histogram_total=" << histogram_total
              << "\n";
    std::cout << "tokens=" << tokens_done.load() << " tokens_per_sec=" << double(tokens_done.load()) / wall_s
              << " wall_s=" << wall_s << " preemptions=" << preemptions << "\n";

    const bool pass = failures.load() == 0 && !latencies.empty() && p95 < latency_budget_ms;
    std::cout << (pass ? "PASS" : "FAIL") << ": p95 first-packet " << p95 << " ms vs budget "
              << latency_budget_ms << " ms" << std::endl;
    return pass ? 0 : 2;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval_per(const std::string& input, const std::string& out_json_path,
                 const std::string& out_text_path) {
    std::ifstream in(input);
    if (!in) throw takin::SchemaError("cannot open " + input);
    json lines = json::array();
    std::string line;
    int64_t lineno = 0;
    double rate_sum = 0.0;
    int64_t count = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            const auto ref = j.at("reference").get<std::vector<takin::TokenId>>();
            const auto hyp = j.at("hypothesis").get<std::vector<takin::TokenId>>();
            const takin::PerReport r = takin::per(ref, hyp);
            lines.push_back({{"id", j.value("id", std::to_string(lineno))},
                             {"substitutions", r.substitutions},
                             {"insertions", r.insertions},
                             {"deletions", r.deletions},
                             {"reference_length", r.reference_length},
                             {"rate", r.rate()}});
            rate_sum += r.rate();
            ++count;
        } catch (const json::exception& e) {
            throw takin::SchemaError(input + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const std::invalid_argument& e) {
            throw takin::SchemaError(input + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (count == 0) throw takin::SchemaError(input + ": no records");
    json report;
    report["utterances"] = lines;
    report["mean_per"] = rate_sum / double(count);
    report["count"] = count;
    if (!out_json_path.empty()) write_json_file(out_json_path, report);
    std::ostringstream text;
    text << "PER over " << count << " utterances: mean=" << rate_sum / double(count) << "\n";
    if (!out_text_path.empty()) write_text_file(out_text_path, text.str());
    std::cout << text.str();
    return 0;
}

int cmd_eval_bcr(const std::string& input, const std::string& out_json_path,
                 const std::string& out_text_path, int32_t frames_per_phone) {
    std::ifstream in(input);
    if (!in) throw takin::SchemaError("cannot open " + input);
    takin::BadCaseConfig bc_cfg;
    bc_cfg.frames_per_phone = frames_per_phone;
    takin::BadCaseReport report;
    json lines = json::array();
    std::string line;
    int64_t lineno = 0;
    double per_sum = 0.0, sim_sum = 0.0;
    int64_t per_n = 0, sim_n = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            const auto tokens = j.at("tokens").get<std::vector<takin::TokenId>>();
            const bool terminated = j.at("terminated").get<bool>();
            const int64_t phones = j.at("expected_phones").get<int64_t>();
            const auto flags = takin::detect_bad_cases(tokens, terminated, phones, bc_cfg);
            report.utterances.push_back(flags);
            lines.push_back({{"id", j.value("id", std::to_string(lineno))},
                             {"length_anomaly", flags.length_anomaly},
                             {"repetition_loop", flags.repetition_loop},
                             {"no_termination", flags.no_termination}});
            if (j.contains("per_rate")) {
                per_sum += j.at("per_rate").get<double>();
                ++per_n;
            }
            if (j.contains("sim")) {
                sim_sum += j.at("sim").get<double>();
                ++sim_n;
            }
        } catch (const json::exception& e) {
            throw takin::SchemaError(input + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (report.utterances.empty()) throw takin::SchemaError(input + ": no records");

    json out;
    out["utterances"] = lines;
    out["bad_count"] = report.bad_count();
    out["bad_rate"] = takin::bad_rate(report);
    if (report.utterances.size() == 100) out["bcr"] = takin::bcr(report);
    if (!out_json_path.empty()) write_json_file(out_json_path, out);

    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        return std::string(buf);
    };
    const std::string per_col = per_n ? fmt(per_sum / double(per_n)) : "-";
    const std::string sim_col = sim_n ? fmt(sim_sum / double(sim_n)) : "-";
    const std::string text = takin::summary_table(
        {{input, per_col, fmt(takin::bad_rate(report)), sim_col}});
    if (!out_text_path.empty()) write_text_file(out_text_path, text);
    std::cout << text;
    std::cout << "bad_count=" << report.bad_count() << " n=" << report.utterances.size();
    if (report.utterances.size() == 100) std::cout << " bcr=" << takin::bcr(report);
    std::cout << std::endl;
    return 0;
}

int cmd_eval_pairs(const std::string& samples_path, const std::string& source_s,
                   const std::string& ranks_path, const std::string& out_path) {
    auto samples = takin::read_rated_samples(samples_path);
    if (!ranks_path.empty()) takin::apply_human_ranks(samples, ranks_path);
    const takin::RatingSource source = source_s == "subjective" ? takin::RatingSource::Subjective
                                                                : takin::RatingSource::Objective;
    const auto groups = takin::group_by_sentence(samples);
    const auto pairs = takin::build_preference_pairs(groups, source);
    json out;
    out["source"] = source_s;
    out["sentences"] = groups.size();
    out["pairs"] = takin::pairs_to_json(pairs);
    if (!out_path.empty()) write_json_file(out_path, out);
    std::cout << "sentences=" << groups.size() << " pairs=" << pairs.size() << " source=" << source_s
              << (out_path.empty() ? "" : " out=" + out_path) << std::endl;
    return 0;
}

int cmd_eval_overlap(const std::string& a_path, const std::string& b_path,
                     const std::string& out_path) {
    const auto a = takin::read_pairs_file(a_path);
    const auto b = takin::read_pairs_file(b_path);
    const double v = takin::overlap(a, b);
    json out;
    out["overlap"] = v;
    out["pairs_a"] = a.size();
    out["pairs_b"] = b.size();
    if (!out_path.empty()) write_json_file(out_path, out);
    std::cout << "overlap=" << v << std::endl;
    return 0;
}

// ---------------------------------------------------------------------------
// adapter pack | inspect
// ---------------------------------------------------------------------------

int cmd_adapter_pack(const std::string& config_path, const std::string& out_path,
                     const std::string& name, const std::string& kind, int32_t rank, float alpha,
                     uint64_t seed, float scale) {
    const takin::Config cfg = resolve_config(config_path);
    const auto adapter = takin::random_adapter(name, takin::adapter_kind_from_name(kind),
                                               cfg.n_layers, cfg.d_model, rank, alpha, seed, scale);
    takin::tkla_write_file(adapter, out_path);
    std::cout << "packed name=" << name << " kind=" << kind << " rank=" << rank << " alpha=" << alpha
              << " out=" << out_path << std::endl;
    return 0;
}

int cmd_adapter_inspect(const std::string& path) {
    const takin::LoraAdapter ad = takin::tkla_read_file(path);
    json j;
    j["name"] = ad.name;
    j["kind"] = adapter_kind_name(ad.kind);
    j["rank"] = ad.rank;
    j["alpha"] = ad.alpha;
    j["layers"] = ad.layers.size();
    size_t tensors = 0, floats = 0;
    for (const auto& layer : ad.layers) {
        for (const auto& f : layer) {
            tensors += 2;
            floats += f.a.data.size() + f.b.data.size();
        }
    }
    j["tensors"] = tensors;
    j["parameters"] = floats;
    std::cout << j.dump(2) << std::endl;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"takin: codec-token TTS serving engine"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (or env TAKIN_CONFIG)");

    // serve
    auto* serve = app.add_subcommand("serve", "run the streaming synthesis service");
    int32_t serve_port = -1, serve_pages = -1, serve_page_size = -1;
    bool serve_quantized = false;
    std::vector<std::string> serve_adapters;
    std::string event_log_path;
    serve->add_option("--port", serve_port, "override config port");
    serve->add_option("--pages", serve_pages, "override KV cache pool size");
    serve->add_option("--page-size", serve_page_size, "override tokens per KV page");
    serve->add_flag("--quantized", serve_quantized, "serve with int8 weight-only matmuls");
    serve->add_option("--adapter", serve_adapters, "preload TKLA adapter file(s)");
    serve->add_option("--event-log", event_log_path, "write the structured event log here");

    // synth
    auto* synth = app.add_subcommand("synth", "offline synthesis to a WAV file");
    std::string phones_arg, prompt_path, preset = "default", out_path = "out.wav";
    std::vector<std::string> synth_adapters;
    std::string mode = "greedy";
    float temperature = 1.0f;
    int32_t top_k = 50;
    uint64_t seed = 0;
    int32_t max_new_tokens = 64;
    synth->add_option("--phones", phones_arg, "phoneme ids (inline or .phones file)")->required();
    synth->add_option("--prompt", prompt_path, "prompt WAV file");
    synth->add_option("--preset", preset, "built-in prompt preset (default|silence)");
    synth->add_option("--adapter", synth_adapters, "TKLA adapter file(s), <=1 per kind");
    synth->add_option("--out", out_path, "output WAV path");
    synth->add_option("--mode", mode, "greedy|sampled");
    synth->add_option("--temperature", temperature, "sampling temperature");
    synth->add_option("--top-k", top_k, "sampling top-k");
    synth->add_option("--seed", seed, "sampling seed");
    synth->add_option("--max-new-tokens", max_new_tokens, "generation cap");
    bool synth_quantized = false;
    synth->add_flag("--quantized", synth_quantized, "decode with int8 weight-only matmuls");

    // bench
    auto* bench = app.add_subcommand("bench", "drive the wire protocol and measure latency");
    std::string connect;
    int32_t concurrency = 4, total_requests = 50;
    std::string len_spec = "20";
    double latency_budget = 300.0;
    int32_t bench_max_new = 32;
    std::string bench_mode = "sampled";
    int32_t bench_chunk = 8;
    uint64_t bench_seed = 1;
    bench->add_option("--connect", connect, "host:port of a running server (default: in-process)");
    bench->add_option("--concurrency", concurrency, "parallel client connections");
    bench->add_option("--requests", total_requests, "total requests");
    bench->add_option("--phones-len", len_spec, "phones per request: N or uniform:a,b");
    bench->add_option("--latency-budget", latency_budget, "p95 first-packet budget in ms");
    bench->add_option("--max-new-tokens", bench_max_new, "generation cap per request");
    bench->add_option("--mode", bench_mode, "greedy|sampled");
    bench->add_option("--chunk-tokens", bench_chunk, "codec tokens per audio chunk");
    bench->add_option("--seed", bench_seed, "base seed for request generation");
    bool bench_quantized = false;
    bench->add_flag("--quantized", bench_quantized, "run the in-process server quantized");

    // eval
    auto* eval = app.add_subcommand("eval", "metric and preference-data tooling");
    eval->require_subcommand(1);
    auto* eval_per = eval->add_subcommand("per", "token edit rate vs reference");
    std::string eval_input, out_json, out_text;
    eval_per->add_option("--input", eval_input, "JSONL with reference/hypothesis per line")->required();
    eval_per->add_option("--out-json", out_json, "JSON report path");
    eval_per->add_option("--out-text", out_text, "text summary path");

    auto* eval_bcr = eval->add_subcommand("bcr", "bad-case rate over generated utterances");
    std::string bcr_input, bcr_json, bcr_text;
    int32_t frames_per_phone = 4;
    eval_bcr->add_option("--input", bcr_input, "JSONL with tokens/terminated/expected_phones")->required();
    eval_bcr->add_option("--out-json", bcr_json, "JSON report path");
    eval_bcr->add_option("--out-text", bcr_text, "text summary path");
    eval_bcr->add_option("--frames-per-phone", frames_per_phone, "expected frames per phone");

    auto* eval_pairs = eval->add_subcommand("pairs", "build preference pairs from rated samples");
    std::string samples_path, pairs_source = "objective", ranks_path, pairs_out;
    eval_pairs->add_option("--samples", samples_path, "JSONL of rated samples")->required();
    eval_pairs->add_option("--source", pairs_source, "objective|subjective");
    eval_pairs->add_option("--ranks", ranks_path, "CSV sentence_id,sample_index,rank");
    eval_pairs->add_option("--out", pairs_out, "pairs JSON path");

    auto* eval_overlap = eval->add_subcommand("overlap", "agreement between two pair files");
    std::string overlap_a, overlap_b, overlap_out;
    eval_overlap->add_option("--a", overlap_a, "first pairs JSON")->required();
    eval_overlap->add_option("--b", overlap_b, "second pairs JSON")->required();
    eval_overlap->add_option("--out", overlap_out, "JSON report path");

    // adapter
    auto* adapter = app.add_subcommand("adapter", "TKLA container tooling");
    adapter->require_subcommand(1);
    auto* pack = adapter->add_subcommand("pack", "create a deterministic adapter file");
    std::string pack_out = "adapter.tkla", pack_name = "adapter", pack_kind = "domain";
    int32_t pack_rank = 8;
    float pack_alpha = 16.0f, pack_scale = 0.01f;
    uint64_t pack_seed = 0;
    pack->add_option("--out", pack_out, "output path");
    pack->add_option("--name", pack_name, "adapter name");
    pack->add_option("--kind", pack_kind, "domain|speaker");
    pack->add_option("--rank", pack_rank, "LoRA rank (0 = identity)");
    pack->add_option("--alpha", pack_alpha, "LoRA alpha");
    pack->add_option("--seed", pack_seed, "factor seed");
    pack->add_option("--scale", pack_scale, "factor init scale");

    auto* inspect = adapter->add_subcommand("inspect", "print adapter metadata");
    std::string inspect_path;
    inspect->add_option("--file", inspect_path, "TKLA file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (serve->parsed()) {
            return cmd_serve(config_path, serve_port, serve_pages, serve_page_size, serve_quantized,
                             serve_adapters, event_log_path);
        }
        if (synth->parsed()) {
            return cmd_synth(config_path, phones_arg, prompt_path, preset, synth_adapters, out_path,
                             mode, temperature, top_k, seed, max_new_tokens, synth_quantized);
        }
        if (bench->parsed()) {
            return cmd_bench(config_path, connect, concurrency, total_requests, len_spec,
                             latency_budget, bench_max_new, bench_mode, bench_chunk, bench_seed,
                             bench_quantized);
        }
        if (eval->parsed()) {
            if (eval_per->parsed()) return cmd_eval_per(eval_input, out_json, out_text);
            if (eval_bcr->parsed()) return cmd_eval_bcr(bcr_input, bcr_json, bcr_text, frames_per_phone);
            if (eval_pairs->parsed()) {
                return cmd_eval_pairs(samples_path, pairs_source, ranks_path, pairs_out);
            }
            if (eval_overlap->parsed()) return cmd_eval_overlap(overlap_a, overlap_b, overlap_out);
        }
        if (adapter->parsed()) {
            if (pack->parsed()) {
                return cmd_adapter_pack(config_path, pack_out, pack_name, pack_kind, pack_rank,
                                        pack_alpha, pack_seed, pack_scale);
            }
            if (inspect->parsed()) return cmd_adapter_inspect(inspect_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 1;
}
