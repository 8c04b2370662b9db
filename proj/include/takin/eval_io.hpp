#pragma once

#include <array>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "takin/eval.hpp"

namespace takin {

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// JSON-lines, one RatedSample per line:
//   {"sentence_id": "s0", "sample_index": 0, "tokens": [...],
//    "per_rate": 0.1, "quality_proxy": -3.2, "human_rank": 2}
// tokens / per_rate / quality_proxy / human_rank are each optional.
inline std::vector<RatedSample> read_rated_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path);
    std::vector<RatedSample> samples;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            RatedSample s;
            s.sentence_id = j.at("sentence_id").get<std::string>();
            s.sample_index = j.at("sample_index").get<int32_t>();
            if (j.contains("tokens")) s.tokens = j.at("tokens").get<std::vector<TokenId>>();
            if (j.contains("per_rate")) s.per_rate = j.at("per_rate").get<double>();
            if (j.contains("quality_proxy")) s.quality_proxy = j.at("quality_proxy").get<double>();
            if (j.contains("human_rank")) s.human_rank = j.at("human_rank").get<int32_t>();
            samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return samples;
}

// CSV with header sentence_id,sample_index,rank (rank 1 = best)
inline void apply_human_ranks(std::vector<RatedSample>& samples, const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw SchemaError("cannot open " + csv_path);
    std::map<std::pair<std::string, int32_t>, int32_t> ranks;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.back() == '\r') {
            while (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
        }
        if (lineno == 1 && line.rfind("sentence_id", 0) == 0) continue;
        std::istringstream is(line);
        std::string id, idx_s, rank_s;
        if (!std::getline(is, id, ',') || !std::getline(is, idx_s, ',') || !std::getline(is, rank_s)) {
            throw SchemaError(csv_path + ":" + std::to_string(lineno) + ": expected 3 comma-separated fields");
        }
        try {
            ranks[{id, std::stoi(idx_s)}] = std::stoi(rank_s);
        } catch (const std::exception&) {
            throw SchemaError(csv_path + ":" + std::to_string(lineno) + ": non-integer index or rank");
        }
    }
    for (auto& s : samples) {
        auto it = ranks.find({s.sentence_id, s.sample_index});
        if (it != ranks.end()) s.human_rank = it->second;
    }
}

// Stable grouping by sentence_id in first-seen order.
inline std::vector<std::vector<RatedSample>> group_by_sentence(const std::vector<RatedSample>& samples) {
    std::vector<std::vector<RatedSample>> groups;
    std::map<std::string, size_t> index;
    for (const auto& s : samples) {
        auto [it, inserted] = index.try_emplace(s.sentence_id, groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(s);
    }
    return groups;
}

inline nlohmann::json pairs_to_json(const std::vector<PreferencePair>& pairs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : pairs) {
        arr.push_back({{"sentence_id", p.sentence_id},
                       {"chosen", p.chosen},
                       {"rejected", p.rejected},
                       {"source", p.source == RatingSource::Objective ? "objective" : "subjective"}});
    }
    return arr;
}

inline std::vector<PreferencePair> pairs_from_json(const nlohmann::json& arr) {
    std::vector<PreferencePair> pairs;
    for (const auto& j : arr) {
        PreferencePair p;
        p.sentence_id = j.at("sentence_id").get<std::string>();
        p.chosen = j.at("chosen").get<int32_t>();
        p.rejected = j.at("rejected").get<int32_t>();
        p.source = j.at("source").get<std::string>() == "subjective" ? RatingSource::Subjective
                                                                     : RatingSource::Objective;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

inline std::vector<PreferencePair> read_pairs_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
    if (j.is_object() && j.contains("pairs")) j = j.at("pairs");
    return pairs_from_json(j);
}

// Plain-text summary table with the PER / bad rate / SIM column layout.
inline std::string summary_table(const std::vector<std::array<std::string, 4>>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(28) << "model" << std::setw(10) << "PER" << std::setw(12)
       << "bad_rate" << std::setw(10) << "SIM" << "\n";
    os << std::string(58, '-') << "\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(28) << r[0] << std::setw(10) << r[1] << std::setw(12) << r[2]
           << std::setw(10) << r[3] << "\n";
    }
    return os.str();
}

} // namespace takin
