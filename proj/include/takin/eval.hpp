#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "takin/vocab.hpp"

namespace takin {

// Levenshtein alignment counts with unit costs. rate = (S+I+D)/ref_len.
struct PerReport {
    int64_t substitutions = 0;
    int64_t insertions = 0;
    int64_t deletions = 0;
    int64_t reference_length = 0;

    int64_t edit_distance() const { return substitutions + insertions + deletions; }
    double rate() const { return double(edit_distance()) / double(reference_length); }
};

// Backtrace ties prefer substitution over insertion over deletion.
inline PerReport per(std::span<const TokenId> reference, std::span<const TokenId> hypothesis) {
    const size_t n = reference.size();
    const size_t m = hypothesis.size();
    if (n == 0) throw std::invalid_argument("per: empty reference");

    std::vector<int32_t> dp((n + 1) * (m + 1));
    auto at = [&](size_t i, size_t j) -> int32_t& { return dp[i * (m + 1) + j]; };
    for (size_t i = 0; i <= n; ++i) at(i, 0) = int32_t(i);
    for (size_t j = 0; j <= m; ++j) at(0, j) = int32_t(j);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            const int32_t sub = at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
            const int32_t ins = at(i, j - 1) + 1;
            const int32_t del = at(i - 1, j) + 1;
            at(i, j) = std::min({sub, ins, del});
        }
    }

    PerReport report;
    report.reference_length = int64_t(n);
    size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1)) {
            if (reference[i - 1] != hypothesis[j - 1]) ++report.substitutions;
            --i;
            --j;
        } else if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
            ++report.insertions;
            --j;
        } else {
            ++report.deletions;
            --i;
        }
    }
    return report;
}

struct BadCaseFlags {
    bool length_anomaly = false;
    bool repetition_loop = false;
    bool no_termination = false;

    bool any() const { return length_anomaly || repetition_loop || no_termination; }
};

struct BadCaseConfig {
    int32_t frames_per_phone = 4;
    double length_tolerance = 0.3; // fraction of the expected frame count
    int32_t ngram = 4;
    int32_t min_repeats = 4; // consecutive occurrences flagging a loop
};

inline BadCaseFlags detect_bad_cases(std::span<const TokenId> generated, bool terminated,
                                     int64_t expected_phone_count,
                                     const BadCaseConfig& cfg = {}) {
    BadCaseFlags flags;
    flags.no_termination = !terminated;

    const double expected = double(expected_phone_count) * cfg.frames_per_phone;
    if (std::abs(double(generated.size()) - expected) > cfg.length_tolerance * expected) {
        flags.length_anomaly = true;
    }

    const size_t g = size_t(cfg.ngram);
    if (generated.size() >= g * size_t(cfg.min_repeats)) {
        for (size_t start = 0; start + g * size_t(cfg.min_repeats) <= generated.size(); ++start) {
            bool all = true;
            for (size_t rep = 1; rep < size_t(cfg.min_repeats) && all; ++rep) {
                for (size_t k = 0; k < g; ++k) {
                    if (generated[start + k] != generated[start + rep * g + k]) {
                        all = false;
                        break;
                    }
                }
            }
            if (all) {
                flags.repetition_loop = true;
                break;
            }
        }
    }
    return flags;
}

struct BadCaseReport {
    std::vector<BadCaseFlags> utterances;

    int64_t bad_count() const {
        int64_t b = 0;
        for (const auto& f : utterances) b += f.any() ? 1 : 0;
        return b;
    }
};

// B/100 with the literal denominator.
inline double bcr(const BadCaseReport& report) {
    if (report.utterances.size() != 100) {
        throw std::invalid_argument("bcr: requires exactly 100 utterances (use bad_rate for other sizes)");
    }
    return double(report.bad_count()) / 100.0;
}

// Generalized B/N.
inline double bad_rate(const BadCaseReport& report) {
    if (report.utterances.empty()) throw std::invalid_argument("bad_rate: empty report");
    return double(report.bad_count()) / double(report.utterances.size());
}

// One sample of a repeated-sampling group.
struct RatedSample {
    std::string sentence_id;
    int32_t sample_index = 0;
    std::vector<TokenId> tokens;
    double per_rate = 0.0;
    double quality_proxy = 0.0; // mean sequence log-probability
    std::optional<int32_t> human_rank; // 1 = best
};

enum class RatingSource { Objective, Subjective };

struct PreferencePair {
    std::string sentence_id;
    int32_t chosen = 0;   // sample_index
    int32_t rejected = 0; // sample_index
    RatingSource source = RatingSource::Objective;
};

namespace detail {

// objective order: lower per_rate better, then higher quality_proxy
inline bool obj_better(const RatedSample& a, const RatedSample& b) {
    if (a.per_rate != b.per_rate) return a.per_rate < b.per_rate;
    return a.quality_proxy > b.quality_proxy;
}
inline bool obj_equal(const RatedSample& a, const RatedSample& b) {
    return a.per_rate == b.per_rate && a.quality_proxy == b.quality_proxy;
}

} // namespace detail

// Best/worst pair per sentence. Objective rule: chosen minimizes per_rate
// with quality_proxy as tiebreak; rejected is the symmetric worst; within a
// tied class the lowest sample index wins; no pair when best and worst tie
// on both metrics. Subjective rule: rank-best vs rank-worst.
inline std::vector<PreferencePair> build_preference_pairs(
    const std::vector<std::vector<RatedSample>>& groups, RatingSource source) {
    std::vector<PreferencePair> pairs;
    for (const auto& group : groups) {
        if (group.size() < 2) throw std::invalid_argument("pairs: need at least 2 samples per sentence");
        if (source == RatingSource::Objective) {
            const RatedSample* best = &group[0];
            const RatedSample* worst = &group[0];
            for (const auto& s : group) {
                if (detail::obj_better(s, *best)) best = &s;
                if (detail::obj_better(*worst, s)) worst = &s;
            }
            if (detail::obj_equal(*best, *worst)) continue;
            // lowest index within each tied class
            for (const auto& s : group) {
                if (detail::obj_equal(s, *best) && s.sample_index < best->sample_index) best = &s;
                if (detail::obj_equal(s, *worst) && s.sample_index < worst->sample_index) worst = &s;
            }
            pairs.push_back({group[0].sentence_id, best->sample_index, worst->sample_index,
                             RatingSource::Objective});
        } else {
            const RatedSample* best = nullptr;
            const RatedSample* worst = nullptr;
            for (const auto& s : group) {
                if (!s.human_rank) throw std::invalid_argument("pairs: sample missing human rank");
                if (!best || *s.human_rank < *best->human_rank ||
                    (*s.human_rank == *best->human_rank && s.sample_index < best->sample_index)) {
                    best = &s;
                }
                if (!worst || *s.human_rank > *worst->human_rank ||
                    (*s.human_rank == *worst->human_rank && s.sample_index < worst->sample_index)) {
                    worst = &s;
                }
            }
            if (*best->human_rank == *worst->human_rank) continue;
            pairs.push_back({group[0].sentence_id, best->sample_index, worst->sample_index,
                             RatingSource::Subjective});
        }
    }
    return pairs;
}

// Fraction of sentences (union of both pair sets) where both sources produced
// a pair and the (chosen, rejected) indices agree exactly.
inline double overlap(const std::vector<PreferencePair>& pairs_a,
                      const std::vector<PreferencePair>& pairs_b) {
    std::map<std::string, std::pair<int32_t, int32_t>> a, b;
    for (const auto& p : pairs_a) a[p.sentence_id] = {p.chosen, p.rejected};
    for (const auto& p : pairs_b) b[p.sentence_id] = {p.chosen, p.rejected};
    std::set<std::string> universe;
    for (const auto& [id, _] : a) universe.insert(id);
    for (const auto& [id, _] : b) universe.insert(id);
    if (universe.empty()) throw std::invalid_argument("overlap: empty sentence universe");
    int64_t agree = 0;
    for (const auto& id : universe) {
        auto ia = a.find(id);
        auto ib = b.find(id);
        if (ia != a.end() && ib != b.end() && ia->second == ib->second) ++agree;
    }
    return double(agree) / double(universe.size());
}

} // namespace takin
