#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "plrn/rng.hpp"
#include "plrn/video_encoder.hpp"
#include "plrn/vocab.hpp"

namespace plrn {

/// One video-query pair with its normalized ground-truth boundary. The
/// feature stream is held in memory (desk scale).
struct GroundingSample {
    std::string id;
    std::string query;
    double g_s = 0.0, g_e = 0.0;  // normalized
    double duration = 0.0;        // seconds
    std::shared_ptr<RawVideo> video;
};

struct Dataset {
    std::vector<GroundingSample> samples;
    Vocabulary vocab;
};

// Annotation grammar (Charades-STA interchange):
//   video_id start_seconds end_seconds##sentence
// Feature files live in <annotation dir>/features/<video_id>.feat and supply
// the duration used for normalization.

inline std::vector<GroundingSample> parse_annotations(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open annotation file '" + path + "'");
    const auto features_dir = std::filesystem::path(path).parent_path() / "features";
    std::vector<GroundingSample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto sep = line.find("##");
        if (sep == std::string::npos)
            throw DataError("annotation line " + std::to_string(lineno) + ": missing '##'");
        std::istringstream head(line.substr(0, sep));
        GroundingSample s;
        double start = 0.0, end = 0.0;
        if (!(head >> s.id >> start >> end))
            throw DataError("annotation line " + std::to_string(lineno) +
                            ": expected 'video_id start end'");
        s.query = line.substr(sep + 2);
        if (normalize_words(s.query).empty())
            throw DataError("annotation line " + std::to_string(lineno) + ": empty query");
        if (end <= start)
            throw DataError("annotation line " + std::to_string(lineno) + ": end " +
                            std::to_string(end) + " <= start " + std::to_string(start));
        const auto feat = features_dir / (s.id + ".feat");
        auto video = std::make_shared<RawVideo>(read_feature_file(feat.string()));
        s.duration = video->duration;
        s.g_s = std::clamp(start / s.duration, 0.0, 1.0);
        s.g_e = std::clamp(end / s.duration, 0.0, 1.0);
        if (!(s.g_s < s.g_e))
            throw DataError("annotation line " + std::to_string(lineno) +
                            ": boundary collapses after normalization");
        s.video = std::move(video);
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_annotations(const std::string& path, const std::vector<GroundingSample>& samples) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open annotation file '" + path + "' for writing");
    char buf[96];
    for (const auto& s : samples) {
        // %.17g keeps the seconds bit-exact through the text round trip
        std::snprintf(buf, sizeof(buf), " %.17g %.17g##", s.g_s * s.duration, s.g_e * s.duration);
        os << s.id << buf << s.query << "\n";
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

/// Knobs of the synthetic grounding task. Each sample plants a token-keyed
/// pattern inside a hidden boundary; the query names the planted tokens.
struct SyntheticConfig {
    int n_samples = 200;
    int vocab_size = 40;        // includes signal tokens and filler words
    int n_signal_tokens = 8;
    int d_raw = 16;
    int frames_min = 80;
    int frames_max = 200;
    double width_min = 0.1;     // boundary width as a fraction of duration
    double width_max = 0.5;
    double sigma = 0.0;         // per-component Gaussian noise level
    double fps = 8.0;
    uint64_t seed = 1;
    // When set, half the samples hide the boundary location in the signal
    // word's position inside the query instead of in the video content, so
    // word and video position embeddings each carry half the task.
    bool position_biased = false;

    void validate() const {
        if (n_samples < 1) throw ConfigError("synthetic: n_samples must be >= 1");
        if (n_signal_tokens < 1 || n_signal_tokens > vocab_size - 8)
            throw ConfigError("synthetic: need 1 <= n_signal_tokens <= vocab_size - 8");
        if (d_raw < 1) throw ConfigError("synthetic: d_raw must be >= 1");
        if (frames_min < 1 || frames_max < frames_min)
            throw ConfigError("synthetic: bad frame range");
        if (!(width_min > 0.0) || width_max < width_min || width_max > 1.0)
            throw ConfigError("synthetic: boundary width must satisfy 0 < min <= max <= 1");
        if (sigma < 0.0) throw ConfigError("synthetic: sigma must be >= 0");
        if (!(fps > 0.0)) throw ConfigError("synthetic: fps must be > 0");
    }
};

namespace synth {

inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words = {"a",    "person", "the",  "then",
                                                   "and",  "near",   "does", "something",
                                                   "with", "again",  "room", "watches"};
    return words;
}

inline std::string signal_token(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sig%02d", i);
    return buf;
}

/// Unit-norm pattern direction for one signal token, drawn once per dataset.
inline std::vector<double> pattern_direction(Rng& rng, int d_raw) {
    std::vector<double> v(d_raw);
    double norm2 = 0.0;
    for (double& x : v) {
        x = rng.gaussian();
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-12));
    for (double& x : v) x *= inv;
    return v;
}

}  // namespace synth

/// Deterministic synthetic dataset: queries name 1-3 signal tokens, frames
/// inside the planted boundary carry the mean of those tokens' pattern
/// directions (amplitude 1) plus noise, frames outside carry noise only.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    Dataset ds;
    std::vector<std::string> signals;
    for (int i = 0; i < cfg.n_signal_tokens; ++i) signals.push_back(synth::signal_token(i));
    std::vector<std::string> fillers = synth::filler_words();
    for (int i = 0; static_cast<int>(fillers.size() + signals.size()) < cfg.vocab_size; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "w%03d", i);
        fillers.push_back(buf);
    }
    {
        std::vector<std::string> all;
        all.insert(all.end(), signals.begin(), signals.end());
        all.insert(all.end(), fillers.begin(), fillers.end());
        std::sort(all.begin(), all.end());
        for (const auto& t : all) ds.vocab.add(t);
    }

    std::vector<std::vector<double>> patterns;
    for (int i = 0; i < cfg.n_signal_tokens; ++i)
        patterns.push_back(synth::pattern_direction(rng, cfg.d_raw));

    for (int s = 0; s < cfg.n_samples; ++s) {
        GroundingSample sample;
        char id[32];
        std::snprintf(id, sizeof(id), "synth%04d", s);
        sample.id = id;

        const bool positional = cfg.position_biased && (s % 2 == 1);
        const int frames = rng.uniform_int(cfg.frames_min, cfg.frames_max);
        const double width = rng.uniform(cfg.width_min, cfg.width_max);

        std::vector<int> chosen;  // signal token indices named by the query
        double g_s;
        if (!positional) {
            const int k = rng.uniform_int(1, std::min(3, cfg.n_signal_tokens));
            for (int i = 0; i < k; ++i) {
                int c;
                do {
                    c = rng.uniform_int(0, cfg.n_signal_tokens - 1);
                } while (std::find(chosen.begin(), chosen.end(), c) != chosen.end());
                chosen.push_back(c);
            }
            g_s = rng.uniform(0.0, 1.0 - width);
            sample.query = "a person " + synth::signal_token(chosen[0]);
            for (size_t i = 1; i < chosen.size(); ++i)
                sample.query += (i == 1 ? " the " : " and ") + synth::signal_token(chosen[i]);
            const int extra = rng.uniform_int(0, 2);
            for (int i = 0; i < extra; ++i)
                sample.query += " " + fillers[rng.uniform_int(0, static_cast<int>(fillers.size()) - 1)];
        } else {
            // Boundary center encoded in the signal word's slot; the video
            // carries no planted pattern.
            const int n_words = 8;
            const int slot = rng.uniform_int(0, n_words - 1);
            chosen.push_back(rng.uniform_int(0, cfg.n_signal_tokens - 1));
            const double center_lo = 0.5 * width, center_hi = 1.0 - 0.5 * width;
            const double center =
                center_lo + (center_hi - center_lo) * (slot + 0.5) / n_words;
            g_s = center - 0.5 * width;
            std::string q;
            for (int w = 0; w < n_words; ++w) {
                if (w) q += " ";
                q += (w == slot) ? synth::signal_token(chosen[0]) : fillers[0];
            }
            sample.query = q;
        }
        const double g_e = g_s + width;

        auto video = std::make_shared<RawVideo>();
        video->frame_count = frames;
        video->d_raw = cfg.d_raw;
        video->duration = frames / cfg.fps;
        video->features.assign(static_cast<size_t>(frames) * cfg.d_raw, 0.0);
        std::vector<double> planted(cfg.d_raw, 0.0);
        if (!positional) {
            for (int c : chosen)
                for (int i = 0; i < cfg.d_raw; ++i) planted[i] += patterns[c][i];
            for (double& v : planted) v /= static_cast<double>(chosen.size());
        }
        for (int f = 0; f < frames; ++f) {
            const double mid = (f + 0.5) / frames;
            const bool inside = mid >= g_s && mid <= g_e;
            for (int i = 0; i < cfg.d_raw; ++i) {
                double v = inside ? planted[i] : 0.0;
                if (cfg.sigma > 0.0) v += cfg.sigma * rng.gaussian();
                video->features[static_cast<size_t>(f) * cfg.d_raw + i] = v;
            }
        }

        sample.g_s = g_s;
        sample.g_e = g_e;
        sample.duration = video->duration;
        sample.video = std::move(video);
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

/// Writes a dataset in the on-disk layout the CLI consumes: annotations.txt,
/// vocab.txt and features/<id>.feat.
inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "features", ec);
    if (ec) throw IoError("cannot create dataset directory '" + dir + "': " + ec.message());
    for (const auto& s : ds.samples)
        write_feature_file((fs::path(dir) / "features" / (s.id + ".feat")).string(), *s.video);
    write_annotations((fs::path(dir) / "annotations.txt").string(), ds.samples);
    ds.vocab.save((fs::path(dir) / "vocab.txt").string());
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.samples = parse_annotations((fs::path(dir) / "annotations.txt").string());
    const auto vocab_path = fs::path(dir) / "vocab.txt";
    if (fs::exists(vocab_path)) {
        ds.vocab = Vocabulary::load(vocab_path.string());
    } else {
        std::vector<std::string> queries;
        for (const auto& s : ds.samples) queries.push_back(s.query);
        ds.vocab = build_vocabulary(queries);
    }
    return ds;
}

/// Seeded disjoint cover of [0, n) in the given fractions (which must sum
/// to 1); remainders go to the earliest splits.
inline std::vector<std::vector<int>> split_indices(int n, const std::vector<double>& fractions,
                                                   uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw ConfigError("split: negative fraction");
        sum += f;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw ConfigError("split: fractions sum to " + std::to_string(sum) + ", expected 1");
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<int> counts(fractions.size());
    int assigned = 0;
    for (size_t i = 0; i < fractions.size(); ++i) {
        counts[i] = static_cast<int>(std::floor(fractions[i] * n));
        assigned += counts[i];
    }
    for (size_t i = 0; assigned < n; i = (i + 1) % fractions.size()) {
        ++counts[i];
        ++assigned;
    }
    std::vector<std::vector<int>> parts(fractions.size());
    int at = 0;
    for (size_t i = 0; i < fractions.size(); ++i)
        for (int k = 0; k < counts[i]; ++k) parts[i].push_back(order[at++]);
    return parts;
}

}  // namespace plrn
