#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "plrn/param_store.hpp"
#include "plrn/rng.hpp"
#include "plrn/tape.hpp"

namespace plrn {

/// Per-frame feature stream standing in for the frozen 3-D CNN extractor.
struct RawVideo {
    int frame_count = 0;
    int d_raw = 0;
    double duration = 0.0;                // seconds
    std::vector<double> features;        // frame-major, frame_count x d_raw

    double frame(int f, int c) const { return features[static_cast<size_t>(f) * d_raw + c]; }
};

// Feature file: magic "FEAT1", u32 frame_count, u32 d_raw, f64 duration,
// then row-major (frame-major) little-endian f32 features.

inline void write_feature_file(const std::string& path, const RawVideo& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open feature file '" + path + "' for writing");
    os.write("FEAT1", 5);
    detail::write_u32(os, static_cast<uint32_t>(v.frame_count));
    detail::write_u32(os, static_cast<uint32_t>(v.d_raw));
    detail::write_f64(os, v.duration);
    for (double d : v.features) {
        float f = static_cast<float>(d);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::write_u32(os, bits);
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

inline RawVideo read_feature_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open feature file '" + path + "'");
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, "FEAT1", 5) != 0)
        throw IoError("'" + path + "' is not a FEAT1 feature file");
    RawVideo v;
    v.frame_count = static_cast<int>(detail::read_u32(is));
    v.d_raw = static_cast<int>(detail::read_u32(is));
    v.duration = detail::read_f64(is);
    if (v.frame_count < 1 || v.d_raw < 1 || !(v.duration > 0.0))
        throw DataError("feature file '" + path + "': invalid header (frames=" +
                        std::to_string(v.frame_count) + ", d_raw=" + std::to_string(v.d_raw) + ")");
    v.features.resize(static_cast<size_t>(v.frame_count) * v.d_raw);
    for (double& d : v.features) {
        const uint32_t bits = detail::read_u32(is);
        float f;
        std::memcpy(&f, &bits, 4);
        d = static_cast<double>(f);
    }
    return v;
}

/// Fixed-length segmentation of a frame stream. Columns past the real
/// segment count are zero with mask false. `mids` holds each segment's
/// temporal midpoint normalized by video length (used by the attention
/// calibration indicator).
struct SegmentedVideo {
    TensorPtr features;              // d_raw x T, constant (not a parameter)
    std::vector<uint8_t> mask;       // T entries, true = real segment
    std::vector<double> mids;        // T entries, valid where mask is true
    int real_count = 0;
};

/// Half-overlapping windows of seg_len frames (hop = seg_len / 2), each
/// averaged into one segment feature. Frames past the end of the video are
/// ignored in the average. Videos yielding more than T windows are uniformly
/// subsampled down to T.
inline SegmentedVideo segment_video(const RawVideo& raw, int seg_len, int T) {
    if (raw.frame_count < 1) throw DataError("segment_video: empty video");
    if (seg_len < 2 || seg_len % 2 != 0)
        throw ConfigError("segment_video: seg_len must be even and >= 2, got " +
                          std::to_string(seg_len));
    const int hop = seg_len / 2;
    const int fc = raw.frame_count;
    const int natural = fc < seg_len ? 1 : (fc - seg_len) / hop + 1;

    std::vector<int> windows;  // start frame (0-based) of each kept window
    if (natural <= T) {
        for (int w = 0; w < natural; ++w) windows.push_back(w * hop);
    } else {
        for (int k = 0; k < T; ++k)
            windows.push_back(static_cast<int>((static_cast<int64_t>(k) * natural) / T) * hop);
    }

    SegmentedVideo out;
    out.real_count = static_cast<int>(windows.size());
    out.mask.assign(T, 0);
    out.mids.assign(T, 0.0);
    out.features = Tensor::make({raw.d_raw, T});
    for (int t = 0; t < out.real_count; ++t) {
        const int a = windows[t];
        const int b = std::min(a + seg_len, fc);
        for (int c = 0; c < raw.d_raw; ++c) {
            double s = 0.0;
            for (int f = a; f < b; ++f) s += raw.frame(f, c);
            out.features->at(c, t) = s / (b - a);
        }
        out.mask[t] = 1;
        out.mids[t] = 0.5 * (a + b) / fc;
    }
    return out;
}

/// Position-aware segment matrix V plus the validity mask.
struct VideoFeatures {
    TensorPtr V;                 // d x T
    std::vector<uint8_t> mask;   // T
    std::vector<double> mids;    // T
    int real_count = 0;
};

namespace video {

inline void init_params(ParameterStore& store, Rng& rng, int d, int d_raw, int T) {
    auto w = store.add("video.W_em", Tensor::make({d, d_raw}));
    init_xavier(rng, w, d_raw, d);
    store.add("emb.pos_v", Tensor::make({d, T}));
    init_uniform(rng, store.get("emb.pos_v"), -0.1, 0.1);
}

}  // namespace video

/// V_em = ReLU(W_em * segments). No bias, so zero-padded columns stay
/// exactly zero.
inline TensorPtr project_embed(Tape& tape, const ParameterStore& store,
                               const TensorPtr& segments) {
    return tape.relu(tape.matmul(store.get("video.W_em"), segments));
}

/// V = V_em + P_v (added to every column, padded ones included; the mask
/// keeps padding out of all downstream attention). Disabled by the position
/// embedding ablation.
inline VideoFeatures add_position(Tape& tape, const ParameterStore& store, const TensorPtr& v_em,
                                  const SegmentedVideo& seg, bool position_enabled) {
    VideoFeatures vf;
    vf.V = position_enabled ? tape.add(v_em, store.get("emb.pos_v")) : v_em;
    vf.mask = seg.mask;
    vf.mids = seg.mids;
    vf.real_count = seg.real_count;
    return vf;
}

inline VideoFeatures encode_video(Tape& tape, const ParameterStore& store, const RawVideo& raw,
                                  int seg_len, int T, bool position_enabled) {
    auto seg = segment_video(raw, seg_len, T);
    auto v_em = project_embed(tape, store, seg.features);
    return add_position(tape, store, v_em, seg, position_enabled);
}

}  // namespace plrn
