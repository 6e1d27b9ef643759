#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "plrn/data.hpp"
#include "plrn/tensor.hpp"

namespace plrn {

namespace cfg_detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

/// Flat `key = value` file; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file '" + path + "'");
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        const int n = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

}  // namespace cfg_detail

/// All training-time knobs. Defaults are the desk-scale preset; full_scale()
/// gives the published configuration (d=512, T=128, 16-frame segments,
/// lr 0.0004, batch 100).
struct TrainConfig {
    // architecture
    int d = 64;
    int t_segments = 32;
    int seg_len = 8;
    int max_words = 25;
    int kernel_width = 15;
    int nl_blocks = 2;
    int nl_heads = 4;
    // optimization
    double lr = 0.0004;
    int batch = 16;
    int epochs = 60;
    uint64_t seed = 1;
    // ablation switches
    bool use_qan = true;
    bool use_l_tem = true;
    bool use_l_cw = true;
    bool use_lcn = true;
    bool use_gcn = true;
    bool pos_embed_video = true;
    bool pos_embed_word = true;
    // split fractions
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;

    static TrainConfig full_scale() {
        TrainConfig c;
        c.d = 512;
        c.t_segments = 128;
        c.seg_len = 16;
        c.batch = 100;
        return c;
    }

    void apply(const std::string& key, const std::string& value) {
        using namespace cfg_detail;
        if (key == "d") d = parse_int(key, value);
        else if (key == "t_segments") t_segments = parse_int(key, value);
        else if (key == "seg_len") seg_len = parse_int(key, value);
        else if (key == "max_words") max_words = parse_int(key, value);
        else if (key == "kernel_width") kernel_width = parse_int(key, value);
        else if (key == "nl_blocks") nl_blocks = parse_int(key, value);
        else if (key == "nl_heads") nl_heads = parse_int(key, value);
        else if (key == "lr") lr = parse_double(key, value);
        else if (key == "batch") batch = parse_int(key, value);
        else if (key == "epochs") epochs = parse_int(key, value);
        else if (key == "seed") seed = static_cast<uint64_t>(parse_int(key, value));
        else if (key == "use_qan") use_qan = parse_bool(key, value);
        else if (key == "use_l_tem") use_l_tem = parse_bool(key, value);
        else if (key == "use_l_cw") use_l_cw = parse_bool(key, value);
        else if (key == "use_lcn") use_lcn = parse_bool(key, value);
        else if (key == "use_gcn") use_gcn = parse_bool(key, value);
        else if (key == "pos_embed_video") pos_embed_video = parse_bool(key, value);
        else if (key == "pos_embed_word") pos_embed_word = parse_bool(key, value);
        else if (key == "train_frac") train_frac = parse_double(key, value);
        else if (key == "val_frac") val_frac = parse_double(key, value);
        else if (key == "test_frac") test_frac = parse_double(key, value);
        else if (key == "preset" && value == "desk") *this = TrainConfig();
        else if (key == "preset" && value == "full") *this = full_scale();
        else throw ConfigError("unknown config key '" + key + "'");
    }

    void validate() const {
        if (d < 2 || d % 2 != 0) throw ConfigError("d must be even and >= 2");
        if (nl_heads < 1 || d % nl_heads != 0) throw ConfigError("d must be divisible by nl_heads");
        if (kernel_width < 1 || kernel_width % 2 == 0)
            throw ConfigError("kernel_width must be odd");
        if (t_segments < 1) throw ConfigError("t_segments must be >= 1");
        if (seg_len < 2 || seg_len % 2 != 0) throw ConfigError("seg_len must be even and >= 2");
        if (max_words < 1) throw ConfigError("max_words must be >= 1");
        if (lr < 0.0) throw ConfigError("lr must be >= 0");
        if (batch < 1) throw ConfigError("batch must be >= 1");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (nl_blocks < 0) throw ConfigError("nl_blocks must be >= 0");
    }

    static TrainConfig from_file(const std::string& path) {
        TrainConfig c;
        for (const auto& [k, v] : cfg_detail::parse_kv_file(path)) c.apply(k, v);
        return c;
    }

    std::string to_string() const {
        std::ostringstream os;
        os << "d = " << d << "\nt_segments = " << t_segments << "\nseg_len = " << seg_len
           << "\nmax_words = " << max_words << "\nkernel_width = " << kernel_width
           << "\nnl_blocks = " << nl_blocks << "\nnl_heads = " << nl_heads << "\nlr = " << lr
           << "\nbatch = " << batch << "\nepochs = " << epochs << "\nseed = " << seed
           << "\nuse_qan = " << (use_qan ? "true" : "false")
           << "\nuse_l_tem = " << (use_l_tem ? "true" : "false")
           << "\nuse_l_cw = " << (use_l_cw ? "true" : "false")
           << "\nuse_lcn = " << (use_lcn ? "true" : "false")
           << "\nuse_gcn = " << (use_gcn ? "true" : "false")
           << "\npos_embed_video = " << (pos_embed_video ? "true" : "false")
           << "\npos_embed_word = " << (pos_embed_word ? "true" : "false")
           << "\ntrain_frac = " << train_frac << "\nval_frac = " << val_frac
           << "\ntest_frac = " << test_frac << "\n";
        return os.str();
    }
};

/// Applies `key = value` files/overrides to a synthetic data config.
inline void apply_synth_key(SyntheticConfig& c, const std::string& key, const std::string& value) {
    using namespace cfg_detail;
    if (key == "n_samples") c.n_samples = parse_int(key, value);
    else if (key == "vocab_size") c.vocab_size = parse_int(key, value);
    else if (key == "n_signal_tokens") c.n_signal_tokens = parse_int(key, value);
    else if (key == "d_raw") c.d_raw = parse_int(key, value);
    else if (key == "frames_min") c.frames_min = parse_int(key, value);
    else if (key == "frames_max") c.frames_max = parse_int(key, value);
    else if (key == "width_min") c.width_min = parse_double(key, value);
    else if (key == "width_max") c.width_max = parse_double(key, value);
    else if (key == "sigma") c.sigma = parse_double(key, value);
    else if (key == "fps") c.fps = parse_double(key, value);
    else if (key == "seed") c.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "position_biased") c.position_biased = parse_bool(key, value);
    else throw ConfigError("unknown synthetic config key '" + key + "'");
}

inline SyntheticConfig synth_config_from_file(const std::string& path) {
    SyntheticConfig c;
    for (const auto& [k, v] : cfg_detail::parse_kv_file(path)) apply_synth_key(c, k, v);
    return c;
}

}  // namespace plrn
