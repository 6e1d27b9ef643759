#pragma once

#include <memory>
#include <vector>

#include "plrn/attention.hpp"
#include "plrn/config.hpp"
#include "plrn/context.hpp"
#include "plrn/losses.hpp"
#include "plrn/regression.hpp"
#include "plrn/text_encoder.hpp"
#include "plrn/video_encoder.hpp"

namespace plrn {

/// The composed network: position-aware encoders -> query attention (or the
/// sentence bypass) -> Hadamard fusion -> local and global context -> the
/// regression head. Every ablation flag in the config routes around its
/// component; the parameters always exist so an ablated run leaves the
/// unused ones untouched with zero gradients.
class PlrnModel {
public:
    TrainConfig cfg;
    int d_raw = 0;
    int vocab_size = 0;
    ParameterStore store;

    PlrnModel(const TrainConfig& config, int d_raw_, int vocab_size_)
        : cfg(config), d_raw(d_raw_), vocab_size(vocab_size_) {
        cfg.validate();
        if (d_raw < 1) throw ConfigError("model: d_raw must be >= 1");
        if (vocab_size < 1) throw ConfigError("model: vocab_size must be >= 1");
    }

    void init_params(uint64_t seed) {
        Rng rng(seed);
        text::init_params(store, rng, cfg.d, vocab_size, cfg.max_words);
        video::init_params(store, rng, cfg.d, d_raw, cfg.t_segments);
        qan::init_params(store, rng, cfg.d);
        mfn::init_params(store, rng, cfg.d);
        lcn::init_params(store, rng, cfg.d, cfg.kernel_width);
        gcn::init_params(store, rng, cfg.d, cfg.nl_blocks, cfg.nl_heads);
        lrn::init_params(store, rng, cfg.d);
    }

    struct Forward {
        GroundingPrediction pred;
        PhraseResult phrase;       // phrase.a is null when the QAN is ablated
        std::vector<uint8_t> mask;
        std::vector<double> mids;
        std::vector<TensorPtr> block_attention;  // only filled on demand
    };

    Forward forward(Tape& tape, const QueryTokens& tokens, const RawVideo& video,
                    bool dump_attention = false) const {
        Forward out;
        auto q = embed_query(tape, store, tokens, cfg.pos_embed_word);
        auto qf = bilstm_encode(tape, store, q);
        auto vf = encode_video(tape, store, video, cfg.seg_len, cfg.t_segments,
                               cfg.pos_embed_video);
        out.mask = vf.mask;
        out.mids = vf.mids;

        if (cfg.use_qan) {
            out.phrase = query_attention(tape, store, qf);
        } else {
            out.phrase.p = qf.s;  // Table-1 "w/o QAN": sentence feature bypass
        }
        auto fused = fuse(tape, store, vf, out.phrase.p);

        auto local = cfg.use_lcn ? local_context(tape, store, fused.L, fused.mask) : fused.L;
        auto global = cfg.use_gcn
                          ? global_context(tape, store, local, fused.mask, cfg.nl_blocks,
                                           cfg.nl_heads,
                                           dump_attention ? &out.block_attention : nullptr)
                          : local;

        auto [b, r] = temporal_pool(tape, store, global, vf.mask);
        out.pred = predict_boundaries(tape, store, b, r);
        return out;
    }

    LossResult loss(Tape& tape, const Forward& fwd, double g_s, double g_e) const {
        auto gt = make_ground_truth(g_s, g_e, fwd.mids, fwd.mask);
        return total_loss(tape, fwd.pred, gt, cfg.use_l_tem, cfg.use_l_cw);
    }
};

}  // namespace plrn
