#pragma once

#include "plrn/param_store.hpp"
#include "plrn/rng.hpp"
#include "plrn/tape.hpp"
#include "plrn/text_encoder.hpp"
#include "plrn/video_encoder.hpp"

namespace plrn {

/// Semantic phrase feature p and the per-word attention weights behind it.
struct PhraseResult {
    TensorPtr p;  // d
    TensorPtr a;  // N, nonnegative, sums to 1
};

namespace qan {

inline void init_params(ParameterStore& store, Rng& rng, int d) {
    for (const char* name : {"qan.W_gs", "qan.W_ag", "qan.W_ah"}) {
        auto w = store.add(name, Tensor::make({d, d}));
        init_xavier(rng, w, d, d);
    }
    auto w = store.add("qan.w_qat", Tensor::make({d}));
    init_xavier(rng, w, d, 1);
}

}  // namespace qan

/// Query attention: g = ReLU(W_gs s), score_n = w_qat . tanh(W_ag g + W_ah h_n),
/// a = softmax(scores), p = sum_n a_n h_n.
inline PhraseResult query_attention(Tape& tape, const ParameterStore& store,
                                    const QueryFeatures& qf) {
    auto g = tape.relu(tape.matvec(store.get("qan.W_gs"), qf.s));
    auto pre = tape.add_colvec(tape.matmul(store.get("qan.W_ah"), qf.H),
                               tape.matvec(store.get("qan.W_ag"), g));
    auto scores = tape.vecmat(store.get("qan.w_qat"), tape.tanh_op(pre));
    PhraseResult r;
    r.a = tape.softmax(scores);
    r.p = tape.matvec(qf.H, r.a);
    return r;
}

namespace mfn {

inline void init_params(ParameterStore& store, Rng& rng, int d) {
    for (const char* name : {"mfn.W_lv", "mfn.W_lp", "mfn.W_mf"}) {
        auto w = store.add(name, Tensor::make({d, d}));
        init_xavier(rng, w, d, d);
    }
}

}  // namespace mfn

/// Multi-modal fused matrix with masked columns forced to zero.
struct FusedFeatures {
    TensorPtr L;                 // d x T
    std::vector<uint8_t> mask;   // T
};

/// Hadamard fusion per segment: l_t = W_mf (W_lv v_t (.) W_lp p). The same
/// path fuses the sentence feature s when the query attention network is
/// ablated.
inline FusedFeatures fuse(Tape& tape, const ParameterStore& store, const VideoFeatures& vf,
                          const TensorPtr& phrase) {
    auto projected = tape.matmul(store.get("mfn.W_lv"), vf.V);
    auto gate = tape.matvec(store.get("mfn.W_lp"), phrase);
    auto fusedcols = tape.mul_colvec(projected, gate);
    FusedFeatures ff;
    ff.L = tape.mask_columns(tape.matmul(store.get("mfn.W_mf"), fusedcols), vf.mask);
    ff.mask = vf.mask;
    return ff;
}

}  // namespace plrn
