#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "plrn/attention.hpp"
#include "plrn/param_store.hpp"
#include "plrn/rng.hpp"
#include "plrn/tape.hpp"

namespace plrn {

namespace lcn {

inline void init_params(ParameterStore& store, Rng& rng, int d, int kernel_width) {
    if (kernel_width % 2 == 0)
        throw ConfigError("local context: kernel width must be odd, got " +
                          std::to_string(kernel_width));
    for (const char* name : {"lcn.convA", "lcn.convB"}) {
        auto k = store.add(name, Tensor::make({d, d, kernel_width}));
        init_xavier(rng, k, d * kernel_width, d * kernel_width);
    }
}

}  // namespace lcn

/// Residual temporal block: L = ReLU(X + ConvB(ReLU(ConvA(X)))), both
/// convolutions same-padded with the configured bandwidth, bias-free.
inline TensorPtr local_context(Tape& tape, const ParameterStore& store, const TensorPtr& x,
                               const std::vector<uint8_t>& mask) {
    auto inner = tape.relu(tape.conv1d_same(x, store.get("lcn.convA")));
    auto res = tape.conv1d_same(inner, store.get("lcn.convB"));
    return tape.mask_columns(tape.relu(tape.add(x, res)), mask);
}

namespace gcn {

inline std::string head_param(int block, int head, const char* mat) {
    return "gcn.b" + std::to_string(block) + ".h" + std::to_string(head) + "." + mat;
}

inline void init_params(ParameterStore& store, Rng& rng, int d, int blocks, int heads) {
    if (heads < 1 || d % heads != 0)
        throw ConfigError("global context: d=" + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    const int dh = d / heads;
    for (int b = 0; b < blocks; ++b)
        for (int h = 0; h < heads; ++h)
            for (const char* mat : {"W_qry", "W_key", "W_val"}) {
                auto w = store.add(head_param(b, h, mat), Tensor::make({dh, dh}));
                init_xavier(rng, w, dh, dh);
            }
}

}  // namespace gcn

/// Stacked non-local blocks. Per block the channels split into head slices;
/// each head computes G_h = W_val L_h softmax((W_qry L_h)^T (W_key L_h) /
/// sqrt(d_h))^T over real segments only, and the concatenated head outputs
/// are added residually. Zeroing every W_val therefore makes this the
/// identity map.
inline TensorPtr global_context(Tape& tape, const ParameterStore& store, const TensorPtr& l,
                                const std::vector<uint8_t>& mask, int blocks, int heads,
                                std::vector<TensorPtr>* attention_out = nullptr) {
    const int d = l->rows();
    if (heads < 1 || d % heads != 0)
        throw ConfigError("global context: d=" + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    const int dh = d / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    TensorPtr x = l;
    for (int b = 0; b < blocks; ++b) {
        std::vector<TensorPtr> outs;
        outs.reserve(heads);
        for (int h = 0; h < heads; ++h) {
            auto xh = heads == 1 ? x : tape.slice_rows(x, h * dh, dh);
            auto q = tape.matmul(store.get(gcn::head_param(b, h, "W_qry")), xh);
            auto k = tape.matmul(store.get(gcn::head_param(b, h, "W_key")), xh);
            auto v = tape.matmul(store.get(gcn::head_param(b, h, "W_val")), xh);
            auto scores = tape.scale(tape.matmul_tn(q, k), inv_scale);
            auto attn = tape.softmax(scores, 1, &mask);  // rows over real keys
            if (attention_out) attention_out->push_back(attn);
            outs.push_back(tape.matmul_nt(v, attn));
        }
        auto mixed = outs.size() == 1 ? outs[0] : tape.concat_rows(outs);
        x = tape.mask_columns(tape.add(x, mixed), mask);
    }
    return x;
}

}  // namespace plrn
