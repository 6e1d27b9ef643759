#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "plrn/param_store.hpp"
#include "plrn/rng.hpp"
#include "plrn/tape.hpp"

namespace plrn {

/// Full output of the location regression network. The start-end head is
/// the reported boundary; the center-width head only feeds its loss.
struct GroundingPrediction {
    TensorPtr t_se;  // [tau_s, tau_e]
    TensorPtr t_cw;  // [tau_c, tau_w]
    TensorPtr b;     // T temporal attention weights
    TensorPtr r;     // d semantics-aware feature

    double tau_s() const { return t_se->data[0]; }
    double tau_e() const { return t_se->data[1]; }
    double tau_c() const { return t_cw->data[0]; }
    double tau_w() const { return t_cw->data[1]; }
};

namespace lrn {

inline void init_params(ParameterStore& store, Rng& rng, int d) {
    auto wb = store.add("lrn.W_bG", Tensor::make({d, d}));
    init_xavier(rng, wb, d, d);
    auto wt = store.add("lrn.w_tat", Tensor::make({d}));
    init_xavier(rng, wt, d, 1);
    for (const char* head : {"se", "cw"}) {
        auto w1 = store.add(std::string("lrn.") + head + ".W1", Tensor::make({d, d}));
        init_xavier(rng, w1, d, d);
        auto w2 = store.add(std::string("lrn.") + head + ".W2", Tensor::make({2, d}));
        init_xavier(rng, w2, d, 2);
    }
}

}  // namespace lrn

/// Temporal attentive pooling: b = softmax(w_tat . tanh(W_bG G)) over real
/// segments, r = G b. Padded segments get exactly zero weight.
inline std::pair<TensorPtr, TensorPtr> temporal_pool(Tape& tape, const ParameterStore& store,
                                                     const TensorPtr& g,
                                                     const std::vector<uint8_t>& mask) {
    int real = 0;
    for (uint8_t m : mask) real += m;
    if (real == 0) throw MaskError("temporal_pool: no real segments");
    auto scores = tape.vecmat(store.get("lrn.w_tat"),
                              tape.tanh_op(tape.matmul(store.get("lrn.W_bG"), g)));
    auto b = tape.softmax(scores, 0, &mask);
    auto r = tape.matvec(g, b);
    return {b, r};
}

/// Two independent two-layer perceptrons with interior ReLU and nonnegative
/// outputs: t_se = ReLU(W2 ReLU(W1 r)), same structure for t_cw.
inline GroundingPrediction predict_boundaries(Tape& tape, const ParameterStore& store,
                                              const TensorPtr& b, const TensorPtr& r) {
    auto head = [&](const char* name) {
        auto h = tape.relu(tape.matvec(store.get(std::string("lrn.") + name + ".W1"), r));
        return tape.relu(tape.matvec(store.get(std::string("lrn.") + name + ".W2"), h));
    };
    GroundingPrediction pred;
    pred.t_se = head("se");
    pred.t_cw = head("cw");
    pred.b = b;
    pred.r = r;
    return pred;
}

/// Clamped normalized boundary: start in [0,1], end in [start, 1].
inline std::pair<double, double> clamp_boundary(double tau_s, double tau_e) {
    const double s = std::clamp(tau_s, 0.0, 1.0);
    const double e = std::clamp(tau_e, s, 1.0);
    return {s, e};
}

/// Denormalizes the start-end head into seconds for reporting.
inline std::pair<double, double> to_interval(const GroundingPrediction& pred, double duration) {
    if (!(duration > 0.0)) throw ContractError("to_interval: duration must be positive");
    auto [s, e] = clamp_boundary(pred.tau_s(), pred.tau_e());
    return {s * duration, e * duration};
}

}  // namespace plrn
