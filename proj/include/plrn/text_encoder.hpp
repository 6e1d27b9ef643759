#pragma once

#include <string>
#include <vector>

#include "plrn/param_store.hpp"
#include "plrn/rng.hpp"
#include "plrn/tape.hpp"
#include "plrn/vocab.hpp"

namespace plrn {

/// Word features H (d x N, column n is h_n) and the sentence feature s,
/// which concatenates the last forward hidden state with the last backward
/// one (i.e. the backward state at word 1).
struct QueryFeatures {
    TensorPtr H;
    TensorPtr s;
};

namespace text {

inline std::string lstm_param(const char* dir, const char* gate, const char* kind) {
    return std::string("lstm.") + dir + "." + kind + gate;
}

/// Registers the embedding table, word position table and Bi-LSTM weights.
/// Hidden size is d/2 per direction so the concatenation is d wide.
inline void init_params(ParameterStore& store, Rng& rng, int d, int vocab_size, int max_words) {
    if (d % 2 != 0) throw ConfigError("text encoder: d must be even, got " + std::to_string(d));
    const int h = d / 2;
    store.add("emb.words", Tensor::make({d, vocab_size}));
    init_uniform(rng, store.get("emb.words"), -0.1, 0.1);
    store.add("emb.pos_q", Tensor::make({d, max_words}));
    init_uniform(rng, store.get("emb.pos_q"), -0.1, 0.1);
    for (const char* dir : {"fw", "bw"}) {
        for (const char* gate : {"i", "f", "g", "o"}) {
            auto W = store.add(lstm_param(dir, gate, "W"), Tensor::make({h, d}));
            init_xavier(rng, W, d, h);
            auto U = store.add(lstm_param(dir, gate, "U"), Tensor::make({h, h}));
            init_xavier(rng, U, h, h);
            auto b = store.add(lstm_param(dir, gate, "b"), Tensor::make({h}));
            // forget gate bias starts at 1
            if (gate[0] == 'f')
                for (double& v : b->data) v = 1.0;
        }
    }
}

}  // namespace text

/// Position-aware query embedding: column n is the token embedding plus the
/// learned position vector for slot n (when enabled).
inline TensorPtr embed_query(Tape& tape, const ParameterStore& store, const QueryTokens& tokens,
                             bool position_enabled) {
    const auto emb = store.get("emb.words");
    const auto pos = store.get("emb.pos_q");
    const int n = tokens.length();
    if (n < 1) throw ContractError("embed_query: empty token list");
    if (n > pos->cols())
        throw ContractError("embed_query: " + std::to_string(n) + " tokens exceed position table (" +
                            std::to_string(pos->cols()) + ")");
    auto q = tape.gather_columns(emb, tokens.ids);
    if (!position_enabled) return q;
    std::vector<int> slots(n);
    for (int i = 0; i < n; ++i) slots[i] = i;
    return tape.add(q, tape.gather_columns(pos, slots));
}

namespace text {

struct LstmGates {
    TensorPtr W, U, b;
};

inline LstmGates gates(const ParameterStore& store, const char* dir, const char* gate) {
    return {store.get(lstm_param(dir, gate, "W")), store.get(lstm_param(dir, gate, "U")),
            store.get(lstm_param(dir, gate, "b"))};
}

/// One direction of the LSTM over the columns of Q, in the given visiting
/// order. Initial hidden and cell states are zero.
inline std::vector<TensorPtr> lstm_direction(Tape& tape, const ParameterStore& store,
                                             const TensorPtr& q, const char* dir,
                                             const std::vector<int>& order) {
    const int h = store.get(lstm_param(dir, "i", "W"))->rows();
    auto gi = gates(store, dir, "i"), gf = gates(store, dir, "f"), gg = gates(store, dir, "g"),
         go = gates(store, dir, "o");
    TensorPtr hidden = Tensor::make({h});
    TensorPtr cell = Tensor::make({h});
    std::vector<TensorPtr> out(order.size());
    for (int t : order) {
        auto x = tape.column(q, t);
        auto pre = [&](const LstmGates& g) {
            return tape.add(tape.add(tape.matvec(g.W, x), tape.matvec(g.U, hidden)), g.b);
        };
        auto i = tape.sigmoid(pre(gi));
        auto f = tape.sigmoid(pre(gf));
        auto g = tape.tanh_op(pre(gg));
        auto o = tape.sigmoid(pre(go));
        cell = tape.add(tape.mul(f, cell), tape.mul(i, g));
        hidden = tape.mul(o, tape.tanh_op(cell));
        out[t] = hidden;
    }
    return out;
}

}  // namespace text

/// Bi-LSTM encoding: h_n = forward_h_n || backward_h_n, s = forward_h_N ||
/// backward_h_1.
inline QueryFeatures bilstm_encode(Tape& tape, const ParameterStore& store, const TensorPtr& q) {
    const int n = q->cols();
    std::vector<int> fwd(n), bwd(n);
    for (int t = 0; t < n; ++t) {
        fwd[t] = t;
        bwd[t] = n - 1 - t;
    }
    auto hf = text::lstm_direction(tape, store, q, "fw", fwd);
    auto hb = text::lstm_direction(tape, store, q, "bw", bwd);
    std::vector<TensorPtr> cols(n);
    for (int t = 0; t < n; ++t) cols[t] = tape.concat(hf[t], hb[t]);
    QueryFeatures qf;
    qf.H = tape.stack_columns(cols);
    qf.s = tape.concat(hf[n - 1], hb[0]);
    return qf;
}

}  // namespace plrn
