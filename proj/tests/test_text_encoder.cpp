#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "plrn/text_encoder.hpp"
#include "test_util.hpp"

using namespace plrn;
using plrn::test::random_tensor;

namespace {

ParameterStore text_store(uint64_t seed, int d, int vocab, int max_words = 25) {
    ParameterStore store;
    Rng rng(seed);
    text::init_params(store, rng, d, vocab, max_words);
    return store;
}

void zero_param(ParameterStore& store, const std::string& name) {
    auto t = store.get(name);
    std::fill(t->data.begin(), t->data.end(), 0.0);
}

void zero_lstm(ParameterStore& store) {
    for (const char* dir : {"fw", "bw"})
        for (const char* gate : {"i", "f", "g", "o"})
            for (const char* kind : {"W", "U", "b"})
                zero_param(store, text::lstm_param(dir, gate, kind));
}

}  // namespace

TEST_CASE("vocabulary lookups are total with reserved unknown", "[text]") {
    Vocabulary v;
    CHECK(v.add("person") == 1);
    CHECK(v.add("opens") == 2);
    CHECK(v.add("person") == 1);
    CHECK(v.size() == 3);
    CHECK(v.lookup("person") == 1);
    CHECK(v.lookup("never-seen") == Vocabulary::kUnknown);
}

TEST_CASE("vocabulary file round trip preserves line-order indices", "[text]") {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "plrn_vocab_test.txt";
    Vocabulary v;
    v.add("alpha");
    v.add("beta");
    v.add("gamma");
    v.save(path.string());
    auto loaded = Vocabulary::load(path.string());
    CHECK(loaded.size() == v.size());
    CHECK(loaded.lookup("alpha") == 1);
    CHECK(loaded.lookup("beta") == 2);
    CHECK(loaded.lookup("gamma") == 3);
    fs::remove(path);
}

TEST_CASE("tokenize lowercases and maps through the vocabulary", "[text]") {
    Vocabulary v;
    v.add("a");
    v.add("person");
    v.add("throws");
    auto q = tokenize("A Person Throws", v);
    CHECK(q.ids == std::vector<int>{1, 2, 3});
}

TEST_CASE("tokenize strips punctuation and maps unknowns to zero", "[text]") {
    Vocabulary v;
    v.add("person");
    auto q = tokenize("The person, smiling!", v);
    CHECK(q.ids == std::vector<int>{0, 1, 0});
}

TEST_CASE("tokenize keeps the first 25 words of a long query", "[text]") {
    Vocabulary v;
    std::string sentence;
    for (int i = 0; i < 30; ++i) {
        v.add("word" + std::to_string(i));
        sentence += "word" + std::to_string(i) + " ";
    }
    auto q = tokenize(sentence, v);
    REQUIRE(q.length() == 25);
    CHECK(q.ids.front() == v.lookup("word0"));
    CHECK(q.ids.back() == v.lookup("word24"));
}

TEST_CASE("tokenize rejects queries that normalize to nothing", "[text]") {
    Vocabulary v;
    CHECK_THROWS_AS(tokenize("  ... !!", v), DataError);
}

TEST_CASE("zero embedding matrix leaves only position vectors", "[text]") {
    auto store = text_store(3, 8, 10);
    zero_param(store, "emb.words");
    Tape tape;
    QueryTokens q{{1, 5, 2}};
    auto out = embed_query(tape, store, q, true);
    auto pos = store.get("emb.pos_q");
    for (int i = 0; i < 8; ++i)
        for (int n = 0; n < 3; ++n) CHECK(out->at(i, n) == pos->at(i, n));
}

TEST_CASE("repeated token at two positions differs by the position delta", "[text]") {
    auto store = text_store(4, 8, 10);
    Tape tape;
    QueryTokens q{{3, 3}};
    auto out = embed_query(tape, store, q, true);
    auto pos = store.get("emb.pos_q");
    for (int i = 0; i < 8; ++i)
        CHECK(out->at(i, 0) - out->at(i, 1) ==
              Catch::Approx(pos->at(i, 0) - pos->at(i, 1)).margin(1e-15));
}

TEST_CASE("disabled word position embedding returns the raw embedding", "[text]") {
    auto store = text_store(5, 8, 10);
    Tape tape;
    QueryTokens q{{1, 2, 3}};
    auto out = embed_query(tape, store, q, false);
    auto emb = store.get("emb.words");
    for (int i = 0; i < 8; ++i)
        for (int n = 0; n < 3; ++n) CHECK(out->at(i, n) == emb->at(i, q.ids[n]));
}

TEST_CASE("all-zero LSTM weights collapse to zero features", "[text]") {
    auto store = text_store(7, 8, 10);
    zero_lstm(store);
    Tape tape;
    Rng rng(3);
    auto q = random_tensor(rng, {8, 4}, false);
    auto qf = bilstm_encode(tape, store, q);
    for (double v : qf.H->data) CHECK(v == 0.0);
    for (double v : qf.s->data) CHECK(v == 0.0);
}

TEST_CASE("single-word query gives s equal to h_1", "[text]") {
    auto store = text_store(11, 8, 10);
    Rng rng(4);
    auto q = random_tensor(rng, {8, 1}, false);
    Tape tape;
    auto qf = bilstm_encode(tape, store, q);
    for (int i = 0; i < 8; ++i) CHECK(qf.s->data[i] == qf.H->at(i, 0));
}

TEST_CASE("sentence feature concatenates the two terminal hidden states", "[text]") {
    const int d = 8, n = 5;
    auto store = text_store(13, d, 10);
    Rng rng(5);
    auto q = random_tensor(rng, {d, n}, false);
    Tape tape;
    auto qf = bilstm_encode(tape, store, q);
    for (int i = 0; i < d / 2; ++i) {
        CHECK(qf.s->data[i] == qf.H->at(i, n - 1));              // forward half of h_N
        CHECK(qf.s->data[d / 2 + i] == qf.H->at(d / 2 + i, 0));  // backward half of h_1
    }
}

TEST_CASE("direction symmetry: reversed input with swapped weight sets", "[text]") {
    const int d = 8, n = 4;
    auto store = text_store(17, d, 10);
    ParameterStore swapped;
    Rng rng2(17);
    text::init_params(swapped, rng2, d, 10, 10);
    for (const char* gate : {"i", "f", "g", "o"})
        for (const char* kind : {"W", "U", "b"}) {
            swapped.get(text::lstm_param("fw", gate, kind))->data =
                store.get(text::lstm_param("bw", gate, kind))->data;
            swapped.get(text::lstm_param("bw", gate, kind))->data =
                store.get(text::lstm_param("fw", gate, kind))->data;
        }
    Rng rng(6);
    auto q = random_tensor(rng, {d, n}, false);
    auto q_rev = Tensor::make({d, n});
    for (int i = 0; i < d; ++i)
        for (int t = 0; t < n; ++t) q_rev->at(i, t) = q->at(i, n - 1 - t);

    Tape tape;
    auto a = bilstm_encode(tape, store, q);
    auto b = bilstm_encode(tape, swapped, q_rev);
    for (int t = 0; t < n; ++t)
        for (int i = 0; i < d / 2; ++i) {
            CHECK(b.H->at(i, n - 1 - t) == Catch::Approx(a.H->at(d / 2 + i, t)).margin(1e-12));
            CHECK(b.H->at(d / 2 + i, n - 1 - t) == Catch::Approx(a.H->at(i, t)).margin(1e-12));
        }
}

TEST_CASE("forward half of h_n ignores later tokens, backward half earlier ones", "[text]") {
    const int d = 8, n = 5;
    auto store = text_store(19, d, 10);
    Rng rng(7);
    auto q = random_tensor(rng, {d, n}, false);
    Tape tape;
    auto base = bilstm_encode(tape, store, q);

    auto perturbed = Tensor::make({d, n});
    perturbed->data = q->data;
    for (int i = 0; i < d; ++i) perturbed->at(i, 4) += 0.7;  // token after position 2
    auto later = bilstm_encode(tape, store, perturbed);
    for (int i = 0; i < d / 2; ++i)
        CHECK(later.H->at(i, 2) == base.H->at(i, 2));  // forward half unchanged

    perturbed->data = q->data;
    for (int i = 0; i < d; ++i) perturbed->at(i, 0) += 0.7;  // token before position 2
    auto earlier = bilstm_encode(tape, store, perturbed);
    for (int i = 0; i < d / 2; ++i)
        CHECK(earlier.H->at(d / 2 + i, 2) == base.H->at(d / 2 + i, 2));  // backward half
}

TEST_CASE("position embedding makes permuted distinct tokens distinguishable", "[text]") {
    auto store = text_store(23, 8, 10);
    Tape tape;
    auto a = embed_query(tape, store, QueryTokens{{2, 7}}, true);
    auto b = embed_query(tape, store, QueryTokens{{7, 2}}, true);
    bool differs = false;
    for (size_t i = 0; i < a->data.size(); ++i) differs = differs || a->data[i] != b->data[i];
    CHECK(differs);
}

TEST_CASE("bilstm gradients match finite differences", "[text]") {
    const int d = 6, n = 3;
    auto store = text_store(29, d, 8);
    Rng rng(8);
    auto q = random_tensor(rng, {d, n}, true);
    std::vector<std::pair<std::string, TensorPtr>> inputs = {{"q", q}};
    for (const auto& [name, t] : store.params())
        if (name.rfind("lstm.", 0) == 0) inputs.emplace_back(name, t);
    const double err = plrn::test::fd_check(inputs, [&](Tape& t) {
        auto qf = bilstm_encode(t, store, q);
        return t.concat(qf.s, t.column(qf.H, 1));
    });
    CHECK(err < 1e-5);
}
