#include <catch2/catch_amalgamated.hpp>

#include "plrn/attention.hpp"
#include "test_util.hpp"

using namespace plrn;
using plrn::test::random_tensor;

namespace {

ParameterStore qan_store(uint64_t seed, int d) {
    ParameterStore store;
    Rng rng(seed);
    qan::init_params(store, rng, d);
    mfn::init_params(store, rng, d);
    return store;
}

QueryFeatures features_from(const TensorPtr& h) {
    QueryFeatures qf;
    qf.H = h;
    auto s = Tensor::make({h->rows()});
    for (int i = 0; i < h->rows(); ++i) s->data[i] = h->at(i, h->cols() - 1);
    qf.s = s;
    return qf;
}

VideoFeatures video_from(const TensorPtr& v, std::vector<uint8_t> mask) {
    VideoFeatures vf;
    vf.V = v;
    vf.mask = std::move(mask);
    vf.real_count = 0;
    for (auto m : vf.mask) vf.real_count += m;
    vf.mids.assign(vf.mask.size(), 0.0);
    return vf;
}

}  // namespace

TEST_CASE("single-word query attends with weight one", "[attention]") {
    auto store = qan_store(1, 6);
    Rng rng(2);
    auto qf = features_from(random_tensor(rng, {6, 1}, false));
    Tape tape;
    auto res = query_attention(tape, store, qf);
    CHECK(res.a->data[0] == Catch::Approx(1.0).margin(1e-15));
    for (int i = 0; i < 6; ++i) CHECK(res.p->data[i] == Catch::Approx(qf.H->at(i, 0)));
}

TEST_CASE("identical word features give uniform attention", "[attention]") {
    auto store = qan_store(3, 4);
    Rng rng(4);
    auto col = random_tensor(rng, {4}, false);
    auto h = Tensor::make({4, 5});
    for (int i = 0; i < 4; ++i)
        for (int n = 0; n < 5; ++n) h->at(i, n) = col->data[i];
    Tape tape;
    auto res = query_attention(tape, store, features_from(h));
    for (double a : res.a->data) CHECK(a == Catch::Approx(0.2).margin(1e-12));
    for (int i = 0; i < 4; ++i) CHECK(res.p->data[i] == Catch::Approx(col->data[i]).margin(1e-12));
}

TEST_CASE("zero attention vector collapses to the column mean", "[attention]") {
    auto store = qan_store(5, 4);
    auto w = store.get("qan.w_qat");
    std::fill(w->data.begin(), w->data.end(), 0.0);
    Rng rng(6);
    auto h = random_tensor(rng, {4, 3}, false);
    Tape tape;
    auto res = query_attention(tape, store, features_from(h));
    for (double a : res.a->data) CHECK(a == Catch::Approx(1.0 / 3).margin(1e-12));
    for (int i = 0; i < 4; ++i) {
        const double mean = (h->at(i, 0) + h->at(i, 1) + h->at(i, 2)) / 3.0;
        CHECK(res.p->data[i] == Catch::Approx(mean).margin(1e-12));
    }
}

TEST_CASE("attention weights form a distribution and p stays in the hull", "[attention]") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto store = qan_store(100 + trial, 6);
        const int n = rng.uniform_int(1, 8);
        auto h = random_tensor(rng, {6, n}, false);
        Tape tape;
        auto res = query_attention(tape, store, features_from(h));
        double sum = 0.0;
        for (double a : res.a->data) {
            CHECK(a >= 0.0);
            sum += a;
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
        for (int i = 0; i < 6; ++i) {
            double lo = h->at(i, 0), hi = h->at(i, 0);
            for (int j = 1; j < n; ++j) {
                lo = std::min(lo, h->at(i, j));
                hi = std::max(hi, h->at(i, j));
            }
            CHECK(res.p->data[i] >= lo - 1e-12);
            CHECK(res.p->data[i] <= hi + 1e-12);
        }
    }
}

TEST_CASE("softmax shift invariance carries over to attention scores", "[attention]") {
    Tape tape;
    auto s = Tensor::vec({0.4, -1.2, 2.0});
    auto shifted = Tensor::vec({0.4 + 5.0, -1.2 + 5.0, 2.0 + 5.0});
    auto a = tape.softmax(s);
    auto b = tape.softmax(shifted);
    for (int i = 0; i < 3; ++i) CHECK(a->data[i] == Catch::Approx(b->data[i]).margin(1e-12));
}

TEST_CASE("zero phrase feature zeroes the fused matrix", "[attention]") {
    auto store = qan_store(9, 4);
    Rng rng(10);
    auto vf = video_from(random_tensor(rng, {4, 6}, false), {1, 1, 1, 1, 1, 1});
    Tape tape;
    auto fused = fuse(tape, store, vf, Tensor::make({4}));
    for (double v : fused.L->data) CHECK(v == 0.0);
}

TEST_CASE("padded video columns stay zero through fusion", "[attention]") {
    auto store = qan_store(11, 4);
    Rng rng(12);
    auto v = random_tensor(rng, {4, 5}, false);
    auto vf = video_from(v, {1, 1, 1, 0, 0});
    Tape tape;
    auto fused = fuse(tape, store, vf, random_tensor(rng, {4}, false));
    for (int t = 3; t < 5; ++t)
        for (int i = 0; i < 4; ++i) CHECK(fused.L->at(i, t) == 0.0);
}

TEST_CASE("identity projections reduce fusion to the Hadamard product", "[attention]") {
    ParameterStore store;
    for (const char* name : {"mfn.W_lv", "mfn.W_lp", "mfn.W_mf"}) {
        auto w = store.add(name, Tensor::make({2, 2}));
        w->at(0, 0) = w->at(1, 1) = 1.0;
    }
    auto v = Tensor::matrix(2, 1, {1, 2});
    auto vf = video_from(v, {1});
    Tape tape;
    auto fused = fuse(tape, store, vf, Tensor::vec({3, 4}));
    CHECK(fused.L->at(0, 0) == Catch::Approx(3.0));
    CHECK(fused.L->at(1, 0) == Catch::Approx(8.0));
}

TEST_CASE("fusion is positively homogeneous in the phrase", "[attention]") {
    auto store = qan_store(13, 4);
    Rng rng(14);
    auto vf = video_from(random_tensor(rng, {4, 3}, false), {1, 1, 0});
    auto p = random_tensor(rng, {4}, false);
    auto p2 = Tensor::make({4});
    for (int i = 0; i < 4; ++i) p2->data[i] = 2.5 * p->data[i];
    Tape tape;
    auto f1 = fuse(tape, store, vf, p);
    auto f2 = fuse(tape, store, vf, p2);
    for (size_t i = 0; i < f1.L->data.size(); ++i)
        CHECK(f2.L->data[i] == Catch::Approx(2.5 * f1.L->data[i]).margin(1e-12));
}

TEST_CASE("sentence bypass equals fusion when p equals s", "[attention]") {
    auto store = qan_store(15, 4);
    Rng rng(16);
    auto vf = video_from(random_tensor(rng, {4, 3}, false), {1, 1, 1});
    auto s = random_tensor(rng, {4}, false);
    Tape tape;
    auto via_p = fuse(tape, store, vf, s);
    auto via_s = fuse(tape, store, vf, s);  // the bypass path is the same operation on s
    CHECK(via_p.L->data == via_s.L->data);
}

TEST_CASE("query attention and fusion gradients match finite differences", "[attention]") {
    auto store = qan_store(17, 4);
    Rng rng(18);
    auto h = random_tensor(rng, {4, 3});
    auto s = random_tensor(rng, {4});
    auto v = random_tensor(rng, {4, 5});
    std::vector<std::pair<std::string, TensorPtr>> inputs = {{"h", h}, {"s", s}, {"v", v}};
    for (const auto& [name, t] : store.params()) inputs.emplace_back(name, t);
    const double err = plrn::test::fd_check(inputs, [&](Tape& t) {
        QueryFeatures qf{h, s};
        auto res = query_attention(t, store, qf);
        auto vf = video_from(v, {1, 1, 1, 1, 0});
        return fuse(t, store, vf, res.p).L;
    });
    CHECK(err < 1e-5);
}
