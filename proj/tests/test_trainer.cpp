#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "plrn/trainer.hpp"

using namespace plrn;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_cfg() {
    TrainConfig cfg;
    cfg.d = 16;
    cfg.t_segments = 8;
    cfg.seg_len = 4;
    cfg.kernel_width = 5;
    cfg.nl_blocks = 1;
    cfg.nl_heads = 2;
    cfg.batch = 4;
    cfg.epochs = 2;
    cfg.seed = 3;
    return cfg;
}

SyntheticConfig tiny_data_cfg(int n = 24) {
    SyntheticConfig sc;
    sc.n_samples = n;
    sc.d_raw = 6;
    sc.frames_min = 20;
    sc.frames_max = 40;
    sc.sigma = 0.3;
    sc.seed = 21;
    return sc;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("forward produces finite losses under every flag combination", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(4));
    for (int variant = 0; variant < 8; ++variant) {
        auto cfg = tiny_cfg();
        cfg.use_qan = variant != 1;
        cfg.use_lcn = variant != 2;
        cfg.use_gcn = variant != 3;
        cfg.use_l_tem = variant != 4;
        cfg.use_l_cw = variant != 5;
        cfg.pos_embed_video = variant != 6;
        cfg.pos_embed_word = variant != 7;
        PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
        model.init_params(cfg.seed);
        for (const auto& s : ds.samples) {
            Tape tape;
            auto tokens = tokenize(s.query, ds.vocab, cfg.max_words);
            auto fwd = model.forward(tape, tokens, *s.video);
            auto loss = model.loss(tape, fwd, s.g_s, s.g_e);
            CHECK(std::isfinite(loss.values.l_total));
            CHECK(fwd.pred.t_se->data.size() == 2);
            CHECK(fwd.pred.b->data.size() == static_cast<size_t>(cfg.t_segments));
            double bsum = 0.0;
            for (size_t t = 0; t < fwd.mask.size(); ++t) {
                if (!fwd.mask[t]) CHECK(fwd.pred.b->data[t] == 0.0);
                bsum += fwd.pred.b->data[t];
            }
            CHECK(bsum == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("loss is finite at initialization across seeds", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(3));
    auto cfg = tiny_cfg();
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
        model.init_params(seed);
        Tape tape;
        auto tokens = tokenize(ds.samples[0].query, ds.vocab, cfg.max_words);
        auto fwd = model.forward(tape, tokens, *ds.samples[0].video);
        auto loss = model.loss(tape, fwd, ds.samples[0].g_s, ds.samples[0].g_e);
        CHECK(std::isfinite(loss.values.l_total));
    }
}

TEST_CASE("ablated components receive exactly zero gradients", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(2));
    struct Case {
        const char* flag;
        const char* prefix;
    };
    const Case cases[] = {{"use_l_cw", "lrn.cw."},
                          {"use_qan", "qan."},
                          {"use_lcn", "lcn."},
                          {"use_gcn", "gcn."},
                          {"pos_embed_video", "emb.pos_v"},
                          {"pos_embed_word", "emb.pos_q"}};
    for (const auto& c : cases) {
        auto cfg = tiny_cfg();
        cfg.apply(c.flag, "false");
        PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
        model.init_params(5);
        Tape tape;
        auto tokens = tokenize(ds.samples[0].query, ds.vocab, cfg.max_words);
        auto fwd = model.forward(tape, tokens, *ds.samples[0].video);
        auto loss = model.loss(tape, fwd, ds.samples[0].g_s, ds.samples[0].g_e);
        tape.backward(loss.total);
        bool saw_param = false, saw_live_grad = false;
        for (const auto& [name, t] : model.store.params()) {
            const bool excluded = name.rfind(c.prefix, 0) == 0;
            double gnorm = 0.0;
            for (double g : t->grad) gnorm += std::fabs(g);
            if (excluded) {
                saw_param = true;
                CHECK(gnorm == 0.0);
            } else {
                saw_live_grad = saw_live_grad || gnorm > 0.0;
            }
        }
        CHECK(saw_param);
        CHECK(saw_live_grad);
    }
}

TEST_CASE("zero learning rate leaves parameters unchanged", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(8));
    auto cfg = tiny_cfg();
    cfg.lr = 0.0;
    cfg.epochs = 1;
    PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
    model.init_params(cfg.seed);
    auto before = model.store.snapshot();
    train(model, ds);
    for (const auto& [name, data] : before.params)
        CHECK(model.store.get(name)->data == data);
}

TEST_CASE("training is deterministic down to checkpoint bytes", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(16));
    auto run = [&](const std::string& dir) {
        fs::remove_all(dir);
        auto cfg = tiny_cfg();
        PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
        model.init_params(cfg.seed);
        return train(model, ds, dir);
    };
    const auto d1 = (fs::temp_directory_path() / "plrn_train_det1").string();
    const auto d2 = (fs::temp_directory_path() / "plrn_train_det2").string();
    auto r1 = run(d1);
    auto r2 = run(d2);
    CHECK(r1.final_loss == r2.final_loss);
    CHECK(read_bytes(fs::path(d1) / "checkpoint.plrn") ==
          read_bytes(fs::path(d2) / "checkpoint.plrn"));
    CHECK(read_bytes(fs::path(d1) / "train_log.csv") ==
          read_bytes(fs::path(d2) / "train_log.csv"));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("training writes logs split and resolved config", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(10));
    const auto dir = (fs::temp_directory_path() / "plrn_train_files").string();
    fs::remove_all(dir);
    auto cfg = tiny_cfg();
    cfg.epochs = 1;
    PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
    model.init_params(cfg.seed);
    train(model, ds, dir);
    CHECK(fs::exists(fs::path(dir) / "train_log.csv"));
    CHECK(fs::exists(fs::path(dir) / "val_log.csv"));
    CHECK(fs::exists(fs::path(dir) / "split.txt"));
    CHECK(fs::exists(fs::path(dir) / "config.resolved.cfg"));
    CHECK(fs::exists(fs::path(dir) / "checkpoint.plrn"));
    auto log = read_bytes(fs::path(dir) / "train_log.csv");
    CHECK(log.rfind("step,L_se,L_cw,L_tem,L_total\n", 0) == 0);
    // resolved config reloads to the same values
    auto cfg2 = TrainConfig::from_file((fs::path(dir) / "config.resolved.cfg").string());
    CHECK(cfg2.to_string() == cfg.to_string());
    fs::remove_all(dir);
}

TEST_CASE("a poisoned parameter aborts training with a diagnostic", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(6));
    auto cfg = tiny_cfg();
    cfg.epochs = 1;
    PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
    model.init_params(cfg.seed);
    model.store.get("mfn.W_mf")->data[0] = std::nan("");
    CHECK_THROWS_AS(train(model, ds), TrainingStateError);
}

TEST_CASE("loss decreases when overfitting a single sample", "[trainer]") {
    SyntheticConfig sc = tiny_data_cfg(1);
    sc.sigma = 0.0;
    auto ds = generate_synthetic(sc);
    auto cfg = tiny_cfg();
    cfg.batch = 1;
    cfg.epochs = 60;  // 60 steps on the single sample
    cfg.train_frac = 1.0;
    cfg.val_frac = 0.0;
    cfg.test_frac = 0.0;
    PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
    model.init_params(cfg.seed);
    auto result = train(model, ds);
    CHECK(result.final_loss < result.initial_loss);
}

TEST_CASE("prediction files are stable and carry the header", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(5));
    auto cfg = tiny_cfg();
    PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
    model.init_params(cfg.seed);
    const auto p1 = fs::temp_directory_path() / "plrn_pred1.csv";
    const auto p2 = fs::temp_directory_path() / "plrn_pred2.csv";
    write_predictions_csv(p1.string(), predict_samples(model, ds.samples, ds.vocab));
    write_predictions_csv(p2.string(), predict_samples(model, ds.samples, ds.vocab));
    CHECK(read_bytes(p1) == read_bytes(p2));

    auto rows = read_predictions_csv(p1.string());
    REQUIRE(rows.size() == ds.samples.size());
    CHECK(rows[0].id == ds.samples[0].id);

    write_predictions_csv(p1.string(), {});
    CHECK(read_bytes(p1) == "sample_id,tau_s,tau_e,tau_c,tau_w\n");
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("checkpoints reload into an identical model", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(8));
    auto cfg = tiny_cfg();
    cfg.epochs = 1;
    PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
    model.init_params(cfg.seed);
    const auto dir = (fs::temp_directory_path() / "plrn_train_reload").string();
    fs::remove_all(dir);
    train(model, ds, dir);
    auto rows = predict_samples(model, ds.samples, ds.vocab);

    PlrnModel fresh(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
    fresh.init_params(cfg.seed + 999);  // different init, then overwritten by the load
    fresh.store.load((fs::path(dir) / "checkpoint.plrn").string(), true);
    auto rows2 = predict_samples(fresh, ds.samples, ds.vocab);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].tau_s == rows2[i].tau_s);
        CHECK(rows[i].tau_e == rows2[i].tau_e);
    }
    fs::remove_all(dir);
}

TEST_CASE("validation tracking restores the best parameters", "[trainer]") {
    auto ds = generate_synthetic(tiny_data_cfg(20));
    auto cfg = tiny_cfg();
    cfg.epochs = 3;
    PlrnModel model(cfg, ds.samples[0].video->d_raw, ds.vocab.size());
    model.init_params(cfg.seed);
    auto result = train(model, ds);
    REQUIRE(result.best_epoch >= 0);
    REQUIRE(static_cast<int>(result.val_reports.size()) == cfg.epochs);
    CHECK(result.best_miou ==
          Catch::Approx(result.val_reports[result.best_epoch].miou));
    for (const auto& rep : result.val_reports) CHECK(rep.miou <= result.best_miou + 1e-12);
}
