#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "plrn/data.hpp"
#include "plrn/eval.hpp"
#include "plrn/model.hpp"

namespace plrn {

struct PredRow {
    std::string id;
    double tau_s = 0.0, tau_e = 0.0, tau_c = 0.0, tau_w = 0.0;
};

inline void write_predictions_csv(const std::string& path, const std::vector<PredRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open prediction file '" + path + "' for writing");
    os << "sample_id,tau_s,tau_e,tau_c,tau_w\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n", r.id.c_str(), r.tau_s,
                      r.tau_e, r.tau_c, r.tau_w);
        os << buf;
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

inline std::vector<PredRow> read_predictions_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open prediction file '" + path + "'");
    std::vector<PredRow> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("sample_id,", 0) == 0) continue;
        std::istringstream ss(line);
        PredRow r;
        std::string field;
        if (!std::getline(ss, r.id, ',')) throw DataError("prediction line " + std::to_string(lineno));
        double* slots[4] = {&r.tau_s, &r.tau_e, &r.tau_c, &r.tau_w};
        for (double* slot : slots) {
            if (!std::getline(ss, field, ','))
                throw DataError("prediction line " + std::to_string(lineno) + ": expected 5 fields");
            *slot = cfg_detail::parse_double("prediction", field);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Forward pass without gradients over a set of samples.
inline std::vector<PredRow> predict_samples(const PlrnModel& model,
                                            const std::vector<GroundingSample>& samples,
                                            const Vocabulary& vocab) {
    std::vector<PredRow> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) {
        Tape tape;
        tape.recording = false;
        auto tokens = tokenize(s.query, vocab, model.cfg.max_words);
        auto fwd = model.forward(tape, tokens, *s.video);
        rows.push_back({s.id, fwd.pred.tau_s(), fwd.pred.tau_e(), fwd.pred.tau_c(),
                        fwd.pred.tau_w()});
    }
    return rows;
}

inline EvalReport evaluate_model(const PlrnModel& model,
                                 const std::vector<GroundingSample>& samples,
                                 const Vocabulary& vocab,
                                 std::vector<double> thresholds = {0.3, 0.5, 0.7}) {
    auto rows = predict_samples(model, samples, vocab);
    std::vector<double> tious;
    tious.reserve(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        auto [ps, pe] = clamp_boundary(rows[i].tau_s, rows[i].tau_e);
        tious.push_back(tiou(samples[i].g_s, samples[i].g_e, ps, pe));
    }
    return evaluate_tious(std::move(tious), std::move(thresholds));
}

struct TrainResult {
    double best_miou = -1.0;
    int best_epoch = -1;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<LossBreakdown> steps;
    std::vector<EvalReport> val_reports;  // one per epoch when a val split exists
};

/// Mini-batch training with Adam on the mean batch loss. Deterministic under
/// a fixed seed: seeded shuffle, fixed accumulation order, best-validation
/// snapshot restored into the model at the end. When `out_dir` is non-empty
/// it receives train_log.csv, val_log.csv, split.txt, config.resolved.cfg
/// and checkpoint.plrn (the best-mIoU parameters).
inline TrainResult train(PlrnModel& model, const Dataset& ds, const std::string& out_dir = "",
                         bool verbose = false) {
    namespace fs = std::filesystem;
    const TrainConfig& cfg = model.cfg;
    if (ds.samples.empty()) throw DataError("train: empty dataset");

    auto parts = split_indices(static_cast<int>(ds.samples.size()),
                               {cfg.train_frac, cfg.val_frac, cfg.test_frac}, cfg.seed);
    const auto& train_idx = parts[0];
    const auto& val_idx = parts[1];
    if (train_idx.empty()) throw DataError("train: training split is empty");

    std::vector<QueryTokens> tokens(ds.samples.size());
    for (size_t i = 0; i < ds.samples.size(); ++i)
        tokens[i] = tokenize(ds.samples[i].query, ds.vocab, cfg.max_words);

    std::ofstream train_log, val_log;
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create output directory '" + out_dir + "'");
        std::ofstream cfg_os(fs::path(out_dir) / "config.resolved.cfg");
        cfg_os << cfg.to_string();
        std::ofstream split_os(fs::path(out_dir) / "split.txt");
        const char* names[3] = {"train", "val", "test"};
        for (int p = 0; p < 3; ++p)
            for (int idx : parts[p]) split_os << names[p] << " " << ds.samples[idx].id << "\n";
        train_log.open(fs::path(out_dir) / "train_log.csv");
        train_log << "step,L_se,L_cw,L_tem,L_total\n";
        val_log.open(fs::path(out_dir) / "val_log.csv");
        val_log << "epoch,R@0.30,R@0.50,R@0.70,mIoU\n";
    }

    TrainResult result;
    Rng shuffle_rng(cfg.seed + 0x5eed);
    std::vector<int> order(train_idx);
    ParameterStore::Snapshot best;
    int step = 0;
    char buf[192];

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (size_t at = 0; at < order.size(); at += cfg.batch) {
            const size_t bend = std::min(order.size(), at + cfg.batch);
            const int bsize = static_cast<int>(bend - at);
            Tape tape;
            TensorPtr batch_total;
            LossBreakdown mean;
            for (size_t k = at; k < bend; ++k) {
                const auto& sample = ds.samples[order[k]];
                auto fwd = model.forward(tape, tokens[order[k]], *sample.video);
                auto lr = model.loss(tape, fwd, sample.g_s, sample.g_e);
                batch_total = batch_total ? tape.add(batch_total, lr.total) : lr.total;
                mean.l_se += lr.values.l_se / bsize;
                mean.l_cw += lr.values.l_cw / bsize;
                mean.l_tem += lr.values.l_tem / bsize;
            }
            auto objective = tape.scale(batch_total, 1.0 / bsize);
            mean.l_total = objective->data[0];
            if (!std::isfinite(mean.l_total)) {
                std::ostringstream diag;
                diag << "non-finite loss at step " << step << "; batch:";
                for (size_t k = at; k < bend; ++k) diag << " " << ds.samples[order[k]].id;
                std::cerr << diag.str() << "\n";
                throw TrainingStateError(diag.str());
            }
            tape.backward(objective);
            model.store.adam_step(cfg.lr);
            if (result.steps.empty()) result.initial_loss = mean.l_total;
            result.final_loss = mean.l_total;
            result.steps.push_back(mean);
            if (train_log.is_open()) {
                std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", step, mean.l_se,
                              mean.l_cw, mean.l_tem, mean.l_total);
                train_log << buf;
            }
            ++step;
        }

        if (!val_idx.empty()) {
            std::vector<GroundingSample> val_samples;
            for (int idx : val_idx) val_samples.push_back(ds.samples[idx]);
            auto rep = evaluate_model(model, val_samples, ds.vocab);
            result.val_reports.push_back(rep);
            if (val_log.is_open()) {
                std::snprintf(buf, sizeof(buf), "%d,%.4f,%.4f,%.4f,%.4f\n", epoch, rep.recalls[0],
                              rep.recalls[1], rep.recalls[2], rep.miou);
                val_log << buf;
            }
            if (verbose) {
                std::snprintf(buf, sizeof(buf), "epoch %d: loss %.4f val mIoU %.2f\n", epoch,
                              result.final_loss, rep.miou);
                std::cout << buf << std::flush;
            }
            if (rep.miou > result.best_miou) {
                result.best_miou = rep.miou;
                result.best_epoch = epoch;
                best = model.store.snapshot();
            }
        } else if (verbose) {
            std::snprintf(buf, sizeof(buf), "epoch %d: loss %.4f\n", epoch, result.final_loss);
            std::cout << buf << std::flush;
        }
    }

    if (result.best_epoch >= 0) model.store.restore(best);
    if (!out_dir.empty()) model.store.save((fs::path(out_dir) / "checkpoint.plrn").string());
    return result;
}

}  // namespace plrn
