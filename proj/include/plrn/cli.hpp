#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "plrn/config.hpp"
#include "plrn/data.hpp"
#include "plrn/eval.hpp"
#include "plrn/grad_check.hpp"
#include "plrn/model.hpp"
#include "plrn/trainer.hpp"

namespace plrn::cli {

namespace fs = std::filesystem;

inline std::pair<std::string, std::string> split_kv(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + s + "': expected key=value");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

inline std::vector<double> parse_threshold_list(const std::string& s) {
    std::vector<double> out;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, ','))
        if (!cur.empty()) out.push_back(cfg_detail::parse_double("thresholds", cur));
    if (out.empty()) throw ConfigError("--thresholds: empty list");
    for (double t : out)
        if (!(t > 0.0 && t < 1.0))
            throw ConfigError("--thresholds: values must lie in (0,1)");
    return out;
}

/// Desk-size configuration used by `grad-check` when no config is given:
/// small enough that central differences over every parameter finish in
/// seconds.
inline TrainConfig tiny_config() {
    TrainConfig c;
    c.d = 8;
    c.t_segments = 6;
    c.seg_len = 4;
    c.kernel_width = 3;
    c.nl_blocks = 1;
    c.nl_heads = 4;
    return c;
}

/// Fixed single-sample dataset for gradient checking: a 4-word query over a
/// short video, every architecture path active.
inline Dataset grad_check_dataset(uint64_t seed) {
    SyntheticConfig sc;
    sc.n_samples = 1;
    sc.vocab_size = 12;
    sc.n_signal_tokens = 2;
    sc.d_raw = 5;
    sc.frames_min = sc.frames_max = 12;
    sc.width_min = 0.3;
    sc.width_max = 0.5;
    sc.sigma = 0.2;
    sc.seed = seed;
    Dataset ds = generate_synthetic(sc);
    ds.samples[0].query = "a person sig00 again";  // N = 4
    return ds;
}

inline GradCheckReport run_grad_check(const TrainConfig& cfg, bool verbose = true) {
    Dataset ds = grad_check_dataset(cfg.seed);
    const auto& sample = ds.samples[0];
    PlrnModel model(cfg, sample.video->d_raw, ds.vocab.size());
    model.init_params(cfg.seed);
    auto tokens = tokenize(sample.query, ds.vocab, cfg.max_words);

    Tape tape;
    auto fwd = model.forward(tape, tokens, *sample.video);
    auto loss = model.loss(tape, fwd, sample.g_s, sample.g_e);
    tape.backward(loss.total);

    auto pure_forward = [&]() {
        Tape t;
        t.recording = false;
        auto f = model.forward(t, tokens, *sample.video);
        return model.loss(t, f, sample.g_s, sample.g_e).values.l_total;
    };
    auto report = check_gradients(model.store, pure_forward);
    if (verbose) {
        std::printf("grad-check: %lld gradient entries, max rel err %.3e (param %s[%zu]: "
                    "analytic %.6e vs numeric %.6e)\n",
                    static_cast<long long>(report.checked), report.max_rel_err,
                    report.worst_param.c_str(), report.worst_index, report.worst_analytic,
                    report.worst_numeric);
    }
    return report;
}

inline void dump_attention_csvs(const PlrnModel& model, const Dataset& ds,
                                const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create attention dump directory '" + dir + "'");
    for (const auto& s : ds.samples) {
        Tape tape;
        tape.recording = false;
        auto tokens = tokenize(s.query, ds.vocab, model.cfg.max_words);
        auto fwd = model.forward(tape, tokens, *s.video, /*dump_attention=*/true);
        if (fwd.phrase.a) {
            std::ofstream os(fs::path(dir) / (s.id + ".words.csv"));
            os << "token,weight\n";
            auto words = normalize_words(s.query);
            for (size_t i = 0; i < fwd.phrase.a->data.size(); ++i)
                os << (i < words.size() ? words[i] : "?") << ","
                   << fwd.phrase.a->data[i] << "\n";
        }
        const int heads = model.cfg.nl_heads;
        for (size_t m = 0; m < fwd.block_attention.size(); ++m) {
            const auto& a = fwd.block_attention[m];
            std::ofstream os(fs::path(dir) /
                             (s.id + ".attn.b" + std::to_string(m / heads) + ".h" +
                              std::to_string(m % heads) + ".csv"));
            for (int i = 0; i < a->rows(); ++i) {
                for (int j = 0; j < a->cols(); ++j)
                    os << (j ? "," : "") << a->at(i, j);
                os << "\n";
            }
        }
    }
}

/// `train` leaves config.resolved.cfg next to the checkpoint; predict picks
/// it up when --config is not given.
inline TrainConfig resolve_predict_config(const std::string& config_path,
                                          const std::string& checkpoint_path) {
    if (!config_path.empty()) return TrainConfig::from_file(config_path);
    const auto sibling = fs::path(checkpoint_path).parent_path() / "config.resolved.cfg";
    if (fs::exists(sibling)) return TrainConfig::from_file(sibling.string());
    return TrainConfig();
}

struct ReportRow {
    std::string run;
    double final_loss = 0.0;
    int best_epoch = -1;
    double r03 = 0.0, r05 = 0.0, r07 = 0.0, best_miou = -1.0;
};

inline ReportRow summarize_run(const std::string& dir) {
    ReportRow row;
    row.run = fs::path(dir).filename().string();
    if (row.run.empty()) row.run = dir;
    {
        std::ifstream is(fs::path(dir) / "train_log.csv");
        if (!is) throw IoError("report: cannot open '" + dir + "/train_log.csv'");
        std::string line, last;
        std::getline(is, line);  // header
        while (std::getline(is, line))
            if (!line.empty()) last = line;
        if (!last.empty()) {
            const auto comma = last.find_last_of(',');
            row.final_loss = cfg_detail::parse_double("train_log", last.substr(comma + 1));
        }
    }
    {
        std::ifstream is(fs::path(dir) / "val_log.csv");
        if (!is) throw IoError("report: cannot open '" + dir + "/val_log.csv'");
        std::string line;
        std::getline(is, line);  // header
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::istringstream ss(line);
            std::string f;
            std::vector<double> vals;
            while (std::getline(ss, f, ',')) vals.push_back(cfg_detail::parse_double("val_log", f));
            if (vals.size() != 5) throw DataError("report: malformed val_log row '" + line + "'");
            if (vals[4] > row.best_miou) {
                row.best_epoch = static_cast<int>(vals[0]);
                row.r03 = vals[1];
                row.r05 = vals[2];
                row.r07 = vals[3];
                row.best_miou = vals[4];
            }
        }
    }
    return row;
}

inline int run(int argc, const char* const* argv) {
    CLI::App app{"PLRN: position-aware location regression for temporal video grounding"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, checkpoint_path, pred_path, thresholds_str;
    std::string attention_dir;
    std::vector<std::string> overrides, log_dirs;
    double tolerance = 1e-4;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic grounding dataset");
    gen->add_option("--config", config_path, "synthetic config file (key = value)")
        ->check(CLI::ExistingFile);
    gen->add_option("--out", out_path, "output dataset directory")->required();
    gen->add_option("--set", overrides, "override config entries, key=value");

    auto* tr = app.add_subcommand("train", "Train a model on a dataset directory");
    tr->add_option("--config", config_path, "training config file")->check(CLI::ExistingFile);
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--out", out_path, "output directory (logs + checkpoint)")->required();
    tr->add_option("--set", overrides, "override config entries, key=value");

    auto* pr = app.add_subcommand("predict", "Write boundary predictions for a dataset");
    pr->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required()
        ->check(CLI::ExistingFile);
    pr->add_option("--data", data_dir, "dataset directory")->required();
    pr->add_option("--out", out_path, "prediction CSV path")->required();
    pr->add_option("--config", config_path, "training config (default: sibling of checkpoint)");
    pr->add_option("--dump-attention", attention_dir,
                   "directory for word/segment attention CSV dumps");

    auto* ev = app.add_subcommand("evaluate", "Score a prediction CSV against ground truth");
    ev->add_option("--pred", pred_path, "prediction CSV")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--thresholds", thresholds_str, "comma-separated tIoU thresholds")
        ->default_val("0.3,0.5,0.7");
    ev->add_option("--out", out_path, "also write the report CSV here");

    auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every gradient");
    gc->add_option("--config", config_path, "training config file")->check(CLI::ExistingFile);
    gc->add_option("--tolerance", tolerance, "max relative error accepted")->default_val(1e-4);
    gc->add_option("--set", overrides, "override config entries, key=value");

    auto* rp = app.add_subcommand("report", "Summarize training runs into a CSV table");
    rp->add_option("--logs", log_dirs, "training output directories")->required()
        ->expected(-1);
    rp->add_option("--out", out_path, "summary CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            SyntheticConfig sc;
            if (!config_path.empty()) sc = synth_config_from_file(config_path);
            for (const auto& o : overrides) {
                auto [k, v] = split_kv(o);
                apply_synth_key(sc, k, v);
            }
            Dataset ds = generate_synthetic(sc);
            write_dataset(ds, out_path);
            std::printf("gen-data: wrote %zu samples (vocab %d, d_raw %d) to %s\n",
                        ds.samples.size(), ds.vocab.size(), sc.d_raw, out_path.c_str());
        } else if (tr->parsed()) {
            TrainConfig cfg;
            if (!config_path.empty()) cfg = TrainConfig::from_file(config_path);
            for (const auto& o : overrides) {
                auto [k, v] = split_kv(o);
                cfg.apply(k, v);
            }
            cfg.validate();
            Dataset ds = load_dataset(data_dir);
            PlrnModel model(cfg, ds.samples.at(0).video->d_raw, ds.vocab.size());
            model.init_params(cfg.seed);
            std::printf("train: %zu samples, %lld parameters\n", ds.samples.size(),
                        static_cast<long long>(model.store.param_count()));
            auto result = train(model, ds, out_path, /*verbose=*/true);
            if (result.best_epoch >= 0)
                std::printf("train: best val mIoU %.2f at epoch %d; checkpoint at %s\n",
                            result.best_miou, result.best_epoch,
                            (fs::path(out_path) / "checkpoint.plrn").string().c_str());
            else
                std::printf("train: finished (no validation split); checkpoint at %s\n",
                            (fs::path(out_path) / "checkpoint.plrn").string().c_str());
        } else if (pr->parsed()) {
            TrainConfig cfg = resolve_predict_config(config_path, checkpoint_path);
            cfg.validate();
            Dataset ds = load_dataset(data_dir);
            PlrnModel model(cfg, ds.samples.at(0).video->d_raw, ds.vocab.size());
            model.init_params(cfg.seed);
            model.store.load(checkpoint_path, /*expect_same_layout=*/true);
            auto rows = predict_samples(model, ds.samples, ds.vocab);
            write_predictions_csv(out_path, rows);
            std::printf("predict: wrote %zu rows to %s\n", rows.size(), out_path.c_str());
            if (!attention_dir.empty()) dump_attention_csvs(model, ds, attention_dir);
        } else if (ev->parsed()) {
            auto thresholds = parse_threshold_list(thresholds_str);
            Dataset ds = load_dataset(data_dir);
            auto rows = read_predictions_csv(pred_path);
            std::vector<double> tious;
            if (rows.size() == ds.samples.size()) {
                for (size_t i = 0; i < rows.size(); ++i) {
                    if (rows[i].id != ds.samples[i].id)
                        throw DataError("evaluate: prediction row " + std::to_string(i + 1) +
                                        " id '" + rows[i].id + "' does not match sample '" +
                                        ds.samples[i].id + "'");
                    auto [ps, pe] = clamp_boundary(rows[i].tau_s, rows[i].tau_e);
                    tious.push_back(tiou(ds.samples[i].g_s, ds.samples[i].g_e, ps, pe));
                }
            } else {
                std::map<std::string, const GroundingSample*> by_id;
                for (const auto& s : ds.samples)
                    if (!by_id.emplace(s.id, &s).second)
                        throw DataError("evaluate: duplicate sample id '" + s.id +
                                        "' needs a full prediction file (positional match)");
                for (const auto& r : rows) {
                    auto it = by_id.find(r.id);
                    if (it == by_id.end())
                        throw DataError("evaluate: prediction id '" + r.id + "' not in dataset");
                    auto [ps, pe] = clamp_boundary(r.tau_s, r.tau_e);
                    tious.push_back(tiou(it->second->g_s, it->second->g_e, ps, pe));
                }
            }
            auto rep = evaluate_tious(std::move(tious), thresholds);
            std::printf("%s", format_report_table(rep).c_str());
            const std::string csv = format_report_csv(rep);
            if (!out_path.empty()) {
                std::ofstream os(out_path);
                if (!os) throw IoError("cannot open '" + out_path + "' for writing");
                os << csv;
            } else {
                std::printf("%s", csv.c_str());
            }
        } else if (gc->parsed()) {
            TrainConfig cfg = config_path.empty() ? tiny_config() : TrainConfig::from_file(config_path);
            for (const auto& o : overrides) {
                auto [k, v] = split_kv(o);
                cfg.apply(k, v);
            }
            cfg.validate();
            auto report = run_grad_check(cfg);
            const bool ok = report.passes(tolerance);
            std::printf("grad-check: %s (tolerance %.1e)\n", ok ? "PASS" : "FAIL", tolerance);
            return ok ? 0 : 1;
        } else if (rp->parsed()) {
            std::string csv = "run,final_L_total,best_epoch,R@0.30,R@0.50,R@0.70,mIoU\n";
            char buf[256];
            for (const auto& dir : log_dirs) {
                auto row = summarize_run(dir);
                std::snprintf(buf, sizeof(buf), "%s,%.6f,%d,%.4f,%.4f,%.4f,%.4f\n",
                              row.run.c_str(), row.final_loss, row.best_epoch, row.r03, row.r05,
                              row.r07, row.best_miou);
                csv += buf;
            }
            std::printf("%s", csv.c_str());
            if (!out_path.empty()) {
                std::ofstream os(out_path);
                if (!os) throw IoError("cannot open '" + out_path + "' for writing");
                os << csv;
            }
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace plrn::cli
