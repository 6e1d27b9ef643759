#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "plrn/tensor.hpp"

namespace plrn {

/// Temporal IoU between a ground-truth interval and a prediction:
/// (min(g_e, p_e) - max(g_s, p_s)) / (max(g_e, p_e) - min(g_s, p_s)),
/// clamped below at zero for disjoint intervals.
inline double tiou(double g_s, double g_e, double p_s, double p_e) {
    if (!(g_s < g_e)) throw DataError("tiou: degenerate ground truth interval");
    const double inter = std::min(g_e, p_e) - std::max(g_s, p_s);
    const double uni = std::max(g_e, p_e) - std::min(g_s, p_s);
    if (uni <= 0.0) return 0.0;
    return std::max(0.0, inter / uni);
}

/// Percentage of samples with tIoU strictly larger than the threshold.
inline double recall_at(const std::vector<double>& tious, double threshold) {
    if (tious.empty()) throw DataError("recall_at: empty evaluation");
    int hits = 0;
    for (double v : tious)
        if (v > threshold) ++hits;
    return 100.0 * hits / static_cast<double>(tious.size());
}

/// Mean tIoU as a percentage.
inline double miou(const std::vector<double>& tious) {
    if (tious.empty()) throw DataError("miou: empty evaluation");
    double s = 0.0;
    for (double v : tious) s += v;
    return 100.0 * s / static_cast<double>(tious.size());
}

struct EvalReport {
    std::vector<double> thresholds;
    std::vector<double> recalls;        // same order as thresholds
    double miou = 0.0;
    int sample_count = 0;
    std::vector<double> tious;

    double recall(double threshold) const {
        for (size_t i = 0; i < thresholds.size(); ++i)
            if (thresholds[i] == threshold) return recalls[i];
        throw ContractError("recall: threshold not evaluated");
    }
};

inline EvalReport evaluate_tious(std::vector<double> tious,
                                 std::vector<double> thresholds = {0.3, 0.5, 0.7}) {
    EvalReport rep;
    rep.thresholds = std::move(thresholds);
    rep.tious = std::move(tious);
    rep.sample_count = static_cast<int>(rep.tious.size());
    for (double th : rep.thresholds) rep.recalls.push_back(recall_at(rep.tious, th));
    rep.miou = plrn::miou(rep.tious);
    return rep;
}

inline std::string format_report_table(const EvalReport& rep) {
    std::string out;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "  %-10s %10s\n", "metric", "value");
    out += buf;
    for (size_t i = 0; i < rep.thresholds.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "  R@%-8.2f %10.2f\n", rep.thresholds[i], rep.recalls[i]);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "  %-10s %10.2f\n", "mIoU", rep.miou);
    out += buf;
    std::snprintf(buf, sizeof(buf), "  %-10s %10d\n", "samples", rep.sample_count);
    out += buf;
    return out;
}

inline std::string format_report_csv(const EvalReport& rep) {
    std::string header, values;
    char buf[64];
    for (size_t i = 0; i < rep.thresholds.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "R@%.2f,", rep.thresholds[i]);
        header += buf;
        std::snprintf(buf, sizeof(buf), "%.4f,", rep.recalls[i]);
        values += buf;
    }
    std::snprintf(buf, sizeof(buf), "%.4f,%d\n", rep.miou, rep.sample_count);
    return header + "mIoU,samples\n" + values + buf;
}

}  // namespace plrn
