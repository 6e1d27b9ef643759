#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

#include "plrn/regression.hpp"
#include "plrn/tape.hpp"

namespace plrn {

constexpr double kLogFloor = 1e-12;

/// Normalized ground-truth boundary with the derived center/width targets
/// and the in-boundary segment indicator.
struct GroundTruth {
    double g_s = 0.0, g_e = 0.0;
    std::vector<uint8_t> phi;  // T entries

    double g_c() const { return 0.5 * (g_s + g_e); }
    double g_w() const { return g_e - g_s; }
};

/// phi_t = 1 iff segment t is real and its normalized temporal midpoint lies
/// inside [g_s, g_e]. If the boundary is too narrow to contain any midpoint,
/// the real segment nearest the boundary center is marked instead, keeping
/// the calibration loss well-defined.
inline std::vector<uint8_t> boundary_indicator(const std::vector<double>& mids,
                                               const std::vector<uint8_t>& mask, double g_s,
                                               double g_e) {
    if (!(g_s < g_e)) throw DataError("boundary_indicator: need g_s < g_e");
    std::vector<uint8_t> phi(mids.size(), 0);
    int count = 0;
    for (size_t t = 0; t < mids.size(); ++t)
        if (mask[t] && mids[t] >= g_s && mids[t] <= g_e) {
            phi[t] = 1;
            ++count;
        }
    if (count == 0) {
        const double center = 0.5 * (g_s + g_e);
        int best = -1;
        double best_dist = 0.0;
        for (size_t t = 0; t < mids.size(); ++t) {
            if (!mask[t]) continue;
            const double dist = std::fabs(mids[t] - center);
            if (best < 0 || dist < best_dist) {
                best = static_cast<int>(t);
                best_dist = dist;
            }
        }
        if (best < 0) throw MaskError("boundary_indicator: no real segments");
        phi[best] = 1;
    }
    return phi;
}

inline GroundTruth make_ground_truth(double g_s, double g_e, const std::vector<double>& mids,
                                     const std::vector<uint8_t>& mask) {
    GroundTruth gt;
    gt.g_s = g_s;
    gt.g_e = g_e;
    gt.phi = boundary_indicator(mids, mask, g_s, g_e);
    return gt;
}

struct LossBreakdown {
    double l_se = 0.0, l_cw = 0.0, l_tem = 0.0, l_total = 0.0;
};

struct LossResult {
    TensorPtr total;  // scalar on the tape
    LossBreakdown values;
};

/// Smooth L1 of the scalar z (plain double version for spot checks; the
/// differentiable path lives on the tape).
inline double smooth_l1_value(double z) {
    return std::fabs(z) < 1.0 ? 0.5 * z * z : std::fabs(z) - 0.5;
}

/// L_se = f_sm(g_s - tau_s) + f_sm(g_e - tau_e) on the tape.
inline TensorPtr loss_se(Tape& tape, const GroundingPrediction& pred, const GroundTruth& gt) {
    auto target = Tensor::vec({gt.g_s, gt.g_e});
    return tape.sum(tape.smooth_l1(tape.sub(target, pred.t_se)));
}

/// L_cw = f_sm(g_c - tau_c) + f_sm(g_w - tau_w) on the tape.
inline TensorPtr loss_cw(Tape& tape, const GroundingPrediction& pred, const GroundTruth& gt) {
    auto target = Tensor::vec({gt.g_c(), gt.g_w()});
    return tape.sum(tape.smooth_l1(tape.sub(target, pred.t_cw)));
}

/// L_tem = -sum_t phi_t log(b_t) / sum_t phi_t, with the log floored.
inline TensorPtr loss_tem(Tape& tape, const GroundingPrediction& pred, const GroundTruth& gt) {
    double m = 0.0;
    for (uint8_t p : gt.phi) m += p;
    if (m < 1.0) throw ContractError("loss_tem: indicator has no segments");
    std::vector<double> phi(gt.phi.begin(), gt.phi.end());
    auto phi_t = Tensor::vec(std::move(phi));
    return tape.scale(tape.dot(phi_t, tape.log_guarded(pred.b, kLogFloor)), -1.0 / m);
}

/// Total loss (Eq. L = L_se + L_cw + L_tem) with ablation switches. Disabled
/// terms are reported as zero and excluded from the gradient.
inline LossResult total_loss(Tape& tape, const GroundingPrediction& pred, const GroundTruth& gt,
                             bool use_l_tem = true, bool use_l_cw = true) {
    LossResult res;
    auto se = loss_se(tape, pred, gt);
    res.values.l_se = se->data[0];
    res.total = se;
    if (use_l_cw) {
        auto cw = loss_cw(tape, pred, gt);
        res.values.l_cw = cw->data[0];
        res.total = tape.add(res.total, cw);
    }
    if (use_l_tem) {
        auto tem = loss_tem(tape, pred, gt);
        res.values.l_tem = tem->data[0];
        res.total = tape.add(res.total, tem);
    }
    res.values.l_total = res.total->data[0];
    return res;
}

}  // namespace plrn
