#include "combolab/train/align.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace combolab::train {

double default_alignment_target(const std::map<std::string, LossCurve>& curves) {
    if (curves.empty()) throw std::invalid_argument("alignment needs at least one run");
    double target = -std::numeric_limits<double>::infinity();
    for (const auto& [run, curve] : curves) {
        if (curve.empty()) throw std::invalid_argument(fmt::format("run '{}' has an empty loss curve", run));
        target = std::max(target, curve.back().dev_loss);
    }
    return target;
}

std::map<std::string, Alignment> align_checkpoints(const std::map<std::string, LossCurve>& curves, double target,
                                                   double tolerance) {
    std::map<std::string, Alignment> out;
    for (const auto& [run, curve] : curves) {
        if (curve.empty()) throw std::invalid_argument(fmt::format("run '{}' has an empty loss curve", run));
        const LossPoint* best = &curve.front();
        for (const auto& p : curve) {
            const double d = std::abs(p.dev_loss - target), bd = std::abs(best->dev_loss - target);
            if (d < bd || (d == bd && p.step < best->step)) best = &p;
        }
        Alignment a;
        a.step = best->step;
        a.dev_loss = best->dev_loss;
        a.residual = std::abs(best->dev_loss - target);
        a.relative_residual = target == 0.0 ? (a.residual == 0.0 ? 0.0 : std::numeric_limits<double>::infinity())
                                            : a.residual / std::abs(target);
        a.accepted = a.relative_residual <= tolerance;
        out.emplace(run, a);
    }
    return out;
}

void require_aligned(const std::map<std::string, Alignment>& alignments, double tolerance) {
    std::string bad;
    for (const auto& [run, a] : alignments) {
        if (a.relative_residual > tolerance) {
            bad += fmt::format("{}{} (step {}, residual {:.3g}%)", bad.empty() ? "" : ", ", run, a.step,
                               100.0 * a.relative_residual);
        }
    }
    if (!bad.empty()) {
        throw AlignmentError(fmt::format("alignment residual exceeds {:.3g}% for: {}", 100.0 * tolerance, bad));
    }
}

}  // namespace combolab::train
