#pragma once

#include "combolab/train/checkpoint.hpp"

#include <map>
#include <stdexcept>
#include <string>

namespace combolab::train {

inline constexpr double kDefaultAlignmentTolerance = 0.01;

class AlignmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Alignment {
    std::uint64_t step = 0;
    double dev_loss = 0.0;
    double residual = 0.0;           // |dev_loss - target|
    double relative_residual = 0.0;  // residual / |target|
    bool accepted = false;           // relative_residual <= tolerance
};

// Highest final dev loss among the runs, so every run can reach it.
double default_alignment_target(const std::map<std::string, LossCurve>& curves);

// Per run, the evaluated step whose dev loss is closest to `target`
// (ties to the earlier step). Empty curves throw std::invalid_argument.
std::map<std::string, Alignment> align_checkpoints(const std::map<std::string, LossCurve>& curves, double target,
                                                   double tolerance = kDefaultAlignmentTolerance);

// Throws AlignmentError listing every run whose residual exceeds the tolerance.
void require_aligned(const std::map<std::string, Alignment>& alignments, double tolerance = kDefaultAlignmentTolerance);

}  // namespace combolab::train
