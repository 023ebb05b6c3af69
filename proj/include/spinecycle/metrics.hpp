#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "spinecycle/vertebra.hpp"
#include "spinecycle/volume.hpp"

namespace spinecycle {

/// A labelled vertebra for evaluation; mask optional.
struct EvalVertebra {
    VertebraLabel label;
    Vec3 location;
    const MaskGrid* mask = nullptr;
};

struct EvalPair {
    std::vector<EvalVertebra> predicted;
    std::vector<EvalVertebra> ground_truth;
    double match_tolerance_mm = 20.0;
};

struct Match {
    std::size_t gt = 0;
    std::optional<std::size_t> predicted;  // same label within tolerance
    double distance_mm = 0.0;
};

/// For every ground-truth vertebra, the nearest same-label prediction within tolerance.
std::vector<Match> match_vertebrae(const EvalPair& pair);

/// Percent of ground-truth vertebrae identified. Throws on empty ground truth.
double id_rate(const EvalPair& pair);

/// Mean localisation distance over identified vertebrae; std::nullopt when none was identified.
std::optional<double> mld(const EvalPair& pair);

/// 2|A n B| / (|A| + |B|); 1 when both are empty. Throws GeometryMismatch when not aligned.
double dice(const MaskGrid& a, const MaskGrid& b);

/// Symmetric Hausdorff distance between boundary voxel sets in mm. `percentile` in (0, 100]
/// selects the directed-distance quantile (100 = classic maximum). std::nullopt if either mask is
/// empty.
std::optional<double> hausdorff(const MaskGrid& a, const MaskGrid& b, double percentile = 100.0);

struct VertebraMetrics {
    VertebraLabel label;
    Vec3 gt_location;
    std::optional<Vec3> predicted_location;
    bool identified = false;
    double distance_mm = 0.0;
    std::optional<double> dice;
    std::optional<double> hausdorff_mm;
};

struct MetricsReport {
    std::vector<VertebraMetrics> rows;
    double id_rate_percent = 0.0;
    std::optional<double> mld_mm;
    std::optional<double> mean_dice;
    std::optional<double> mean_hausdorff_mm;
};

/// Dice and Hausdorff are computed only on identified vertebrae where both masks exist.
MetricsReport evaluate(const EvalPair& pair, double hausdorff_percentile = 100.0);

/// Tab-separated rows followed by '#'-prefixed aggregate lines.
void write_metrics_tsv(std::ostream& os, const MetricsReport& report);

}  // namespace spinecycle
