#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "spinecycle/geometry.hpp"
#include "spinecycle/vertebra.hpp"

namespace spinecycle {

/// Neighbour-volume regressors for one anatomic group (mm^3):
/// S_i = a * S_{i-1} + c1 (from the previous vertebra) and S_i = b * S_{i+1} + c2 (from the next).
struct VolumeRegressor {
    double a = 1.0, c1 = 0.0;
    double b = 1.0, c2 = 0.0;
    friend bool operator==(const VolumeRegressor&, const VolumeRegressor&) = default;
};

struct DistanceGaussian {
    double mu = 0.0;
    double sigma = 1.0;
    friend bool operator==(const DistanceGaussian&, const DistanceGaussian&) = default;
};

/// Inter-vertebral distance regressors (mm):
/// both sides G_i = m1 G_{i-1} + n1 G_{i+1} + k1, previous G_i = m2 G_{i-1} + k2,
/// next G_i = n2 G_{i+1} + k3.
struct DistanceRegressor {
    double m1 = 0.5, n1 = 0.5, k1 = 0.0;
    double m2 = 1.0, k2 = 0.0;
    double n2 = 1.0, k3 = 0.0;
    friend bool operator==(const DistanceRegressor&, const DistanceRegressor&) = default;
};

enum class GapMode { Both = 0, Previous = 1, Next = 2 };
inline constexpr std::array<GapMode, 3> kAllGapModes{GapMode::Both, GapMode::Previous, GapMode::Next};
std::string gap_mode_name(GapMode m);
GapMode parse_gap_mode(const std::string& name);

/// Relative-error band (percent) for one regressor mode.
struct MreBand {
    double mu = 0.0;
    double sigma = 1.0;
    friend bool operator==(const MreBand&, const MreBand&) = default;
};

struct AnatomyStats {
    static constexpr int kSchemaVersion = 1;

    std::array<VolumeRegressor, 3> volume{};
    std::array<DistanceGaussian, 3> gaussian{};
    std::array<DistanceRegressor, 3> distance{};
    std::array<std::array<MreBand, 3>, 3> mre{};  // [group][mode]
    double fallback_volume_mm3 = 3910.0;
    double fallback_gap_mm = 50.0;

    const VolumeRegressor& volume_of(AnatomicGroup g) const { return volume[group_index(g)]; }
    const DistanceGaussian& gaussian_of(AnatomicGroup g) const { return gaussian[group_index(g)]; }
    const DistanceRegressor& distance_of(AnatomicGroup g) const { return distance[group_index(g)]; }
    const MreBand& mre_of(AnatomicGroup g, GapMode m) const {
        return mre[group_index(g)][static_cast<std::size_t>(m)];
    }

    /// Throws std::invalid_argument when a model violates its invariants.
    void validate() const;

    friend bool operator==(const AnatomyStats&, const AnatomyStats&) = default;
};

/// Coefficients learned on 80 VerSe20 training scans, as shipped in data/anatomy_stats_default.json.
AnatomyStats default_anatomy_stats();

// ---------------------------------------------------------------------------------------------
// Fitting

/// One annotated scan: labels cranial to caudal with per-vertebra volume and centroid.
struct ScanAnnotation {
    std::string scan_id;
    std::vector<VertebraLabel> labels;
    std::vector<double> volumes_mm3;
    std::vector<Vec3> centroids_mm;
};

struct XYSample {
    double x = 0.0;
    double y = 0.0;
};

struct BothSideSample {
    double prev = 0.0;
    double next = 0.0;
    double y = 0.0;
};

/// Observed and regressor-predicted gap for the relative-error statistics.
struct MreSample {
    double observed = 0.0;
    double predicted = 0.0;
};

/// Per-group training samples for every prior model.
struct StatsSamples {
    std::array<std::vector<XYSample>, 3> volume_from_previous;  // keyed by the previous vertebra's group
    std::array<std::vector<XYSample>, 3> volume_from_next;      // keyed by the next vertebra's group
    std::array<std::vector<double>, 3> gaps;                    // keyed by the caudal vertebra's group
    std::array<std::vector<BothSideSample>, 3> gap_both;
    std::array<std::vector<XYSample>, 3> gap_previous;
    std::array<std::vector<XYSample>, 3> gap_next;
    /// Explicit relative-error samples per [group][mode]. When a list is empty the bands are
    /// computed from the fitted regressor's in-sample predictions.
    std::array<std::array<std::vector<MreSample>, 3>, 3> mre{};
    std::vector<double> all_volumes;
};

/// Thrown when a group lacks the samples a model needs; the message names the group.
class InsufficientSamples : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

StatsSamples extract_samples(const std::vector<ScanAnnotation>& annotations);
AnatomyStats fit_stats(const StatsSamples& samples);
AnatomyStats fit_stats(const std::vector<ScanAnnotation>& annotations);

/// Ordinary least squares y = slope * x + intercept.
std::pair<double, double> fit_line(const std::vector<XYSample>& samples);
/// Ordinary least squares y = p * prev + q * next + r.
std::array<double, 3> fit_plane(const std::vector<BothSideSample>& samples);

/// Relative error in percent.
double relative_error_percent(double observed, double predicted);

// ---------------------------------------------------------------------------------------------
// Application

enum class VolumeDirection { FromPrevious, FromNext };

/// Volume of a vertebra predicted from its neighbour; `group` is the neighbour's group.
double predict_volume(const AnatomyStats& stats, AnatomicGroup group, double neighbor_volume_mm3,
                      VolumeDirection direction);

struct ResidualNeighbor {
    AnatomicGroup group;
    double volume_mm3;
    VolumeDirection direction;
};

struct ResidualDecision {
    bool is_vertebra = false;
    Vec3 location;           // component centroid when accepted
    double threshold_mm3 = 0.0;
};

/// Fraction of the predicted neighbour volume a residual must reach to count as a vertebra.
inline constexpr double kResidualVolumeFraction = 0.5;

ResidualDecision accept_residual(const AnatomyStats& stats, const Vec3& centroid, double volume_mm3,
                                 const std::optional<ResidualNeighbor>& neighbor);

enum class GapVerdict { Normal, Anomalous };

/// mu - 3 sigma < gap < mu + 3 sigma for the group's distance Gaussian.
GapVerdict check_gap_gaussian(const AnatomyStats& stats, AnatomicGroup group, double gap_mm);

/// Regressor prediction of a gap from its neighbouring gaps; throws when both are absent.
double predict_gap(const AnatomyStats& stats, AnatomicGroup group, std::optional<double> prev_gap,
                   std::optional<double> next_gap);

GapMode gap_mode_for(bool has_prev, bool has_next);

/// Relative error of the observed gap against the regressor prediction, compared to the group and
/// mode band. Only errors at or above mu + 3 sigma are anomalous; an unusually accurate prediction
/// is never a missing or spurious vertebra.
GapVerdict check_gap_mre(const AnatomyStats& stats, AnatomicGroup group, GapMode mode,
                         double observed_gap, double predicted_gap);

/// Gap classification used by candidate generation and the distance criterion.
struct GapAssessment {
    std::size_t upper = 0;  // index of the cranial record; the gap spans records upper and upper+1
    double gap_mm = 0.0;
    std::optional<AnatomicGroup> group;  // caudal vertebra's group; absent when labels are unknown
    bool gaussian_anomalous = false;
    bool mre_anomalous = false;
    bool fallback_anomalous = false;
    double expected_mm = 0.0;  // reference gap used for candidate counts
    bool anomalous() const { return gaussian_anomalous || mre_anomalous || fallback_anomalous; }
    /// Anomalous because it is too long (a vertebra is probably missing inside it).
    bool too_long() const;
};

/// Assesses every consecutive gap of a cranial-to-caudal record list. The relative-error check of a
/// gap only uses neighbouring gaps that pass their own Gaussian check.
std::vector<GapAssessment> assess_gaps(const AnatomyStats& stats,
                                       const std::vector<VertebraRecord>& records);

/// Evenly spaced candidate locations inside gaps that are too long.
std::vector<Vec3> gap_candidates(const AnatomyStats& stats, const std::vector<VertebraRecord>& records);

/// Extrapolated locations above a top vertebra that is not C1 and below a bottom vertebra that is
/// neither L5 nor L6, kept only when strictly inside the field of view.
std::vector<Vec3> extreme_candidates(const std::vector<VertebraRecord>& records,
                                     const Box3& field_of_view);

}  // namespace spinecycle
