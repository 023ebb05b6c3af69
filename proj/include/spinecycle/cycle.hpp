#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spinecycle/ident_graph.hpp"
#include "spinecycle/priors.hpp"
#include "spinecycle/vertebra.hpp"
#include "spinecycle/volume.hpp"

namespace spinecycle {

/// Raised when an oracle answers outside its contract (wrong geometry, invalid probabilities).
class OracleProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SegmentationResult {
    Vec3 location;  // refined location, mm
    MaskGrid mask;  // lattice-aligned with the working grid (full frame or a sub-box)
};

/// Individual vertebra segmentor with location refinement. std::nullopt models a failed
/// segmentation (for instance next to metal implants).
class SegmentorOracle {
public:
    virtual ~SegmentorOracle() = default;
    virtual std::optional<SegmentationResult> segment(const Int16Grid& ct, const Vec3& seed) = 0;
};

enum class CropKind { SpineMask, UnionOfMasks };

std::string crop_kind_name(CropKind k);
CropKind parse_crop_kind(const std::string& name);

struct ClassifyRequest {
    std::size_t record_id = 0;
    CropKind kind = CropKind::SpineMask;
    const MaskGrid* crop = nullptr;  // binary cube centred on the vertebra
};

/// Hierarchical per-vertebra classifier. std::nullopt means no prediction; the caller substitutes
/// the uniform distribution.
class ClassifierOracle {
public:
    virtual ~ClassifierOracle() = default;
    virtual std::optional<LocalPrediction> classify(const ClassifyRequest& request) = 0;
    /// True when classify() may be called from several threads at once.
    virtual bool thread_safe() const { return false; }
};

struct CycleConfig {
    int max_iterations = 10;
    double min_separation_mm = 10.0;
    std::size_t crop_side_voxels = 128;
    GraphWeights weights{};
    Connectivity connectivity = Connectivity::TwentySix;
    VerticalAxis vertical{};
    int threads = 1;

    void validate() const;
};

struct ConsistencyResult {
    bool pass = false;
    InconsistencyReport report;
};

/// Evaluates the stopping criteria on a sorted, labelled state:
///   segmentation: every record carries a non-empty mask;
///   C1 every gap passes the Gaussian and relative-error checks;
///   C2 every uncovered residual component is rejected as noise;
///   C3 transitional post-processing raised no flag;
///   C4 extremes are complete or their extrapolation leaves the field of view.
/// Anomalous gaps that touch each other are reported as one region.
ConsistencyResult check_consistency(const SpineState& state, const AnatomyStats& stats,
                                    const CycleConfig& cfg);

/// Order-independent digest of (location rounded to 0.1 mm, mask voxel count, label) per record.
std::uint64_t state_fingerprint(const SpineState& state);

struct CycleTrace {
    std::vector<std::size_t> residual_voxels;  // residual foreground at the start of each iteration
    std::vector<std::uint64_t> fingerprints;   // after each iteration
    bool converged = false;                    // criteria passed
    bool fixed_point = false;
};

/// Localize, segment and identify until the criteria hold, the state stops changing, or
/// cfg.max_iterations is reached. `initial` continues from an earlier state.
SpineState run_cycle(const Int16Grid& ct, const MaskGrid& spine_mask, SegmentorOracle& segmentor,
                     ClassifierOracle& classifier, const AnatomyStats& stats, const CycleConfig& cfg,
                     const std::optional<SpineState>& initial = std::nullopt, CycleTrace* trace = nullptr);

/// Union of all record masks on the spine-mask frame.
MaskGrid union_of_masks(const SpineState& state);

}  // namespace spinecycle
