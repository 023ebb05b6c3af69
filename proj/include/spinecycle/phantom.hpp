#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "spinecycle/cycle.hpp"
#include "spinecycle/priors.hpp"
#include "spinecycle/vertebra.hpp"
#include "spinecycle/volume.hpp"

namespace spinecycle {

/// Seeded generator shared by the phantom code. Doubles are built from the top 53 bits of
/// mt19937_64 so the stream is identical across standard libraries.
class PhantomRng {
public:
    explicit PhantomRng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }  // [0, 1)

private:
    std::mt19937_64 engine_;
};

/// Typical centre-to-centre distance to the vertebra above `caudal`.
double default_gap_mm(VertebraLabel caudal);
/// Gaps used when a spec gives none; adjusted around a missing T12.
std::vector<double> default_gaps_mm(const std::vector<VertebraLabel>& labels);
/// Vertebra volume used when no semi-axes are given.
double default_volume_mm3(VertebraLabel label);

/// Synthetic spine description. Empty vectors select the defaults above.
struct PhantomSpec {
    std::vector<VertebraLabel> labels;             // cranial to caudal, may hold T13/L6 or skip T12
    std::vector<double> gaps_mm;                   // labels.size() - 1 entries
    std::vector<std::array<double, 3>> semi_axes_mm;  // x, y, z per vertebra
    double gap_jitter = 0.01;   // multiplicative uniform jitter on default gaps
    double epsilon = 0.0;       // probability that the classifier reports a neighbouring label
    double peak = 0.8;          // probability mass on the reported label
    double margin_mm = 3.0;     // field of view beyond the outermost vertebra surfaces
    double bridge_radius_mm = 0.0;  // > 0 joins consecutive vertebrae with bone cylinders
    std::int16_t bone_hu = 700;
    std::int16_t background_hu = 0;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on an invalid description.
    void validate() const;
};

/// Generated scene with ground truth.
struct Phantom {
    PhantomSpec spec;
    Int16Grid ct;
    MaskGrid spine_mask;
    SpineState ground_truth;                 // sorted, labelled, masks and volumes set
    std::vector<double> gaps_mm;             // realised centre distances
    std::vector<std::array<double, 3>> semi_axes_mm;
    std::vector<VertebraLabel> reported;     // classifier label per vertebra (merged, noisy)
    std::vector<double> capture_radius_mm;   // segmentor reach per vertebra
};

/// Stacked ellipsoids on a 1 mm LPS grid. Throws std::invalid_argument when consecutive
/// ellipsoids overlap.
Phantom generate_phantom(const PhantomSpec& spec);

/// Peaked distribution over the 24 graph labels.
LocalPrediction peaked_prediction(VertebraLabel reported, double peak);

/// Label the classifier reports for a vertebra: transitional codes merged, then with probability
/// epsilon moved to a neighbouring graph label.
VertebraLabel noisy_label(VertebraLabel truth, double epsilon, PhantomRng& rng);

struct SyntheticPredictions {
    std::vector<VertebraLabel> reported;
    std::vector<LocalPrediction> predictions;
};

/// Classifier output for a label sequence without building any grid.
SyntheticPredictions generate_predictions(const std::vector<VertebraLabel>& labels, double epsilon,
                                          std::uint64_t seed, double peak = 0.8);

/// Returns the nearest ground-truth vertebra within its capture radius, Empty otherwise.
class PhantomSegmentor : public SegmentorOracle {
public:
    explicit PhantomSegmentor(const Phantom& phantom) : phantom_(&phantom) {}
    std::optional<SegmentationResult> segment(const Int16Grid& ct, const Vec3& seed) override;

    std::set<std::size_t> dropped;           // vertebrae that cannot be segmented
    std::map<std::size_t, Vec3> shifted;     // location offsets added to the refined location
    std::size_t calls = 0;

private:
    const Phantom* phantom_;
};

/// Reports the peaked distribution of the vertebra nearest to the crop centre.
class PhantomClassifier : public ClassifierOracle {
public:
    explicit PhantomClassifier(const Phantom& phantom) : phantom_(&phantom) {}
    std::optional<LocalPrediction> classify(const ClassifyRequest& request) override;
    bool thread_safe() const override { return true; }

    std::set<std::size_t> blank;  // vertebrae whose union-of-masks crop yields no prediction

private:
    const Phantom* phantom_;
};

/// Ground-truth vertebra nearest to a world point.
std::size_t nearest_vertebra(const Phantom& phantom, const Vec3& p);

enum class Corruption { DropMask, ShiftLocation, BlankProbability };

std::string corruption_name(Corruption c);
Corruption parse_corruption(std::string_view name);

struct PhantomOracles {
    PhantomSegmentor segmentor;
    PhantomClassifier classifier;
    explicit PhantomOracles(const Phantom& p) : segmentor(p), classifier(p) {}
};

/// Interior vertebra picked from the seed (the top one when there are fewer than three).
std::size_t pick_corruption_target(std::size_t vertebra_count, std::uint64_t seed);

/// Default displacement for ShiftLocation: 30 mm cranial.
inline constexpr Vec3 kDefaultShift{0.0, 0.0, 30.0};

/// Oracle-level corruption of one vertebra.
void corrupt(PhantomOracles& oracles, Corruption c, std::size_t vertebra, const Vec3& shift = kDefaultShift);

/// State-level corruption of one record: DropMask removes the mask, ShiftLocation moves the
/// location (records are re-sorted), BlankProbability replaces the local prediction by uniform.
void corrupt(SpineState& state, Corruption c, std::size_t record, const Vec3& shift = kDefaultShift,
             VerticalAxis axis = {});

}  // namespace spinecycle
