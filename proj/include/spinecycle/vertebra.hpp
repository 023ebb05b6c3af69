#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "spinecycle/geometry.hpp"

namespace spinecycle {

template <typename T>
class Grid;
using MaskGrid = Grid<std::uint8_t>;

/// Vertebra identity. Codes 1-7 are C1-C7, 8-19 T1-T12, 20-24 L1-L5, 25 T13 and 26 L6.
/// The shortest-path graph only ever works with codes 1-24; 25 and 26 come out of
/// transitional post-processing.
class VertebraLabel {
public:
    static constexpr int kMinCode = 1;
    static constexpr int kGraphMax = 24;
    static constexpr int kT13 = 25;
    static constexpr int kL6 = 26;
    static constexpr int kMaxCode = 26;

    constexpr VertebraLabel() = default;
    explicit VertebraLabel(int code);

    constexpr int code() const { return code_; }
    constexpr bool in_graph_space() const { return code_ >= kMinCode && code_ <= kGraphMax; }
    constexpr bool transitional() const { return code_ == kT13 || code_ == kL6; }

    std::string name() const;
    static VertebraLabel parse(std::string_view name);

    friend constexpr auto operator<=>(const VertebraLabel&, const VertebraLabel&) = default;

private:
    int code_ = kMinCode;
};

namespace labels {
// Frequently referenced levels.
inline const VertebraLabel C1{1};
inline const VertebraLabel C7{7};
inline const VertebraLabel T1{8};
inline const VertebraLabel T11{18};
inline const VertebraLabel T12{19};
inline const VertebraLabel L1{20};
inline const VertebraLabel L5{24};
inline const VertebraLabel T13{VertebraLabel::kT13};
inline const VertebraLabel L6{VertebraLabel::kL6};
}  // namespace labels

enum class AnatomicGroup { Cervical = 0, Thoracic = 1, Lumbar = 2 };

inline constexpr std::array<AnatomicGroup, 3> kAllGroups{AnatomicGroup::Cervical,
                                                         AnatomicGroup::Thoracic,
                                                         AnatomicGroup::Lumbar};
/// Number of graph-space labels per group (7, 12, 5).
inline constexpr std::array<std::size_t, 3> kGroupSizes{7, 12, 5};

constexpr std::size_t group_index(AnatomicGroup g) { return static_cast<std::size_t>(g); }
std::string group_name(AnatomicGroup g);
AnatomicGroup parse_group(std::string_view name);

AnatomicGroup group_of(VertebraLabel label);

/// Graph-space successor. Throws std::out_of_range for L5 and for transitional codes.
VertebraLabel successor(VertebraLabel label);

/// Position of a graph-space label inside its group (C1 -> 0, T1 -> 0, L5 -> 4).
std::size_t index_in_group(VertebraLabel label);

/// Graph-space label from group and in-group index.
VertebraLabel label_at(AnatomicGroup g, std::size_t index);

/// Transitional codes collapse onto the standard level the local classifier is trained with.
VertebraLabel merge_transitional(VertebraLabel label);

/// Hierarchical classifier output: group probabilities times within-group probabilities.
class LocalPrediction {
public:
    using GroupProbs = std::array<double, 3>;
    using WithinProbs = std::array<std::vector<double>, 3>;

    /// Validates that every vector is a probability distribution (tolerance 1e-6).
    LocalPrediction(GroupProbs group_probs, WithinProbs within_group_probs);

    /// Uniform over the 24 graph-space labels.
    static LocalPrediction uniform();

    /// Factorizes a 24-vector over graph-space labels into group and within-group parts.
    static LocalPrediction from_fused(const std::array<double, 24>& fused);

    const GroupProbs& group_probs() const { return group_probs_; }
    const WithinProbs& within_group_probs() const { return within_; }
    const std::array<double, 24>& fused() const { return fused_; }

    /// Pv for a graph-space label.
    double probability(VertebraLabel label) const { return fused_[label.code() - 1]; }
    double group_probability(AnatomicGroup g) const { return group_probs_[group_index(g)]; }

    VertebraLabel argmax() const;

    friend bool operator==(const LocalPrediction&, const LocalPrediction&) = default;

private:
    GroupProbs group_probs_{};
    WithinProbs within_;
    std::array<double, 24> fused_{};
};

enum class RecordFlag { EmptySegmentation, DistanceAnomaly, VolumeAnomaly, LabelRepeat };

std::string flag_name(RecordFlag f);
RecordFlag parse_flag(std::string_view name);

/// One detected vertebra.
struct VertebraRecord {
    Vec3 location;
    std::shared_ptr<const MaskGrid> mask;
    double volume_mm3 = 0.0;
    std::optional<LocalPrediction> local_probs;
    std::optional<VertebraLabel> label;
    std::set<RecordFlag> flags;
};

/// Anatomic vertical axis of the working frame.
struct VerticalAxis {
    int world_axis = 2;
    bool cranial_positive = true;

    double cranial_coordinate(const Vec3& p) const {
        return cranial_positive ? p[world_axis] : -p[world_axis];
    }
};

/// Stable cranial-to-caudal ordering.
std::vector<VertebraRecord> sort_records(std::vector<VertebraRecord> records,
                                         VerticalAxis axis = {});

/// Report entry kinds. The four record flags plus incomplete spine extremes.
enum class ReportKind {
    EmptySegmentation,
    DistanceAnomaly,
    VolumeAnomaly,
    LabelRepeat,
    MissingExtreme
};

std::string report_kind_name(ReportKind k);
ReportKind parse_report_kind(std::string_view name);
/// Short name of the criterion a report kind belongs to ("segmentation", "distance", ...).
std::string criterion_name(ReportKind k);

struct ReportEntry {
    Box3 region;
    ReportKind kind = ReportKind::DistanceAnomaly;
    std::string detail;
};

struct InconsistencyReport {
    std::vector<ReportEntry> entries;
    bool empty() const { return entries.empty(); }
};

/// Transitional steps taken by the label graph.
enum class SpecialEdge { T13, AbsentT12, L6 };

std::string special_edge_name(SpecialEdge e);
SpecialEdge parse_special_edge(std::string_view name);

struct SpineState {
    std::vector<VertebraRecord> records;
    /// Transitional events keyed by the index of the second record of the step.
    std::vector<std::pair<std::size_t, SpecialEdge>> transitional_events;
    std::shared_ptr<const MaskGrid> spine_mask;
    int iteration = 0;
    InconsistencyReport report;
};

}  // namespace spinecycle
