#include "spinecycle/vertebra.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spinecycle {

namespace {

constexpr double kProbTolerance = 1e-6;

// Group boundaries in graph space: first code of each group.
constexpr std::array<int, 3> kGroupFirstCode{1, 8, 20};

void check_distribution(const double* begin, std::size_t n, const char* what) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = begin[i];
        if (!std::isfinite(p) || p < -kProbTolerance || p > 1.0 + kProbTolerance) {
            throw std::invalid_argument(std::string(what) + ": probability outside [0,1]");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > kProbTolerance) {
        throw std::invalid_argument(std::string(what) + ": probabilities sum to " +
                                    std::to_string(sum) + ", expected 1");
    }
}

template <typename It>
void normalize(It first, It last) {
    double sum = 0.0;
    for (auto it = first; it != last; ++it) {
        *it = std::max(*it, 0.0);
        sum += *it;
    }
    for (auto it = first; it != last; ++it) *it /= sum;
}

}  // namespace

VertebraLabel::VertebraLabel(int code) : code_(code) {
    if (code < kMinCode || code > kMaxCode) {
        throw std::out_of_range("vertebra code " + std::to_string(code) + " outside [1, 26]");
    }
}

std::string VertebraLabel::name() const {
    if (code_ == kT13) return "T13";
    if (code_ == kL6) return "L6";
    const auto g = group_of(*this);
    const char prefix = g == AnatomicGroup::Cervical ? 'C' : (g == AnatomicGroup::Thoracic ? 'T' : 'L');
    return prefix + std::to_string(index_in_group(*this) + 1);
}

VertebraLabel VertebraLabel::parse(std::string_view name) {
    if (name.size() < 2) throw std::invalid_argument("invalid vertebra label '" + std::string(name) + "'");
    int number = 0;
    for (char ch : name.substr(1)) {
        if (ch < '0' || ch > '9' || number > 100) {
            throw std::invalid_argument("invalid vertebra label '" + std::string(name) + "'");
        }
        number = number * 10 + (ch - '0');
    }
    switch (name[0]) {
    case 'C':
        if (number >= 1 && number <= 7) return VertebraLabel(number);
        break;
    case 'T':
        if (number >= 1 && number <= 12) return VertebraLabel(7 + number);
        if (number == 13) return VertebraLabel(kT13);
        break;
    case 'L':
        if (number >= 1 && number <= 5) return VertebraLabel(19 + number);
        if (number == 6) return VertebraLabel(kL6);
        break;
    default: break;
    }
    throw std::invalid_argument("invalid vertebra label '" + std::string(name) + "'");
}

std::string group_name(AnatomicGroup g) {
    switch (g) {
    case AnatomicGroup::Cervical: return "cervical";
    case AnatomicGroup::Thoracic: return "thoracic";
    case AnatomicGroup::Lumbar: return "lumbar";
    }
    return "unknown";
}

AnatomicGroup parse_group(std::string_view name) {
    for (auto g : kAllGroups) {
        if (group_name(g) == name) return g;
    }
    throw std::invalid_argument("unknown anatomic group '" + std::string(name) + "'");
}

AnatomicGroup group_of(VertebraLabel label) {
    const int c = label.code();
    if (c == VertebraLabel::kT13) return AnatomicGroup::Thoracic;
    if (c == VertebraLabel::kL6) return AnatomicGroup::Lumbar;
    if (c <= 7) return AnatomicGroup::Cervical;
    if (c <= 19) return AnatomicGroup::Thoracic;
    return AnatomicGroup::Lumbar;
}

VertebraLabel successor(VertebraLabel label) {
    if (!label.in_graph_space() || label.code() >= VertebraLabel::kGraphMax) {
        throw std::out_of_range("no graph-space successor for " + label.name());
    }
    return VertebraLabel(label.code() + 1);
}

std::size_t index_in_group(VertebraLabel label) {
    if (!label.in_graph_space()) {
        throw std::out_of_range(label.name() + " is not a graph-space label");
    }
    return static_cast<std::size_t>(label.code() - kGroupFirstCode[group_index(group_of(label))]);
}

VertebraLabel label_at(AnatomicGroup g, std::size_t index) {
    if (index >= kGroupSizes[group_index(g)]) {
        throw std::out_of_range("index " + std::to_string(index) + " outside group " + group_name(g));
    }
    return VertebraLabel(kGroupFirstCode[group_index(g)] + static_cast<int>(index));
}

VertebraLabel merge_transitional(VertebraLabel label) {
    if (label.code() == VertebraLabel::kT13) return labels::T12;
    if (label.code() == VertebraLabel::kL6) return labels::L5;
    return label;
}

LocalPrediction::LocalPrediction(GroupProbs group_probs, WithinProbs within_group_probs)
    : group_probs_(group_probs), within_(std::move(within_group_probs)) {
    check_distribution(group_probs_.data(), 3, "group probabilities");
    for (auto g : kAllGroups) {
        const auto& w = within_[group_index(g)];
        if (w.size() != kGroupSizes[group_index(g)]) {
            throw std::invalid_argument(group_name(g) + " within-group vector has " +
                                        std::to_string(w.size()) + " entries, expected " +
                                        std::to_string(kGroupSizes[group_index(g)]));
        }
        check_distribution(w.data(), w.size(), (group_name(g) + " within-group probabilities").c_str());
    }
    // Inputs are accepted within kProbTolerance; store them exactly normalized.
    normalize(group_probs_.begin(), group_probs_.end());
    for (auto& w : within_) normalize(w.begin(), w.end());
    for (int code = 1; code <= VertebraLabel::kGraphMax; ++code) {
        const VertebraLabel l(code);
        const auto gi = group_index(group_of(l));
        fused_[code - 1] = group_probs_[gi] * within_[gi][index_in_group(l)];
    }
}

LocalPrediction LocalPrediction::uniform() {
    std::array<double, 24> fused;
    fused.fill(1.0 / 24.0);
    return from_fused(fused);
}

LocalPrediction LocalPrediction::from_fused(const std::array<double, 24>& fused) {
    GroupProbs groups{};
    WithinProbs within;
    for (auto g : kAllGroups) {
        const auto gi = group_index(g);
        within[gi].assign(kGroupSizes[gi], 0.0);
        double total = 0.0;
        for (std::size_t k = 0; k < kGroupSizes[gi]; ++k) total += fused[label_at(g, k).code() - 1];
        groups[gi] = total;
        for (std::size_t k = 0; k < kGroupSizes[gi]; ++k) {
            within[gi][k] = total > 0.0 ? fused[label_at(g, k).code() - 1] / total
                                        : 1.0 / static_cast<double>(kGroupSizes[gi]);
        }
    }
    const double sum = groups[0] + groups[1] + groups[2];
    for (auto& p : groups) p /= sum;
    return LocalPrediction(groups, std::move(within));
}

VertebraLabel LocalPrediction::argmax() const {
    const auto it = std::max_element(fused_.begin(), fused_.end());
    return VertebraLabel(static_cast<int>(it - fused_.begin()) + 1);
}

std::string flag_name(RecordFlag f) {
    switch (f) {
    case RecordFlag::EmptySegmentation: return "EmptySegmentation";
    case RecordFlag::DistanceAnomaly: return "DistanceAnomaly";
    case RecordFlag::VolumeAnomaly: return "VolumeAnomaly";
    case RecordFlag::LabelRepeat: return "LabelRepeat";
    }
    return "Unknown";
}

RecordFlag parse_flag(std::string_view name) {
    for (auto f : {RecordFlag::EmptySegmentation, RecordFlag::DistanceAnomaly,
                   RecordFlag::VolumeAnomaly, RecordFlag::LabelRepeat}) {
        if (flag_name(f) == name) return f;
    }
    throw std::invalid_argument("unknown record flag '" + std::string(name) + "'");
}

std::string report_kind_name(ReportKind k) {
    switch (k) {
    case ReportKind::EmptySegmentation: return "EmptySegmentation";
    case ReportKind::DistanceAnomaly: return "DistanceAnomaly";
    case ReportKind::VolumeAnomaly: return "VolumeAnomaly";
    case ReportKind::LabelRepeat: return "LabelRepeat";
    case ReportKind::MissingExtreme: return "MissingExtreme";
    }
    return "Unknown";
}

ReportKind parse_report_kind(std::string_view name) {
    for (auto k : {ReportKind::EmptySegmentation, ReportKind::DistanceAnomaly,
                   ReportKind::VolumeAnomaly, ReportKind::LabelRepeat, ReportKind::MissingExtreme}) {
        if (report_kind_name(k) == name) return k;
    }
    throw std::invalid_argument("unknown report kind '" + std::string(name) + "'");
}

std::string criterion_name(ReportKind k) {
    switch (k) {
    case ReportKind::EmptySegmentation: return "segmentation";
    case ReportKind::DistanceAnomaly: return "distance";
    case ReportKind::VolumeAnomaly: return "residual";
    case ReportKind::LabelRepeat: return "label-sequence";
    case ReportKind::MissingExtreme: return "extremes";
    }
    return "unknown";
}

std::string special_edge_name(SpecialEdge e) {
    switch (e) {
    case SpecialEdge::T13: return "T13";
    case SpecialEdge::AbsentT12: return "AbsentT12";
    case SpecialEdge::L6: return "L6";
    }
    return "unknown";
}

SpecialEdge parse_special_edge(std::string_view name) {
    for (auto e : {SpecialEdge::T13, SpecialEdge::AbsentT12, SpecialEdge::L6}) {
        if (special_edge_name(e) == name) return e;
    }
    throw std::invalid_argument("unknown transitional event '" + std::string(name) + "'");
}

std::vector<VertebraRecord> sort_records(std::vector<VertebraRecord> records, VerticalAxis axis) {
    std::stable_sort(records.begin(), records.end(),
                     [&](const VertebraRecord& a, const VertebraRecord& b) {
                         return axis.cranial_coordinate(a.location) >
                                axis.cranial_coordinate(b.location);
                     });
    return records;
}

}  // namespace spinecycle
