#include "spinecycle/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace spinecycle {

double default_gap_mm(VertebraLabel caudal) {
    const int c = caudal.code();
    if (c == VertebraLabel::kT13) return 27.0;
    if (c == VertebraLabel::kL6) return 34.5;
    if (c == 1) return 16.77;
    if (c <= 7) return 15.5 + 0.6 * (c - 2);
    if (c <= 19) return 19.8 + 0.6 * (c - 8);
    if (c == 20) return 28.5;
    return 30.5 + (c - 21);
}

std::vector<double> default_gaps_mm(const std::vector<VertebraLabel>& labels) {
    std::vector<double> out;
    for (std::size_t i = 1; i < labels.size(); ++i) {
        double g = default_gap_mm(labels[i]);
        // Without T12 the thoracolumbar steps are shortened so neighbouring gaps still predict each other.
        if (labels[i - 1] == labels::T11 && labels[i] == labels::L1) g = 27.5;
        if (i >= 2 && labels[i - 2] == labels::T11 && labels[i - 1] == labels::L1) g = 29.5;
        out.push_back(g);
    }
    return out;
}

double default_volume_mm3(VertebraLabel label) {
    static const auto table = [] {
        const auto stats = default_anatomy_stats();
        std::array<double, VertebraLabel::kMaxCode + 1> v{};
        v[1] = 6000.0;
        for (int c = 2; c <= VertebraLabel::kGraphMax; ++c) {
            const VertebraLabel prev(c - 1);
            v[c] = predict_volume(stats, group_of(prev), v[c - 1], VolumeDirection::FromPrevious);
        }
        v[VertebraLabel::kT13] = predict_volume(stats, AnatomicGroup::Thoracic, v[labels::T12.code()],
                                                VolumeDirection::FromPrevious);
        v[VertebraLabel::kL6] = predict_volume(stats, AnatomicGroup::Lumbar, v[labels::L5.code()],
                                               VolumeDirection::FromPrevious);
        return v;
    }();
    return table[static_cast<std::size_t>(label.code())];
}

void PhantomSpec::validate() const {
    if (labels.empty()) throw std::invalid_argument("phantom needs at least one vertebra");
    if (!gaps_mm.empty() && gaps_mm.size() + 1 != labels.size()) {
        throw std::invalid_argument("phantom gaps must number one less than the labels");
    }
    for (double g : gaps_mm) {
        if (!(g > 0.0)) throw std::invalid_argument("phantom gaps must be > 0");
    }
    if (!semi_axes_mm.empty() && semi_axes_mm.size() != labels.size()) {
        throw std::invalid_argument("phantom semi-axes must be given for every vertebra");
    }
    for (const auto& s : semi_axes_mm) {
        for (double v : s) {
            if (!(v > 0.0)) throw std::invalid_argument("phantom semi-axes must be > 0");
        }
    }
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1)");
    if (!(peak > 1.0 / 24.0 && peak <= 1.0)) throw std::invalid_argument("peak must lie in (1/24, 1]");
    if (!(gap_jitter >= 0.0 && gap_jitter < 0.5)) throw std::invalid_argument("gap jitter must lie in [0, 0.5)");
    if (!(margin_mm >= 0.0)) throw std::invalid_argument("margin must be >= 0");
    if (!(bridge_radius_mm >= 0.0)) throw std::invalid_argument("bridge radius must be >= 0");
}

LocalPrediction peaked_prediction(VertebraLabel reported, double peak) {
    if (!reported.in_graph_space()) throw std::invalid_argument("reported label must be a graph label");
    std::array<double, 24> fused;
    fused.fill((1.0 - peak) / 23.0);
    fused[static_cast<std::size_t>(reported.code() - 1)] = peak;
    return LocalPrediction::from_fused(fused);
}

VertebraLabel noisy_label(VertebraLabel truth, double epsilon, PhantomRng& rng) {
    const auto merged = merge_transitional(truth);
    if (!(rng.uniform() < epsilon)) return merged;
    int step = rng.uniform() < 0.5 ? -1 : 1;
    int code = merged.code() + step;
    if (code < VertebraLabel::kMinCode || code > VertebraLabel::kGraphMax) code = merged.code() - step;
    return VertebraLabel(code);
}

SyntheticPredictions generate_predictions(const std::vector<VertebraLabel>& labels, double epsilon,
                                          std::uint64_t seed, double peak) {
    PhantomRng rng(seed);
    SyntheticPredictions out;
    for (const auto& l : labels) {
        out.reported.push_back(noisy_label(l, epsilon, rng));
        out.predictions.push_back(peaked_prediction(out.reported.back(), peak));
    }
    return out;
}

Phantom generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    PhantomRng rng(spec.seed);
    const std::size_t n = spec.labels.size();
    Phantom ph;
    ph.spec = spec;

    ph.gaps_mm = spec.gaps_mm;
    if (ph.gaps_mm.empty()) {
        for (double g : default_gaps_mm(spec.labels)) {
            ph.gaps_mm.push_back(g * (1.0 + spec.gap_jitter * (2.0 * rng.uniform() - 1.0)));
        }
    }

    ph.semi_axes_mm = spec.semi_axes_mm;
    if (ph.semi_axes_mm.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
            double gap = n == 1 ? default_gap_mm(spec.labels[0]) : std::numeric_limits<double>::infinity();
            if (i > 0) gap = std::min(gap, ph.gaps_mm[i - 1]);
            if (i + 1 < n) gap = std::min(gap, ph.gaps_mm[i]);
            const double c = 0.3 * gap;
            const double a = std::sqrt(3.0 * default_volume_mm3(spec.labels[i]) / (4.0 * std::numbers::pi * c));
            ph.semi_axes_mm.push_back({a, a, c});
        }
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (ph.semi_axes_mm[i][2] + ph.semi_axes_mm[i + 1][2] >= ph.gaps_mm[i]) {
            throw std::invalid_argument("phantom ellipsoids " + spec.labels[i].name() + " and " +
                                        spec.labels[i + 1].name() + " overlap");
        }
    }

    // Centres on the z axis, first vertebra at the top.
    std::vector<Vec3> centres(n);
    for (std::size_t i = 1; i < n; ++i) centres[i] = centres[i - 1] - Vec3{0.0, 0.0, ph.gaps_mm[i - 1]};

    double half_xy = 0.0;
    for (const auto& s : ph.semi_axes_mm) half_xy = std::max({half_xy, s[0], s[1]});
    const double top = centres.front().z + ph.semi_axes_mm.front()[2] + spec.margin_mm;
    const double bottom = centres.back().z - ph.semi_axes_mm.back()[2] - spec.margin_mm;
    const auto half = static_cast<std::size_t>(std::ceil(half_xy + spec.margin_mm));

    GridGeometry geo;
    geo.sizes = {2 * half + 1, 2 * half + 1, 0};
    geo.origin = {-static_cast<double>(half), -static_cast<double>(half), std::floor(bottom)};
    geo.sizes[2] = static_cast<std::size_t>(std::ceil(top) - std::floor(bottom)) + 1;
    geo.spacing = {1.0, 1.0, 1.0};
    geo.orientation = kLPS;
    ph.spine_mask = MaskGrid(geo, std::uint8_t{0});

    auto index_range = [&](double lo, double hi, std::size_t axis) {
        const double o = geo.origin[axis];
        auto first = static_cast<std::ptrdiff_t>(std::ceil(lo - o));
        auto last = static_cast<std::ptrdiff_t>(std::floor(hi - o));
        first = std::max<std::ptrdiff_t>(first, 0);
        last = std::min<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(geo.sizes[axis]) - 1);
        return std::pair{first, last};
    };

    for (std::size_t v = 0; v < n; ++v) {
        const auto& s = ph.semi_axes_mm[v];
        const Vec3& c = centres[v];
        std::array<std::pair<std::ptrdiff_t, std::ptrdiff_t>, 3> r;
        for (std::size_t a = 0; a < 3; ++a) r[a] = index_range(c[a] - s[a], c[a] + s[a], a);
        GridGeometry sub = geo;
        for (std::size_t a = 0; a < 3; ++a) {
            sub.sizes[a] = static_cast<std::size_t>(std::max<std::ptrdiff_t>(r[a].second - r[a].first + 1, 1));
        }
        sub.origin = geo.world({static_cast<double>(r[0].first), static_cast<double>(r[1].first),
                                static_cast<double>(r[2].first)});
        MaskGrid m(sub, std::uint8_t{0});
        for (std::size_t k = 0; k < sub.sizes[2]; ++k)
            for (std::size_t j = 0; j < sub.sizes[1]; ++j)
                for (std::size_t i = 0; i < sub.sizes[0]; ++i) {
                    const Vec3 p = sub.world(i, j, k) - c;
                    const double q = (p.x / s[0]) * (p.x / s[0]) + (p.y / s[1]) * (p.y / s[1]) +
                                     (p.z / s[2]) * (p.z / s[2]);
                    if (q <= 1.0) m.at(i, j, k) = 1;
                }
        if (foreground_count(m) == 0) {
            throw std::invalid_argument("phantom vertebra " + spec.labels[v].name() + " covers no voxel");
        }
        m = crop_to_content(m);
        paste_union(ph.spine_mask, m);
        VertebraRecord rec;
        rec.location = centroid_mm(m);
        rec.volume_mm3 = mask_volume_mm3(m);
        rec.label = spec.labels[v];
        rec.mask = std::make_shared<const MaskGrid>(std::move(m));
        ph.ground_truth.records.push_back(std::move(rec));
    }

    if (spec.bridge_radius_mm > 0.0) {
        const double r2 = spec.bridge_radius_mm * spec.bridge_radius_mm;
        for (std::size_t v = 0; v + 1 < n; ++v) {
            const auto zr = index_range(centres[v + 1].z, centres[v].z, 2);
            const auto xr = index_range(-spec.bridge_radius_mm, spec.bridge_radius_mm, 0);
            const auto yr = index_range(-spec.bridge_radius_mm, spec.bridge_radius_mm, 1);
            for (auto k = zr.first; k <= zr.second; ++k)
                for (auto j = yr.first; j <= yr.second; ++j)
                    for (auto i = xr.first; i <= xr.second; ++i) {
                        const Vec3 p = geo.world({static_cast<double>(i), static_cast<double>(j),
                                                  static_cast<double>(k)});
                        if (p.x * p.x + p.y * p.y <= r2) {
                            ph.spine_mask.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                             static_cast<std::size_t>(k)) = 1;
                        }
                    }
        }
    }

    ph.ct = Int16Grid(geo, spec.background_hu);
    {
        auto src = ph.spine_mask.data();
        auto dst = ph.ct.data();
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i]) dst[i] = spec.bone_hu;
        }
    }

    auto& gt = ph.ground_truth;
    gt.spine_mask = std::make_shared<const MaskGrid>(ph.spine_mask);
    for (std::size_t i = 0; i < n; ++i) {
        const auto l = spec.labels[i];
        if (l == labels::T13) gt.transitional_events.emplace_back(i, SpecialEdge::T13);
        if (l == labels::L6) gt.transitional_events.emplace_back(i, SpecialEdge::L6);
        if (i > 0 && spec.labels[i - 1] == labels::T11 && l == labels::L1) {
            gt.transitional_events.emplace_back(i, SpecialEdge::AbsentT12);
        }
    }

    // Classifier behaviour is fixed per vertebra at generation time.
    for (std::size_t i = 0; i < n; ++i) ph.reported.push_back(noisy_label(spec.labels[i], spec.epsilon, rng));
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        int count = 0;
        if (i > 0) sum += ph.gaps_mm[i - 1], ++count;
        if (i + 1 < n) sum += ph.gaps_mm[i], ++count;
        ph.capture_radius_mm.push_back(count ? 0.5 * sum / count : 0.5 * default_gap_mm(spec.labels[i]));
    }
    return ph;
}

std::size_t nearest_vertebra(const Phantom& phantom, const Vec3& p) {
    const auto& recs = phantom.ground_truth.records;
    std::size_t best = 0;
    for (std::size_t i = 1; i < recs.size(); ++i) {
        if (distance(recs[i].location, p) < distance(recs[best].location, p)) best = i;
    }
    return best;
}

std::optional<SegmentationResult> PhantomSegmentor::segment(const Int16Grid& ct, const Vec3& seed) {
    ++calls;
    if (!(ct.geometry() == phantom_->ct.geometry())) {
        throw GeometryMismatch("phantom segmentor called on a foreign volume");
    }
    const auto v = nearest_vertebra(*phantom_, seed);
    const auto& rec = phantom_->ground_truth.records[v];
    if (distance(rec.location, seed) > phantom_->capture_radius_mm[v]) return std::nullopt;
    if (dropped.contains(v)) return std::nullopt;
    SegmentationResult out{rec.location, *rec.mask};
    if (auto it = shifted.find(v); it != shifted.end()) out.location += it->second;
    return out;
}

std::optional<LocalPrediction> PhantomClassifier::classify(const ClassifyRequest& request) {
    if (!request.crop) throw std::invalid_argument("classifier request without a crop");
    const auto v = nearest_vertebra(*phantom_, crop_center(request.crop->geometry()));
    if (request.kind == CropKind::UnionOfMasks && blank.contains(v)) return std::nullopt;
    return peaked_prediction(phantom_->reported[v], phantom_->spec.peak);
}

std::string corruption_name(Corruption c) {
    switch (c) {
    case Corruption::DropMask: return "drop_mask";
    case Corruption::ShiftLocation: return "shift_location";
    case Corruption::BlankProbability: return "blank_probability";
    }
    return "unknown";
}

Corruption parse_corruption(std::string_view name) {
    for (auto c : {Corruption::DropMask, Corruption::ShiftLocation, Corruption::BlankProbability}) {
        if (corruption_name(c) == name) return c;
    }
    throw std::invalid_argument("unknown corruption '" + std::string(name) + "'");
}

std::size_t pick_corruption_target(std::size_t vertebra_count, std::uint64_t seed) {
    if (vertebra_count < 3) return 0;
    PhantomRng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const auto interior = vertebra_count - 2;
    return 1 + std::min(interior - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(interior)));
}

void corrupt(PhantomOracles& oracles, Corruption c, std::size_t vertebra, const Vec3& shift) {
    switch (c) {
    case Corruption::DropMask: oracles.segmentor.dropped.insert(vertebra); break;
    case Corruption::ShiftLocation: oracles.segmentor.shifted[vertebra] = shift; break;
    case Corruption::BlankProbability: oracles.classifier.blank.insert(vertebra); break;
    }
}

void corrupt(SpineState& state, Corruption c, std::size_t record, const Vec3& shift, VerticalAxis axis) {
    if (record >= state.records.size()) throw std::out_of_range("no record " + std::to_string(record));
    auto& r = state.records[record];
    switch (c) {
    case Corruption::DropMask:
        r.mask.reset();
        r.volume_mm3 = 0.0;
        break;
    case Corruption::ShiftLocation:
        r.location += shift;
        state.records = sort_records(std::move(state.records), axis);
        break;
    case Corruption::BlankProbability: r.local_probs = LocalPrediction::uniform(); break;
    }
}

}  // namespace spinecycle
