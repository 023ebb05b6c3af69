#include "spinecycle/cycle.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>
#include <tuple>

namespace spinecycle {

namespace {

struct Candidate {
    Vec3 location;
    bool mandated = false;  // required by the anatomy (gap or extreme), kept even if unsegmentable
};

std::vector<const MaskGrid*> mask_pointers(const std::vector<VertebraRecord>& records) {
    std::vector<const MaskGrid*> out;
    for (const auto& r : records) {
        if (r.mask) out.push_back(r.mask.get());
    }
    return out;
}

bool near_any(const Vec3& p, const std::vector<VertebraRecord>& records, double min_sep) {
    return std::any_of(records.begin(), records.end(),
                       [&](const VertebraRecord& r) { return distance(r.location, p) < min_sep; });
}

// Component id under a world point, 0 when outside the grid or on background.
std::int32_t component_at(const ComponentSet& cs, const Vec3& p) {
    const auto& g = cs.label_map.geometry();
    const auto idx = g.nearest_index(p);
    if (!g.inside(idx)) return 0;
    return cs.label_map.at(static_cast<std::size_t>(idx[0]), static_cast<std::size_t>(idx[1]),
                           static_cast<std::size_t>(idx[2]));
}

bool covered(const Component& c, const ComponentSet& cs, const std::vector<VertebraRecord>& records,
             double min_sep) {
    for (const auto& r : records) {
        if (component_at(cs, r.location) == c.id) return true;
        if (distance(r.location, c.centroid) < min_sep) return true;
    }
    return false;
}

// Nearest labelled record with a measured volume; decides the regressor direction.
std::optional<ResidualNeighbor> residual_neighbor(const Vec3& centroid,
                                                  const std::vector<VertebraRecord>& records,
                                                  const VerticalAxis& axis) {
    const VertebraRecord* best = nullptr;
    for (const auto& r : records) {
        if (!r.label || !(r.volume_mm3 > 0.0)) continue;
        if (!best || distance(r.location, centroid) < distance(best->location, centroid)) best = &r;
    }
    if (!best) return std::nullopt;
    const bool caudal_of_record = axis.cranial_coordinate(centroid) < axis.cranial_coordinate(best->location);
    return ResidualNeighbor{group_of(*best->label), best->volume_mm3,
                            caudal_of_record ? VolumeDirection::FromPrevious : VolumeDirection::FromNext};
}

struct ResidualAnalysis {
    MaskGrid residual;
    ComponentSet components;
};

ResidualAnalysis analyse_residual(const SpineState& state, const CycleConfig& cfg) {
    const auto masks = mask_pointers(state.records);
    ResidualAnalysis ra{residual(*state.spine_mask, masks), {}};
    ra.components = connected_components(ra.residual, cfg.connectivity);
    return ra;
}

std::string describe_gap(const std::vector<VertebraRecord>& records, const GapAssessment& a) {
    auto name = [&](std::size_t i) { return records[i].label ? records[i].label->name() : std::string("?"); };
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s-%s gap %.2f mm (expected %.2f mm%s%s%s)", name(a.upper).c_str(),
                  name(a.upper + 1).c_str(), a.gap_mm, a.expected_mm,
                  a.gaussian_anomalous ? ", outside Gaussian band" : "",
                  a.mre_anomalous ? ", relative error above band" : "",
                  a.fallback_anomalous ? ", above fixed threshold" : "");
    return buf;
}

std::string format_mm(const Vec3& p) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "(%.1f, %.1f, %.1f)", p.x, p.y, p.z);
    return buf;
}

void classify_records(std::vector<VertebraRecord>& records, const MaskGrid& spine, const MaskGrid& unions,
                      ClassifierOracle& classifier, const CycleConfig& cfg) {
    auto classify_one = [&](std::size_t i) {
        auto& r = records[i];
        std::optional<LocalPrediction> spine_pred;
        std::optional<LocalPrediction> union_pred;
        const auto spine_crop = extract_crop(spine, r.location, cfg.crop_side_voxels);
        if (foreground_count(spine_crop) > 0) {
            spine_pred = classifier.classify({i, CropKind::SpineMask, &spine_crop});
        }
        if (r.mask && foreground_count(*r.mask) > 0) {
            const auto union_crop = extract_crop(unions, r.location, cfg.crop_side_voxels);
            union_pred = classifier.classify({i, CropKind::UnionOfMasks, &union_crop});
        }
        r.local_probs = (spine_pred || union_pred) ? fuse_predictions(spine_pred, union_pred)
                                                   : LocalPrediction::uniform();
    };

    const auto workers = static_cast<std::size_t>(std::max(1, cfg.threads));
    if (workers == 1 || !classifier.thread_safe() || records.size() < 2) {
        for (std::size_t i = 0; i < records.size(); ++i) classify_one(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(records.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, records.size()); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < records.size(); i = next++) {
                try {
                    classify_one(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void label_records(SpineState& state, const GraphWeights& weights) {
    auto& records = state.records;
    state.transitional_events.clear();
    if (records.empty()) return;
    std::vector<LocalPrediction> preds;
    preds.reserve(records.size());
    for (const auto& r : records) preds.push_back(r.local_probs ? *r.local_probs : LocalPrediction::uniform());
    const auto result = identify(preds, weights);
    for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].label = result.labels[i];
        records[i].flags.erase(RecordFlag::LabelRepeat);
        records[i].flags.insert(result.flags[i].begin(), result.flags[i].end());
    }
    state.transitional_events = result.events;
}

}  // namespace

std::string crop_kind_name(CropKind k) {
    return k == CropKind::SpineMask ? "spine" : "union";
}

CropKind parse_crop_kind(const std::string& name) {
    if (name == "spine") return CropKind::SpineMask;
    if (name == "union") return CropKind::UnionOfMasks;
    throw std::invalid_argument("unknown crop kind '" + name + "'");
}

void CycleConfig::validate() const {
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    if (!(min_separation_mm >= 0.0)) throw std::invalid_argument("min_separation_mm must be >= 0");
    if (crop_side_voxels == 0) throw std::invalid_argument("crop side must be positive");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

MaskGrid union_of_masks(const SpineState& state) {
    if (!state.spine_mask) throw std::invalid_argument("state has no spine mask");
    MaskGrid out(state.spine_mask->geometry(), std::uint8_t{0});
    for (const auto& r : state.records) {
        if (r.mask) paste_union(out, *r.mask);
    }
    return out;
}

ConsistencyResult check_consistency(const SpineState& state, const AnatomyStats& stats,
                                    const CycleConfig& cfg) {
    if (!state.spine_mask) throw std::invalid_argument("state has no spine mask");
    ConsistencyResult result;
    auto& entries = result.report.entries;
    const auto& records = state.records;
    const double half = cfg.min_separation_mm / 2.0;
    const auto ra = analyse_residual(state, cfg);

    // C1: runs of touching anomalous gaps.
    const auto gaps = assess_gaps(stats, records);
    for (std::size_t t = 0; t < gaps.size();) {
        if (!gaps[t].anomalous()) {
            ++t;
            continue;
        }
        std::size_t end = t;
        while (end + 1 < gaps.size() && gaps[end + 1].anomalous()) ++end;
        Box3 region;
        std::string detail;
        for (std::size_t k = t; k <= end; ++k) {
            region.expand(records[gaps[k].upper].location);
            region.expand(records[gaps[k].upper + 1].location);
            if (!detail.empty()) detail += "; ";
            detail += describe_gap(records, gaps[k]);
        }
        entries.push_back({region, ReportKind::DistanceAnomaly, detail});
        t = end + 1;
    }

    // C2: residual components large enough to be a vertebra and not explained by a segmented record.
    // A record kept without a mask does not explain the voxels around it.
    std::vector<char> reported(records.size(), 0);
    for (const auto& c : ra.components.components) {
        std::vector<std::size_t> unsegmented;
        bool explained = false;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            const bool on = component_at(ra.components, r.location) == c.id ||
                            distance(r.location, c.centroid) < cfg.min_separation_mm;
            if (!on) continue;
            if (r.mask && !r.flags.contains(RecordFlag::EmptySegmentation)) {
                explained = true;
            } else {
                unsegmented.push_back(i);
            }
        }
        if (explained) continue;
        const double volume = static_cast<double>(c.voxel_count) * ra.residual.geometry().voxel_volume();
        const auto decision =
            accept_residual(stats, c.centroid, volume, residual_neighbor(c.centroid, records, cfg.vertical));
        if (!decision.is_vertebra) continue;
        char buf[160];
        std::snprintf(buf, sizeof buf, "residual of %.0f mm^3 (threshold %.0f mm^3) at %s%s", volume,
                      decision.threshold_mm3, format_mm(c.centroid).c_str(),
                      unsegmented.empty() ? "" : ", under an unsegmented record");
        entries.push_back({c.bounds, ReportKind::VolumeAnomaly, buf});
        for (auto i : unsegmented) reported[i] = 1;
    }

    // Unsegmented records whose surroundings are not already reported as residual.
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (reported[i] || (r.mask && !r.flags.contains(RecordFlag::EmptySegmentation))) continue;
        entries.push_back({Box3::around(r.location, half), ReportKind::EmptySegmentation,
                           "no segmentation at " + format_mm(r.location) +
                               (r.label ? " (" + r.label->name() + ")" : std::string())});
    }

    // C3: transitional post-processing flags.
    for (const auto& r : records) {
        if (!r.flags.contains(RecordFlag::LabelRepeat)) continue;
        entries.push_back({Box3::around(r.location, half), ReportKind::LabelRepeat,
                           "inconsistent label sequence at " +
                               (r.label ? r.label->name() : std::string("?")) + " " + format_mm(r.location)});
    }

    // C4: spine extremes.
    for (const auto& c : extreme_candidates(records, state.spine_mask->geometry().world_bounds())) {
        if (near_any(c, records, cfg.min_separation_mm)) continue;
        entries.push_back({Box3::around(c, half), ReportKind::MissingExtreme,
                           "spine extreme incomplete, expected vertebra near " + format_mm(c)});
    }

    result.pass = entries.empty();
    return result;
}

std::uint64_t state_fingerprint(const SpineState& state) {
    std::vector<std::array<std::int64_t, 5>> keys;
    keys.reserve(state.records.size());
    for (const auto& r : state.records) {
        keys.push_back({static_cast<std::int64_t>(std::llround(r.location.x * 10.0)),
                        static_cast<std::int64_t>(std::llround(r.location.y * 10.0)),
                        static_cast<std::int64_t>(std::llround(r.location.z * 10.0)),
                        r.mask ? static_cast<std::int64_t>(foreground_count(*r.mask)) : 0,
                        r.label ? r.label->code() : 0});
    }
    std::sort(keys.begin(), keys.end());
    // FNV-1a over the canonical little-endian bytes.
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& k : keys) {
        for (auto v : k) {
            auto u = static_cast<std::uint64_t>(v);
            for (int b = 0; b < 8; ++b) {
                h ^= (u >> (8 * b)) & 0xffU;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

SpineState run_cycle(const Int16Grid& ct, const MaskGrid& spine_mask, SegmentorOracle& segmentor,
                     ClassifierOracle& classifier, const AnatomyStats& stats, const CycleConfig& cfg,
                     const std::optional<SpineState>& initial, CycleTrace* trace) {
    cfg.validate();
    if (ct.geometry().sizes != spine_mask.geometry().sizes ||
        lattice_offset(ct.geometry(), spine_mask.geometry()) != Index3{0, 0, 0}) {
        throw GeometryMismatch("spine mask and CT do not share geometry");
    }
    if (foreground_count(spine_mask) == 0) throw std::invalid_argument("spine mask is empty");

    SpineState state;
    if (initial) state = *initial;
    state.spine_mask = std::make_shared<const MaskGrid>(spine_mask);
    state.iteration = 0;
    state.records = sort_records(std::move(state.records), cfg.vertical);
    for (const auto& r : state.records) {
        if (r.mask && !lattice_offset(spine_mask.geometry(), r.mask->geometry())) {
            throw GeometryMismatch("initial record mask is not aligned with the spine mask");
        }
    }

    const Box3 fov = spine_mask.geometry().world_bounds();
    const double voxel_volume = spine_mask.geometry().voxel_volume();
    std::optional<std::uint64_t> previous_fp;
    if (initial) previous_fp = state_fingerprint(state);
    CycleTrace local_trace;
    CycleTrace& tr = trace ? *trace : local_trace;

    for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
        state.iteration = iter;

        // (1) residual components
        std::vector<Candidate> candidates;
        {
            const auto ra = analyse_residual(state, cfg);
            tr.residual_voxels.push_back(foreground_count(ra.residual));
            for (const auto& c : ra.components.components) {
                if (covered(c, ra.components, state.records, cfg.min_separation_mm)) continue;
                const double volume = static_cast<double>(c.voxel_count) * voxel_volume;
                const auto d = accept_residual(stats, c.centroid, volume,
                                               residual_neighbor(c.centroid, state.records, cfg.vertical));
                if (d.is_vertebra) candidates.push_back({d.location, false});
            }
        }
        // (2) gaps and extremes from the current identification
        for (const auto& p : gap_candidates(stats, state.records)) candidates.push_back({p, true});
        for (const auto& p : extreme_candidates(state.records, fov)) candidates.push_back({p, true});

        // (3) deduplicate
        std::vector<Candidate> unique;
        for (const auto& c : candidates) {
            if (near_any(c.location, state.records, cfg.min_separation_mm)) continue;
            auto dup = std::find_if(unique.begin(), unique.end(), [&](const Candidate& u) {
                return distance(u.location, c.location) < cfg.min_separation_mm;
            });
            if (dup != unique.end()) {
                dup->mandated = dup->mandated || c.mandated;
            } else {
                unique.push_back(c);
            }
        }
        spdlog::debug("iteration {}: {} candidates ({} unique)", iter, candidates.size(), unique.size());

        // (4) segment new candidates
        for (const auto& c : unique) {
            auto seg = segmentor.segment(ct, c.location);
            if (seg && foreground_count(seg->mask) > 0) {
                if (!lattice_offset(spine_mask.geometry(), seg->mask.geometry())) {
                    throw OracleProtocolError("segmentor returned a mask off the working lattice");
                }
                if (near_any(seg->location, state.records, cfg.min_separation_mm)) continue;
                VertebraRecord r;
                r.location = seg->location;
                auto compact = crop_to_content(seg->mask);
                r.volume_mm3 = mask_volume_mm3(compact);
                r.mask = std::make_shared<const MaskGrid>(std::move(compact));
                state.records.push_back(std::move(r));
            } else if (c.mandated) {
                VertebraRecord r;
                r.location = c.location;
                r.flags.insert(RecordFlag::EmptySegmentation);
                state.records.push_back(std::move(r));
            }
        }
        state.records = sort_records(std::move(state.records), cfg.vertical);

        // (5) classify every record, (6) global identification
        const auto unions = union_of_masks(state);
        classify_records(state.records, spine_mask, unions, classifier, cfg);
        label_records(state, cfg.weights);

        // (7) criteria
        auto check = check_consistency(state, stats, cfg);
        state.report = std::move(check.report);
        const auto fp = state_fingerprint(state);
        tr.fingerprints.push_back(fp);
        spdlog::debug("iteration {}: {} records, {} report entries", iter, state.records.size(),
                      state.report.entries.size());
        if (check.pass) {
            tr.converged = true;
            break;
        }
        if (previous_fp && *previous_fp == fp) {
            tr.fixed_point = true;
            break;
        }
        previous_fp = fp;
    }

    // Mirror distance failures onto the records bounding the anomalous gaps.
    for (auto& r : state.records) r.flags.erase(RecordFlag::DistanceAnomaly);
    for (const auto& a : assess_gaps(stats, state.records)) {
        if (!a.anomalous()) continue;
        state.records[a.upper].flags.insert(RecordFlag::DistanceAnomaly);
        state.records[a.upper + 1].flags.insert(RecordFlag::DistanceAnomaly);
    }
    return state;
}

}  // namespace spinecycle
