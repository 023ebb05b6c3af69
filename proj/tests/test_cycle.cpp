#include <doctest.h>

#include <algorithm>

#include "spinecycle/cli.hpp"
#include "spinecycle/phantom.hpp"
#include "support.hpp"

using namespace spinecycle;
using namespace spinecycle::labels;

namespace {

const AnatomyStats kStats = default_anatomy_stats();

PhantomSpec spec_of(const std::string& labels, std::uint64_t seed = 1) {
    PhantomSpec s;
    s.labels = parse_label_list(labels);
    s.seed = seed;
    return s;
}

std::vector<VertebraLabel> labels_of(const SpineState& s) {
    std::vector<VertebraLabel> out;
    for (const auto& r : s.records) {
        REQUIRE(r.label);
        out.push_back(*r.label);
    }
    return out;
}

bool inside(const Box3& box, const Vec3& p) {
    for (int a = 0; a < 3; ++a)
        if (p[a] < box.min[a] - 1e-9 || p[a] > box.max[a] + 1e-9) return false;
    return true;
}

struct Scene {
    Phantom ph;
    std::unique_ptr<PhantomOracles> oracles;
    explicit Scene(const PhantomSpec& spec) : ph(generate_phantom(spec)), oracles(std::make_unique<PhantomOracles>(ph)) {}
    SpineState run(const CycleConfig& cfg = {}, CycleTrace* trace = nullptr,
                   const std::optional<SpineState>& initial = std::nullopt) {
        return run_cycle(ph.ct, ph.spine_mask, oracles->segmentor, oracles->classifier, kStats, cfg, initial, trace);
    }
};

}  // namespace

TEST_CASE("check_consistency on ground truth and mutated states") {
    const auto ph = generate_phantom(spec_of("L1-L5"));
    auto gt = ph.ground_truth;
    REQUIRE(gt.spine_mask);

    const auto clean = check_consistency(gt, kStats, CycleConfig{});
    CHECK(clean.pass);
    CHECK(clean.report.empty());

    SUBCASE("deleted mask") {
        auto s = gt;
        const auto bbox = mask_bounds(*s.records[2].mask);
        s.records[2].mask.reset();
        s.records[2].volume_mm3 = 0;
        const auto r = check_consistency(s, kStats, CycleConfig{});
        CHECK_FALSE(r.pass);
        REQUIRE(r.report.entries.size() == 1);
        CHECK(r.report.entries[0].kind == ReportKind::VolumeAnomaly);
        const auto& reg = r.report.entries[0].region;
        for (int a = 0; a < 3; ++a) {
            CHECK(reg.min[a] == doctest::Approx(bbox.min[a]));
            CHECK(reg.max[a] == doctest::Approx(bbox.max[a]));
        }
    }
    SUBCASE("displaced location") {
        auto s = gt;
        corrupt(s, Corruption::ShiftLocation, 2);
        const auto r = check_consistency(s, kStats, CycleConfig{});
        CHECK_FALSE(r.pass);
        REQUIRE(r.report.entries.size() == 1);
        CHECK(r.report.entries[0].kind == ReportKind::DistanceAnomaly);
        // the merged region spans both gaps adjacent to the moved vertebra
        const auto& reg = r.report.entries[0].region;
        CHECK(inside(reg, gt.records[1].location));
        CHECK(inside(reg, gt.records[3].location));
        CHECK_FALSE(inside(reg, gt.records[0].location));
        CHECK_FALSE(inside(reg, gt.records[4].location));
    }
    SUBCASE("repeated label") {
        auto s = gt;
        s.records[3].flags.insert(RecordFlag::LabelRepeat);
        const auto r = check_consistency(s, kStats, CycleConfig{});
        CHECK_FALSE(r.pass);
        REQUIRE(r.report.entries.size() == 1);
        CHECK(r.report.entries[0].kind == ReportKind::LabelRepeat);
    }
    SUBCASE("missing cranial extreme inside the field of view") {
        auto s = gt;
        s.records.erase(s.records.begin());
        // L1 would sit inside the phantom's field of view: extremes incomplete
        const auto r = check_consistency(s, kStats, CycleConfig{});
        CHECK_FALSE(r.pass);
        CHECK(std::any_of(r.report.entries.begin(), r.report.entries.end(), [](const ReportEntry& e) {
            return e.kind == ReportKind::MissingExtreme || e.kind == ReportKind::VolumeAnomaly;
        }));
    }
}

TEST_CASE("state_fingerprint") {
    const auto ph = generate_phantom(spec_of("L1-L3"));
    const auto a = ph.ground_truth;
    auto b = a;
    CHECK(state_fingerprint(a) == state_fingerprint(b));
    b.records[1].location.x += 0.03;
    CHECK(state_fingerprint(a) == state_fingerprint(b));
    b.records[1].label = L5;
    CHECK(state_fingerprint(a) != state_fingerprint(b));
    auto c = a;
    std::reverse(c.records.begin(), c.records.end());
    CHECK(state_fingerprint(a) == state_fingerprint(c));
    auto d = a;
    d.records[0].location.z += 1.0;
    CHECK(state_fingerprint(a) != state_fingerprint(d));
}

TEST_CASE("run_cycle on a clean phantom") {
    Scene sc(spec_of("L1-L5"));
    CycleTrace trace;
    const auto s = sc.run({}, &trace);
    CHECK(trace.converged);
    CHECK(s.iteration <= 2);
    CHECK(s.report.empty());
    CHECK(labels_of(s) == parse_label_list("L1-L5"));
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(distance(s.records[i].location, sc.ph.ground_truth.records[i].location) < 1e-9);
        CHECK(s.records[i].volume_mm3 == doctest::Approx(sc.ph.ground_truth.records[i].volume_mm3));
    }
    CHECK(union_of_masks(s) == sc.ph.spine_mask);
}

TEST_CASE("run_cycle keeps mandated locations the segmentor cannot handle") {
    Scene sc(spec_of("T3-T9"));
    corrupt(*sc.oracles, Corruption::DropMask, 3);
    const auto s = sc.run();
    REQUIRE(s.records.size() == 7);
    CHECK(labels_of(s) == parse_label_list("T3-T9"));
    CHECK(s.records[3].flags.contains(RecordFlag::EmptySegmentation));
    CHECK_FALSE(s.records[3].mask);
    CHECK(distance(s.records[3].location, sc.ph.ground_truth.records[3].location) < 5.0);
    REQUIRE(s.report.entries.size() == 1);
    CHECK(s.report.entries[0].kind == ReportKind::VolumeAnomaly);
    CHECK(inside(s.report.entries[0].region, sc.ph.ground_truth.records[3].location));
}

TEST_CASE("run_cycle errors and limits") {
    Scene sc(spec_of("L1-L5"));
    MaskGrid empty(sc.ph.spine_mask.geometry());
    CHECK_THROWS(run_cycle(sc.ph.ct, empty, sc.oracles->segmentor, sc.oracles->classifier, kStats, CycleConfig{}));

    CycleConfig one;
    one.max_iterations = 1;
    CycleTrace trace;
    const auto s = sc.run(one, &trace);
    CHECK(s.iteration == 1);
    CHECK(trace.fingerprints.size() == 1);

    CycleConfig bad;
    bad.max_iterations = 0;
    CHECK_THROWS(sc.run(bad));
}

TEST_CASE("run_cycle is deterministic") {
    for (const char* labels : {"L1-L5", "T8-L2"}) {
        Scene a(spec_of(labels, 9)), b(spec_of(labels, 9));
        corrupt(*a.oracles, Corruption::ShiftLocation, 2);
        corrupt(*b.oracles, Corruption::ShiftLocation, 2);
        CycleTrace ta, tb;
        const auto sa = a.run({}, &ta);
        CycleConfig threaded;
        threaded.threads = 4;
        const auto sb = b.run(threaded, &tb);
        CHECK(ta.fingerprints == tb.fingerprints);
        CHECK(ta.residual_voxels == tb.residual_voxels);
        CHECK(state_fingerprint(sa) == state_fingerprint(sb));
        REQUIRE(sa.records.size() == sb.records.size());
        for (std::size_t i = 0; i < sa.records.size(); ++i) {
            CHECK(sa.records[i].location == sb.records[i].location);
            CHECK(sa.records[i].local_probs == sb.records[i].local_probs);
            CHECK(sa.records[i].flags == sb.records[i].flags);
        }
        CHECK(sa.report.entries.size() == sb.report.entries.size());
    }
}

TEST_CASE("idempotence at the fixed point") {
    Scene sc(spec_of("T10-L3"));
    const auto first = sc.run();
    CycleTrace trace;
    const auto again = sc.run({}, &trace, first);
    CHECK(trace.fingerprints.size() == 1);
    CHECK(state_fingerprint(again) == state_fingerprint(first));
}

TEST_CASE("residual coverage never grows") {
    for (double bridge : {0.0, 3.0}) {
        auto spec = spec_of("T1-T12", 4);
        spec.bridge_radius_mm = bridge;
        Scene sc(spec);
        CycleTrace trace;
        const auto s = sc.run({}, &trace);
        REQUIRE_FALSE(trace.residual_voxels.empty());
        for (std::size_t i = 1; i < trace.residual_voxels.size(); ++i)
            CHECK(trace.residual_voxels[i] <= trace.residual_voxels[i - 1]);
        CHECK(s.records.size() == 12);
    }
}

TEST_CASE("clean windows along the spine converge with ground-truth labels") {
    for (const char* window : {"C1-C7", "C5-T4", "T3-T10", "T9-L3", "L1-L5", "T11,T12,T13,L1,L2", "L2-L5,L6"}) {
        CAPTURE(window);
        Scene sc(spec_of(window, 11));
        CycleTrace trace;
        const auto s = sc.run({}, &trace);
        CHECK(trace.converged);
        CHECK(labels_of(s) == parse_label_list(window));
    }
}
