#include <doctest.h>

#include <fstream>

#include "spinecycle/adapters.hpp"
#include "spinecycle/cli.hpp"
#include "spinecycle/fileio.hpp"
#include "spinecycle/nrrd.hpp"
#include "spinecycle/sidecar.hpp"
#include "support.hpp"

using namespace spinecycle;
using namespace spinecycle::labels;
using testing::geom;
using testing::TempDir;

namespace {

const VertebraLabel L2{21}, L3{22};

std::string field_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const NrrdError& e) {
        return e.field();
    }
    return "<no error>";
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "<no error>";
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string header(const std::string& extra = "", const std::string& dimension = "3", const std::string& sizes = "2 2 2") {
    return "NRRD0004\ntype: uint8\ndimension: " + dimension + "\nspace: left-posterior-superior\nsizes: " + sizes +
           "\nspace directions: (1,0,0) (0,1,0) (0,0,1)\nencoding: raw\n" + extra + "\n";
}

template <typename T>
Grid<T> ramp(GridGeometry g) {
    Grid<T> out(std::move(g));
    T v{};
    for (auto& x : out.storage()) {
        x = v;
        v = static_cast<T>(v + static_cast<T>(3));
    }
    return out;
}

nlohmann::json probs_doc(double g0) {
    nlohmann::json rec;
    rec["group"] = {g0, 0.2, 0.3};
    rec["within"]["cervical"] = std::vector<double>(7, 1.0 / 7);
    rec["within"]["thoracic"] = std::vector<double>(12, 1.0 / 12);
    rec["within"]["lumbar"] = std::vector<double>(5, 0.2);
    return {{"schema_version", 1}, {"kind", "probabilities"}, {"records", {rec}}};
}

}  // namespace

TEST_CASE("NRRD round-trips") {
    TempDir dir;
    auto g = geom(7, 5, 3, 1.0, {-12.5, 4.0, 100.25});
    g.spacing = {0.8, 1.25, 2.5};
    for (auto enc : {NrrdEncoding::Raw, NrrdEncoding::Gzip}) {
        const auto u8 = ramp<std::uint8_t>(g);
        const auto i16 = ramp<std::int16_t>(g);
        auto f32 = ramp<float>(g);
        f32.storage()[4] = -1.5e-7f;
        write_nrrd(u8, dir / "a.nrrd", enc);
        write_nrrd(i16, dir / "b.nrrd", enc);
        write_nrrd(f32, dir / "c.nrrd", enc);
        CHECK(read_nrrd_as<std::uint8_t>(dir / "a.nrrd") == u8);
        CHECK(read_nrrd_as<std::int16_t>(dir / "b.nrrd") == i16);
        CHECK(read_nrrd_as<float>(dir / "c.nrrd") == f32);
        CHECK(std::holds_alternative<Int16Grid>(read_nrrd(dir / "b.nrrd")));
        CHECK_THROWS_AS(read_nrrd_as<float>(dir / "b.nrrd"), NrrdError);
    }
    // flipped axes survive the round trip
    auto flipped = geom(3, 3, 3, 1.0, {5, 5, 5});
    flipped.orientation = {AxisCode::R, AxisCode::P, AxisCode::I};
    const auto m = ramp<std::uint8_t>(flipped);
    write_nrrd(m, dir / "f.nrrd");
    CHECK(read_nrrd_as<std::uint8_t>(dir / "f.nrrd") == m);

    const auto mask = read_mask_nrrd(dir / "b.nrrd");
    CHECK(mask.data()[0] == 0);
    CHECK(mask.data()[1] == 1);
}

TEST_CASE("NRRD reader rejections name the field") {
    TempDir dir;
    const std::string data(8, '\1');
    write_text(dir / "ok.nrrd", header() + data);
    CHECK(foreground_count(read_mask_nrrd(dir / "ok.nrrd")) == 8);

    write_text(dir / "d4.nrrd", header("", "4", "2 2 2 1") + data);
    CHECK(field_of([&] { read_nrrd(dir / "d4.nrrd"); }) == "dimension");

    write_text(dir / "f.nrrd", header("line skip: 2\n") + data);
    CHECK(field_of([&] { read_nrrd(dir / "f.nrrd"); }) == "line skip");

    write_text(dir / "e.nrrd", header("endian: big\n") + data);
    CHECK(field_of([&] { read_nrrd(dir / "e.nrrd"); }) == "endian");

    std::string oblique = header();
    oblique.replace(oblique.find("(1,0,0)"), 7, "(1,0.5,0)");
    write_text(dir / "o.nrrd", oblique + data);
    CHECK(field_of([&] { read_nrrd(dir / "o.nrrd"); }) == "space directions");

    write_text(dir / "short.nrrd", header() + "\1\1");
    CHECK(field_of([&] { read_nrrd(dir / "short.nrrd"); }) == "sizes");

    write_text(dir / "bad.nrrd", "P6\n");
    CHECK(field_of([&] { read_nrrd(dir / "bad.nrrd"); }) == "magic");

    std::string ras = header("space origin: (10,20,30)\n");
    ras.replace(ras.find("left-posterior-superior"), 23, "right-anterior-superior");
    write_text(dir / "ras.nrrd", ras + data);
    const auto r = read_mask_nrrd(dir / "ras.nrrd");
    CHECK(r.geometry().origin == Vec3{-10, -20, 30});
    CHECK(r.geometry().orientation[0] == AxisCode::R);
}

TEST_CASE("atomic file helpers") {
    TempDir dir;
    write_file_atomic(dir / "sub" / "x.txt", "hello");
    CHECK(read_file(dir / "sub" / "x.txt") == "hello");
    CHECK(message_of([&] { read_file(dir / "none"); }).find("none") != std::string::npos);
}

TEST_CASE("anatomy statistics files") {
    TempDir dir;
    const auto d = default_anatomy_stats();
    write_stats(d, dir / "s.json");
    CHECK(read_stats(dir / "s.json") == d);
    CHECK(read_stats(std::filesystem::path(SPINECYCLE_SOURCE_DIR) / "data" / "anatomy_stats_default.json") == d);

    auto j = stats_to_json(d);
    j["groups"]["thoracic"]["extra"] = 1;
    const auto msg = message_of([&] { stats_from_json(j, "s.json"); });
    CHECK(msg.find("extra") != std::string::npos);
    CHECK(msg.find("schema version 1") != std::string::npos);

    auto v = stats_to_json(d);
    v["schema_version"] = 2;
    CHECK_THROWS_AS(stats_from_json(v, "s.json"), SchemaError);
    auto k = stats_to_json(d);
    k["kind"] = "labels";
    CHECK_THROWS_AS(stats_from_json(k, "s.json"), SchemaError);
    CHECK_THROWS_AS(parse_json("{\"a\": ", "broken.json"), SchemaError);
}

TEST_CASE("probability files") {
    TempDir dir;
    std::vector<ProbabilityRecord> recs{{Vec3{1, 2, 3}, LocalPrediction::uniform()}, {std::nullopt, LocalPrediction::uniform()}};
    write_probabilities(recs, dir / "p.json");
    const auto back = read_probabilities(dir / "p.json");
    REQUIRE(back.size() == 2);
    CHECK(back[0].location == Vec3{1, 2, 3});
    CHECK_FALSE(back[1].location);
    CHECK(back[1].prediction.fused()[3] == doctest::Approx(1.0 / 24));

    write_json(probs_doc(0.5), dir / "ok.json");
    CHECK(read_probabilities(dir / "ok.json").size() == 1);
    write_json(probs_doc(0.7), dir / "sum.json");  // group sum 1.2
    CHECK_THROWS(read_probabilities(dir / "sum.json"));
    auto extra = probs_doc(0.5);
    extra["records"][0]["bogus"] = true;
    write_json(extra, dir / "extra.json");
    CHECK(message_of([&] { read_probabilities(dir / "extra.json"); }).find("bogus") != std::string::npos);
}

TEST_CASE("labels, report, annotations, config and phantom documents") {
    TempDir dir;
    LabelFile lf{{T11, T12, T13, L1}, {{}, {}, {}, {RecordFlag::LabelRepeat}}, {{2, SpecialEdge::T13}}, 1.25};
    write_labels(lf, dir / "l.json");
    const auto lb = read_labels(dir / "l.json");
    CHECK(lb.labels == lf.labels);
    CHECK(lb.flags == lf.flags);
    CHECK(lb.events == lf.events);
    CHECK(lb.total_cost == 1.25);

    ReportFile rf;
    rf.pass = false;
    rf.iterations = 3;
    rf.report.entries.push_back({Box3{{0, 1, 2}, {3, 4, 5}}, ReportKind::DistanceAnomaly, "L2-L3 gap"});
    write_report(rf, dir / "r.json");
    const auto rb = read_report(dir / "r.json");
    CHECK_FALSE(rb.pass);
    CHECK(rb.iterations == 3);
    REQUIRE(rb.report.entries.size() == 1);
    CHECK(rb.report.entries[0].region == rf.report.entries[0].region);
    CHECK(rb.report.entries[0].kind == ReportKind::DistanceAnomaly);
    CHECK(rb.report.entries[0].detail == "L2-L3 gap");

    ScanAnnotation a;
    a.scan_id = "s1";
    a.labels = {L1, L2};
    a.volumes_mm3 = {20000, 21000};
    a.centroids_mm = {{0, 0, 0}, {0, 0, -32}};
    write_annotations({a}, dir / "a.json");
    const auto ab = read_annotations(dir / "a.json");
    REQUIRE(ab.size() == 1);
    CHECK(ab[0].labels == a.labels);
    CHECK(ab[0].volumes_mm3 == a.volumes_mm3);
    CHECK(ab[0].centroids_mm == a.centroids_mm);

    write_json({{"schema_version", 1}, {"kind", "config"}, {"cycle", {{"max_iterations", 4}, {"weights", {{"t13", 0.7}}}}}, {"seed", 5}},
               dir / "c.json");
    const auto tc = read_tool_config(dir / "c.json");
    CHECK(tc.cycle.max_iterations == 4);
    CHECK(tc.cycle.weights.t13 == 0.7);
    CHECK(tc.cycle.weights.l6 == 0.5);
    CHECK(tc.seed == 5);
    write_json({{"schema_version", 1}, {"kind", "config"}, {"cycle", {{"connectivity", 8}}}}, dir / "bad.json");
    CHECK_THROWS(read_tool_config(dir / "bad.json"));

    PhantomDescription pd;
    pd.spec.labels = {L1, L2, L3};
    pd.spec.seed = 17;
    pd.spec.epsilon = 0.1;
    pd.corruptions = {{Corruption::ShiftLocation, 1, {0, 0, 12}}};
    write_phantom_description(pd, dir / "ph.json");
    const auto pb = read_phantom_description(dir / "ph.json");
    CHECK(pb.spec.labels == pd.spec.labels);
    CHECK(pb.spec.seed == 17);
    CHECK(pb.spec.epsilon == 0.1);
    REQUIRE(pb.corruptions.size() == 1);
    CHECK(pb.corruptions[0].shift == Vec3{0, 0, 12});
}

TEST_CASE("vertebrae files carry masks") {
    TempDir dir;
    PhantomSpec spec;
    spec.labels = parse_label_list("L1-L3");
    const auto ph = generate_phantom(spec);
    auto s = ph.ground_truth;
    s.records[1].flags.insert(RecordFlag::DistanceAnomaly);
    s.records[2].mask.reset();
    s.transitional_events = {{2, SpecialEdge::L6}};
    write_vertebrae(s, dir / "v.json");
    const auto b = read_vertebrae(dir / "v.json");
    REQUIRE(b.records.size() == 3);
    CHECK(*b.records[0].mask == *s.records[0].mask);
    CHECK_FALSE(b.records[2].mask);
    CHECK(b.records[1].flags == s.records[1].flags);
    CHECK(b.records[1].location == s.records[1].location);
    CHECK(b.records[1].label == L2);
    CHECK(b.transitional_events == s.transitional_events);
    CHECK(state_fingerprint(read_vertebrae(dir / "v.json", false)) != 0);
    CHECK(std::filesystem::exists(dir / "v_masks"));

    const auto as = read_annotations(dir / "v.json");
    REQUIRE(as.size() == 1);
    CHECK(as[0].labels.size() == 3);
}

TEST_CASE("manifest paths resolve against the manifest directory") {
    TempDir dir;
    std::filesystem::create_directories(dir / "data");
    write_nrrd(MaskGrid(geom(2, 2, 2)), dir / "data" / "ct.nrrd");
    write_nrrd(MaskGrid(geom(2, 2, 2)), dir / "data" / "spine.nrrd");
    write_json({{"schema_version", 1}, {"kind", "phantom"}, {"labels", {"L1", "L2"}}}, dir / "data" / "ph.json");
    write_json({{"schema_version", 1},
                {"kind", "manifest"},
                {"ct", "data/ct.nrrd"},
                {"spine_mask", "data/spine.nrrd"},
                {"oracle", {{"type", "phantom"}, {"description", "data/ph.json"}}},
                {"cycle", {{"max_iterations", 3}}}},
               dir / "m.json");
    const auto m = read_manifest(dir / "m.json");
    CHECK(m.ct == dir / "data" / "ct.nrrd");
    CHECK(m.oracle.path == dir / "data" / "ph.json");
    CHECK(m.cycle_config().max_iterations == 3);
    CycleConfig base;
    base.threads = 3;
    CHECK(m.cycle_config(base).threads == 3);

    write_manifest(m, dir / "copy.json");
    CHECK(read_manifest(dir / "copy.json").spine_mask == m.spine_mask);

    write_json({{"schema_version", 1}, {"kind", "manifest"}, {"ct", "nope.nrrd"}, {"spine_mask", "data/spine.nrrd"},
                {"oracle", {{"type", "phantom"}, {"description", "data/ph.json"}}}},
               dir / "missing.json");
    CHECK(message_of([&] { read_manifest(dir / "missing.json"); }).find("nope.nrrd") != std::string::npos);
    write_json({{"schema_version", 1}, {"kind", "manifest"}, {"ct", "data/ct.nrrd"}, {"spine_mask", "data/spine.nrrd"},
                {"oracle", {{"type", "phantom"}, {"description", "data/ph.json"}}}, {"colour", "red"}},
               dir / "unknown.json");
    const auto msg = message_of([&] { read_manifest(dir / "unknown.json"); });
    CHECK(msg.find("colour") != std::string::npos);
    CHECK(msg.find("schema version 1") != std::string::npos);
}

TEST_CASE("directory oracle") {
    TempDir dir;
    PhantomSpec spec;
    spec.labels = parse_label_list("L1-L3");
    const auto ph = generate_phantom(spec);
    const auto& gt = ph.ground_truth.records;
    write_nrrd(*gt[0].mask, dir / "m0.nrrd");
    OracleIndex idx;
    idx.segmentations = {{gt[0].location, dir.path / "m0.nrrd", gt[0].location},
                         {gt[1].location, std::nullopt, gt[1].location}};
    idx.classifications = {{gt[0].location, CropKind::SpineMask, peaked_prediction(L1, 0.8)},
                           {gt[0].location, CropKind::UnionOfMasks, std::nullopt}};
    write_oracle_index(idx, dir.path);

    DirectoryOracle o(dir.path, 2.0);
    auto s = o.segment(ph.ct, gt[0].location + Vec3{0, 0, 1.5});
    REQUIRE(s);
    CHECK(s->mask == *gt[0].mask);
    CHECK(s->location == gt[0].location);
    CHECK_FALSE(o.segment(ph.ct, gt[0].location + Vec3{0, 0, 3}));
    CHECK_FALSE(o.segment(ph.ct, gt[1].location));

    const auto crop = extract_crop(ph.spine_mask, gt[0].location, 32);
    const auto p = o.classify({0, CropKind::SpineMask, &crop});
    REQUIRE(p);
    CHECK(p->argmax() == L1);
    CHECK_FALSE(o.classify({0, CropKind::UnionOfMasks, &crop}));
    const auto far = extract_crop(ph.spine_mask, gt[2].location, 32);
    CHECK_FALSE(o.classify({0, CropKind::SpineMask, &far}));
}

TEST_CASE("subprocess oracle speaks the line protocol") {
    TempDir dir;
    PhantomDescription d;
    d.spec.labels = parse_label_list("L1-L5");
    d.spec.seed = 3;
    d.corruptions = {{Corruption::BlankProbability, 2, kDefaultShift}};
    write_phantom_description(d, dir / "ph.json");
    auto local = build_phantom_setup(d);
    const auto& ph = *local.phantom;

    SubprocessOracle child({SPINECYCLE_PHANTOM_ORACLE, (dir / "ph.json").string()});
    const auto& gt = ph.ground_truth.records;
    auto s = child.segment(ph.ct, gt[1].location + Vec3{0, 1, 0});
    REQUIRE(s);
    CHECK(s->location == gt[1].location);
    CHECK(embed(s->mask, ph.ct.geometry()) == embed(*gt[1].mask, ph.ct.geometry()));
    CHECK_FALSE(child.segment(ph.ct, gt[0].location + Vec3{0, 0, 300}));

    const auto crop = extract_crop(ph.spine_mask, gt[2].location, 64);
    const auto remote = child.classify({2, CropKind::SpineMask, &crop});
    const auto here = local.oracles->classifier.classify({2, CropKind::SpineMask, &crop});
    REQUIRE(remote);
    REQUIRE(here);
    for (std::size_t i = 0; i < 24; ++i) CHECK(remote->fused()[i] == doctest::Approx(here->fused()[i]).epsilon(1e-12));
    CHECK_FALSE(child.classify({2, CropKind::UnionOfMasks, &crop}));

    // a full cycle through the child matches the in-process run
    const auto stats = default_anatomy_stats();
    const auto a = run_cycle(ph.ct, ph.spine_mask, child, child, stats, CycleConfig{});
    const auto b = run_cycle(ph.ct, ph.spine_mask, local.oracles->segmentor, local.oracles->classifier, stats, CycleConfig{});
    CHECK(state_fingerprint(a) == state_fingerprint(b));
}

TEST_CASE("subprocess oracle rejects mismatched answers") {
    MaskGrid crop(geom(4, 4, 4));
    SubprocessOracle liar({"/bin/sh", "-c", "while read -r line; do printf '999\\tEMPTY\\n'; done"});
    CHECK_THROWS_AS(liar.classify({0, CropKind::SpineMask, &crop}), OracleProtocolError);

    SubprocessOracle quitter({"/bin/sh", "-c", "exit 0"});
    CHECK_THROWS(quitter.classify({0, CropKind::SpineMask, &crop}));

    CHECK_THROWS(SubprocessOracle({"/nonexistent/oracle-binary"}).classify({0, CropKind::SpineMask, &crop}));
}
