#include "spinecycle/sidecar.hpp"

#include <cmath>

#include "spinecycle/fileio.hpp"
#include "spinecycle/nrrd.hpp"

namespace spinecycle {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& source, const std::string& field, const std::string& msg) {
    throw SchemaError(source + ": field '" + field + "': " + msg + " (schema version " +
                      std::to_string(kSchemaVersion) + ")");
}

// Reads an object field by field and rejects whatever was not consumed.
class Fields {
public:
    Fields(const json& j, std::string source, std::string path)
        : j_(j), source_(std::move(source)), path_(std::move(path)) {
        if (!j_.is_object()) fail(source_, path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* optional(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) return nullptr;
        return &*it;
    }
    const json& required(const std::string& key) {
        const json* v = optional(key);
        if (!v) fail(source_, at(key), "missing");
        return *v;
    }

    double number(const std::string& key) { return as_number(required(key), at(key)); }
    double number_or(const std::string& key, double fallback) {
        const json* v = optional(key);
        return v ? as_number(*v, at(key)) : fallback;
    }
    std::string string(const std::string& key) { return as_string(required(key), at(key)); }
    std::optional<std::string> string_opt(const std::string& key) {
        const json* v = optional(key);
        if (!v) return std::nullopt;
        return as_string(*v, at(key));
    }
    bool boolean(const std::string& key) {
        const json& v = required(key);
        if (!v.is_boolean()) fail(source_, at(key), "expected true or false");
        return v.get<bool>();
    }
    std::int64_t integer(const std::string& key) { return as_integer(required(key), at(key)); }
    std::int64_t integer_or(const std::string& key, std::int64_t fallback) {
        const json* v = optional(key);
        return v ? as_integer(*v, at(key)) : fallback;
    }
    const json& array(const std::string& key) {
        const json& v = required(key);
        if (!v.is_array()) fail(source_, at(key), "expected an array");
        return v;
    }
    Fields object(const std::string& key) { return Fields(required(key), source_, at(key)); }

    Vec3 vec3(const std::string& key) { return as_vec3(required(key), at(key)); }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.contains(it.key())) fail(source_, at(it.key()), "unknown field");
        }
    }

    const std::string& source() const { return source_; }

    double as_number(const json& v, const std::string& field) const {
        if (!v.is_number()) fail(source_, field, "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) fail(source_, field, "expected a finite number");
        return d;
    }
    std::int64_t as_integer(const json& v, const std::string& field) const {
        if (!v.is_number_integer()) fail(source_, field, "expected an integer");
        return v.get<std::int64_t>();
    }
    std::string as_string(const json& v, const std::string& field) const {
        if (!v.is_string()) fail(source_, field, "expected a string");
        return v.get<std::string>();
    }
    Vec3 as_vec3(const json& v, const std::string& field) const {
        if (!v.is_array() || v.size() != 3) fail(source_, field, "expected [x, y, z]");
        return {as_number(v[0], field + "[0]"), as_number(v[1], field + "[1]"), as_number(v[2], field + "[2]")};
    }

private:
    const json& j_;
    std::string source_;
    std::string path_;
    std::set<std::string> seen_;
};

// Opens a top-level document and checks version and kind.
Fields document(const json& j, const std::string& source, const std::string& kind) {
    Fields f(j, source, "");
    const json* v = f.optional("schema_version");
    if (!v) fail(source, "schema_version", "missing");
    if (!v->is_number_integer() || v->get<int>() != kSchemaVersion) {
        fail(source, "schema_version", "unsupported version " + v->dump());
    }
    const auto k = f.string("kind");
    if (k != kind) fail(source, "kind", "expected '" + kind + "', got '" + k + "'");
    return f;
}

json header(const std::string& kind) { return json{{"schema_version", kSchemaVersion}, {"kind", kind}}; }

json vec_json(const Vec3& p) { return json::array({p.x, p.y, p.z}); }

VertebraLabel parse_label(Fields& f, const std::string& key) {
    const auto s = f.string(key);
    try {
        return VertebraLabel::parse(s);
    } catch (const std::exception& e) {
        fail(f.source(), f.at(key), e.what());
    }
}

std::set<RecordFlag> parse_flags(Fields& f, const std::string& key) {
    std::set<RecordFlag> out;
    const json* v = f.optional(key);
    if (!v) return out;
    if (!v->is_array()) fail(f.source(), f.at(key), "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
        const auto s = f.as_string((*v)[i], f.at(key) + "[" + std::to_string(i) + "]");
        try {
            out.insert(parse_flag(s));
        } catch (const std::exception& e) {
            fail(f.source(), f.at(key), e.what());
        }
    }
    return out;
}

json flags_json(const std::set<RecordFlag>& flags) {
    json a = json::array();
    for (auto fl : flags) a.push_back(flag_name(fl));
    return a;
}

json events_json(const std::vector<std::pair<std::size_t, SpecialEdge>>& events) {
    json a = json::array();
    for (const auto& [i, e] : events) a.push_back({{"index", i}, {"event", special_edge_name(e)}});
    return a;
}

std::vector<std::pair<std::size_t, SpecialEdge>> parse_events(Fields& f, const std::string& key) {
    std::vector<std::pair<std::size_t, SpecialEdge>> out;
    const json* v = f.optional(key);
    if (!v) return out;
    if (!v->is_array()) fail(f.source(), f.at(key), "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
        Fields e((*v)[i], f.source(), f.at(key) + "[" + std::to_string(i) + "]");
        const auto index = e.integer("index");
        if (index < 0) fail(f.source(), e.at("index"), "must be >= 0");
        const auto name = e.string("event");
        try {
            out.emplace_back(static_cast<std::size_t>(index), parse_special_edge(name));
        } catch (const std::exception& ex) {
            fail(f.source(), e.at("event"), ex.what());
        }
        e.finish();
    }
    return out;
}

std::string relative_or_absolute(const fs::path& target, const fs::path& base_dir) {
    std::error_code ec;
    auto rel = fs::relative(target, base_dir.empty() ? fs::path(".") : base_dir, ec);
    if (ec || rel.empty()) return target.string();
    return rel.generic_string();
}

fs::path resolve(const fs::path& p, const fs::path& base_dir) {
    return p.is_absolute() ? p : base_dir / p;
}

}  // namespace

json parse_json(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(source + ": " + e.what());
    }
}

json read_json(const fs::path& path) { return parse_json(read_file(path), path.string()); }

void write_json(const json& j, const fs::path& path) { write_file_atomic(path, j.dump(2) + "\n"); }

// -- stats -------------------------------------------------------------------------------------

json stats_to_json(const AnatomyStats& s) {
    json j = header("anatomy_stats");
    j["fallback_volume_mm3"] = s.fallback_volume_mm3;
    j["fallback_gap_mm"] = s.fallback_gap_mm;
    json groups = json::object();
    for (auto g : kAllGroups) {
        const auto gi = group_index(g);
        const auto& v = s.volume[gi];
        const auto& ga = s.gaussian[gi];
        const auto& d = s.distance[gi];
        json mre = json::object();
        for (auto m : kAllGapModes) {
            const auto& b = s.mre[gi][static_cast<std::size_t>(m)];
            mre[gap_mode_name(m)] = {{"mu", b.mu}, {"sigma", b.sigma}};
        }
        groups[group_name(g)] = {
            {"volume", {{"a", v.a}, {"c1", v.c1}, {"b", v.b}, {"c2", v.c2}}},
            {"gaussian", {{"mu", ga.mu}, {"sigma", ga.sigma}}},
            {"distance",
             {{"m1", d.m1}, {"n1", d.n1}, {"k1", d.k1}, {"m2", d.m2}, {"k2", d.k2}, {"n2", d.n2}, {"k3", d.k3}}},
            {"mre", mre}};
    }
    j["groups"] = groups;
    return j;
}

AnatomyStats stats_from_json(const json& j, const std::string& source) {
    auto f = document(j, source, "anatomy_stats");
    AnatomyStats s;
    s.fallback_volume_mm3 = f.number("fallback_volume_mm3");
    s.fallback_gap_mm = f.number("fallback_gap_mm");
    auto groups = f.object("groups");
    for (auto g : kAllGroups) {
        const auto gi = group_index(g);
        auto gf = groups.object(group_name(g));
        auto vf = gf.object("volume");
        s.volume[gi] = {vf.number("a"), vf.number("c1"), vf.number("b"), vf.number("c2")};
        vf.finish();
        auto af = gf.object("gaussian");
        s.gaussian[gi] = {af.number("mu"), af.number("sigma")};
        af.finish();
        auto df = gf.object("distance");
        s.distance[gi] = {df.number("m1"), df.number("n1"), df.number("k1"), df.number("m2"),
                          df.number("k2"), df.number("n2"), df.number("k3")};
        df.finish();
        auto mf = gf.object("mre");
        for (auto m : kAllGapModes) {
            auto bf = mf.object(gap_mode_name(m));
            s.mre[gi][static_cast<std::size_t>(m)] = {bf.number("mu"), bf.number("sigma")};
            bf.finish();
        }
        mf.finish();
        gf.finish();
    }
    groups.finish();
    f.finish();
    try {
        s.validate();
    } catch (const std::exception& e) {
        throw SchemaError(source + ": " + e.what());
    }
    return s;
}

void write_stats(const AnatomyStats& stats, const fs::path& path) { write_json(stats_to_json(stats), path); }

AnatomyStats read_stats(const fs::path& path) { return stats_from_json(read_json(path), path.string()); }

// -- predictions -------------------------------------------------------------------------------

json prediction_to_json(const LocalPrediction& p) {
    json within = json::object();
    for (auto g : kAllGroups) within[group_name(g)] = p.within_group_probs()[group_index(g)];
    return {{"group", p.group_probs()}, {"within", within}};
}

LocalPrediction prediction_from_json(const json& j, const std::string& source, const std::string& field) {
    Fields f(j, source, field);
    const auto& gj = f.array("group");
    if (gj.size() != 3) fail(source, f.at("group"), "expected 3 group probabilities");
    LocalPrediction::GroupProbs groups{};
    for (std::size_t i = 0; i < 3; ++i) groups[i] = f.as_number(gj[i], f.at("group") + "[" + std::to_string(i) + "]");
    auto wf = f.object("within");
    LocalPrediction::WithinProbs within;
    for (auto g : kAllGroups) {
        const auto gi = group_index(g);
        const auto& a = wf.array(group_name(g));
        if (a.size() != kGroupSizes[gi]) {
            fail(source, wf.at(group_name(g)), "expected " + std::to_string(kGroupSizes[gi]) + " probabilities");
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            within[gi].push_back(wf.as_number(a[i], wf.at(group_name(g)) + "[" + std::to_string(i) + "]"));
        }
    }
    wf.finish();
    f.finish();
    try {
        return LocalPrediction(groups, std::move(within));
    } catch (const std::exception& e) {
        fail(source, field.empty() ? "<root>" : field, e.what());
    }
}

void write_probabilities(const std::vector<ProbabilityRecord>& records, const fs::path& path) {
    json j = header("probabilities");
    json recs = json::array();
    for (const auto& r : records) {
        json e = prediction_to_json(r.prediction);
        if (r.location) e["location"] = vec_json(*r.location);
        recs.push_back(e);
    }
    j["records"] = recs;
    write_json(j, path);
}

std::vector<ProbabilityRecord> read_probabilities(const fs::path& path) {
    const auto source = path.string();
    const json j = read_json(path);
    auto f = document(j, source, "probabilities");
    const auto& recs = f.array("records");
    std::vector<ProbabilityRecord> out;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const std::string field = "records[" + std::to_string(i) + "]";
        if (!recs[i].is_object()) fail(source, field, "expected an object");
        json copy = recs[i];
        ProbabilityRecord r;
        if (auto it = copy.find("location"); it != copy.end()) {
            r.location = Fields(copy, source, field).as_vec3(*it, field + ".location");
            copy.erase("location");
        }
        r.prediction = prediction_from_json(copy, source, field);
        out.push_back(std::move(r));
    }
    f.finish();
    return out;
}

// -- labels ------------------------------------------------------------------------------------

void write_labels(const LabelFile& labels, const fs::path& path) {
    json j = header("labels");
    json ls = json::array();
    json fl = json::array();
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        ls.push_back(labels.labels[i].name());
        fl.push_back(flags_json(i < labels.flags.size() ? labels.flags[i] : std::set<RecordFlag>{}));
    }
    j["labels"] = ls;
    j["flags"] = fl;
    j["transitional_events"] = events_json(labels.events);
    j["total_cost"] = labels.total_cost;
    write_json(j, path);
}

LabelFile read_labels(const fs::path& path) {
    const auto source = path.string();
    const json j = read_json(path);
    auto f = document(j, source, "labels");
    LabelFile out;
    const auto& ls = f.array("labels");
    for (std::size_t i = 0; i < ls.size(); ++i) {
        const auto s = f.as_string(ls[i], "labels[" + std::to_string(i) + "]");
        try {
            out.labels.push_back(VertebraLabel::parse(s));
        } catch (const std::exception& e) {
            fail(source, "labels[" + std::to_string(i) + "]", e.what());
        }
    }
    out.flags.resize(out.labels.size());
    if (const json* fl = f.optional("flags")) {
        if (!fl->is_array() || fl->size() != out.labels.size()) fail(source, "flags", "expected one list per label");
        for (std::size_t i = 0; i < fl->size(); ++i) {
            json wrapper{{"f", (*fl)[i]}};
            Fields w(wrapper, source, "flags[" + std::to_string(i) + "]");
            out.flags[i] = parse_flags(w, "f");
        }
    }
    out.events = parse_events(f, "transitional_events");
    out.total_cost = f.number_or("total_cost", 0.0);
    f.finish();
    return out;
}

// -- vertebrae ---------------------------------------------------------------------------------

void write_vertebrae(const SpineState& state, const fs::path& path, bool write_masks) {
    json j = header("vertebrae");
    json vs = json::array();
    const fs::path dir = path.parent_path();
    const fs::path mask_dir = dir / (path.stem().string() + "_masks");
    for (std::size_t i = 0; i < state.records.size(); ++i) {
        const auto& r = state.records[i];
        json e;
        e["label"] = r.label ? json(r.label->name()) : json(nullptr);
        e["location"] = vec_json(r.location);
        e["volume_mm3"] = r.volume_mm3;
        e["flags"] = flags_json(r.flags);
        if (r.local_probs) e["probabilities"] = prediction_to_json(*r.local_probs);
        if (write_masks && r.mask) {
            char name[64];
            std::snprintf(name, sizeof name, "%03zu_%s.nrrd", i, r.label ? r.label->name().c_str() : "unlabelled");
            write_nrrd(*r.mask, mask_dir / name);
            e["mask"] = relative_or_absolute(mask_dir / name, dir);
        }
        vs.push_back(e);
    }
    j["vertebrae"] = vs;
    j["transitional_events"] = events_json(state.transitional_events);
    write_json(j, path);
}

SpineState read_vertebrae(const fs::path& path, bool load_masks) {
    const auto source = path.string();
    const json j = read_json(path);
    auto f = document(j, source, "vertebrae");
    SpineState state;
    const auto& vs = f.array("vertebrae");
    for (std::size_t i = 0; i < vs.size(); ++i) {
        Fields v(vs[i], source, "vertebrae[" + std::to_string(i) + "]");
        VertebraRecord r;
        if (v.optional("label")) r.label = parse_label(v, "label");
        r.location = v.vec3("location");
        r.volume_mm3 = v.number_or("volume_mm3", 0.0);
        r.flags = parse_flags(v, "flags");
        if (const json* p = v.optional("probabilities")) r.local_probs = prediction_from_json(*p, source, v.at("probabilities"));
        if (auto m = v.string_opt("mask"); m && load_masks) {
            const auto mp = resolve(*m, path.parent_path());
            if (!fs::exists(mp)) fail(source, v.at("mask"), "file not found: " + mp.string());
            r.mask = std::make_shared<const MaskGrid>(read_mask_nrrd(mp));
        }
        v.finish();
        state.records.push_back(std::move(r));
    }
    state.transitional_events = parse_events(f, "transitional_events");
    for (const auto& [idx, e] : state.transitional_events) {
        if (idx >= state.records.size()) fail(source, "transitional_events", "index out of range");
    }
    f.finish();
    return state;
}

// -- report ------------------------------------------------------------------------------------

void write_report(const ReportFile& report, const fs::path& path) {
    json j = header("report");
    j["pass"] = report.pass;
    j["iterations"] = report.iterations;
    json es = json::array();
    for (const auto& e : report.report.entries) {
        es.push_back({{"kind", report_kind_name(e.kind)},
                      {"criterion", criterion_name(e.kind)},
                      {"region", {{"min", vec_json(e.region.min)}, {"max", vec_json(e.region.max)}}},
                      {"detail", e.detail}});
    }
    j["entries"] = es;
    write_json(j, path);
}

ReportFile read_report(const fs::path& path) {
    const auto source = path.string();
    const json j = read_json(path);
    auto f = document(j, source, "report");
    ReportFile out;
    out.pass = f.boolean("pass");
    out.iterations = static_cast<int>(f.integer("iterations"));
    const auto& es = f.array("entries");
    for (std::size_t i = 0; i < es.size(); ++i) {
        Fields e(es[i], source, "entries[" + std::to_string(i) + "]");
        ReportEntry entry;
        try {
            entry.kind = parse_report_kind(e.string("kind"));
        } catch (const std::invalid_argument& ex) {
            fail(source, e.at("kind"), ex.what());
        }
        if (auto c = e.string_opt("criterion"); c && *c != criterion_name(entry.kind)) {
            fail(source, e.at("criterion"), "does not match kind");
        }
        auto rf = e.object("region");
        entry.region.min = rf.vec3("min");
        entry.region.max = rf.vec3("max");
        rf.finish();
        entry.detail = e.string_opt("detail").value_or("");
        e.finish();
        out.report.entries.push_back(entry);
    }
    f.finish();
    return out;
}

// -- annotations -------------------------------------------------------------------------------

void write_annotations(const std::vector<ScanAnnotation>& scans, const fs::path& path) {
    json j = header("annotations");
    json ss = json::array();
    for (const auto& s : scans) {
        json vs = json::array();
        for (std::size_t i = 0; i < s.labels.size(); ++i) {
            vs.push_back({{"label", s.labels[i].name()},
                          {"volume_mm3", s.volumes_mm3[i]},
                          {"centroid", vec_json(s.centroids_mm[i])}});
        }
        ss.push_back({{"id", s.scan_id}, {"vertebrae", vs}});
    }
    j["scans"] = ss;
    write_json(j, path);
}

std::vector<ScanAnnotation> read_annotations(const fs::path& path) {
    const auto source = path.string();
    const json j = read_json(path);
    if (j.is_object() && j.value("kind", "") == "vertebrae") {
        const auto state = read_vertebrae(path, false);
        ScanAnnotation scan;
        scan.scan_id = path.stem().string();
        for (std::size_t i = 0; i < state.records.size(); ++i) {
            const auto& r = state.records[i];
            if (!r.label) fail(source, "vertebrae[" + std::to_string(i) + "].label", "missing");
            scan.labels.push_back(*r.label);
            scan.volumes_mm3.push_back(r.volume_mm3);
            scan.centroids_mm.push_back(r.location);
        }
        return {scan};
    }
    auto f = document(j, source, "annotations");
    std::vector<ScanAnnotation> out;
    const auto& ss = f.array("scans");
    for (std::size_t i = 0; i < ss.size(); ++i) {
        Fields sf(ss[i], source, "scans[" + std::to_string(i) + "]");
        ScanAnnotation scan;
        scan.scan_id = sf.string_opt("id").value_or(std::to_string(i));
        const auto& vs = sf.array("vertebrae");
        for (std::size_t k = 0; k < vs.size(); ++k) {
            Fields vf(vs[k], source, sf.at("vertebrae") + "[" + std::to_string(k) + "]");
            scan.labels.push_back(parse_label(vf, "label"));
            scan.volumes_mm3.push_back(vf.number("volume_mm3"));
            scan.centroids_mm.push_back(vf.vec3("centroid"));
            vf.finish();
        }
        sf.finish();
        out.push_back(std::move(scan));
    }
    f.finish();
    return out;
}

// -- configuration -----------------------------------------------------------------------------

json weights_to_json(const GraphWeights& w) {
    return {{"group", w.group}, {"t13", w.t13}, {"no_t12", w.no_t12}, {"l6", w.l6}, {"regular", w.regular}};
}

GraphWeights weights_from_json(const json& j, const std::string& source, GraphWeights w) {
    Fields f(j, source, "weights");
    w.group = f.number_or("group", w.group);
    w.t13 = f.number_or("t13", w.t13);
    w.no_t12 = f.number_or("no_t12", w.no_t12);
    w.l6 = f.number_or("l6", w.l6);
    w.regular = f.number_or("regular", w.regular);
    f.finish();
    return w;
}

GraphWeights read_weights(const fs::path& path, GraphWeights base) {
    const auto source = path.string();
    const json j = read_json(path);
    document(j, source, "weights");
    json body = j;
    body.erase("schema_version");
    body.erase("kind");
    return weights_from_json(body, source, base);
}

json cycle_config_to_json(const CycleConfig& c) {
    return {{"max_iterations", c.max_iterations},
            {"min_separation_mm", c.min_separation_mm},
            {"crop_side_voxels", c.crop_side_voxels},
            {"connectivity", static_cast<int>(c.connectivity)},
            {"threads", c.threads},
            {"weights", weights_to_json(c.weights)}};
}

CycleConfig cycle_config_from_json(const json& j, const std::string& source, CycleConfig c) {
    Fields f(j, source, "cycle");
    c.max_iterations = static_cast<int>(f.integer_or("max_iterations", c.max_iterations));
    c.min_separation_mm = f.number_or("min_separation_mm", c.min_separation_mm);
    const auto side = f.integer_or("crop_side_voxels", static_cast<std::int64_t>(c.crop_side_voxels));
    if (side <= 0) fail(source, f.at("crop_side_voxels"), "must be positive");
    c.crop_side_voxels = static_cast<std::size_t>(side);
    const auto conn = f.integer_or("connectivity", static_cast<int>(c.connectivity));
    if (conn != 6 && conn != 26) fail(source, f.at("connectivity"), "must be 6 or 26");
    c.connectivity = static_cast<Connectivity>(conn);
    c.threads = static_cast<int>(f.integer_or("threads", c.threads));
    if (const json* w = f.optional("weights")) c.weights = weights_from_json(*w, source, c.weights);
    f.finish();
    try {
        c.validate();
    } catch (const std::exception& e) {
        fail(source, "cycle", e.what());
    }
    return c;
}

ToolConfig read_tool_config(const fs::path& path) {
    const auto source = path.string();
    const json j = read_json(path);
    auto f = document(j, source, "config");
    ToolConfig t;
    if (const json* c = f.optional("cycle")) t.cycle = cycle_config_from_json(*c, source, t.cycle);
    t.match_tolerance_mm = f.number_or("match_tolerance_mm", t.match_tolerance_mm);
    t.hausdorff_percentile = f.number_or("hausdorff_percentile", t.hausdorff_percentile);
    if (f.optional("seed")) t.seed = static_cast<int>(f.integer("seed"));
    t.log_level = f.string_opt("log_level");
    f.finish();
    return t;
}

// -- phantom -----------------------------------------------------------------------------------

void write_phantom_description(const PhantomDescription& d, const fs::path& path) {
    json j = header("phantom");
    const auto& s = d.spec;
    json ls = json::array();
    for (const auto& l : s.labels) ls.push_back(l.name());
    j["labels"] = ls;
    if (!s.gaps_mm.empty()) j["gaps_mm"] = s.gaps_mm;
    if (!s.semi_axes_mm.empty()) j["semi_axes_mm"] = s.semi_axes_mm;
    j["gap_jitter"] = s.gap_jitter;
    j["epsilon"] = s.epsilon;
    j["peak"] = s.peak;
    j["margin_mm"] = s.margin_mm;
    j["bridge_radius_mm"] = s.bridge_radius_mm;
    j["bone_hu"] = s.bone_hu;
    j["background_hu"] = s.background_hu;
    j["seed"] = s.seed;
    json cs = json::array();
    for (const auto& c : d.corruptions) {
        cs.push_back({{"kind", corruption_name(c.kind)}, {"vertebra", c.vertebra}, {"shift", vec_json(c.shift)}});
    }
    j["corruptions"] = cs;
    write_json(j, path);
}

PhantomDescription read_phantom_description(const fs::path& path) {
    const auto source = path.string();
    const json j = read_json(path);
    auto f = document(j, source, "phantom");
    PhantomDescription d;
    auto& s = d.spec;
    const auto& ls = f.array("labels");
    for (std::size_t i = 0; i < ls.size(); ++i) {
        const auto name = f.as_string(ls[i], "labels[" + std::to_string(i) + "]");
        try {
            s.labels.push_back(VertebraLabel::parse(name));
        } catch (const std::exception& e) {
            fail(source, "labels[" + std::to_string(i) + "]", e.what());
        }
    }
    if (const json* g = f.optional("gaps_mm")) {
        if (!g->is_array()) fail(source, "gaps_mm", "expected an array");
        for (std::size_t i = 0; i < g->size(); ++i) s.gaps_mm.push_back(f.as_number((*g)[i], "gaps_mm"));
    }
    if (const json* a = f.optional("semi_axes_mm")) {
        if (!a->is_array()) fail(source, "semi_axes_mm", "expected an array");
        for (std::size_t i = 0; i < a->size(); ++i) {
            const auto v = f.as_vec3((*a)[i], "semi_axes_mm[" + std::to_string(i) + "]");
            s.semi_axes_mm.push_back({v.x, v.y, v.z});
        }
    }
    s.gap_jitter = f.number_or("gap_jitter", s.gap_jitter);
    s.epsilon = f.number_or("epsilon", s.epsilon);
    s.peak = f.number_or("peak", s.peak);
    s.margin_mm = f.number_or("margin_mm", s.margin_mm);
    s.bridge_radius_mm = f.number_or("bridge_radius_mm", s.bridge_radius_mm);
    s.bone_hu = static_cast<std::int16_t>(f.integer_or("bone_hu", s.bone_hu));
    s.background_hu = static_cast<std::int16_t>(f.integer_or("background_hu", s.background_hu));
    if (const json* seed = f.optional("seed")) {
        if (!seed->is_number_unsigned() && !seed->is_number_integer()) fail(source, "seed", "expected an integer");
        s.seed = seed->get<std::uint64_t>();
    }
    if (const json* cs = f.optional("corruptions")) {
        if (!cs->is_array()) fail(source, "corruptions", "expected an array");
        for (std::size_t i = 0; i < cs->size(); ++i) {
            Fields cf((*cs)[i], source, "corruptions[" + std::to_string(i) + "]");
            PhantomCorruptionEntry c;
            try {
                c.kind = parse_corruption(cf.string("kind"));
            } catch (const std::invalid_argument& e) {
                fail(source, cf.at("kind"), e.what());
            }
            const auto v = cf.integer("vertebra");
            if (v < 0 || static_cast<std::size_t>(v) >= s.labels.size()) fail(source, cf.at("vertebra"), "out of range");
            c.vertebra = static_cast<std::size_t>(v);
            if (cf.optional("shift")) c.shift = cf.vec3("shift");
            cf.finish();
            d.corruptions.push_back(c);
        }
    }
    f.finish();
    try {
        s.validate();
    } catch (const std::exception& e) {
        throw SchemaError(source + ": " + e.what());
    }
    return d;
}

// -- directory oracle index ---------------------------------------------------------------------

OracleIndex read_oracle_index(const fs::path& dir) {
    const fs::path path = dir / "index.json";
    const auto source = path.string();
    const json j = read_json(path);
    auto f = document(j, source, "oracle_index");
    OracleIndex out;
    if (const json* ss = f.optional("segmentations")) {
        if (!ss->is_array()) fail(source, "segmentations", "expected an array");
        for (std::size_t i = 0; i < ss->size(); ++i) {
            Fields e((*ss)[i], source, "segmentations[" + std::to_string(i) + "]");
            OracleIndex::Segmentation s;
            s.seed = e.vec3("seed");
            if (auto m = e.string_opt("mask")) {
                const auto mp = resolve(*m, dir);
                if (!fs::exists(mp)) fail(source, e.at("mask"), "file not found: " + mp.string());
                s.mask = mp;
                s.location = e.vec3("location");
            } else {
                e.optional("location");
            }
            e.finish();
            out.segmentations.push_back(s);
        }
    }
    if (const json* cs = f.optional("classifications")) {
        if (!cs->is_array()) fail(source, "classifications", "expected an array");
        for (std::size_t i = 0; i < cs->size(); ++i) {
            Fields e((*cs)[i], source, "classifications[" + std::to_string(i) + "]");
            OracleIndex::Classification c;
            c.center = e.vec3("center");
            try {
                c.kind = parse_crop_kind(e.string("crop"));
            } catch (const std::invalid_argument& ex) {
                fail(source, e.at("crop"), ex.what());
            }
            if (const json* p = e.optional("prediction")) c.prediction = prediction_from_json(*p, source, e.at("prediction"));
            e.finish();
            out.classifications.push_back(std::move(c));
        }
    }
    f.finish();
    return out;
}

void write_oracle_index(const OracleIndex& index, const fs::path& dir) {
    json j = header("oracle_index");
    json ss = json::array();
    for (const auto& s : index.segmentations) {
        json e{{"seed", vec_json(s.seed)}};
        if (s.mask) {
            e["mask"] = relative_or_absolute(*s.mask, dir);
            e["location"] = vec_json(s.location);
        } else {
            e["mask"] = nullptr;
        }
        ss.push_back(e);
    }
    json cs = json::array();
    for (const auto& c : index.classifications) {
        cs.push_back({{"center", vec_json(c.center)},
                      {"crop", crop_kind_name(c.kind)},
                      {"prediction", c.prediction ? prediction_to_json(*c.prediction) : json(nullptr)}});
    }
    j["segmentations"] = ss;
    j["classifications"] = cs;
    write_json(j, dir / "index.json");
}

// -- manifest ----------------------------------------------------------------------------------

Manifest read_manifest(const fs::path& path) {
    const auto source = path.string();
    const json j = read_json(path);
    const fs::path base = path.parent_path();
    auto f = document(j, source, "manifest");
    Manifest m;
    auto existing = [&](const std::string& field, const std::string& value) {
        const auto p = resolve(value, base);
        if (!fs::exists(p)) fail(source, field, "file not found: " + p.string());
        return p;
    };
    m.ct = existing("ct", f.string("ct"));
    m.spine_mask = existing("spine_mask", f.string("spine_mask"));
    if (auto s = f.string_opt("stats")) m.stats = existing("stats", *s);
    if (auto g = f.string_opt("ground_truth")) m.ground_truth = existing("ground_truth", *g);
    auto of = f.object("oracle");
    m.oracle.type = of.string("type");
    if (m.oracle.type == "phantom") {
        m.oracle.path = existing(of.at("description"), of.string("description"));
    } else if (m.oracle.type == "directory") {
        m.oracle.path = existing(of.at("path"), of.string("path"));
        m.oracle.tolerance_mm = of.number_or("tolerance_mm", m.oracle.tolerance_mm);
    } else if (m.oracle.type == "subprocess") {
        const auto& cmd = of.array("command");
        if (cmd.empty()) fail(source, of.at("command"), "empty command");
        for (std::size_t i = 0; i < cmd.size(); ++i) m.oracle.command.push_back(of.as_string(cmd[i], of.at("command")));
    } else {
        fail(source, of.at("type"), "unknown oracle type '" + m.oracle.type + "'");
    }
    of.finish();
    if (const json* c = f.optional("cycle")) {
        cycle_config_from_json(*c, source);
        m.cycle = *c;
    }
    f.finish();
    return m;
}

CycleConfig Manifest::cycle_config(const CycleConfig& base) const {
    return cycle.is_null() ? base : cycle_config_from_json(cycle, "manifest", base);
}

void write_manifest(const Manifest& m, const fs::path& path) {
    const fs::path base = path.parent_path();
    json j = header("manifest");
    j["ct"] = relative_or_absolute(m.ct, base);
    j["spine_mask"] = relative_or_absolute(m.spine_mask, base);
    if (m.stats) j["stats"] = relative_or_absolute(*m.stats, base);
    if (m.ground_truth) j["ground_truth"] = relative_or_absolute(*m.ground_truth, base);
    json o{{"type", m.oracle.type}};
    if (m.oracle.type == "phantom") o["description"] = relative_or_absolute(m.oracle.path, base);
    if (m.oracle.type == "directory") {
        o["path"] = relative_or_absolute(m.oracle.path, base);
        o["tolerance_mm"] = m.oracle.tolerance_mm;
    }
    if (m.oracle.type == "subprocess") o["command"] = m.oracle.command;
    j["oracle"] = o;
    if (!m.cycle.is_null()) j["cycle"] = m.cycle;
    write_json(j, path);
}

}  // namespace spinecycle
