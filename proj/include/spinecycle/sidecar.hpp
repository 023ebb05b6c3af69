#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinecycle/cycle.hpp"
#include "spinecycle/phantom.hpp"
#include "spinecycle/priors.hpp"
#include "spinecycle/vertebra.hpp"

namespace spinecycle {

/// Every structured file carries this version; readers reject anything else.
inline constexpr int kSchemaVersion = 1;

/// Schema violation. The message names the source, the field path and the schema version.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses JSON text; syntax errors carry line and column.
nlohmann::json parse_json(const std::string& text, const std::string& source);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

// -- anatomy statistics ------------------------------------------------------------------------

nlohmann::json stats_to_json(const AnatomyStats& stats);
AnatomyStats stats_from_json(const nlohmann::json& j, const std::string& source);
void write_stats(const AnatomyStats& stats, const std::filesystem::path& path);
AnatomyStats read_stats(const std::filesystem::path& path);

// -- local predictions -------------------------------------------------------------------------

nlohmann::json prediction_to_json(const LocalPrediction& p);
LocalPrediction prediction_from_json(const nlohmann::json& j, const std::string& source,
                                     const std::string& field);

struct ProbabilityRecord {
    std::optional<Vec3> location;
    LocalPrediction prediction = LocalPrediction::uniform();
};

/// Records in cranial-to-caudal order.
void write_probabilities(const std::vector<ProbabilityRecord>& records, const std::filesystem::path& path);
std::vector<ProbabilityRecord> read_probabilities(const std::filesystem::path& path);

// -- labels (graph output) ---------------------------------------------------------------------

struct LabelFile {
    std::vector<VertebraLabel> labels;
    std::vector<std::set<RecordFlag>> flags;
    std::vector<std::pair<std::size_t, SpecialEdge>> events;
    double total_cost = 0.0;
};

void write_labels(const LabelFile& labels, const std::filesystem::path& path);
LabelFile read_labels(const std::filesystem::path& path);

// -- vertebrae (locations, labels, masks) -------------------------------------------------------

/// Writes records with labels, flags, volumes and local predictions. Masks go to NRRD files in
/// `<stem>_masks/` beside the file and are referenced relative to it.
void write_vertebrae(const SpineState& state, const std::filesystem::path& path, bool write_masks = true);
/// Reads a vertebrae file; masks are loaded when `load_masks` is set.
SpineState read_vertebrae(const std::filesystem::path& path, bool load_masks = true);

// -- inconsistency report ----------------------------------------------------------------------

struct ReportFile {
    bool pass = true;
    int iterations = 0;
    InconsistencyReport report;
};

void write_report(const ReportFile& report, const std::filesystem::path& path);
ReportFile read_report(const std::filesystem::path& path);

// -- training annotations ----------------------------------------------------------------------

void write_annotations(const std::vector<ScanAnnotation>& scans, const std::filesystem::path& path);
/// Accepts an annotations file or a vertebrae file (one scan, volumes from the file).
std::vector<ScanAnnotation> read_annotations(const std::filesystem::path& path);

// -- cycle configuration -----------------------------------------------------------------------

nlohmann::json weights_to_json(const GraphWeights& w);
GraphWeights weights_from_json(const nlohmann::json& j, const std::string& source, GraphWeights base = {});
/// Weights document: {"schema_version": 1, "kind": "weights", "t13": ..., ...}; absent fields keep `base`.
GraphWeights read_weights(const std::filesystem::path& path, GraphWeights base = {});
nlohmann::json cycle_config_to_json(const CycleConfig& cfg);
/// Fields absent from `j` keep the value in `base`.
CycleConfig cycle_config_from_json(const nlohmann::json& j, const std::string& source, CycleConfig base = {});

/// Global --config file: cycle settings plus evaluation options.
struct ToolConfig {
    CycleConfig cycle;
    double match_tolerance_mm = 20.0;
    double hausdorff_percentile = 100.0;
    std::optional<int> seed;
    std::optional<std::string> log_level;
};

ToolConfig read_tool_config(const std::filesystem::path& path);

// -- phantom description -----------------------------------------------------------------------

struct PhantomCorruptionEntry {
    Corruption kind = Corruption::DropMask;
    std::size_t vertebra = 0;
    Vec3 shift = kDefaultShift;
};

struct PhantomDescription {
    PhantomSpec spec;
    std::vector<PhantomCorruptionEntry> corruptions;
};

void write_phantom_description(const PhantomDescription& d, const std::filesystem::path& path);
PhantomDescription read_phantom_description(const std::filesystem::path& path);

// -- directory oracle index ---------------------------------------------------------------------

struct OracleIndex {
    struct Segmentation {
        Vec3 seed;
        std::optional<std::filesystem::path> mask;  // resolved; absent means Empty
        Vec3 location;
    };
    struct Classification {
        Vec3 center;
        CropKind kind = CropKind::SpineMask;
        std::optional<LocalPrediction> prediction;  // absent means Empty
    };
    std::vector<Segmentation> segmentations;
    std::vector<Classification> classifications;
};

/// Reads `<dir>/index.json`; mask paths are resolved against `dir` and must exist.
OracleIndex read_oracle_index(const std::filesystem::path& dir);
void write_oracle_index(const OracleIndex& index, const std::filesystem::path& dir);

// -- manifest ----------------------------------------------------------------------------------

struct OracleConfig {
    std::string type = "phantom";  // phantom | directory | subprocess
    std::filesystem::path path;    // phantom description or oracle directory
    std::vector<std::string> command;  // subprocess argv
    double tolerance_mm = 1.0;     // directory lookup radius
};

struct Manifest {
    std::filesystem::path ct;
    std::filesystem::path spine_mask;
    std::optional<std::filesystem::path> stats;
    std::optional<std::filesystem::path> ground_truth;
    OracleConfig oracle;
    nlohmann::json cycle;  // cycle overrides as written; null when absent

    /// `base` with the manifest's cycle fields applied.
    CycleConfig cycle_config(const CycleConfig& base = {}) const;
};

/// Relative paths are resolved against the manifest's directory; every referenced file must exist.
Manifest read_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest's directory when possible.
void write_manifest(const Manifest& m, const std::filesystem::path& path);

}  // namespace spinecycle
