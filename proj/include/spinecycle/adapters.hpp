#pragma once

#include <cstdio>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinecycle/cycle.hpp"
#include "spinecycle/phantom.hpp"
#include "spinecycle/sidecar.hpp"

namespace spinecycle {

/// Precomputed oracle answers stored in a directory with an `index.json`:
///
///   {"schema_version": 1, "kind": "oracle_index",
///    "segmentations":   [{"seed": [x,y,z], "mask": "m.nrrd", "location": [x,y,z]},
///                        {"seed": [x,y,z], "mask": null}],
///    "classifications": [{"center": [x,y,z], "crop": "spine", "prediction": {...}},
///                        {"center": [x,y,z], "crop": "union", "prediction": null}]}
///
/// A request is answered by the nearest entry within `tolerance_mm`; a null mask or prediction,
/// or no entry in reach, answers Empty.
class DirectoryOracle : public SegmentorOracle, public ClassifierOracle {
public:
    DirectoryOracle(const std::filesystem::path& dir, double tolerance_mm);

    std::optional<SegmentationResult> segment(const Int16Grid& ct, const Vec3& seed) override;
    std::optional<LocalPrediction> classify(const ClassifyRequest& request) override;
    bool thread_safe() const override { return true; }

private:
    OracleIndex index_;
    double tolerance_mm_;
};

/// Oracle child process speaking a line protocol on its standard streams. Fields are separated
/// by tabs, coordinates are world mm:
///
///   segment  <id> <ct.nrrd> <x> <y> <z>   ->  <id> <mask.nrrd> <x> <y> <z>   |  <id> EMPTY
///   classify <id> <crop.nrrd> <crop kind> ->  <id> <probabilities.json>       |  <id> EMPTY
///
/// Responses come in request order. The parent writes inputs to a private scratch directory
/// and reads outputs from wherever the child says.
class SubprocessOracle : public SegmentorOracle, public ClassifierOracle {
public:
    explicit SubprocessOracle(const std::vector<std::string>& command);
    ~SubprocessOracle() override;
    SubprocessOracle(const SubprocessOracle&) = delete;
    SubprocessOracle& operator=(const SubprocessOracle&) = delete;

    std::optional<SegmentationResult> segment(const Int16Grid& ct, const Vec3& seed) override;
    std::optional<LocalPrediction> classify(const ClassifyRequest& request) override;

private:
    std::vector<std::string> exchange(const std::string& request, std::uint64_t id);

    int pid_ = -1;
    std::FILE* to_child_ = nullptr;
    std::FILE* from_child_ = nullptr;
    std::filesystem::path scratch_;
    std::uint64_t next_id_ = 0;
    const Int16Grid* written_ct_ = nullptr;
    std::filesystem::path ct_path_;
};

/// Child side of the line protocol: answers requests with the given oracles until end of input,
/// writing masks and predictions into `work_dir`.
void serve_oracle(std::istream& in, std::ostream& out, SegmentorOracle& segmentor,
                  ClassifierOracle& classifier, const std::filesystem::path& work_dir);

/// Phantom plus oracles with the description's corruptions applied.
struct PhantomSetup {
    std::unique_ptr<Phantom> phantom;
    std::unique_ptr<PhantomOracles> oracles;
};

PhantomSetup build_phantom_setup(const PhantomDescription& description);

/// Oracle pair selected by a manifest.
struct OraclePair {
    SegmentorOracle* segmentor = nullptr;
    ClassifierOracle* classifier = nullptr;
    PhantomSetup phantom;
    std::unique_ptr<DirectoryOracle> directory;
    std::unique_ptr<SubprocessOracle> subprocess;
};

OraclePair make_oracles(const OracleConfig& config);

}  // namespace spinecycle
