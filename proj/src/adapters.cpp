#include "spinecycle/adapters.hpp"

#include <atomic>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <system_error>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include "spinecycle/nrrd.hpp"

extern char** environ;

namespace spinecycle {

namespace fs = std::filesystem;

namespace {

template <typename Entry, typename Pos>
const Entry* nearest_entry(const std::vector<Entry>& entries, const Vec3& p, double tolerance, Pos pos) {
    const Entry* best = nullptr;
    double best_d = tolerance;
    for (const auto& e : entries) {
        const double d = distance(pos(e), p);
        if (d <= best_d) {
            best_d = d;
            best = &e;
        }
    }
    return best;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

double parse_coord(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw OracleProtocolError("bad coordinate '" + s + "' in " + what);
    return v;
}

std::string coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

fs::path make_scratch_dir(const std::string& prefix) {
    static std::atomic<unsigned> counter{0};
    const auto dir = fs::temp_directory_path() /
                     (prefix + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

}  // namespace

// -- directory ---------------------------------------------------------------------------------

DirectoryOracle::DirectoryOracle(const fs::path& dir, double tolerance_mm)
    : index_(read_oracle_index(dir)), tolerance_mm_(tolerance_mm) {
    if (!(tolerance_mm >= 0.0)) throw std::invalid_argument("directory oracle tolerance must be >= 0");
}

std::optional<SegmentationResult> DirectoryOracle::segment(const Int16Grid& ct, const Vec3& seed) {
    const auto* e = nearest_entry(index_.segmentations, seed, tolerance_mm_,
                                  [](const OracleIndex::Segmentation& s) { return s.seed; });
    if (!e || !e->mask) return std::nullopt;
    auto mask = read_mask_nrrd(*e->mask);
    if (!lattice_offset(ct.geometry(), mask.geometry())) {
        throw OracleProtocolError("mask " + e->mask->string() + " is not aligned with the CT lattice");
    }
    return SegmentationResult{e->location, std::move(mask)};
}

std::optional<LocalPrediction> DirectoryOracle::classify(const ClassifyRequest& request) {
    if (!request.crop) throw std::invalid_argument("classifier request without a crop");
    const Vec3 c = crop_center(request.crop->geometry());
    const OracleIndex::Classification* best = nullptr;
    double best_d = tolerance_mm_;
    for (const auto& e : index_.classifications) {
        if (e.kind != request.kind) continue;
        const double d = distance(e.center, c);
        if (d <= best_d) {
            best_d = d;
            best = &e;
        }
    }
    if (!best) return std::nullopt;
    return best->prediction;
}

// -- subprocess --------------------------------------------------------------------------------

SubprocessOracle::SubprocessOracle(const std::vector<std::string>& command) {
    if (command.empty()) throw std::invalid_argument("empty oracle command");
    std::signal(SIGPIPE, SIG_IGN);
    int in_pipe[2];   // parent -> child
    int out_pipe[2];  // child -> parent
    if (::pipe(in_pipe) != 0) throw std::system_error(errno, std::generic_category(), "pipe");
    if (::pipe(out_pipe) != 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        throw std::system_error(errno, std::generic_category(), "pipe");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) posix_spawn_file_actions_addclose(&actions, fd);

    std::vector<char*> argv;
    for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    pid_t pid = -1;
    const int rc = posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    if (rc != 0) {
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        throw std::system_error(rc, std::generic_category(), "cannot start oracle '" + command[0] + "'");
    }
    pid_ = pid;
    to_child_ = ::fdopen(in_pipe[1], "w");
    from_child_ = ::fdopen(out_pipe[0], "r");
    scratch_ = make_scratch_dir("spinecycle-oracle");
    spdlog::debug("started oracle process {} ({})", pid_, command[0]);
}

SubprocessOracle::~SubprocessOracle() {
    if (to_child_) std::fclose(to_child_);
    if (from_child_) std::fclose(from_child_);
    if (pid_ > 0) {
        int status = 0;
        ::waitpid(pid_, &status, 0);
    }
    std::error_code ec;
    fs::remove_all(scratch_, ec);
}

std::vector<std::string> SubprocessOracle::exchange(const std::string& request, std::uint64_t id) {
    const std::string line = request + "\n";
    if (std::fwrite(line.data(), 1, line.size(), to_child_) != line.size() || std::fflush(to_child_) != 0) {
        throw OracleProtocolError("oracle process closed its input");
    }
    char* buf = nullptr;
    std::size_t cap = 0;
    const auto n = ::getline(&buf, &cap, from_child_);
    std::string reply = n > 0 ? std::string(buf, static_cast<std::size_t>(n)) : std::string();
    std::free(buf);
    if (n <= 0) throw OracleProtocolError("oracle process ended without answering request " + std::to_string(id));
    while (!reply.empty() && (reply.back() == '\n' || reply.back() == '\r')) reply.pop_back();
    auto fields = split_tabs(reply);
    if (fields.empty() || fields[0] != std::to_string(id)) {
        throw OracleProtocolError("expected response to request " + std::to_string(id) + ", got '" + reply + "'");
    }
    return fields;
}

std::optional<SegmentationResult> SubprocessOracle::segment(const Int16Grid& ct, const Vec3& seed) {
    if (written_ct_ != &ct) {
        ct_path_ = scratch_ / "ct.nrrd";
        write_nrrd(ct, ct_path_, NrrdEncoding::Raw);
        written_ct_ = &ct;
    }
    const auto id = next_id_++;
    const auto f = exchange("segment\t" + std::to_string(id) + "\t" + ct_path_.string() + "\t" + coord(seed.x) + "\t" +
                                coord(seed.y) + "\t" + coord(seed.z),
                            id);
    if (f.size() == 2 && f[1] == "EMPTY") return std::nullopt;
    if (f.size() != 5) throw OracleProtocolError("malformed segment response for request " + std::to_string(id));
    const Vec3 loc{parse_coord(f[2], "segment response"), parse_coord(f[3], "segment response"),
                   parse_coord(f[4], "segment response")};
    auto mask = read_mask_nrrd(f[1]);
    if (!lattice_offset(ct.geometry(), mask.geometry())) {
        throw OracleProtocolError("mask " + f[1] + " is not aligned with the CT lattice");
    }
    return SegmentationResult{loc, std::move(mask)};
}

std::optional<LocalPrediction> SubprocessOracle::classify(const ClassifyRequest& request) {
    if (!request.crop) throw std::invalid_argument("classifier request without a crop");
    const auto id = next_id_++;
    const auto crop_path = scratch_ / ("crop_" + std::to_string(id) + ".nrrd");
    write_nrrd(*request.crop, crop_path, NrrdEncoding::Gzip);
    const auto f = exchange(
        "classify\t" + std::to_string(id) + "\t" + crop_path.string() + "\t" + crop_kind_name(request.kind), id);
    std::error_code ec;
    fs::remove(crop_path, ec);
    if (f.size() == 2 && f[1] == "EMPTY") return std::nullopt;
    if (f.size() != 2) throw OracleProtocolError("malformed classify response for request " + std::to_string(id));
    const auto records = read_probabilities(f[1]);
    if (records.size() != 1) throw OracleProtocolError(f[1] + ": expected exactly one prediction");
    return records.front().prediction;
}

// -- child side --------------------------------------------------------------------------------

void serve_oracle(std::istream& in, std::ostream& out, SegmentorOracle& segmentor, ClassifierOracle& classifier,
                  const fs::path& work_dir) {
    fs::create_directories(work_dir);
    std::string loaded_ct_path;
    Int16Grid ct;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        if (f[0] == "segment" && f.size() == 6) {
            if (f[2] != loaded_ct_path) {
                ct = read_nrrd_as<std::int16_t>(f[2]);
                loaded_ct_path = f[2];
            }
            const Vec3 seed{parse_coord(f[3], "segment request"), parse_coord(f[4], "segment request"),
                            parse_coord(f[5], "segment request")};
            const auto res = segmentor.segment(ct, seed);
            if (!res) {
                out << f[1] << "\tEMPTY\n";
            } else {
                const auto path = work_dir / ("mask_" + f[1] + ".nrrd");
                write_nrrd(res->mask, path);
                out << f[1] << '\t' << path.string() << '\t' << coord(res->location.x) << '\t'
                    << coord(res->location.y) << '\t' << coord(res->location.z) << '\n';
            }
        } else if (f[0] == "classify" && f.size() == 4) {
            const auto crop = read_mask_nrrd(f[2]);
            ClassifyRequest req;
            req.kind = parse_crop_kind(f[3]);
            req.crop = &crop;
            const auto pred = classifier.classify(req);
            if (!pred) {
                out << f[1] << "\tEMPTY\n";
            } else {
                const auto path = work_dir / ("probs_" + f[1] + ".json");
                write_probabilities({ProbabilityRecord{std::nullopt, *pred}}, path);
                out << f[1] << '\t' << path.string() << '\n';
            }
        } else {
            throw OracleProtocolError("malformed request '" + line + "'");
        }
        out.flush();
    }
}

// -- selection ---------------------------------------------------------------------------------

PhantomSetup build_phantom_setup(const PhantomDescription& description) {
    PhantomSetup s;
    s.phantom = std::make_unique<Phantom>(generate_phantom(description.spec));
    s.oracles = std::make_unique<PhantomOracles>(*s.phantom);
    for (const auto& c : description.corruptions) corrupt(*s.oracles, c.kind, c.vertebra, c.shift);
    return s;
}

OraclePair make_oracles(const OracleConfig& config) {
    OraclePair pair;
    if (config.type == "phantom") {
        pair.phantom = build_phantom_setup(read_phantom_description(config.path));
        pair.segmentor = &pair.phantom.oracles->segmentor;
        pair.classifier = &pair.phantom.oracles->classifier;
    } else if (config.type == "directory") {
        pair.directory = std::make_unique<DirectoryOracle>(config.path, config.tolerance_mm);
        pair.segmentor = pair.directory.get();
        pair.classifier = pair.directory.get();
    } else if (config.type == "subprocess") {
        pair.subprocess = std::make_unique<SubprocessOracle>(config.command);
        pair.segmentor = pair.subprocess.get();
        pair.classifier = pair.subprocess.get();
    } else {
        throw std::invalid_argument("unknown oracle type '" + config.type + "'");
    }
    return pair;
}

}  // namespace spinecycle
