#include "spinecycle/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "spinecycle/adapters.hpp"
#include "spinecycle/fileio.hpp"
#include "spinecycle/ident_graph.hpp"
#include "spinecycle/metrics.hpp"
#include "spinecycle/nrrd.hpp"
#include "spinecycle/sidecar.hpp"

namespace spinecycle {

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInconsistent = 2;

struct GlobalOptions {
    std::string config;
    std::optional<int> threads;
    std::string log_level;
};

void setup_logging(const std::string& level) {
    auto logger = spdlog::get("spinecycle");
    if (!logger) logger = spdlog::stderr_color_mt("spinecycle");
    spdlog::set_default_logger(logger);
    const auto lv = spdlog::level::from_str(level);
    if (lv == spdlog::level::off && level != "off") throw std::invalid_argument("unknown log level '" + level + "'");
    spdlog::set_level(lv);
}

std::vector<EvalVertebra> eval_view(const SpineState& s) {
    std::vector<EvalVertebra> out;
    for (const auto& r : s.records) {
        if (!r.label) continue;
        out.push_back({*r.label, r.location, r.mask.get()});
    }
    return out;
}

std::string describe_labels(const std::vector<VertebraLabel>& labels) {
    std::string s;
    for (const auto& l : labels) s += (s.empty() ? "" : " ") + l.name();
    return s;
}

// -- subcommands -------------------------------------------------------------------------------

int cmd_fit_stats(const std::vector<std::string>& inputs, const std::string& out) {
    std::vector<ScanAnnotation> scans;
    for (const auto& in : inputs) {
        auto more = read_annotations(in);
        scans.insert(scans.end(), more.begin(), more.end());
    }
    const auto stats = fit_stats(scans);
    write_stats(stats, out);
    spdlog::info("fitted statistics on {} scans -> {}", scans.size(), out);
    return kExitOk;
}

int cmd_identify(const std::string& probs, const std::string& weights_arg, const std::string& out,
                 const GraphWeights& base) {
    GraphWeights w = base;
    if (weights_arg != "default") w = read_weights(weights_arg, base);
    const auto records = read_probabilities(probs);
    if (records.empty()) throw std::invalid_argument(probs + ": no records");
    std::vector<LocalPrediction> preds;
    for (const auto& r : records) preds.push_back(r.prediction);
    const auto path = shortest_path(build_graph(preds, w));
    const auto post = postprocess_transitional(path);
    write_labels({post.labels, post.flags, post.events, path.total_cost}, out);
    spdlog::info("labels: {}", describe_labels(post.labels));
    return kExitOk;
}

int cmd_run_cycle(const std::string& manifest_path, const std::string& out_dir, const ToolConfig& tool,
                  std::optional<int> threads) {
    const auto manifest = read_manifest(manifest_path);
    auto cfg = manifest.cycle_config(tool.cycle);
    if (threads) cfg.threads = *threads;
    const auto stats = manifest.stats ? read_stats(*manifest.stats) : default_anatomy_stats();
    const auto ct = read_nrrd_as<std::int16_t>(manifest.ct);
    const auto spine = read_mask_nrrd(manifest.spine_mask);
    auto oracles = make_oracles(manifest.oracle);

    CycleTrace trace;
    const auto state = run_cycle(ct, spine, *oracles.segmentor, *oracles.classifier, stats, cfg, std::nullopt, &trace);
    const bool pass = state.report.entries.empty();

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    write_vertebrae(state, dir / "vertebrae.json", true);
    write_report({pass, state.iteration, state.report}, dir / "report.json");
    if (manifest.ground_truth) {
        const auto gt = read_vertebrae(*manifest.ground_truth, true);
        EvalPair pair{eval_view(state), eval_view(gt), tool.match_tolerance_mm};
        std::ostringstream os;
        write_metrics_tsv(os, evaluate(pair, tool.hausdorff_percentile));
        write_file_atomic(dir / "metrics.tsv", os.str());
    }

    std::vector<VertebraLabel> labels;
    for (const auto& r : state.records) {
        if (r.label) labels.push_back(*r.label);
    }
    spdlog::info("{} iterations, {} vertebrae: {}", state.iteration, state.records.size(), describe_labels(labels));
    for (const auto& e : state.report.entries) {
        spdlog::warn("{} ({}): {}", report_kind_name(e.kind), criterion_name(e.kind), e.detail);
    }
    return pass ? kExitOk : kExitInconsistent;
}

int cmd_evaluate(const std::string& pred_path, const std::string& gt_path, const std::string& out,
                 const ToolConfig& tool) {
    const auto pred = read_vertebrae(pred_path, true);
    const auto gt = read_vertebrae(gt_path, true);
    EvalPair pair{eval_view(pred), eval_view(gt), tool.match_tolerance_mm};
    const auto report = evaluate(pair, tool.hausdorff_percentile);
    std::ostringstream os;
    write_metrics_tsv(os, report);
    if (out.empty() || out == "-") {
        std::cout << os.str();
    } else {
        write_file_atomic(out, os.str());
    }
    spdlog::info("id rate {:.2f}%", report.id_rate_percent);
    return kExitOk;
}

struct PhantomArgs {
    std::string labels;
    std::string out_dir;
    double epsilon = 0.0;
    double bridge_radius = 0.0;
    std::vector<std::string> corruptions;
};

int cmd_phantom(const PhantomArgs& a, std::uint64_t seed) {
    PhantomDescription d;
    d.spec.labels = parse_label_list(a.labels);
    d.spec.epsilon = a.epsilon;
    d.spec.bridge_radius_mm = a.bridge_radius;
    d.spec.seed = seed;
    for (const auto& c : a.corruptions) {
        PhantomCorruptionEntry e;
        const auto colon = c.find(':');
        e.kind = parse_corruption(c.substr(0, colon));
        if (colon == std::string::npos) {
            e.vertebra = pick_corruption_target(d.spec.labels.size(), seed);
        } else {
            const auto idx = c.substr(colon + 1);
            std::size_t used = 0;
            unsigned long v = 0;
            try {
                v = std::stoul(idx, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != idx.size()) throw std::invalid_argument("bad vertebra index in '" + c + "'");
            if (v >= d.spec.labels.size()) throw std::invalid_argument("vertebra index out of range in '" + c + "'");
            e.vertebra = v;
        }
        d.corruptions.push_back(e);
    }
    const auto ph = generate_phantom(d.spec);

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    write_nrrd(ph.ct, dir / "ct.nrrd");
    write_nrrd(ph.spine_mask, dir / "spine_mask.nrrd");
    write_vertebrae(ph.ground_truth, dir / "gt.json", true);
    write_phantom_description(d, dir / "phantom.json");
    Manifest m;
    m.ct = dir / "ct.nrrd";
    m.spine_mask = dir / "spine_mask.nrrd";
    m.ground_truth = dir / "gt.json";
    m.oracle.type = "phantom";
    m.oracle.path = dir / "phantom.json";
    write_manifest(m, dir / "manifest.json");
    spdlog::info("phantom {} -> {}", describe_labels(d.spec.labels), dir.string());
    return kExitOk;
}

}  // namespace

std::vector<VertebraLabel> parse_label_list(const std::string& text) {
    std::vector<VertebraLabel> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }),
                   item.end());
        if (item.empty()) throw std::invalid_argument("empty entry in label list '" + text + "'");
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
            out.push_back(VertebraLabel::parse(item));
            continue;
        }
        const auto first = VertebraLabel::parse(item.substr(0, dash));
        const auto last = VertebraLabel::parse(item.substr(dash + 1));
        if (!first.in_graph_space() || !last.in_graph_space() || last.code() < first.code()) {
            throw std::invalid_argument("bad label range '" + item + "'");
        }
        for (int c = first.code(); c <= last.code(); ++c) out.push_back(VertebraLabel(c));
    }
    if (out.empty()) throw std::invalid_argument("empty label list");
    return out;
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Consistency cycle for vertebra localisation, segmentation and identification", "spinecycle"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    std::uint64_t seed_value = 0;
    int threads_value = 1;
    app.add_option("--config", g.config, "Configuration file (JSON)")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed_value, "Seed for all randomness");
    auto* threads_opt = app.add_option("--threads", threads_value, "Worker threads")->check(CLI::Range(1, 1024));
    app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

    auto* fit = app.add_subcommand("fit-stats", "Fit anatomy statistics from annotations");
    std::vector<std::string> fit_inputs;
    std::string fit_out;
    fit->add_option("--annotations", fit_inputs, "Annotation or vertebrae files")->required()->check(CLI::ExistingFile);
    fit->add_option("--out", fit_out, "Output statistics file")->required();

    auto* ident = app.add_subcommand("identify", "Label a sequence of local predictions with the graph");
    std::string probs, weights = "default", ident_out;
    ident->add_option("--probs", probs, "Probability file")->required()->check(CLI::ExistingFile);
    ident->add_option("--weights", weights, "'default' or a weights file");
    ident->add_option("--out", ident_out, "Output label file")->required();

    auto* cycle = app.add_subcommand("run-cycle", "Run the consistency cycle on a manifest");
    std::string manifest, out_dir;
    cycle->add_option("--manifest", manifest, "Manifest file")->required()->check(CLI::ExistingFile);
    cycle->add_option("--out-dir", out_dir, "Output directory")->required();

    auto* eval = app.add_subcommand("evaluate", "Compute identification and segmentation metrics");
    std::string pred, gt, eval_out = "-";
    eval->add_option("--pred", pred, "Predicted vertebrae file")->required()->check(CLI::ExistingFile);
    eval->add_option("--gt", gt, "Ground-truth vertebrae file")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", eval_out, "Metrics table ('-' for standard output)");

    auto* ph = app.add_subcommand("phantom", "Write a synthetic spine with ground truth and a manifest");
    PhantomArgs pa;
    ph->add_option("--labels", pa.labels, "Labels, e.g. L1-L5 or T10,T11,T12,T13,L1")->required();
    ph->add_option("--out-dir", pa.out_dir, "Output directory")->required();
    ph->add_option("--epsilon", pa.epsilon, "Classifier label-noise probability");
    ph->add_option("--bridge-radius", pa.bridge_radius, "Radius of bone bridges between vertebrae (mm)");
    ph->add_option("--corrupt", pa.corruptions, "drop_mask, shift_location or blank_probability, optionally :index");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return kExitError;
    }

    try {
        ToolConfig tool;
        if (!g.config.empty()) tool = read_tool_config(g.config);
        std::string level = g.log_level.empty() ? tool.log_level.value_or("info") : g.log_level;
        setup_logging(level);
        if (*threads_opt) g.threads = threads_value;
        std::uint64_t seed = 0;
        if (*seed_opt) {
            seed = seed_value;
        } else if (tool.seed) {
            seed = static_cast<std::uint64_t>(*tool.seed);
        }

        if (fit->parsed()) return cmd_fit_stats(fit_inputs, fit_out);
        if (ident->parsed()) return cmd_identify(probs, weights, ident_out, tool.cycle.weights);
        if (cycle->parsed()) return cmd_run_cycle(manifest, out_dir, tool, g.threads);
        if (eval->parsed()) return cmd_evaluate(pred, gt, eval_out, tool);
        if (ph->parsed()) return cmd_phantom(pa, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}

}  // namespace spinecycle
