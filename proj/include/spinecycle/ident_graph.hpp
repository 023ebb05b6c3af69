#pragma once

#include <optional>
#include <set>
#include <vector>

#include "spinecycle/vertebra.hpp"

namespace spinecycle {

/// Averages the spine-mask and union-of-masks predictions. An absent prediction (empty crop or
/// empty individual mask) is replaced by the uniform distribution over all vertebrae.
LocalPrediction fuse_predictions(const std::optional<LocalPrediction>& spine_crop,
                                 const std::optional<LocalPrediction>& union_crop);

struct GraphWeights {
    double group = 1.0;   // scales the group-swap unary term
    double t13 = 0.5;     // T12 -> T12
    double no_t12 = 0.5;  // T11 -> L1
    double l6 = 0.5;      // L5 -> L5
    double regular = 0.0; // j -> j+1
};

/// Layered n x 24 label graph with virtual source and sink.
class IdentGraph {
public:
    static constexpr int kRows = 24;

    struct Edge {
        std::size_t to = 0;
        double cost = 0.0;  // edge energy, excluding the target node's unary
        std::optional<SpecialEdge> special;
    };

    IdentGraph(std::vector<std::array<double, kRows>> unary, const GraphWeights& weights);

    std::size_t columns() const { return unary_.size(); }
    double unary(std::size_t column, int row) const { return unary_[column][static_cast<std::size_t>(row)]; }
    const GraphWeights& weights() const { return weights_; }

    // Node numbering: 0 = src, 1 + column * 24 + row for label nodes, last = dst.
    std::size_t node_count() const { return columns() * kRows + 2; }
    std::size_t src() const { return 0; }
    std::size_t dst() const { return node_count() - 1; }
    std::size_t node(std::size_t column, int row) const {
        return 1 + column * kRows + static_cast<std::size_t>(row);
    }
    std::size_t column_of(std::size_t node) const { return (node - 1) / kRows; }
    int row_of(std::size_t node) const { return static_cast<int>((node - 1) % kRows); }

    /// Energy charged when entering `node`: its unary cost (zero for dst).
    double node_cost(std::size_t node) const;

    const std::vector<Edge>& out_edges(std::size_t node) const { return adjacency_[node]; }
    std::size_t edge_count() const;

private:
    std::vector<std::array<double, kRows>> unary_;
    GraphWeights weights_;
    std::vector<std::vector<Edge>> adjacency_;
};

/// Unary cost (1 - Pv) + w_group (1 - P_group) per column and row.
IdentGraph build_graph(const std::vector<LocalPrediction>& predictions, const GraphWeights& weights = {});

struct LabelPath {
    std::vector<VertebraLabel> labels;
    double total_cost = 0.0;
    std::vector<std::pair<std::size_t, SpecialEdge>> used_special;  // position of the second node
};

/// Dijkstra from src to dst. Ties resolve to the lexicographically smallest label sequence.
LabelPath shortest_path(const IdentGraph& graph);

/// Column-by-column dynamic program over the same graph; same tie-break.
LabelPath dp_oracle(const IdentGraph& graph);

struct TransitionalResult {
    std::vector<VertebraLabel> labels;  // may contain T13 and L6
    std::vector<std::set<RecordFlag>> flags;
    std::vector<std::pair<std::size_t, SpecialEdge>> events;
    bool flagged() const;
};

/// Second of two consecutive T12 becomes T13, second of two consecutive L5 becomes L6, a T11 -> L1
/// step records AbsentT12. Further repeats and any other non-consecutive step raise LabelRepeat.
TransitionalResult postprocess_transitional(const LabelPath& path);

/// Convenience: build, solve and post-process.
TransitionalResult identify(const std::vector<LocalPrediction>& predictions, const GraphWeights& weights = {});

}  // namespace spinecycle
