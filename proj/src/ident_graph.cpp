#include "spinecycle/ident_graph.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>

namespace spinecycle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

LocalPrediction average(const LocalPrediction& a, const LocalPrediction& b) {
    LocalPrediction::GroupProbs groups{};
    LocalPrediction::WithinProbs within;
    for (std::size_t g = 0; g < 3; ++g) {
        groups[g] = 0.5 * (a.group_probs()[g] + b.group_probs()[g]);
        const auto& wa = a.within_group_probs()[g];
        const auto& wb = b.within_group_probs()[g];
        within[g].resize(wa.size());
        for (std::size_t k = 0; k < wa.size(); ++k) within[g][k] = 0.5 * (wa[k] + wb[k]);
    }
    return LocalPrediction(groups, std::move(within));
}

// Row of the special-edge target reachable from `row`, if any.
std::optional<std::pair<int, SpecialEdge>> special_from(int row) {
    const int code = row + 1;
    if (code == labels::T12.code()) return std::pair{row, SpecialEdge::T13};
    if (code == labels::T11.code()) return std::pair{labels::L1.code() - 1, SpecialEdge::AbsentT12};
    if (code == labels::L5.code()) return std::pair{row, SpecialEdge::L6};
    return std::nullopt;
}

// Given forward distances to every label node, picks the lexicographically smallest optimal
// sequence. A node is "live" when an optimal src->dst path passes through it.
LabelPath extract_path(const IdentGraph& g, const std::vector<double>& dist) {
    const std::size_t n = g.columns();
    const double total = dist[g.dst()];
    std::vector<char> live(g.node_count(), 0);
    for (int r = 0; r < IdentGraph::kRows; ++r) {
        const auto v = g.node(n - 1, r);
        if (dist[v] + 0.0 == total) live[v] = 1;
    }
    for (std::size_t c = n - 1; c-- > 0;) {
        for (int r = 0; r < IdentGraph::kRows; ++r) {
            const auto v = g.node(c, r);
            for (const auto& e : g.out_edges(v)) {
                if (live[e.to] && dist[v] + (e.cost + g.node_cost(e.to)) == dist[e.to]) {
                    live[v] = 1;
                    break;
                }
            }
        }
    }

    LabelPath path;
    path.total_cost = total;
    std::size_t cur = g.src();
    for (std::size_t c = 0; c < n; ++c) {
        std::optional<IdentGraph::Edge> best;
        for (const auto& e : g.out_edges(cur)) {
            if (!live[e.to]) continue;
            if (dist[cur] + (e.cost + g.node_cost(e.to)) != dist[e.to]) continue;
            if (!best || g.row_of(e.to) < g.row_of(best->to)) best = e;
        }
        if (!best) throw std::logic_error("no optimal continuation in label graph");
        if (best->special) path.used_special.emplace_back(c, *best->special);
        path.labels.emplace_back(g.row_of(best->to) + 1);
        cur = best->to;
    }
    return path;
}

}  // namespace

LocalPrediction fuse_predictions(const std::optional<LocalPrediction>& spine_crop,
                                 const std::optional<LocalPrediction>& union_crop) {
    if (!spine_crop && !union_crop) {
        throw std::invalid_argument("fuse_predictions needs at least one prediction");
    }
    const auto uniform = LocalPrediction::uniform();
    return average(spine_crop ? *spine_crop : uniform, union_crop ? *union_crop : uniform);
}

IdentGraph::IdentGraph(std::vector<std::array<double, kRows>> unary, const GraphWeights& weights)
    : unary_(std::move(unary)), weights_(weights) {
    if (unary_.empty()) throw std::invalid_argument("label graph needs at least one vertebra");
    for (double w : {weights_.group, weights_.t13, weights_.no_t12, weights_.l6, weights_.regular}) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("graph weights must be finite and >= 0");
    }
    for (const auto& col : unary_) {
        for (double u : col) {
            if (!(u >= 0.0) || !std::isfinite(u)) throw std::invalid_argument("unary costs must be finite and >= 0");
        }
    }

    adjacency_.resize(node_count());
    const std::size_t n = columns();
    for (int r = 0; r < kRows; ++r) adjacency_[src()].push_back({node(0, r), 0.0, std::nullopt});
    for (std::size_t c = 0; c + 1 < n; ++c) {
        for (int r = 0; r < kRows; ++r) {
            auto& out = adjacency_[node(c, r)];
            if (r + 1 < kRows) out.push_back({node(c + 1, r + 1), weights_.regular, std::nullopt});
            if (auto s = special_from(r)) {
                const double cost = s->second == SpecialEdge::T13
                                        ? weights_.t13
                                        : (s->second == SpecialEdge::L6 ? weights_.l6 : weights_.no_t12);
                out.push_back({node(c + 1, s->first), cost, s->second});
            }
        }
    }
    for (int r = 0; r < kRows; ++r) adjacency_[node(n - 1, r)].push_back({dst(), 0.0, std::nullopt});
}

double IdentGraph::node_cost(std::size_t v) const {
    if (v == src() || v == dst()) return 0.0;
    return unary_[column_of(v)][static_cast<std::size_t>(row_of(v))];
}

std::size_t IdentGraph::edge_count() const {
    std::size_t e = 0;
    for (const auto& a : adjacency_) e += a.size();
    return e;
}

IdentGraph build_graph(const std::vector<LocalPrediction>& predictions, const GraphWeights& weights) {
    std::vector<std::array<double, IdentGraph::kRows>> unary(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& p = predictions[i];
        for (int r = 0; r < IdentGraph::kRows; ++r) {
            const VertebraLabel label(r + 1);
            const double pv = p.probability(label);
            const double pg = p.group_probability(group_of(label));
            if (pv < 0.0 || pv > 1.0 || pg < 0.0 || pg > 1.0) {
                throw std::invalid_argument("probability outside [0,1] for vertebra " + std::to_string(i));
            }
            unary[i][static_cast<std::size_t>(r)] = (1.0 - pv) + weights.group * (1.0 - pg);
        }
    }
    return IdentGraph(std::move(unary), weights);
}

LabelPath shortest_path(const IdentGraph& graph) {
    std::vector<double> dist(graph.node_count(), kInf);
    std::vector<char> settled(graph.node_count(), 0);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[graph.src()] = 0.0;
    queue.push({0.0, graph.src()});
    while (!queue.empty()) {
        const auto [d, u] = queue.top();
        queue.pop();
        if (settled[u]) continue;
        settled[u] = 1;
        if (u == graph.dst()) continue;
        for (const auto& e : graph.out_edges(u)) {
            const double nd = d + (e.cost + graph.node_cost(e.to));
            if (nd < dist[e.to]) {
                dist[e.to] = nd;
                queue.push({nd, e.to});
            }
        }
    }
    return extract_path(graph, dist);
}

LabelPath dp_oracle(const IdentGraph& graph) {
    // Forward sweep, one column at a time; predecessors are enumerated from the label arithmetic
    // rather than from the adjacency lists.
    const std::size_t n = graph.columns();
    const auto& w = graph.weights();
    std::vector<double> dist(graph.node_count(), kInf);
    dist[graph.src()] = 0.0;
    for (int r = 0; r < IdentGraph::kRows; ++r) {
        dist[graph.node(0, r)] = 0.0 + (0.0 + graph.unary(0, r));
    }
    for (std::size_t c = 1; c < n; ++c) {
        for (int r = 0; r < IdentGraph::kRows; ++r) {
            const int code = r + 1;
            const double u = graph.unary(c, r);
            double best = kInf;
            auto relax = [&](int prev_code, double edge) {
                best = std::min(best, dist[graph.node(c - 1, prev_code - 1)] + (edge + u));
            };
            if (code >= 2) relax(code - 1, w.regular);
            if (code == labels::T12.code()) relax(labels::T12.code(), w.t13);
            if (code == labels::L1.code()) relax(labels::T11.code(), w.no_t12);
            if (code == labels::L5.code()) relax(labels::L5.code(), w.l6);
            dist[graph.node(c, r)] = best;
        }
    }
    double total = kInf;
    for (int r = 0; r < IdentGraph::kRows; ++r) total = std::min(total, dist[graph.node(n - 1, r)] + 0.0);
    dist[graph.dst()] = total;
    return extract_path(graph, dist);
}

bool TransitionalResult::flagged() const {
    return std::any_of(flags.begin(), flags.end(), [](const auto& f) { return !f.empty(); });
}

TransitionalResult postprocess_transitional(const LabelPath& path) {
    TransitionalResult out;
    out.labels = path.labels;
    out.flags.resize(path.labels.size());
    int t13_count = 0;
    int l6_count = 0;
    int absent_count = 0;
    for (std::size_t i = 1; i < path.labels.size(); ++i) {
        const auto prev = path.labels[i - 1];
        const auto cur = path.labels[i];
        if (cur == prev && (cur == labels::T12 || cur == labels::L5)) {
            const bool is_t12 = cur == labels::T12;
            int& count = is_t12 ? t13_count : l6_count;
            // Only the second member of a run is re-labelled; a run of three is inconsistent.
            const bool second_of_run = i < 2 || path.labels[i - 2] != cur;
            if (second_of_run && count == 0) {
                out.labels[i] = is_t12 ? labels::T13 : labels::L6;
                out.events.emplace_back(i, is_t12 ? SpecialEdge::T13 : SpecialEdge::L6);
                ++count;
            } else {
                out.flags[i].insert(RecordFlag::LabelRepeat);
            }
        } else if (prev == labels::T11 && cur == labels::L1) {
            if (absent_count == 0) {
                out.events.emplace_back(i, SpecialEdge::AbsentT12);
            } else {
                out.flags[i].insert(RecordFlag::LabelRepeat);
            }
            ++absent_count;
        } else if (!(prev.in_graph_space() && cur.code() == prev.code() + 1)) {
            out.flags[i].insert(RecordFlag::LabelRepeat);
        }
    }
    return out;
}

TransitionalResult identify(const std::vector<LocalPrediction>& predictions, const GraphWeights& weights) {
    return postprocess_transitional(shortest_path(build_graph(predictions, weights)));
}

}  // namespace spinecycle
