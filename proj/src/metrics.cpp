#include "spinecycle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace spinecycle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Foreground voxels of `m` with a background 6-neighbour, as indices in the lattice of `frame`
// shifted by `off`.
std::vector<Index3> boundary_indices(const MaskGrid& m, const Index3& off) {
    const auto& g = m.geometry();
    std::vector<Index3> out;
    auto fg = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::ptrdiff_t k) {
        return g.inside({i, j, k}) && m.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                           static_cast<std::size_t>(k)) != 0;
    };
    for (std::size_t k = 0; k < g.sizes[2]; ++k)
        for (std::size_t j = 0; j < g.sizes[1]; ++j)
            for (std::size_t i = 0; i < g.sizes[0]; ++i) {
                if (m.at(i, j, k) == 0) continue;
                const auto x = static_cast<std::ptrdiff_t>(i);
                const auto y = static_cast<std::ptrdiff_t>(j);
                const auto z = static_cast<std::ptrdiff_t>(k);
                if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) ||
                    !fg(x, y, z - 1) || !fg(x, y, z + 1)) {
                    out.push_back({x + off[0], y + off[1], z + off[2]});
                }
            }
    return out;
}

// Exact 1-D squared distance transform (lower envelope of parabolas) with sample spacing h.
void edt_1d(std::vector<double>& f, double h, std::vector<double>& d, std::vector<std::size_t>& v,
            std::vector<double>& z) {
    const std::size_t n = f.size();
    d.assign(n, kInf);
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    std::size_t k = 0;
    bool any = false;
    for (std::size_t q = 0; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        const double pq = static_cast<double>(q) * h;
        if (!any) {
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            any = true;
            continue;
        }
        double s = 0.0;
        while (true) {
            const double pv = static_cast<double>(v[k]) * h;
            s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    if (!any) return;
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const double pq = static_cast<double>(q) * h;
        while (z[k + 1] < pq) ++k;
        const double pv = static_cast<double>(v[k]) * h;
        d[q] = (pq - pv) * (pq - pv) + f[v[k]];
    }
    f = d;
}

double percentile_of(std::vector<double> values, double percentile) {
    std::sort(values.begin(), values.end());
    if (percentile >= 100.0) return values.back();
    const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(values.size())));
    return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

// Squared distance to the nearest site over a box of the lattice.
struct DistanceField {
    Index3 lo{};
    std::array<std::size_t, 3> size{};
    std::vector<double> d2;

    double at(const Index3& p) const {
        const auto i = static_cast<std::size_t>(p[0] - lo[0]);
        const auto j = static_cast<std::size_t>(p[1] - lo[1]);
        const auto k = static_cast<std::size_t>(p[2] - lo[2]);
        return d2[i + size[0] * (j + size[1] * k)];
    }
};

DistanceField distance_field(const std::vector<Index3>& sites, const Index3& lo, const Index3& hi,
                             const std::array<double, 3>& spacing) {
    DistanceField df;
    df.lo = lo;
    for (std::size_t a = 0; a < 3; ++a) df.size[a] = static_cast<std::size_t>(hi[a] - lo[a] + 1);
    df.d2.assign(df.size[0] * df.size[1] * df.size[2], kInf);
    auto lin = [&](std::size_t i, std::size_t j, std::size_t k) { return i + df.size[0] * (j + df.size[1] * k); };
    for (const auto& s : sites) {
        df.d2[lin(static_cast<std::size_t>(s[0] - lo[0]), static_cast<std::size_t>(s[1] - lo[1]),
                  static_cast<std::size_t>(s[2] - lo[2]))] = 0.0;
    }
    std::vector<double> line, d, z;
    std::vector<std::size_t> v;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const std::size_t n = df.size[axis];
        const std::size_t a1 = (axis + 1) % 3;
        const std::size_t a2 = (axis + 2) % 3;
        line.resize(n);
        for (std::size_t u = 0; u < df.size[a1]; ++u) {
            for (std::size_t w = 0; w < df.size[a2]; ++w) {
                std::array<std::size_t, 3> idx{};
                idx[a1] = u;
                idx[a2] = w;
                for (std::size_t q = 0; q < n; ++q) {
                    idx[axis] = q;
                    line[q] = df.d2[lin(idx[0], idx[1], idx[2])];
                }
                edt_1d(line, spacing[axis], d, v, z);
                for (std::size_t q = 0; q < n; ++q) {
                    idx[axis] = q;
                    df.d2[lin(idx[0], idx[1], idx[2])] = line[q];
                }
            }
        }
    }
    return df;
}

}  // namespace

std::vector<Match> match_vertebrae(const EvalPair& pair) {
    std::vector<Match> out;
    for (std::size_t g = 0; g < pair.ground_truth.size(); ++g) {
        Match m;
        m.gt = g;
        const auto& gt = pair.ground_truth[g];
        for (std::size_t p = 0; p < pair.predicted.size(); ++p) {
            const auto& pr = pair.predicted[p];
            if (pr.label != gt.label) continue;
            const double d = distance(pr.location, gt.location);
            if (d > pair.match_tolerance_mm) continue;
            if (!m.predicted || d < m.distance_mm) {
                m.predicted = p;
                m.distance_mm = d;
            }
        }
        out.push_back(m);
    }
    return out;
}

double id_rate(const EvalPair& pair) {
    if (pair.ground_truth.empty()) throw std::invalid_argument("id_rate needs a non-empty ground truth");
    const auto matches = match_vertebrae(pair);
    const auto hits = std::count_if(matches.begin(), matches.end(), [](const Match& m) { return m.predicted.has_value(); });
    return 100.0 * static_cast<double>(hits) / static_cast<double>(pair.ground_truth.size());
}

std::optional<double> mld(const EvalPair& pair) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& m : match_vertebrae(pair)) {
        if (!m.predicted) continue;
        sum += m.distance_mm;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

double dice(const MaskGrid& a, const MaskGrid& b) {
    const auto off = lattice_offset(a.geometry(), b.geometry());
    if (!off) throw GeometryMismatch("dice: masks do not share a voxel lattice");
    const std::size_t na = foreground_count(a);
    const std::size_t nb = foreground_count(b);
    if (na + nb == 0) return 1.0;
    std::size_t both = 0;
    const auto& gb = b.geometry();
    for (std::size_t k = 0; k < gb.sizes[2]; ++k)
        for (std::size_t j = 0; j < gb.sizes[1]; ++j)
            for (std::size_t i = 0; i < gb.sizes[0]; ++i) {
                if (b.at(i, j, k) == 0) continue;
                const Index3 p{static_cast<std::ptrdiff_t>(i) + (*off)[0], static_cast<std::ptrdiff_t>(j) + (*off)[1],
                               static_cast<std::ptrdiff_t>(k) + (*off)[2]};
                if (a.geometry().inside(p) &&
                    a.at(static_cast<std::size_t>(p[0]), static_cast<std::size_t>(p[1]), static_cast<std::size_t>(p[2])) != 0) {
                    ++both;
                }
            }
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::optional<double> hausdorff(const MaskGrid& a, const MaskGrid& b, double percentile) {
    if (!(percentile > 0.0 && percentile <= 100.0)) {
        throw std::invalid_argument("Hausdorff percentile must lie in (0, 100]");
    }
    const auto off = lattice_offset(a.geometry(), b.geometry());
    if (!off) throw GeometryMismatch("hausdorff: masks do not share a voxel lattice");
    const auto ba = boundary_indices(a, {0, 0, 0});
    const auto bb = boundary_indices(b, *off);
    if (ba.empty() || bb.empty()) return std::nullopt;

    Index3 lo{std::numeric_limits<std::ptrdiff_t>::max(), std::numeric_limits<std::ptrdiff_t>::max(),
              std::numeric_limits<std::ptrdiff_t>::max()};
    Index3 hi{std::numeric_limits<std::ptrdiff_t>::min(), std::numeric_limits<std::ptrdiff_t>::min(),
              std::numeric_limits<std::ptrdiff_t>::min()};
    for (const auto* set : {&ba, &bb}) {
        for (const auto& p : *set) {
            for (std::size_t ax = 0; ax < 3; ++ax) {
                lo[ax] = std::min(lo[ax], p[ax]);
                hi[ax] = std::max(hi[ax], p[ax]);
            }
        }
    }
    const auto& spacing = a.geometry().spacing;
    auto directed = [&](const std::vector<Index3>& from, const std::vector<Index3>& to) {
        const auto field = distance_field(to, lo, hi, spacing);
        std::vector<double> d;
        d.reserve(from.size());
        for (const auto& p : from) d.push_back(std::sqrt(field.at(p)));
        return percentile_of(std::move(d), percentile);
    };
    return std::max(directed(ba, bb), directed(bb, ba));
}

MetricsReport evaluate(const EvalPair& pair, double hausdorff_percentile) {
    MetricsReport report;
    report.id_rate_percent = id_rate(pair);
    report.mld_mm = mld(pair);
    double dice_sum = 0.0, hd_sum = 0.0;
    std::size_t dice_n = 0, hd_n = 0;
    for (const auto& m : match_vertebrae(pair)) {
        const auto& gt = pair.ground_truth[m.gt];
        VertebraMetrics row;
        row.label = gt.label;
        row.gt_location = gt.location;
        row.identified = m.predicted.has_value();
        if (m.predicted) {
            const auto& pr = pair.predicted[*m.predicted];
            row.predicted_location = pr.location;
            row.distance_mm = m.distance_mm;
            if (pr.mask && gt.mask) {
                row.dice = dice(*gt.mask, *pr.mask);
                dice_sum += *row.dice;
                ++dice_n;
                row.hausdorff_mm = hausdorff(*gt.mask, *pr.mask, hausdorff_percentile);
                if (row.hausdorff_mm) {
                    hd_sum += *row.hausdorff_mm;
                    ++hd_n;
                }
            }
        }
        report.rows.push_back(row);
    }
    if (dice_n > 0) report.mean_dice = dice_sum / static_cast<double>(dice_n);
    if (hd_n > 0) report.mean_hausdorff_mm = hd_sum / static_cast<double>(hd_n);
    return report;
}

void write_metrics_tsv(std::ostream& os, const MetricsReport& report) {
    auto num = [](std::optional<double> v) {
        if (!v) return std::string("NA");
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", *v);
        return std::string(buf);
    };
    os << "label\tgt_x\tgt_y\tgt_z\tpred_x\tpred_y\tpred_z\tidentified\tdistance_mm\tdice\thausdorff_mm\n";
    for (const auto& r : report.rows) {
        os << r.label.name() << '\t' << num(r.gt_location.x) << '\t' << num(r.gt_location.y) << '\t'
           << num(r.gt_location.z) << '\t';
        if (r.predicted_location) {
            os << num(r.predicted_location->x) << '\t' << num(r.predicted_location->y) << '\t'
               << num(r.predicted_location->z) << '\t';
        } else {
            os << "NA\tNA\tNA\t";
        }
        os << (r.identified ? 1 : 0) << '\t' << (r.identified ? num(r.distance_mm) : "NA") << '\t'
           << num(r.dice) << '\t' << num(r.hausdorff_mm) << '\n';
    }
    os << "# id_rate_percent\t" << num(report.id_rate_percent) << '\n';
    os << "# mld_mm\t" << num(report.mld_mm) << '\n';
    os << "# mean_dice\t" << num(report.mean_dice) << '\n';
    os << "# mean_hausdorff_mm\t" << num(report.mean_hausdorff_mm) << '\n';
}

}  // namespace spinecycle
