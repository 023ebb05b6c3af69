#include "spinecycle/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spinecycle {

namespace {

constexpr double kLatticeTolerance = 1e-6;

template <typename T>
T clamp_cast(double v) {
    if constexpr (std::is_integral_v<T>) {
        const double r = std::nearbyint(v);
        return static_cast<T>(std::clamp(r, static_cast<double>(std::numeric_limits<T>::min()),
                                         static_cast<double>(std::numeric_limits<T>::max())));
    } else {
        return static_cast<T>(v);
    }
}

std::size_t clamp_index(double v, std::size_t n) {
    const double r = std::floor(v + 0.5);
    if (r <= 0.0) return 0;
    if (r >= static_cast<double>(n - 1)) return n - 1;
    return static_cast<std::size_t>(r);
}

template <typename T>
Grid<T> resample_impl(const Grid<T>& grid, double target_mm, Interpolation interp) {
    if (!(target_mm > 0.0)) throw std::invalid_argument("target spacing must be positive");
    const auto& g = grid.geometry();
    for (auto s : g.sizes) {
        if (s == 0) throw std::invalid_argument("cannot resample a grid with a zero-size axis");
    }
    if (g.spacing[0] == target_mm && g.spacing[1] == target_mm && g.spacing[2] == target_mm) {
        return grid;
    }

    GridGeometry out_geo = g;
    std::array<std::vector<double>, 3> src_pos;  // continuous source index per output index
    for (std::size_t a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(g.sizes[a]) * g.spacing[a];
        const auto n = static_cast<std::size_t>(std::max(1.0, std::round(extent / target_mm)));
        out_geo.sizes[a] = n;
        out_geo.spacing[a] = target_mm;
        src_pos[a].resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            src_pos[a][i] = (static_cast<double>(i) + 0.5) * target_mm / g.spacing[a] - 0.5;
        }
    }
    out_geo.origin = g.world({src_pos[0][0], src_pos[1][0], src_pos[2][0]});

    Grid<T> out(out_geo);
    const auto& sz = g.sizes;
    auto src = grid.data();

    if (interp == Interpolation::Nearest) {
        std::array<std::vector<std::size_t>, 3> nn;
        for (std::size_t a = 0; a < 3; ++a) {
            nn[a].resize(out_geo.sizes[a]);
            for (std::size_t i = 0; i < out_geo.sizes[a]; ++i) nn[a][i] = clamp_index(src_pos[a][i], sz[a]);
        }
        for (std::size_t k = 0; k < out_geo.sizes[2]; ++k)
            for (std::size_t j = 0; j < out_geo.sizes[1]; ++j)
                for (std::size_t i = 0; i < out_geo.sizes[0]; ++i)
                    out.at(i, j, k) = src[g.linear(nn[0][i], nn[1][j], nn[2][k])];
        return out;
    }

    // Trilinear with edge clamping.
    struct Tap {
        std::size_t lo, hi;
        double w;
    };
    std::array<std::vector<Tap>, 3> taps;
    for (std::size_t a = 0; a < 3; ++a) {
        taps[a].resize(out_geo.sizes[a]);
        for (std::size_t i = 0; i < out_geo.sizes[a]; ++i) {
            const double p = std::clamp(src_pos[a][i], 0.0, static_cast<double>(sz[a] - 1));
            const auto lo = static_cast<std::size_t>(std::floor(p));
            const auto hi = std::min(lo + 1, sz[a] - 1);
            taps[a][i] = {lo, hi, p - static_cast<double>(lo)};
        }
    }
    for (std::size_t k = 0; k < out_geo.sizes[2]; ++k) {
        const auto& tk = taps[2][k];
        for (std::size_t j = 0; j < out_geo.sizes[1]; ++j) {
            const auto& tj = taps[1][j];
            for (std::size_t i = 0; i < out_geo.sizes[0]; ++i) {
                const auto& ti = taps[0][i];
                auto v = [&](std::size_t x, std::size_t y, std::size_t z) {
                    return static_cast<double>(src[g.linear(x, y, z)]);
                };
                const double c00 = v(ti.lo, tj.lo, tk.lo) * (1 - ti.w) + v(ti.hi, tj.lo, tk.lo) * ti.w;
                const double c10 = v(ti.lo, tj.hi, tk.lo) * (1 - ti.w) + v(ti.hi, tj.hi, tk.lo) * ti.w;
                const double c01 = v(ti.lo, tj.lo, tk.hi) * (1 - ti.w) + v(ti.hi, tj.lo, tk.hi) * ti.w;
                const double c11 = v(ti.lo, tj.hi, tk.hi) * (1 - ti.w) + v(ti.hi, tj.hi, tk.hi) * ti.w;
                const double c0 = c00 * (1 - tj.w) + c10 * tj.w;
                const double c1 = c01 * (1 - tj.w) + c11 * tj.w;
                out.at(i, j, k) = clamp_cast<T>(c0 * (1 - tk.w) + c1 * tk.w);
            }
        }
    }
    return out;
}

Index3 require_offset(const GridGeometry& outer, const GridGeometry& inner, const char* what) {
    auto off = lattice_offset(outer, inner);
    if (!off) throw GeometryMismatch(std::string(what) + ": grids do not share a voxel lattice");
    return *off;
}

}  // namespace

void GridGeometry::validate() const {
    for (std::size_t a = 0; a < 3; ++a) {
        if (sizes[a] == 0) throw std::invalid_argument("grid size must be positive on every axis");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw std::invalid_argument("grid spacing must be positive on every axis");
        }
    }
    if (!valid_orientation(orientation)) {
        throw std::invalid_argument("orientation codes must cover each anatomic axis once");
    }
}

Vec3 GridGeometry::world(const std::array<double, 3>& index) const {
    Vec3 p = origin;
    for (std::size_t a = 0; a < 3; ++a) {
        p[world_axis(orientation[a])] += axis_sign(orientation[a]) * index[a] * spacing[a];
    }
    return p;
}

std::array<double, 3> GridGeometry::continuous_index(const Vec3& p) const {
    std::array<double, 3> idx{};
    for (std::size_t a = 0; a < 3; ++a) {
        const int w = world_axis(orientation[a]);
        idx[a] = (p[w] - origin[w]) * axis_sign(orientation[a]) / spacing[a];
    }
    return idx;
}

Index3 GridGeometry::nearest_index(const Vec3& p) const {
    const auto c = continuous_index(p);
    return {static_cast<std::ptrdiff_t>(std::floor(c[0] + 0.5)),
            static_cast<std::ptrdiff_t>(std::floor(c[1] + 0.5)),
            static_cast<std::ptrdiff_t>(std::floor(c[2] + 0.5))};
}

Box3 GridGeometry::world_bounds() const {
    Box3 b;
    b.expand(world(0, 0, 0));
    b.expand(world(sizes[0] - 1, sizes[1] - 1, sizes[2] - 1));
    return b;
}

std::optional<Index3> lattice_offset(const GridGeometry& outer, const GridGeometry& inner) {
    if (outer.orientation != inner.orientation) return std::nullopt;
    for (std::size_t a = 0; a < 3; ++a) {
        if (std::abs(outer.spacing[a] - inner.spacing[a]) > kLatticeTolerance * outer.spacing[a]) {
            return std::nullopt;
        }
    }
    const auto c = outer.continuous_index(inner.origin);
    Index3 off{};
    for (std::size_t a = 0; a < 3; ++a) {
        const double r = std::round(c[a]);
        if (std::abs(c[a] - r) > 1e-4) return std::nullopt;
        off[a] = static_cast<std::ptrdiff_t>(r);
    }
    return off;
}

MaskGrid resample_isotropic(const MaskGrid& grid, double target_mm, Interpolation interp) {
    auto out = resample_impl(grid, target_mm, interp);
    if (interp == Interpolation::Linear) {
        for (auto& v : out.data()) v = v != 0 ? 1 : 0;
    }
    return out;
}

Int16Grid resample_isotropic(const Int16Grid& grid, double target_mm, Interpolation interp) {
    return resample_impl(grid, target_mm, interp);
}

FloatGrid resample_isotropic(const FloatGrid& grid, double target_mm, Interpolation interp) {
    return resample_impl(grid, target_mm, interp);
}

template <typename T>
Grid<T> reorient(const Grid<T>& grid, const Orientation& target) {
    if (!valid_orientation(target)) {
        throw std::invalid_argument("target orientation codes must cover each anatomic axis once");
    }
    const auto& g = grid.geometry();
    if (g.orientation == target) return grid;

    // For each target axis: source axis and whether it is traversed backwards.
    std::array<std::size_t, 3> src_axis{};
    std::array<bool, 3> flip{};
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t s = 0; s < 3; ++s) {
            if (world_axis(g.orientation[s]) == world_axis(target[t])) {
                src_axis[t] = s;
                flip[t] = g.orientation[s] != target[t];
            }
        }
    }

    GridGeometry out_geo;
    out_geo.orientation = target;
    std::array<double, 3> src_of_origin{};
    for (std::size_t t = 0; t < 3; ++t) {
        out_geo.sizes[t] = g.sizes[src_axis[t]];
        out_geo.spacing[t] = g.spacing[src_axis[t]];
        src_of_origin[src_axis[t]] = flip[t] ? static_cast<double>(g.sizes[src_axis[t]] - 1) : 0.0;
    }
    out_geo.origin = g.world(src_of_origin);

    Grid<T> out(out_geo);
    auto src = grid.data();
    std::array<std::size_t, 3> n{};
    std::array<std::size_t, 3> s{};
    for (n[2] = 0; n[2] < out_geo.sizes[2]; ++n[2]) {
        for (n[1] = 0; n[1] < out_geo.sizes[1]; ++n[1]) {
            for (n[0] = 0; n[0] < out_geo.sizes[0]; ++n[0]) {
                for (std::size_t t = 0; t < 3; ++t) {
                    s[src_axis[t]] = flip[t] ? out_geo.sizes[t] - 1 - n[t] : n[t];
                }
                out.at(n[0], n[1], n[2]) = src[g.linear(s[0], s[1], s[2])];
            }
        }
    }
    return out;
}

template MaskGrid reorient(const MaskGrid&, const Orientation&);
template Int16Grid reorient(const Int16Grid&, const Orientation&);
template FloatGrid reorient(const FloatGrid&, const Orientation&);
template LabelGrid reorient(const LabelGrid&, const Orientation&);

ComponentSet connected_components(const MaskGrid& mask, Connectivity connectivity) {
    const auto& g = mask.geometry();
    const auto nx = static_cast<std::ptrdiff_t>(g.sizes[0]);
    const auto ny = static_cast<std::ptrdiff_t>(g.sizes[1]);
    const auto nz = static_cast<std::ptrdiff_t>(g.sizes[2]);
    const auto src = mask.data();

    std::vector<std::array<std::ptrdiff_t, 3>> offsets;
    for (std::ptrdiff_t dz = -1; dz <= 1; ++dz)
        for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
            for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(static_cast<int>(dx)) + std::abs(static_cast<int>(dy)) +
                                      std::abs(static_cast<int>(dz));
                if (manhattan == 0) continue;
                if (connectivity == Connectivity::Six && manhattan != 1) continue;
                offsets.push_back({dx, dy, dz});
            }

    struct Accum {
        std::size_t count = 0;
        std::array<std::uint64_t, 3> sum{};
        std::array<std::size_t, 3> lo{}, hi{};
        std::size_t first = 0;
    };
    std::vector<std::int32_t> provisional(g.voxel_count(), 0);
    std::vector<Accum> accums;
    std::vector<std::size_t> stack;

    const std::size_t plane = g.sizes[0] * g.sizes[1];
    for (std::size_t start = 0; start < src.size(); ++start) {
        if (src[start] == 0 || provisional[start] != 0) continue;
        const auto id = static_cast<std::int32_t>(accums.size() + 1);
        Accum acc;
        acc.first = start;
        acc.lo = {g.sizes[0], g.sizes[1], g.sizes[2]};
        provisional[start] = id;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t v = stack.back();
            stack.pop_back();
            const std::size_t k = v / plane;
            const std::size_t j = (v % plane) / g.sizes[0];
            const std::size_t i = v % g.sizes[0];
            ++acc.count;
            acc.sum[0] += i;
            acc.sum[1] += j;
            acc.sum[2] += k;
            acc.lo = {std::min(acc.lo[0], i), std::min(acc.lo[1], j), std::min(acc.lo[2], k)};
            acc.hi = {std::max(acc.hi[0], i), std::max(acc.hi[1], j), std::max(acc.hi[2], k)};
            for (const auto& o : offsets) {
                const auto x = static_cast<std::ptrdiff_t>(i) + o[0];
                const auto y = static_cast<std::ptrdiff_t>(j) + o[1];
                const auto z = static_cast<std::ptrdiff_t>(k) + o[2];
                if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) continue;
                const auto w = static_cast<std::size_t>(x + nx * (y + ny * z));
                if (src[w] != 0 && provisional[w] == 0) {
                    provisional[w] = id;
                    stack.push_back(w);
                }
            }
        }
        accums.push_back(acc);
    }

    // Deterministic ids: voxel count descending, ties by lowest linear index (discovery order).
    std::vector<std::size_t> order(accums.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return accums[a].count > accums[b].count; });
    std::vector<std::int32_t> remap(accums.size() + 1, 0);
    ComponentSet out;
    out.components.reserve(accums.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const auto& acc = accums[order[rank]];
        remap[order[rank] + 1] = static_cast<std::int32_t>(rank + 1);
        Component c;
        c.id = static_cast<std::int32_t>(rank + 1);
        c.voxel_count = acc.count;
        const double n = static_cast<double>(acc.count);
        c.centroid = g.world({static_cast<double>(acc.sum[0]) / n, static_cast<double>(acc.sum[1]) / n,
                              static_cast<double>(acc.sum[2]) / n});
        c.bounds.expand(g.world(acc.lo[0], acc.lo[1], acc.lo[2]));
        c.bounds.expand(g.world(acc.hi[0], acc.hi[1], acc.hi[2]));
        c.first_voxel = acc.first;
        out.components.push_back(c);
    }
    for (auto& v : provisional) v = remap[static_cast<std::size_t>(v)];
    out.label_map = LabelGrid(g, std::move(provisional));
    return out;
}

std::size_t foreground_count(const MaskGrid& mask) {
    const auto d = mask.data();
    return static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [](auto v) { return v != 0; }));
}

double mask_volume_mm3(const MaskGrid& mask) {
    return static_cast<double>(foreground_count(mask)) * mask.geometry().voxel_volume();
}

Vec3 centroid_mm(const MaskGrid& mask) {
    const auto& g = mask.geometry();
    std::array<std::uint64_t, 3> sum{};
    std::uint64_t n = 0;
    for (std::size_t k = 0; k < g.sizes[2]; ++k)
        for (std::size_t j = 0; j < g.sizes[1]; ++j)
            for (std::size_t i = 0; i < g.sizes[0]; ++i)
                if (mask.at(i, j, k) != 0) {
                    sum[0] += i;
                    sum[1] += j;
                    sum[2] += k;
                    ++n;
                }
    if (n == 0) throw std::invalid_argument("centroid of an empty mask is undefined");
    const double dn = static_cast<double>(n);
    return g.world({static_cast<double>(sum[0]) / dn, static_cast<double>(sum[1]) / dn,
                    static_cast<double>(sum[2]) / dn});
}

Box3 mask_bounds(const MaskGrid& mask) {
    const auto& g = mask.geometry();
    std::array<std::size_t, 3> lo{g.sizes[0], g.sizes[1], g.sizes[2]};
    std::array<std::size_t, 3> hi{};
    bool any = false;
    for (std::size_t k = 0; k < g.sizes[2]; ++k)
        for (std::size_t j = 0; j < g.sizes[1]; ++j)
            for (std::size_t i = 0; i < g.sizes[0]; ++i)
                if (mask.at(i, j, k) != 0) {
                    any = true;
                    lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
                    hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
                }
    Box3 b;
    if (!any) return b;
    b.expand(g.world(lo[0], lo[1], lo[2]));
    b.expand(g.world(hi[0], hi[1], hi[2]));
    return b;
}

namespace {

// Calls fn(outer_linear_index) for every foreground voxel of `inner` that falls inside `outer`.
template <typename Fn>
void for_each_aligned(const GridGeometry& outer, const MaskGrid& inner, const Index3& off, Fn&& fn) {
    const auto& ig = inner.geometry();
    for (std::size_t k = 0; k < ig.sizes[2]; ++k) {
        const auto z = off[2] + static_cast<std::ptrdiff_t>(k);
        if (z < 0 || z >= static_cast<std::ptrdiff_t>(outer.sizes[2])) continue;
        for (std::size_t j = 0; j < ig.sizes[1]; ++j) {
            const auto y = off[1] + static_cast<std::ptrdiff_t>(j);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(outer.sizes[1])) continue;
            for (std::size_t i = 0; i < ig.sizes[0]; ++i) {
                const auto x = off[0] + static_cast<std::ptrdiff_t>(i);
                if (x < 0 || x >= static_cast<std::ptrdiff_t>(outer.sizes[0])) continue;
                if (inner.at(i, j, k) != 0) {
                    fn(outer.linear(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                                    static_cast<std::size_t>(z)));
                }
            }
        }
    }
}

}  // namespace

MaskGrid residual(const MaskGrid& spine_mask, std::span<const MaskGrid* const> vertebra_masks) {
    MaskGrid out = spine_mask;
    auto d = out.data();
    for (const MaskGrid* m : vertebra_masks) {
        if (m == nullptr) continue;
        const auto off = require_offset(spine_mask.geometry(), m->geometry(), "residual");
        for_each_aligned(spine_mask.geometry(), *m, off, [&](std::size_t idx) { d[idx] = 0; });
    }
    return out;
}

void paste_union(MaskGrid& target, const MaskGrid& mask) {
    const auto off = require_offset(target.geometry(), mask.geometry(), "union");
    auto d = target.data();
    for_each_aligned(target.geometry(), mask, off, [&](std::size_t idx) { d[idx] = 1; });
}

MaskGrid crop_to_content(const MaskGrid& mask) {
    const auto& g = mask.geometry();
    std::array<std::size_t, 3> lo{g.sizes[0], g.sizes[1], g.sizes[2]};
    std::array<std::size_t, 3> hi{};
    bool any = false;
    for (std::size_t k = 0; k < g.sizes[2]; ++k)
        for (std::size_t j = 0; j < g.sizes[1]; ++j)
            for (std::size_t i = 0; i < g.sizes[0]; ++i)
                if (mask.at(i, j, k) != 0) {
                    any = true;
                    lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
                    hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
                }
    GridGeometry sub = g;
    if (!any) {
        sub.sizes = {1, 1, 1};
        return MaskGrid(sub, std::uint8_t{0});
    }
    for (std::size_t a = 0; a < 3; ++a) sub.sizes[a] = hi[a] - lo[a] + 1;
    sub.origin = g.world(lo[0], lo[1], lo[2]);
    MaskGrid out(sub);
    for (std::size_t k = 0; k < sub.sizes[2]; ++k)
        for (std::size_t j = 0; j < sub.sizes[1]; ++j)
            for (std::size_t i = 0; i < sub.sizes[0]; ++i)
                out.at(i, j, k) = mask.at(lo[0] + i, lo[1] + j, lo[2] + k) != 0 ? 1 : 0;
    return out;
}

MaskGrid embed(const MaskGrid& mask, const GridGeometry& frame) {
    MaskGrid out(frame, std::uint8_t{0});
    paste_union(out, mask);
    return out;
}

MaskGrid extract_crop(const MaskGrid& grid, const Vec3& center, std::size_t side_voxels) {
    if (side_voxels == 0) throw std::invalid_argument("crop side must be positive");
    const auto& g = grid.geometry();
    GridGeometry crop;
    crop.sizes = {side_voxels, side_voxels, side_voxels};
    crop.spacing = {1.0, 1.0, 1.0};
    crop.orientation = g.orientation;
    const double half = (static_cast<double>(side_voxels) - 1.0) / 2.0;
    crop.origin = center;
    for (std::size_t a = 0; a < 3; ++a) {
        crop.origin[world_axis(g.orientation[a])] -= axis_sign(g.orientation[a]) * half;
    }

    // Axes of crop and source are parallel, so the lookup separates per axis.
    std::array<std::vector<std::ptrdiff_t>, 3> src_index;
    const auto src_origin = g.continuous_index(crop.origin);
    for (std::size_t a = 0; a < 3; ++a) {
        src_index[a].resize(side_voxels);
        for (std::size_t i = 0; i < side_voxels; ++i) {
            const double c = src_origin[a] + static_cast<double>(i) / g.spacing[a];
            const auto r = static_cast<std::ptrdiff_t>(std::floor(c + 0.5));
            src_index[a][i] = (r >= 0 && r < static_cast<std::ptrdiff_t>(g.sizes[a])) ? r : -1;
        }
    }
    MaskGrid out(crop, std::uint8_t{0});
    for (std::size_t k = 0; k < side_voxels; ++k) {
        if (src_index[2][k] < 0) continue;
        for (std::size_t j = 0; j < side_voxels; ++j) {
            if (src_index[1][j] < 0) continue;
            for (std::size_t i = 0; i < side_voxels; ++i) {
                if (src_index[0][i] < 0) continue;
                out.at(i, j, k) = grid.at(static_cast<std::size_t>(src_index[0][i]),
                                          static_cast<std::size_t>(src_index[1][j]),
                                          static_cast<std::size_t>(src_index[2][k])) != 0
                                      ? 1
                                      : 0;
            }
        }
    }
    return out;
}

Vec3 crop_center(const GridGeometry& crop) {
    return crop.world({(static_cast<double>(crop.sizes[0]) - 1.0) / 2.0,
                       (static_cast<double>(crop.sizes[1]) - 1.0) / 2.0,
                       (static_cast<double>(crop.sizes[2]) - 1.0) / 2.0});
}

std::vector<Vec3> boundary_voxels(const MaskGrid& mask) {
    const auto& g = mask.geometry();
    std::vector<Vec3> out;
    auto fg = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::ptrdiff_t k) {
        if (!g.inside({i, j, k})) return false;
        return mask.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                       static_cast<std::size_t>(k)) != 0;
    };
    for (std::size_t k = 0; k < g.sizes[2]; ++k)
        for (std::size_t j = 0; j < g.sizes[1]; ++j)
            for (std::size_t i = 0; i < g.sizes[0]; ++i) {
                if (mask.at(i, j, k) == 0) continue;
                const auto x = static_cast<std::ptrdiff_t>(i);
                const auto y = static_cast<std::ptrdiff_t>(j);
                const auto z = static_cast<std::ptrdiff_t>(k);
                if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) ||
                    !fg(x, y, z - 1) || !fg(x, y, z + 1)) {
                    out.push_back(g.world(i, j, k));
                }
            }
    return out;
}

}  // namespace spinecycle
