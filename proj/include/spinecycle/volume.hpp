#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "spinecycle/geometry.hpp"

namespace spinecycle {

/// Thrown when two grids that must share a voxel lattice do not.
class GeometryMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Index3 = std::array<std::ptrdiff_t, 3>;

/// Voxel lattice: sizes, spacing (mm), origin (world position of voxel 0) and the anatomic
/// direction each grid axis runs along. world(index) = origin + sum_k sign_k * index_k * spacing_k
/// on the world axis of code k.
struct GridGeometry {
    std::array<std::size_t, 3> sizes{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    Vec3 origin;
    Orientation orientation = kLPS;

    /// Throws std::invalid_argument when sizes/spacing are not positive or the orientation is invalid.
    void validate() const;

    std::size_t voxel_count() const { return sizes[0] * sizes[1] * sizes[2]; }
    double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }

    std::size_t linear(std::size_t i, std::size_t j, std::size_t k) const {
        return i + sizes[0] * (j + sizes[1] * k);
    }
    bool inside(const Index3& idx) const {
        for (std::size_t a = 0; a < 3; ++a) {
            if (idx[a] < 0 || idx[a] >= static_cast<std::ptrdiff_t>(sizes[a])) return false;
        }
        return true;
    }

    Vec3 world(const std::array<double, 3>& index) const;
    Vec3 world(std::size_t i, std::size_t j, std::size_t k) const {
        return world({static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)});
    }
    /// Inverse of world(): continuous voxel index of a world point.
    std::array<double, 3> continuous_index(const Vec3& p) const;
    /// Nearest voxel index (may lie outside the grid).
    Index3 nearest_index(const Vec3& p) const;

    /// World box spanned by voxel centres.
    Box3 world_bounds() const;

    friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Integer offset of `inner` voxel 0 inside `outer` when both share spacing, orientation and
/// lattice; std::nullopt otherwise. The inner grid does not have to fit inside the outer one.
std::optional<Index3> lattice_offset(const GridGeometry& outer, const GridGeometry& inner);

template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    explicit Grid(GridGeometry geometry, T fill = T{})
        : geometry_(std::move(geometry)) {
        geometry_.validate();
        data_.assign(geometry_.voxel_count(), fill);
    }
    Grid(GridGeometry geometry, std::vector<T> data)
        : geometry_(std::move(geometry)), data_(std::move(data)) {
        geometry_.validate();
        if (data_.size() != geometry_.voxel_count()) {
            throw std::invalid_argument("grid data size " + std::to_string(data_.size()) +
                                        " does not match geometry (" +
                                        std::to_string(geometry_.voxel_count()) + " voxels)");
        }
    }

    const GridGeometry& geometry() const { return geometry_; }
    const std::array<std::size_t, 3>& sizes() const { return geometry_.sizes; }

    T& at(std::size_t i, std::size_t j, std::size_t k) { return data_[geometry_.linear(i, j, k)]; }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[geometry_.linear(i, j, k)];
    }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    GridGeometry geometry_;
    std::vector<T> data_;
};

using MaskGrid = Grid<std::uint8_t>;
using Int16Grid = Grid<std::int16_t>;
using FloatGrid = Grid<float>;
using LabelGrid = Grid<std::int32_t>;

/// Any grid element kind the file layer deals with.
using AnyGrid = std::variant<MaskGrid, Int16Grid, FloatGrid>;

enum class Interpolation { Nearest, Linear };

/// Resamples to isotropic `target_mm` spacing keeping the physical extent (to within one voxel).
/// Masks default to nearest-neighbour, scalar grids to trilinear.
MaskGrid resample_isotropic(const MaskGrid& grid, double target_mm,
                            Interpolation interp = Interpolation::Nearest);
Int16Grid resample_isotropic(const Int16Grid& grid, double target_mm,
                             Interpolation interp = Interpolation::Linear);
FloatGrid resample_isotropic(const FloatGrid& grid, double target_mm,
                             Interpolation interp = Interpolation::Linear);

/// Axis permutation and flips so that grid axes follow `target`. World positions of voxels are
/// unchanged.
template <typename T>
Grid<T> reorient(const Grid<T>& grid, const Orientation& target);

struct Component {
    std::int32_t id = 0;
    std::size_t voxel_count = 0;
    Vec3 centroid;
    Box3 bounds;
    std::size_t first_voxel = 0;  // lowest linear index, used for tie-breaking
};

struct ComponentSet {
    LabelGrid label_map;
    std::vector<Component> components;  // sorted by voxel_count descending; ids 1..n in that order
};

enum class Connectivity { Six = 6, TwentySix = 26 };

ComponentSet connected_components(const MaskGrid& mask, Connectivity connectivity = Connectivity::TwentySix);

std::size_t foreground_count(const MaskGrid& mask);
double mask_volume_mm3(const MaskGrid& mask);
/// Mean world coordinate of foreground voxels. Throws std::invalid_argument on an empty mask.
Vec3 centroid_mm(const MaskGrid& mask);
/// World box of foreground voxel centres (empty box for an empty mask).
Box3 mask_bounds(const MaskGrid& mask);

/// spine AND NOT union(vertebrae). Vertebra masks may be lattice-aligned sub-boxes of the spine grid.
MaskGrid residual(const MaskGrid& spine_mask, std::span<const MaskGrid* const> vertebra_masks);

/// ORs `mask` into `target`; `mask` must be lattice-aligned with `target`.
void paste_union(MaskGrid& target, const MaskGrid& mask);

/// Smallest lattice-aligned sub-grid holding every foreground voxel (a single zero voxel when empty).
MaskGrid crop_to_content(const MaskGrid& mask);

/// Re-embeds a sub-grid into a zero grid with geometry `frame`.
MaskGrid embed(const MaskGrid& mask, const GridGeometry& frame);

/// Cube of `side_voxels` at 1 mm spacing centred on `center`; outside voxels are zero.
MaskGrid extract_crop(const MaskGrid& grid, const Vec3& center, std::size_t side_voxels = 128);

/// Centre of a crop produced by extract_crop.
Vec3 crop_center(const GridGeometry& crop);

/// World coordinates of foreground voxels that touch background (6-neighbourhood) or the grid edge.
std::vector<Vec3> boundary_voxels(const MaskGrid& mask);

}  // namespace spinecycle
