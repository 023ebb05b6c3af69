#include <doctest.h>

#include "spinecycle/volume.hpp"
#include "support.hpp"

using namespace spinecycle;
using testing::fill_box;
using testing::geom;

TEST_CASE("geometry world/index round trip") {
    auto g = geom(5, 6, 7, 1.5, {10, -3, 2});
    g.orientation = {AxisCode::R, AxisCode::S, AxisCode::A};
    g.validate();
    for (std::size_t k = 0; k < 7; ++k)
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t i = 0; i < 5; ++i) {
                const auto w = g.world(i, j, k);
                const auto idx = g.nearest_index(w);
                CHECK(idx == Index3{static_cast<std::ptrdiff_t>(i), static_cast<std::ptrdiff_t>(j),
                                    static_cast<std::ptrdiff_t>(k)});
            }
    // R runs along -x, S along +z, A along -y
    const auto w = g.world(1, 1, 1);
    CHECK(w.x == doctest::Approx(10 - 1.5));
    CHECK(w.z == doctest::Approx(2 + 1.5));
    CHECK(w.y == doctest::Approx(-3 - 1.5));
    CHECK(g.voxel_volume() == doctest::Approx(3.375));

    auto bad = geom(0, 1, 1);
    CHECK_THROWS(bad.validate());
    auto bad2 = geom(2, 2, 2);
    bad2.orientation = {AxisCode::L, AxisCode::R, AxisCode::S};
    CHECK_THROWS(bad2.validate());
}

TEST_CASE("resample_isotropic") {
    SUBCASE("2 mm cube to 1 mm") {
        MaskGrid m(geom(14, 14, 14, 2.0));
        fill_box(m, {2, 2, 2}, {12, 12, 12});
        const auto r = resample_isotropic(m, 1.0);
        CHECK(r.geometry().spacing == std::array<double, 3>{1, 1, 1});
        CHECK(r.sizes() == std::array<std::size_t, 3>{28, 28, 28});
        CHECK(foreground_count(r) == 20 * 20 * 20);
        CHECK(mask_volume_mm3(r) == doctest::Approx(mask_volume_mm3(m)).epsilon(0.05));
        const auto back = resample_isotropic(r, 2.0);
        CHECK(std::abs(mask_volume_mm3(back) - mask_volume_mm3(m)) < 0.1 * mask_volume_mm3(m));
    }
    SUBCASE("identity keeps data bit-identical") {
        Int16Grid g(geom(4, 5, 6));
        for (std::size_t i = 0; i < g.data().size(); ++i) g.data()[i] = static_cast<std::int16_t>(i * 7 - 50);
        CHECK(resample_isotropic(g, 1.0) == g);
    }
    SUBCASE("anisotropic slab") {
        GridGeometry gg = geom(8, 8, 4);
        gg.spacing = {1, 1, 3};
        MaskGrid slab(gg);
        fill_box(slab, {2, 2, 1}, {6, 6, 3});
        const auto r = resample_isotropic(slab, 1.0);
        CHECK(r.sizes()[2] == 12);
        const auto b0 = gg.world_bounds(), b1 = r.geometry().world_bounds();
        // extents covered by voxel footprints agree within one voxel
        CHECK(std::abs((b1.max.z - b1.min.z + 1) - (b0.max.z - b0.min.z + 3)) <= 1.0);
        CHECK(mask_volume_mm3(r) == doctest::Approx(mask_volume_mm3(slab)));
        CHECK(centroid_mm(r).z == doctest::Approx(centroid_mm(slab).z));
    }
    SUBCASE("scalar grids use trilinear interpolation") {
        FloatGrid f(geom(2, 1, 1, 2.0));
        f.data()[0] = 0;
        f.data()[1] = 10;
        const auto r = resample_isotropic(f, 1.0);
        CHECK(r.sizes()[0] == 4);
        CHECK(r.data()[0] == doctest::Approx(0));
        CHECK(r.data()[1] == doctest::Approx(2.5));
        CHECK(r.data()[2] == doctest::Approx(7.5));
        CHECK(r.data()[3] == doctest::Approx(10));
    }
    CHECK_THROWS(resample_isotropic(MaskGrid(geom(2, 2, 2)), 0.0));
}

TEST_CASE("reorient") {
    MaskGrid m(geom(5, 4, 3, 1.0, {3, 4, 5}));
    fill_box(m, {0, 0, 0}, {3, 2, 1});
    m.at(4, 3, 2) = 1;
    CHECK(reorient(m, kLPS) == m);

    const Orientation flip{AxisCode::R, AxisCode::P, AxisCode::S};
    const auto once = reorient(m, flip);
    CHECK(once.geometry().orientation == flip);
    CHECK(reorient(once, kLPS) == m);

    const Orientation perm{AxisCode::I, AxisCode::L, AxisCode::A};
    const auto p = reorient(m, perm);
    CHECK(p.sizes() == std::array<std::size_t, 3>{3, 5, 4});
    const auto c0 = centroid_mm(m), c1 = centroid_mm(p);
    CHECK(c1.x == doctest::Approx(c0.x));
    CHECK(c1.y == doctest::Approx(c0.y));
    CHECK(c1.z == doctest::Approx(c0.z));
    CHECK(reorient(p, kLPS) == m);
    CHECK_THROWS(reorient(m, Orientation{AxisCode::L, AxisCode::L, AxisCode::S}));
}

TEST_CASE("connected_components") {
    SUBCASE("two disjoint cubes") {
        MaskGrid m(geom(10, 10, 10));
        fill_box(m, {0, 0, 0}, {3, 3, 3});
        fill_box(m, {6, 6, 6}, {9, 9, 9});
        const auto cs = connected_components(m);
        REQUIRE(cs.components.size() == 2);
        CHECK(cs.components[0].voxel_count == 27);
        CHECK(cs.components[1].voxel_count == 27);
    }
    SUBCASE("single voxel") {
        MaskGrid m(geom(4, 4, 4, 2.0, {1, 1, 1}));
        m.at(1, 2, 3) = 1;
        const auto cs = connected_components(m);
        REQUIRE(cs.components.size() == 1);
        CHECK(cs.components[0].centroid == m.geometry().world(1, 2, 3));
    }
    SUBCASE("corner contact") {
        MaskGrid m(geom(6, 6, 6));
        fill_box(m, {0, 0, 0}, {2, 2, 2});
        fill_box(m, {2, 2, 2}, {4, 4, 4});
        CHECK(connected_components(m, Connectivity::TwentySix).components.size() == 1);
        CHECK(connected_components(m, Connectivity::Six).components.size() == 2);
    }
    SUBCASE("partition, ordering and translation invariance") {
        MaskGrid m(geom(12, 12, 12));
        fill_box(m, {0, 0, 0}, {2, 2, 2});
        fill_box(m, {5, 5, 5}, {9, 9, 9});
        fill_box(m, {0, 10, 0}, {1, 11, 1});
        const auto cs = connected_components(m);
        REQUIRE(cs.components.size() == 3);
        std::size_t total = 0;
        for (std::size_t i = 0; i < cs.components.size(); ++i) {
            total += cs.components[i].voxel_count;
            CHECK(cs.components[i].id == static_cast<std::int32_t>(i + 1));
            if (i > 0) CHECK(cs.components[i - 1].voxel_count >= cs.components[i].voxel_count);
        }
        CHECK(total == foreground_count(m));
        for (std::size_t v = 0; v < m.data().size(); ++v) CHECK((cs.label_map.data()[v] != 0) == (m.data()[v] != 0));

        MaskGrid shifted(geom(12, 12, 12));
        fill_box(shifted, {1, 1, 1}, {3, 3, 3});
        fill_box(shifted, {6, 6, 6}, {10, 10, 10});
        fill_box(shifted, {1, 11, 1}, {2, 12, 2});
        CHECK(connected_components(shifted).components.size() == 3);
    }
    CHECK(connected_components(MaskGrid(geom(3, 3, 3))).components.empty());
}

TEST_CASE("residual") {
    MaskGrid spine(geom(10, 10, 10));
    fill_box(spine, {0, 0, 0}, {3, 3, 3});
    fill_box(spine, {6, 6, 6}, {9, 9, 9});
    MaskGrid first(geom(10, 10, 10));
    fill_box(first, {0, 0, 0}, {3, 3, 3});
    MaskGrid second(geom(10, 10, 10));
    fill_box(second, {6, 6, 6}, {9, 9, 9});

    CHECK(residual(spine, {}) == spine);
    const MaskGrid* both[] = {&first, &second};
    CHECK(foreground_count(residual(spine, both)) == 0);
    const MaskGrid* one[] = {&first};
    CHECK(residual(spine, one) == second);

    // compact sub-box masks work as well
    const auto compact = crop_to_content(first);
    CHECK(compact.sizes() == std::array<std::size_t, 3>{3, 3, 3});
    const MaskGrid* sub[] = {&compact};
    CHECK(residual(spine, sub) == second);
    CHECK(embed(compact, spine.geometry()) == first);

    // residual and union never overlap
    const auto r = residual(spine, one);
    for (std::size_t v = 0; v < r.data().size(); ++v) CHECK_FALSE((r.data()[v] && first.data()[v]));

    MaskGrid foreign(geom(10, 10, 10, 1.0, {0.5, 0, 0}));
    const MaskGrid* bad[] = {&foreign};
    CHECK_THROWS_AS(residual(spine, bad), GeometryMismatch);
}

TEST_CASE("volume and centroid") {
    MaskGrid m(geom(12, 12, 12));
    fill_box(m, {1, 1, 1}, {11, 11, 11});
    CHECK(mask_volume_mm3(m) == doctest::Approx(1000));
    const auto c = centroid_mm(m);
    CHECK(c.x == doctest::Approx(5.5));
    CHECK(c.y == doctest::Approx(5.5));
    CHECK(c.z == doctest::Approx(5.5));

    // L shape: (0,0,0) (1,0,0) (2,0,0) (0,1,0) -> mean (0.75, 0.25, 0)
    MaskGrid l(geom(4, 4, 1));
    l.at(0, 0, 0) = l.at(1, 0, 0) = l.at(2, 0, 0) = l.at(0, 1, 0) = 1;
    const auto cl = centroid_mm(l);
    CHECK(cl.x == doctest::Approx(0.75));
    CHECK(cl.y == doctest::Approx(0.25));
    CHECK(cl.z == doctest::Approx(0.0));

    MaskGrid empty(geom(3, 3, 3));
    CHECK(mask_volume_mm3(empty) == 0.0);
    CHECK_THROWS(centroid_mm(empty));

    MaskGrid a(geom(6, 6, 6)), b(geom(6, 6, 6)), u(geom(6, 6, 6));
    fill_box(a, {0, 0, 0}, {2, 2, 2});
    fill_box(b, {3, 3, 3}, {6, 6, 6});
    paste_union(u, a);
    paste_union(u, b);
    CHECK(mask_volume_mm3(u) == doctest::Approx(mask_volume_mm3(a) + mask_volume_mm3(b)));
}

TEST_CASE("extract_crop") {
    MaskGrid m(geom(40, 40, 40));
    fill_box(m, {15, 15, 15}, {25, 25, 25});
    SUBCASE("centred content") {
        const auto crop = extract_crop(m, centroid_mm(m), 16);
        CHECK(crop.sizes() == std::array<std::size_t, 3>{16, 16, 16});
        CHECK(foreground_count(crop) == 1000);
        const auto cc = centroid_mm(crop);
        const auto cm = centroid_mm(m);
        CHECK(cc.x == doctest::Approx(cm.x));
        CHECK(cc.z == doctest::Approx(cm.z));
        CHECK(crop_center(crop.geometry()).x == doctest::Approx(cm.x));
    }
    SUBCASE("zero padding at the field edge") {
        MaskGrid full(geom(10, 10, 10), 1);
        const auto crop = extract_crop(full, {0, 0, 0}, 9);
        // voxels at index < 4 on each axis lie outside the source
        CHECK(crop.at(0, 4, 4) == 0);
        CHECK(crop.at(4, 4, 4) == 1);
        CHECK(crop.at(8, 8, 8) == 1);
        CHECK(foreground_count(crop) == 5 * 5 * 5);
    }
    SUBCASE("empty grid") {
        const auto crop = extract_crop(MaskGrid(geom(5, 5, 5)), {2, 2, 2}, 8);
        CHECK(foreground_count(crop) == 0);
    }
    CHECK_THROWS(extract_crop(m, {0, 0, 0}, 0));
}

TEST_CASE("boundary_voxels") {
    MaskGrid cube(geom(5, 5, 5));
    fill_box(cube, {1, 1, 1}, {4, 4, 4});
    CHECK(boundary_voxels(cube).size() == 26);

    MaskGrid single(geom(3, 3, 3, 1.0, {2, 2, 2}));
    single.at(1, 1, 1) = 1;
    const auto b = boundary_voxels(single);
    REQUIRE(b.size() == 1);
    CHECK(b[0] == Vec3{3, 3, 3});

    MaskGrid shell(geom(7, 7, 7));
    fill_box(shell, {1, 1, 1}, {6, 6, 6});
    fill_box(shell, {2, 2, 2}, {5, 5, 5});
    for (std::size_t k = 2; k < 5; ++k)
        for (std::size_t j = 2; j < 5; ++j)
            for (std::size_t i = 2; i < 5; ++i) shell.at(i, j, k) = 0;
    CHECK(boundary_voxels(shell).size() == foreground_count(shell));

    MaskGrid edge(geom(2, 2, 2), 1);  // everything touches the grid edge
    CHECK(boundary_voxels(edge).size() == 8);
}

TEST_CASE("lattice_offset") {
    const auto outer = geom(10, 10, 10);
    CHECK(lattice_offset(outer, geom(2, 2, 2, 1.0, {3, 4, 5})) == Index3{3, 4, 5});
    CHECK(lattice_offset(outer, geom(2, 2, 2, 1.0, {-2, 0, 0})) == Index3{-2, 0, 0});
    CHECK_FALSE(lattice_offset(outer, geom(2, 2, 2, 1.0, {0.5, 0, 0})));
    CHECK_FALSE(lattice_offset(outer, geom(2, 2, 2, 2.0)));
}
