#include <doctest.h>

#include <cmath>

#include "padkit/imagekit.hpp"
#include "padkit/random.hpp"

using namespace padkit;

namespace {

ScalarGrid2D filled(Eigen::Index h, Eigen::Index w, double v, UnitTag tag) { return ScalarGrid2D(h, w, tag, v); }

} // namespace

TEST_CASE("to_suv scales by weight over dose") {
    CHECK(to_suv(filled(1, 1, 5000.0, UnitTag::raw), 70000.0, 3.5e8).values(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(to_suv(filled(1, 1, 10000.0, UnitTag::raw), 70000.0, 3.5e8).values(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(to_suv(filled(2, 2, 0.0, UnitTag::raw), 1.0, 1.0).values.isZero());
    CHECK(to_suv(filled(1, 1, 1.0, UnitTag::raw), 1.0, 1.0).unit == UnitTag::suv);
    CHECK_THROWS_AS(to_suv(filled(1, 1, 1.0, UnitTag::raw), 0.0, 1.0), InvalidParameter);
    CHECK_THROWS_AS(to_suv(filled(1, 1, 1.0, UnitTag::raw), 1.0, -5.0), InvalidParameter);
    CHECK_THROWS_AS(to_suv(filled(1, 1, 1.0, UnitTag::suv), 1.0, 1.0), InvalidParameter);
}

TEST_CASE("to_suv is linear") {
    Rng rng(3);
    ScalarGrid2D a(4, 4, UnitTag::raw), b(4, 4, UnitTag::raw);
    for (Eigen::Index i = 0; i < 16; ++i) {
        a.values.data()[i] = 1e4 * uniform01(rng);
        b.values.data()[i] = 1e4 * uniform01(rng);
    }
    ScalarGrid2D ab = a;
    ab.values = 2.0 * a.values + 3.0 * b.values;
    const auto lhs = to_suv(ab, 7e4, 3e8).values;
    const auto rhs = (2.0 * to_suv(a, 7e4, 3e8).values + 3.0 * to_suv(b, 7e4, 3e8).values).eval();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("arcsinh normalization values") {
    const ScalarGrid2D x = filled(1, 1, 0.76, UnitTag::suv);
    CHECK(arcsinh_normalize(filled(1, 1, 0.0, UnitTag::suv), {0.76, 0.0, 1.0}).values(0, 0) == 0.0);
    CHECK(arcsinh_normalize(x, {0.76, 0.0, 2.0}).values(0, 0) == doctest::Approx(0.440687).epsilon(1e-6));
    const double asinh1 = std::log(1.0 + std::sqrt(2.0));
    CHECK(arcsinh_normalize(x, {0.76, 0.0, 1.0}).values(0, 0) == doctest::Approx(asinh1).epsilon(1e-12));
    CHECK(asinh1 == doctest::Approx(0.881374).epsilon(1e-6));
    CHECK(arcsinh_normalize(x, {}).unit == UnitTag::normalized);
    CHECK_THROWS_AS(arcsinh_normalize(x, {0.76, 1.0, 1.0}), InvalidParameter);
    CHECK_THROWS_AS(arcsinh_normalize(x, {0.0, 0.0, 1.0}), InvalidParameter);
    CHECK_THROWS_AS(arcsinh_normalize(filled(1, 1, 1.0, UnitTag::raw), {}), InvalidParameter);
}

TEST_CASE("normalization clamps to the unit interval and is monotone") {
    ScalarGrid2D g(1, 200, UnitTag::suv);
    for (Eigen::Index i = 0; i < 200; ++i) g.values(0, i) = -1.0 + 0.5 * double(i);
    const auto n = arcsinh_normalize(g, NormalizationParams::with_cap(50.0));
    CHECK(n.values.minCoeff() >= 0.0);
    CHECK(n.values.maxCoeff() <= 1.0);
    for (Eigen::Index i = 1; i < 200; ++i) CHECK(n.values(0, i) >= n.values(0, i - 1));
}

TEST_CASE("denormalize inverts normalization") {
    CHECK(denormalize(filled(1, 1, 0.0, UnitTag::normalized), {0.76, 0.0, 1.0}).values(0, 0) == 0.0);
    const double y = std::log(1.0 + std::sqrt(2.0));
    CHECK(denormalize(filled(1, 1, y, UnitTag::normalized), {0.76, 0.0, 1.0}).values(0, 0) ==
          doctest::Approx(0.76).epsilon(1e-12));
    const NormalizationParams p{};
    for (double x : {0.1, 1.0, 10.0, 100.0}) {
        const NormalizationParams wide = NormalizationParams::with_cap(200.0);
        const double back = denormalize(arcsinh_normalize(filled(1, 1, x, UnitTag::suv), wide), wide).values(0, 0);
        CHECK(std::abs(back - x) < 1e-9);
    }
    CHECK_THROWS_AS(denormalize(filled(1, 1, 0.5, UnitTag::suv), p), InvalidParameter);
}

TEST_CASE("area downsample") {
    CHECK(area_downsample(filled(4, 4, 1.0, UnitTag::suv), 2).values.isConstant(1.0));
    ScalarGrid2D g(2, 2, UnitTag::suv);
    g.values << 1, 2, 3, 4;
    const auto d = area_downsample(g, 2);
    CHECK(d.height() == 1);
    CHECK(d.values(0, 0) == 2.5);
    Rng rng(11);
    ScalarGrid2D r(32, 32, UnitTag::normalized);
    for (Eigen::Index i = 0; i < r.values.size(); ++i) r.values.data()[i] = uniform01(rng);
    const auto rd = area_downsample(r, 2);
    CHECK(rd.unit == UnitTag::normalized);
    CHECK(std::abs(rd.values.mean() - r.values.mean()) < 1e-12);
    CHECK_THROWS_AS(area_downsample(filled(3, 4, 1.0, UnitTag::suv), 2), ShapeError);
}

TEST_CASE("nearest upsample replicates blocks") {
    ScalarGrid2D g(2, 2, UnitTag::suv);
    g.values << 1, 2, 3, 4;
    const auto u = nearest_upsample(g, 2);
    CHECK(u.height() == 4);
    CHECK(u.values(1, 1) == 1.0);
    CHECK(u.values(0, 3) == 2.0);
    CHECK(u.values(3, 0) == 3.0);
    CHECK(area_downsample(u, 2).values == g.values);
}

TEST_CASE("crop centred on the mask centroid") {
    ScalarGrid2D img(32, 32, UnitTag::suv);
    for (Eigen::Index i = 0; i < img.values.size(); ++i) img.values.data()[i] = double(i);

    LabelGrid2D full(32, 32);
    full.labels.setOnes();
    CHECK(crop_centered(img, full, 32).values == img.values);

    LabelGrid2D blob(32, 32);
    blob.labels.block(7, 7, 3, 3).setOnes(); // centroid (8, 8)
    const CropWindow w = crop_window(blob, 16);
    CHECK(w.row0 == 0);
    CHECK(w.col0 == 0);
    CHECK(w.size == 16);

    LabelGrid2D mid(32, 32);
    mid.labels.block(19, 11, 3, 3).setOnes(); // centroid (20, 12)
    const CropWindow m = crop_window(mid, 16);
    CHECK(m.row0 == 12);
    CHECK(m.col0 == 4);
    CHECK(crop_centered(img, mid, 16).values(8, 8) == img.values(20, 12));

    LabelGrid2D corner(32, 32);
    corner.labels(31, 31) = 1;
    const CropWindow c = crop_window(corner, 16);
    CHECK(c.row0 == 16);
    CHECK(c.col0 == 16);

    const CropWindow e = crop_window(LabelGrid2D(32, 32), 16);
    CHECK(e.row0 == 8);
    CHECK(e.col0 == 8);

    CHECK_THROWS(crop_window(full, 33));
    LabelGrid2D labels(32, 32);
    labels.labels(20, 12) = 5;
    CHECK(crop_centered(labels, mid, 16).labels(8, 8) == 5);
}

TEST_CASE("unit tags round trip through strings") {
    for (UnitTag t : {UnitTag::raw, UnitTag::suv, UnitTag::normalized}) CHECK(unit_tag_from_string(to_string(t)) == t);
    CHECK_THROWS_AS(unit_tag_from_string("kelvin"), InvalidParameter);
}
