#include <doctest.h>

#include <set>
#include <sstream>

#include "padkit/activity_maps.hpp"

using namespace padkit;

TEST_CASE("organ means over labelled pixels") {
    ScalarGrid2D pet(2, 2, UnitTag::suv, 2.0);
    LabelGrid2D labels(2, 2);
    labels.labels << 1, 1, 0, 0;
    auto s = organ_means(pet, labels);
    REQUIRE(s.size() == 1);
    CHECK(s[0].mean_suv == 2.0);

    pet.values << 1.0, 3.0, 9.0, 9.0;
    s = organ_means(pet, labels);
    CHECK(s[0].label == 1);
    CHECK(s[0].mean_suv == 2.0);
    CHECK(s[0].voxel_count == 2);

    labels.labels << 3, 3, 0, 7;
    s = organ_means(pet, labels);
    REQUIRE(s.size() == 2);
    CHECK(s[0].label == 3);
    CHECK(s[1].label == 7);
    CHECK(s[1].mean_suv == 9.0);
    CHECK_THROWS_AS(organ_means(ScalarGrid2D(3, 2, UnitTag::suv), labels), ShapeError);
}

TEST_CASE("uniform map is piecewise constant and idempotent") {
    LabelGrid2D labels(3, 3);
    labels.labels << 1, 1, 0, 2, 2, 0, 0, 0, 0;
    const std::vector<OrganStats> stats{{1, 1.5, 2}, {2, 4.0, 2}};
    const ScalarGrid2D map = build_uniform_map(labels, stats);
    std::set<double> nonzero;
    for (Eigen::Index i = 0; i < map.values.size(); ++i) {
        if (map.values.data()[i] != 0.0) nonzero.insert(map.values.data()[i]);
    }
    CHECK(nonzero == std::set<double>{1.5, 4.0});
    CHECK(organ_means(map, labels) == stats);
    CHECK(organ_means(build_uniform_map(labels, organ_means(map, labels)), labels) == stats);

    CHECK(build_uniform_map(LabelGrid2D(2, 2), {}).values.isZero());
    CHECK(build_uniform_map(LabelGrid2D(2, 2), {}, 0.5).values.isConstant(0.5));
    CHECK_THROWS_AS(build_uniform_map(labels, {{1, 1.5, 2}}), MissingOrganError);
}

TEST_CASE("organ stats CSV round trip") {
    const std::vector<OrganStats> stats{{1, 1.25, 10}, {4, 7.5, 3}};
    std::stringstream ss;
    write_organ_stats_csv(ss, stats);
    CHECK(ss.str().rfind("label,mean_suv,voxel_count\n", 0) == 0);
    CHECK(read_organ_stats_csv(ss) == stats);
    std::stringstream bad("label,mean\n1,2\n");
    CHECK_THROWS_AS(read_organ_stats_csv(bad), FormatError);
    std::stringstream junk("label,mean_suv,voxel_count\n1,abc,2\n");
    CHECK_THROWS_AS(read_organ_stats_csv(junk), FormatError);
}

TEST_CASE("synthetic phantoms") {
    PhantomConfig cfg;
    cfg.seed = 7;
    const PhantomCase a = synth_phantom(cfg);
    const PhantomCase b = synth_phantom(cfg);
    CHECK(a.labels.labels == b.labels.labels);
    CHECK(a.target.values == b.target.values);
    CHECK(a.assigned == b.assigned);
    CHECK(a.assigned.size() == 4);
    CHECK(a.target.unit == UnitTag::suv);
    CHECK(a.labels.labels.maxCoeff() == 4);

    cfg.texture.magnitude = 0.0;
    const PhantomCase flat = synth_phantom(cfg);
    CHECK(flat.target.values == flat.uniform_map.values);

    cfg.organ_count = 1;
    CHECK_THROWS_AS(cfg.validate(), InvalidParameter);
}

TEST_CASE("phantom organ means match assigned values") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        PhantomConfig cfg;
        cfg.seed = seed;
        const PhantomCase c = synth_phantom(cfg);
        const auto got = organ_means(c.target, c.labels);
        REQUIRE(got.size() == c.assigned.size());
        for (std::size_t k = 0; k < got.size(); ++k) {
            worst = std::max(worst, std::abs(got[k].mean_suv - c.assigned[k].mean_suv) / c.assigned[k].mean_suv);
        }
        CHECK(c.target.values.minCoeff() >= 0.0);
    }
    CHECK(worst < 0.02);
}

TEST_CASE("uniform map has at most organs + 1 distinct values") {
    PhantomConfig cfg;
    cfg.seed = 3;
    const PhantomCase c = synth_phantom(cfg);
    std::set<double> distinct(c.uniform_map.values.data(), c.uniform_map.values.data() + c.uniform_map.values.size());
    CHECK(distinct.size() <= std::size_t(cfg.organ_count + 1));
}
