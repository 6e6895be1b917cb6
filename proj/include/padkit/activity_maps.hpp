#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "padkit/imagekit.hpp"
#include "padkit/random.hpp"
#include "padkit/tumor_sim.hpp"

namespace padkit {

struct OrganStats {
    std::int32_t label = 0;
    double mean_suv = 0.0;
    std::int64_t voxel_count = 0;

    friend bool operator==(const OrganStats&, const OrganStats&) = default;
};

/// Per-label mean of `pet` over every nonzero label present in `labels`, sorted by label.
std::vector<OrganStats> organ_means(const ScalarGrid2D& pet, const LabelGrid2D& labels);

/// Piecewise-constant map: each labelled pixel takes its organ's mean, background pixels take `background`.
ScalarGrid2D build_uniform_map(const LabelGrid2D& labels, const std::vector<OrganStats>& stats,
                               double background = 0.0);

void write_organ_stats_csv(std::ostream& os, const std::vector<OrganStats>& stats);
std::vector<OrganStats> read_organ_stats_csv(std::istream& is);

struct SuvInterval {
    double lo = 0.5;
    double hi = 8.0;
};

/// Desk-scale stand-in for a clinical cohort: random elliptical organs with lumpy texture.
struct PhantomConfig {
    Eigen::Index grid_size = 32;
    int organ_count = 4;
    /// One interval per organ; the last entry is reused when fewer are given.
    std::vector<SuvInterval> suv_ranges{{0.5, 8.0}};
    /// Relative texture field (dimensionless multiplier on organ uptake).
    LumpyParams texture{150.0, 1.0, 0.3};
    double min_radius_fraction = 0.10;
    double max_radius_fraction = 0.22;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PhantomCase {
    LabelGrid2D labels;
    ScalarGrid2D target;      // suv
    ScalarGrid2D uniform_map; // suv
    std::vector<OrganStats> assigned;
};

/// Deterministic under `config.seed`. Organ means of `target` equal the assigned values.
PhantomCase synth_phantom(const PhantomConfig& config);

} // namespace padkit
