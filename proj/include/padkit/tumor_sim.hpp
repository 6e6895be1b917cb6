#pragma once

#include <utility>

#include "padkit/imagekit.hpp"
#include "padkit/random.hpp"

namespace padkit {

/// Gaussian lumpy model parameters. `mean_lump_count` is the Poisson mean per grid area.
struct LumpyParams {
    double mean_lump_count = 20.0;
    double lump_sigma = 2.0;
    double magnitude = 1.0;

    void validate() const;
};

struct TumorSpec {
    double center_row = 0.0;
    double center_col = 0.0;
    double radius_major = 3.0;
    double radius_minor = 2.0;
    double rotation = 0.0; // radians
    double sbr = 4.0;
    LumpyParams lumpy{};
    double psf_fwhm = 2.0; // pixels

    void validate() const;
};

/// Stationary lumpy field: Poisson-many isotropic Gaussian blobs with uniformly placed centres.
/// Centres are drawn over the grid padded by 4 sigma (count scaled by area) so the
/// expected value is uniform up to the border.
ScalarGrid2D gaussian_lumpy(Eigen::Index height, Eigen::Index width, const LumpyParams& params, Rng& rng);

/// Analytic expectation of the lumpy field value at any pixel.
double lumpy_expected_mean(Eigen::Index height, Eigen::Index width, const LumpyParams& params);

/// Rotated-ellipse membership at pixel centres (pixel (r, c) sits at coordinate (r, c)).
LabelGrid2D make_tumor_mask(Eigen::Index height, Eigen::Index width, const TumorSpec& spec);

/// Separable Gaussian blur, zero padded, kernel truncated at 4 sigma and normalised.
ScalarGrid2D gaussian_blur(const ScalarGrid2D& grid, double fwhm);

struct InsertedTumor {
    ScalarGrid2D image;
    LabelGrid2D mask;
    ScalarGrid2D increment;
    double background_mean = 0.0;
};

/// Image-space lesion insertion. The increment depends only on (spec, rng state, background mean).
InsertedTumor insert_tumor(const ScalarGrid2D& background, const TumorSpec& spec, Rng& rng);

constexpr double kDefaultThresholdFraction = 0.41;

/// Fixed-fraction-of-max threshold inside a search region.
LabelGrid2D threshold_segment(const ScalarGrid2D& image, const LabelGrid2D& search_roi,
                              double fraction = kDefaultThresholdFraction);

} // namespace padkit
