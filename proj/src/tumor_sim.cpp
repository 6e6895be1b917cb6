#include "padkit/tumor_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace padkit {

void LumpyParams::validate() const {
    if (!(mean_lump_count > 0.0) || !(lump_sigma > 0.0) || !(magnitude >= 0.0)) {
        throw InvalidParameter("lumpy: mean_lump_count and lump_sigma must be > 0, magnitude >= 0");
    }
}

void TumorSpec::validate() const {
    if (!(radius_major > 0.0) || !(radius_minor > 0.0)) throw InvalidParameter("tumor: radii must be > 0");
    if (!(sbr > 1.0)) throw InvalidParameter("tumor: sbr must be > 1");
    if (!(psf_fwhm >= 0.0)) throw InvalidParameter("tumor: psf_fwhm must be >= 0");
    lumpy.validate();
}

double lumpy_expected_mean(Eigen::Index height, Eigen::Index width, const LumpyParams& p) {
    return p.mean_lump_count * p.magnitude * 2.0 * std::numbers::pi * p.lump_sigma * p.lump_sigma /
           double(height * width);
}

ScalarGrid2D gaussian_lumpy(Eigen::Index height, Eigen::Index width, const LumpyParams& p, Rng& rng) {
    p.validate();
    ScalarGrid2D field(height, width, UnitTag::suv, 0.0);
    const double pad = 4.0 * p.lump_sigma;
    const double span_r = double(height) + 2.0 * pad;
    const double span_c = double(width) + 2.0 * pad;
    const double area_scale = span_r * span_c / double(height * width);
    std::poisson_distribution<long> count_dist(p.mean_lump_count * area_scale);
    const long k = count_dist(rng);
    std::uniform_real_distribution<double> ur(-pad - 0.5, double(height) - 0.5 + pad);
    std::uniform_real_distribution<double> uc(-pad - 0.5, double(width) - 0.5 + pad);
    if (p.magnitude == 0.0) return field;

    const double inv_two_var = 1.0 / (2.0 * p.lump_sigma * p.lump_sigma);
    const auto reach = static_cast<Eigen::Index>(std::ceil(5.0 * p.lump_sigma));
    for (long i = 0; i < k; ++i) {
        const double r0 = ur(rng);
        const double c0 = uc(rng);
        const auto rc = static_cast<Eigen::Index>(std::lround(r0));
        const auto cc = static_cast<Eigen::Index>(std::lround(c0));
        const Eigen::Index r_lo = std::max<Eigen::Index>(0, rc - reach);
        const Eigen::Index r_hi = std::min<Eigen::Index>(height - 1, rc + reach);
        const Eigen::Index c_lo = std::max<Eigen::Index>(0, cc - reach);
        const Eigen::Index c_hi = std::min<Eigen::Index>(width - 1, cc + reach);
        for (Eigen::Index r = r_lo; r <= r_hi; ++r) {
            const double dr = double(r) - r0;
            for (Eigen::Index c = c_lo; c <= c_hi; ++c) {
                const double dc = double(c) - c0;
                field.values(r, c) += p.magnitude * std::exp(-(dr * dr + dc * dc) * inv_two_var);
            }
        }
    }
    return field;
}

LabelGrid2D make_tumor_mask(Eigen::Index height, Eigen::Index width, const TumorSpec& spec) {
    if (!(spec.radius_major > 0.0) || !(spec.radius_minor > 0.0)) throw InvalidParameter("tumor: radii must be > 0");
    if (spec.center_row < 0.0 || spec.center_row > double(height - 1) || spec.center_col < 0.0 ||
        spec.center_col > double(width - 1)) {
        throw InvalidParameter("tumor: centre out of bounds");
    }
    LabelGrid2D mask(height, width);
    const double cs = std::cos(spec.rotation);
    const double sn = std::sin(spec.rotation);
    const double a2 = spec.radius_major * spec.radius_major;
    const double b2 = spec.radius_minor * spec.radius_minor;
    long count = 0;
    for (Eigen::Index r = 0; r < height; ++r) {
        for (Eigen::Index c = 0; c < width; ++c) {
            const double dx = double(c) - spec.center_col;
            const double dy = double(r) - spec.center_row;
            const double u = dx * cs + dy * sn;
            const double v = -dx * sn + dy * cs;
            if (u * u / a2 + v * v / b2 <= 1.0 + 1e-12) {
                mask.labels(r, c) = 1;
                ++count;
            }
        }
    }
    if (count == 0) throw InvalidParameter("tumor: ellipse covers no pixel centre");
    return mask;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const auto radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(std::size_t(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * double(i * i) / (sigma * sigma));
        k[std::size_t(i + radius)] = w;
        total += w;
    }
    for (double& w : k) w /= total;
    return k;
}

} // namespace

ScalarGrid2D gaussian_blur(const ScalarGrid2D& grid, double fwhm) {
    if (fwhm <= 0.0) return grid;
    const double sigma = fwhm / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
    const std::vector<double> k = gaussian_kernel(sigma);
    const auto radius = static_cast<Eigen::Index>(k.size() / 2);
    const Eigen::Index h = grid.height();
    const Eigen::Index w = grid.width();
    GridMatrix<double> tmp = GridMatrix<double>::Zero(h, w);
    for (Eigen::Index r = 0; r < h; ++r) {
        for (Eigen::Index c = 0; c < w; ++c) {
            double acc = 0.0;
            for (Eigen::Index i = -radius; i <= radius; ++i) {
                const Eigen::Index cc = c + i;
                if (cc >= 0 && cc < w) acc += k[std::size_t(i + radius)] * grid.values(r, cc);
            }
            tmp(r, c) = acc;
        }
    }
    ScalarGrid2D out(h, w, grid.unit, 0.0);
    for (Eigen::Index r = 0; r < h; ++r) {
        for (Eigen::Index c = 0; c < w; ++c) {
            double acc = 0.0;
            for (Eigen::Index i = -radius; i <= radius; ++i) {
                const Eigen::Index rr = r + i;
                if (rr >= 0 && rr < h) acc += k[std::size_t(i + radius)] * tmp(rr, c);
            }
            out.values(r, c) = acc;
        }
    }
    return out;
}

InsertedTumor insert_tumor(const ScalarGrid2D& background, const TumorSpec& spec, Rng& rng) {
    spec.validate();
    const Eigen::Index h = background.height();
    const Eigen::Index w = background.width();
    LabelGrid2D mask = make_tumor_mask(h, w, spec);

    double bg_sum = 0.0;
    long n = 0;
    for (Eigen::Index i = 0; i < background.size(); ++i) {
        if (mask.labels.data()[i] != 0) {
            bg_sum += background.values.data()[i];
            ++n;
        }
    }
    const double mu_bg = bg_sum / double(n);
    if (!(mu_bg > 0.0)) throw InvalidParameter("insert_tumor: background mean under the mask must be > 0");

    // Mean-removed texture inside the lesion, clipped so the lesion stays positive.
    const ScalarGrid2D lumps = gaussian_lumpy(h, w, spec.lumpy, rng);
    double lump_sum = 0.0;
    for (Eigen::Index i = 0; i < lumps.size(); ++i) {
        if (mask.labels.data()[i] != 0) lump_sum += lumps.values.data()[i];
    }
    const double lump_mean = lump_sum / double(n);

    ScalarGrid2D lesion(h, w, background.unit, 0.0);
    const double amplitude = (spec.sbr - 1.0) * mu_bg;
    for (Eigen::Index i = 0; i < lesion.size(); ++i) {
        if (mask.labels.data()[i] == 0) continue;
        const double tex = std::max(lumps.values.data()[i] - lump_mean, -0.9);
        lesion.values.data()[i] = amplitude * (1.0 + tex);
    }
    ScalarGrid2D increment = gaussian_blur(lesion, spec.psf_fwhm);
    ScalarGrid2D image{(background.values + increment.values).eval(), background.unit};
    return {std::move(image), std::move(mask), std::move(increment), mu_bg};
}

LabelGrid2D threshold_segment(const ScalarGrid2D& image, const LabelGrid2D& search_roi, double fraction) {
    require_same_shape(image.values, search_roi.labels, "threshold_segment");
    if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidParameter("threshold_segment: fraction must be in (0,1)");
    double peak = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Eigen::Index i = 0; i < image.size(); ++i) {
        if (search_roi.labels.data()[i] != 0) {
            peak = std::max(peak, image.values.data()[i]);
            any = true;
        }
    }
    if (!any) throw InvalidParameter("threshold_segment: empty search region");
    const double thr = fraction * peak;
    LabelGrid2D out(image.height(), image.width());
    for (Eigen::Index i = 0; i < image.size(); ++i) {
        if (search_roi.labels.data()[i] != 0 && image.values.data()[i] >= thr) out.labels.data()[i] = 1;
    }
    return out;
}

} // namespace padkit
