#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "padkit/error.hpp"

namespace padkit {

template <typename Scalar>
using GridMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using LabelMatrix = GridMatrix<std::int32_t>;

enum class UnitTag { raw, suv, normalized };

std::string_view to_string(UnitTag tag);
UnitTag unit_tag_from_string(std::string_view name);

/// Floating-point image slice. Row-major, values interpreted according to `unit`.
template <typename Scalar = double>
struct ScalarGrid {
    GridMatrix<Scalar> values;
    UnitTag unit = UnitTag::suv;

    ScalarGrid() = default;
    ScalarGrid(Eigen::Index height, Eigen::Index width, UnitTag tag = UnitTag::suv, Scalar fill = Scalar(0))
        : values(GridMatrix<Scalar>::Constant(height, width, fill)), unit(tag) {}
    ScalarGrid(GridMatrix<Scalar> v, UnitTag tag) : values(std::move(v)), unit(tag) {}

    [[nodiscard]] Eigen::Index height() const { return values.rows(); }
    [[nodiscard]] Eigen::Index width() const { return values.cols(); }
    [[nodiscard]] Eigen::Index size() const { return values.size(); }
};

using ScalarGrid2D = ScalarGrid<double>;

/// Integer label map, 0 = background.
struct LabelGrid2D {
    LabelMatrix labels;

    LabelGrid2D() = default;
    LabelGrid2D(Eigen::Index height, Eigen::Index width) : labels(LabelMatrix::Zero(height, width)) {}
    explicit LabelGrid2D(LabelMatrix l) : labels(std::move(l)) {}

    [[nodiscard]] Eigen::Index height() const { return labels.rows(); }
    [[nodiscard]] Eigen::Index width() const { return labels.cols(); }
};

/// Arcsinh + min-max normalization constants. lo/hi live in arcsinh space.
struct NormalizationParams {
    double c = 0.76;
    double lo = 0.0;
    double hi = std::asinh(50.0 / 0.76);

    /// Upper bound set from an SUV cap: hi = arcsinh(cap / c).
    static NormalizationParams with_cap(double suv_cap, double c = 0.76) { return {c, 0.0, std::asinh(suv_cap / c)}; }

    void validate() const {
        if (!(c > 0.0)) throw InvalidParameter("normalization: c must be > 0");
        if (!(hi > lo)) throw InvalidParameter("normalization: hi must be > lo");
    }
};

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

template <typename Scalar>
ScalarGrid<Scalar> to_suv(const ScalarGrid<Scalar>& grid, double weight_g, double dose_bq) {
    if (!(weight_g > 0.0) || !(dose_bq > 0.0)) throw InvalidParameter("to_suv: weight and dose must be positive");
    if (grid.unit != UnitTag::raw) throw InvalidParameter("to_suv: input must be tagged raw");
    return {(grid.values * Scalar(weight_g / dose_bq)).eval(), UnitTag::suv};
}

template <typename Scalar>
ScalarGrid<Scalar> arcsinh_normalize(const ScalarGrid<Scalar>& grid, const NormalizationParams& p) {
    p.validate();
    if (grid.unit != UnitTag::suv) throw InvalidParameter("arcsinh_normalize: input must be tagged suv");
    const Scalar inv_c = Scalar(1.0 / p.c);
    const Scalar lo = Scalar(p.lo);
    const Scalar inv_span = Scalar(1.0 / (p.hi - p.lo));
    GridMatrix<Scalar> out = grid.values.unaryExpr([=](Scalar x) {
        const Scalar y = (std::asinh(x * inv_c) - lo) * inv_span;
        return std::clamp(y, Scalar(0), Scalar(1));
    });
    return {std::move(out), UnitTag::normalized};
}

template <typename Scalar>
ScalarGrid<Scalar> denormalize(const ScalarGrid<Scalar>& grid, const NormalizationParams& p) {
    p.validate();
    if (grid.unit != UnitTag::normalized) throw InvalidParameter("denormalize: input must be tagged normalized");
    const Scalar c = Scalar(p.c);
    const Scalar lo = Scalar(p.lo);
    const Scalar span = Scalar(p.hi - p.lo);
    GridMatrix<Scalar> out = grid.values.unaryExpr([=](Scalar y) { return c * std::sinh(lo + y * span); });
    return {std::move(out), UnitTag::suv};
}

/// Block-mean downsampling by an integer factor.
template <typename Scalar>
ScalarGrid<Scalar> area_downsample(const ScalarGrid<Scalar>& grid, Eigen::Index factor) {
    if (factor < 1) throw InvalidParameter("area_downsample: factor must be >= 1");
    if (grid.height() % factor != 0 || grid.width() % factor != 0) {
        throw ShapeError("area_downsample: " + std::to_string(grid.height()) + "x" + std::to_string(grid.width()) +
                         " not divisible by " + std::to_string(factor));
    }
    const Eigen::Index h = grid.height() / factor;
    const Eigen::Index w = grid.width() / factor;
    const Scalar inv_area = Scalar(1) / Scalar(factor * factor);
    GridMatrix<Scalar> out(h, w);
    for (Eigen::Index r = 0; r < h; ++r) {
        for (Eigen::Index c = 0; c < w; ++c) {
            out(r, c) = grid.values.block(r * factor, c * factor, factor, factor).sum() * inv_area;
        }
    }
    return {std::move(out), grid.unit};
}

/// Nearest-neighbour upsampling by an integer factor.
template <typename Scalar>
ScalarGrid<Scalar> nearest_upsample(const ScalarGrid<Scalar>& grid, Eigen::Index factor) {
    if (factor < 1) throw InvalidParameter("nearest_upsample: factor must be >= 1");
    GridMatrix<Scalar> out(grid.height() * factor, grid.width() * factor);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = grid.values(r / factor, c / factor);
    }
    return {std::move(out), grid.unit};
}

struct CropWindow {
    Eigen::Index row0 = 0;
    Eigen::Index col0 = 0;
    Eigen::Index size = 0;
};

/// Square window centred on the nonzero-mask centroid and clipped to the image.
/// An empty mask centres the window on the image.
CropWindow crop_window(const LabelGrid2D& body_mask, Eigen::Index target);

template <typename Scalar>
ScalarGrid<Scalar> crop_centered(const ScalarGrid<Scalar>& grid, const LabelGrid2D& body_mask, Eigen::Index target) {
    require_same_shape(grid.values, body_mask.labels, "crop_centered");
    const CropWindow w = crop_window(body_mask, target);
    return {grid.values.block(w.row0, w.col0, w.size, w.size).eval(), grid.unit};
}

LabelGrid2D crop_centered(const LabelGrid2D& labels, const LabelGrid2D& body_mask, Eigen::Index target);

} // namespace padkit
