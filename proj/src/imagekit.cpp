#include "padkit/imagekit.hpp"

#include <algorithm>
#include <cmath>

namespace padkit {

std::string_view to_string(UnitTag tag) {
    switch (tag) {
    case UnitTag::raw: return "raw";
    case UnitTag::suv: return "suv";
    case UnitTag::normalized: return "normalized";
    }
    return "unknown";
}

UnitTag unit_tag_from_string(std::string_view name) {
    if (name == "raw") return UnitTag::raw;
    if (name == "suv") return UnitTag::suv;
    if (name == "normalized") return UnitTag::normalized;
    throw InvalidParameter("unknown unit_tag '" + std::string(name) + "'");
}

CropWindow crop_window(const LabelGrid2D& body_mask, Eigen::Index target) {
    const Eigen::Index h = body_mask.height();
    const Eigen::Index w = body_mask.width();
    if (target < 1 || target > std::min(h, w)) {
        throw InvalidParameter("crop_centered: target " + std::to_string(target) + " exceeds image " +
                               std::to_string(h) + "x" + std::to_string(w));
    }
    double sum_r = 0.0;
    double sum_c = 0.0;
    Eigen::Index n = 0;
    for (Eigen::Index r = 0; r < h; ++r) {
        for (Eigen::Index c = 0; c < w; ++c) {
            if (body_mask.labels(r, c) != 0) {
                sum_r += double(r);
                sum_c += double(c);
                ++n;
            }
        }
    }
    const double cr = n > 0 ? sum_r / double(n) : double(h) / 2.0;
    const double cc = n > 0 ? sum_c / double(n) : double(w) / 2.0;
    auto place = [target](double centre, Eigen::Index extent) {
        const auto start = static_cast<Eigen::Index>(std::floor(centre + 0.5)) - target / 2;
        return std::clamp<Eigen::Index>(start, 0, extent - target);
    };
    return {place(cr, h), place(cc, w), target};
}

LabelGrid2D crop_centered(const LabelGrid2D& labels, const LabelGrid2D& body_mask, Eigen::Index target) {
    require_same_shape(labels.labels, body_mask.labels, "crop_centered");
    const CropWindow w = crop_window(body_mask, target);
    return LabelGrid2D(labels.labels.block(w.row0, w.col0, w.size, w.size).eval());
}

} // namespace padkit
