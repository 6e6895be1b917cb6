#pragma once

#include <Eigen/Core>

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "padkit/imagekit.hpp"

namespace padkit::radiomics {

using Maybe = std::optional<double>;

/// Ordered (name, value) pairs; nullopt marks an undefined feature.
struct FeatureVector {
    std::vector<std::pair<std::string, Maybe>> entries;

    [[nodiscard]] std::size_t size() const { return entries.size(); }
    [[nodiscard]] Maybe get(const std::string& name) const;
    [[nodiscard]] double at(const std::string& name) const;
};

enum class Direction { deg0, deg45, deg90, deg135 };
inline constexpr std::array<Direction, 4> kAllDirections{Direction::deg0, Direction::deg45, Direction::deg90,
                                                         Direction::deg135};

/// (row, col) step for one unit of distance.
std::pair<int, int> direction_offset(Direction d);

struct GlcmConfig {
    int bin_count = 32;
    int distance = 1;
    bool symmetric = true;

    void validate() const;
};

extern const std::array<const char*, 10> kFirstOrderNames;
extern const std::array<const char*, 17> kGlcmNames;

/// Equal-width level in [0, bins) over [lo, hi]; lo == hi maps everything to 0.
int discretize(double x, double lo, double hi, int bins);

FeatureVector first_order(std::span<const double> values, int bin_count = 32);

using GlcmMatrix = Eigen::MatrixXd;

GlcmMatrix glcm_matrix(const ScalarGrid2D& image, const LabelGrid2D& mask, Direction direction,
                       const GlcmConfig& config = {});

FeatureVector glcm_features(const GlcmMatrix& P);

FeatureVector glcm_averaged(const ScalarGrid2D& image, const LabelGrid2D& mask, const GlcmConfig& config = {});

/// Pixel values where mask != 0 (or == label when label > 0), row-major order.
std::vector<double> masked_values(const ScalarGrid2D& image, const LabelGrid2D& mask, int label = 0);

/// Rows of `case_id,region,feature,value`; the header is written when `header` is set.
void write_feature_csv(std::ostream& os, const std::string& case_id, const std::string& region,
                       const FeatureVector& features, bool header);

} // namespace padkit::radiomics
