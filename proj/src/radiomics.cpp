#include "padkit/radiomics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <ostream>

#include "padkit/stats.hpp"

namespace padkit::radiomics {

const std::array<const char*, 10> kFirstOrderNames{
    "percentile_10", "percentile_90", "entropy", "interquartile_range", "kurtosis",
    "mean_absolute_deviation", "median", "range", "skewness", "uniformity"};

const std::array<const char*, 17> kGlcmNames{
    "autocorrelation", "contrast", "correlation", "difference_average", "difference_entropy",
    "difference_variance", "inverse_difference", "inverse_difference_moment", "imc1", "imc2",
    "inverse_variance", "joint_average", "joint_energy", "joint_entropy", "mcc", "sum_average", "sum_entropy"};

Maybe FeatureVector::get(const std::string& name) const {
    for (const auto& [n, v] : entries) {
        if (n == name) return v;
    }
    throw InvalidParameter("feature '" + name + "' not present");
}

double FeatureVector::at(const std::string& name) const {
    const Maybe v = get(name);
    if (!v) throw InvalidParameter("feature '" + name + "' is undefined");
    return *v;
}

std::pair<int, int> direction_offset(Direction d) {
    switch (d) {
    case Direction::deg0: return {0, 1};
    case Direction::deg45: return {-1, 1};
    case Direction::deg90: return {-1, 0};
    case Direction::deg135: return {-1, -1};
    }
    return {0, 1};
}

void GlcmConfig::validate() const {
    if (bin_count < 2) throw InvalidParameter("glcm: bin_count must be >= 2");
    if (distance < 1) throw InvalidParameter("glcm: distance must be >= 1");
}

int discretize(double x, double lo, double hi, int bins) {
    if (!(hi > lo)) return 0;
    const auto b = static_cast<int>(std::floor((x - lo) / (hi - lo) * double(bins)));
    return std::clamp(b, 0, bins - 1);
}

namespace {

double entropy_bits(std::span<const double> p) {
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * std::log2(x);
    }
    return h;
}

} // namespace

FeatureVector first_order(std::span<const double> values, int bin_count) {
    if (values.size() < 2) throw InsufficientData("first_order: need at least 2 values");
    if (bin_count < 2) throw InvalidParameter("first_order: bin_count must be >= 2");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    const double n = double(values.size());
    const double mu = stats::mean(values);

    double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
    for (double x : values) {
        const double d = x - mu;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += std::abs(d);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;

    std::vector<double> hist(std::size_t(bin_count), 0.0);
    for (double x : values) hist[std::size_t(discretize(x, lo, hi, bin_count))] += 1.0;
    for (double& h : hist) h /= n;
    double uniformity = 0.0;
    for (double p : hist) uniformity += p * p;

    Maybe skew, kurt;
    if (m2 > 0.0) {
        skew = m3 / std::pow(m2, 1.5);
        kurt = m4 / (m2 * m2);
    }
    const double q10 = stats::quantile(values, 0.10);
    const double q25 = stats::quantile(values, 0.25);
    const double q50 = stats::quantile(values, 0.50);
    const double q75 = stats::quantile(values, 0.75);
    const double q90 = stats::quantile(values, 0.90);

    FeatureVector f;
    f.entries = {{kFirstOrderNames[0], q10},       {kFirstOrderNames[1], q90},
                 {kFirstOrderNames[2], entropy_bits(hist)},
                 {kFirstOrderNames[3], q75 - q25}, {kFirstOrderNames[4], kurt},
                 {kFirstOrderNames[5], mad},       {kFirstOrderNames[6], q50},
                 {kFirstOrderNames[7], hi - lo},   {kFirstOrderNames[8], skew},
                 {kFirstOrderNames[9], uniformity}};
    return f;
}

GlcmMatrix glcm_matrix(const ScalarGrid2D& image, const LabelGrid2D& mask, Direction direction,
                       const GlcmConfig& config) {
    config.validate();
    require_same_shape(image.values, mask.labels, "glcm_matrix");
    const std::vector<double> vals = masked_values(image, mask);
    if (vals.empty()) throw InsufficientData("glcm_matrix: empty mask");
    const auto [lo_it, hi_it] = std::minmax_element(vals.begin(), vals.end());
    const int ng = config.bin_count;
    GlcmMatrix P = GlcmMatrix::Zero(ng, ng);
    const auto [dr, dc] = direction_offset(direction);
    const Eigen::Index h = image.height();
    const Eigen::Index w = image.width();
    for (Eigen::Index r = 0; r < h; ++r) {
        for (Eigen::Index c = 0; c < w; ++c) {
            if (mask.labels(r, c) == 0) continue;
            const Eigen::Index r2 = r + dr * config.distance;
            const Eigen::Index c2 = c + dc * config.distance;
            if (r2 < 0 || r2 >= h || c2 < 0 || c2 >= w || mask.labels(r2, c2) == 0) continue;
            const int i = discretize(image.values(r, c), *lo_it, *hi_it, ng);
            const int j = discretize(image.values(r2, c2), *lo_it, *hi_it, ng);
            P(i, j) += 1.0;
            if (config.symmetric) P(j, i) += 1.0;
        }
    }
    const double total = P.sum();
    if (total == 0.0) throw InsufficientData("glcm_matrix: no valid neighbour pairs in mask");
    return P / total;
}

FeatureVector glcm_features(const GlcmMatrix& P) {
    const Eigen::Index ng = P.rows();
    if (ng != P.cols() || ng < 1) throw ShapeError("glcm_features: matrix must be square");
    // Grey levels are 1-based in the formulas below.
    const Eigen::VectorXd px = P.rowwise().sum();
    const Eigen::VectorXd py = P.colwise().sum().transpose();
    const Eigen::VectorXd level = Eigen::VectorXd::LinSpaced(ng, 1.0, double(ng));
    const double mux = level.dot(px);
    const double muy = level.dot(py);
    const double varx = (level.array() - mux).square().matrix().dot(px);
    const double vary = (level.array() - muy).square().matrix().dot(py);

    Eigen::VectorXd psum = Eigen::VectorXd::Zero(2 * ng + 1); // index k = i + j
    Eigen::VectorXd pdiff = Eigen::VectorXd::Zero(ng);        // index k = |i - j|
    double autocorr = 0.0, contrast = 0.0, cov = 0.0, energy = 0.0, hxy = 0.0, hxy1 = 0.0, hxy2 = 0.0;
    for (Eigen::Index a = 0; a < ng; ++a) {
        for (Eigen::Index b = 0; b < ng; ++b) {
            const double p = P(a, b);
            const double i = level[a];
            const double j = level[b];
            psum[a + b + 2] += p;
            pdiff[std::abs(a - b)] += p;
            autocorr += i * j * p;
            contrast += (i - j) * (i - j) * p;
            cov += (i - mux) * (j - muy) * p;
            energy += p * p;
            if (p > 0.0) hxy -= p * std::log2(p);
            const double pp = px[a] * py[b];
            if (pp > 0.0) {
                hxy1 -= p * std::log2(pp);
                hxy2 -= pp * std::log2(pp);
            }
        }
    }
    double diff_avg = 0.0, inv_diff = 0.0, inv_diff_mom = 0.0, inv_var = 0.0;
    for (Eigen::Index k = 0; k < ng; ++k) {
        const double kk = double(k);
        diff_avg += kk * pdiff[k];
        inv_diff += pdiff[k] / (1.0 + kk);
        inv_diff_mom += pdiff[k] / (1.0 + kk * kk);
        if (k > 0) inv_var += pdiff[k] / (kk * kk);
    }
    double diff_var = 0.0;
    for (Eigen::Index k = 0; k < ng; ++k) diff_var += (double(k) - diff_avg) * (double(k) - diff_avg) * pdiff[k];
    double sum_avg = 0.0;
    for (Eigen::Index k = 2; k <= 2 * ng; ++k) sum_avg += double(k) * psum[k];

    const double hx = entropy_bits({px.data(), std::size_t(ng)});
    const double hy = entropy_bits({py.data(), std::size_t(ng)});
    const bool degenerate = varx <= 0.0 || vary <= 0.0;

    Maybe correlation, imc1, imc2, mcc;
    if (!degenerate) {
        correlation = cov / std::sqrt(varx * vary);
        imc1 = (hxy - hxy1) / std::max(hx, hy);
        imc2 = std::sqrt(std::max(0.0, 1.0 - std::exp(-2.0 * (hxy2 - hxy))));
        // Q(i,j) = sum_k P(i,k) P(j,k) / (px_i py_k) is similar to the symmetric
        // S = Dx^-1/2 P Dy^-1 P^T Dx^-1/2 restricted to occupied levels.
        std::vector<Eigen::Index> rows, cols;
        for (Eigen::Index a = 0; a < ng; ++a) {
            if (px[a] > 0.0) rows.push_back(a);
            if (py[a] > 0.0) cols.push_back(a);
        }
        Eigen::MatrixXd A(rows.size(), cols.size());
        for (std::size_t a = 0; a < rows.size(); ++a) {
            for (std::size_t b = 0; b < cols.size(); ++b) {
                A(Eigen::Index(a), Eigen::Index(b)) = P(rows[a], cols[b]) / std::sqrt(px[rows[a]] * py[cols[b]]);
            }
        }
        const Eigen::MatrixXd S = A * A.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
        Eigen::VectorXd ev = es.eigenvalues().cwiseAbs();
        std::sort(ev.data(), ev.data() + ev.size(), std::greater<>());
        if (ev.size() >= 2) mcc = std::sqrt(ev[1]);
    }

    FeatureVector f;
    f.entries = {{kGlcmNames[0], autocorr},
                 {kGlcmNames[1], contrast},
                 {kGlcmNames[2], correlation},
                 {kGlcmNames[3], diff_avg},
                 {kGlcmNames[4], entropy_bits({pdiff.data(), std::size_t(ng)})},
                 {kGlcmNames[5], diff_var},
                 {kGlcmNames[6], inv_diff},
                 {kGlcmNames[7], inv_diff_mom},
                 {kGlcmNames[8], imc1},
                 {kGlcmNames[9], imc2},
                 {kGlcmNames[10], inv_var},
                 {kGlcmNames[11], mux},
                 {kGlcmNames[12], energy},
                 {kGlcmNames[13], hxy},
                 {kGlcmNames[14], mcc},
                 {kGlcmNames[15], sum_avg},
                 {kGlcmNames[16], entropy_bits({psum.data(), std::size_t(psum.size())})}};
    return f;
}

FeatureVector glcm_averaged(const ScalarGrid2D& image, const LabelGrid2D& mask, const GlcmConfig& config) {
    FeatureVector avg;
    for (const char* name : kGlcmNames) avg.entries.emplace_back(name, 0.0);
    for (Direction d : kAllDirections) {
        const FeatureVector f = glcm_features(glcm_matrix(image, mask, d, config));
        for (std::size_t k = 0; k < f.size(); ++k) {
            auto& slot = avg.entries[k].second;
            const auto& v = f.entries[k].second;
            if (slot && v) {
                *slot += *v / double(kAllDirections.size());
            } else {
                slot.reset();
            }
        }
    }
    return avg;
}

std::vector<double> masked_values(const ScalarGrid2D& image, const LabelGrid2D& mask, int label) {
    require_same_shape(image.values, mask.labels, "masked_values");
    std::vector<double> out;
    for (Eigen::Index r = 0; r < image.height(); ++r) {
        for (Eigen::Index c = 0; c < image.width(); ++c) {
            const auto l = mask.labels(r, c);
            if (label > 0 ? l == label : l != 0) out.push_back(image.values(r, c));
        }
    }
    return out;
}

void write_feature_csv(std::ostream& os, const std::string& case_id, const std::string& region,
                       const FeatureVector& features, bool header) {
    if (header) os << "case_id,region,feature,value\n";
    for (const auto& [name, v] : features.entries) {
        os << case_id << ',' << region << ',' << name << ',' << (v ? stats::format_number(*v) : std::string("NA"))
           << '\n';
    }
}

} // namespace padkit::radiomics
