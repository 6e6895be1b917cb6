#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "padkit/imagekit.hpp"

namespace padkit::stats {

/// Undefined results (degenerate variance, empty reference, ...) are reported as nullopt.
using Maybe = std::optional<double>;

struct PairedSample {
    std::vector<std::string> case_ids; // optional; empty means positional pairing
    std::vector<double> x;
    std::vector<double> y;

    void validate() const;
    [[nodiscard]] std::size_t size() const { return x.size(); }
};

double mean(std::span<const double> v);
/// Population (1/n) variance.
double variance(std::span<const double> v);
/// Linear-interpolation quantile (the "type 7" rule), q in [0, 1].
double quantile(std::span<const double> v, double q);

Maybe pearson_r(std::span<const double> x, std::span<const double> y);
Maybe lin_ccc(std::span<const double> x, std::span<const double> y);
inline Maybe lin_ccc(const PairedSample& p) { return lin_ccc(p.x, p.y); }

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r = 0.0;
};
std::optional<LinearFit> linreg(std::span<const double> x, std::span<const double> y);

/// Coefficient of variation, population sigma over mean.
Maybe cov_metric(std::span<const double> v);

struct Histogram {
    std::vector<double> edges;
    std::vector<double> counts;
};

/// Freedman-Diaconis edges spanning [min, max]; range/sqrt(n) width when the IQR is zero.
std::vector<double> fd_edges(std::span<const double> v);
/// Right-open bins except the last, which is closed. Values outside the edges are dropped.
Histogram histogram(std::span<const double> v, const std::vector<double>& edges);

/// Base-2 Jensen-Shannon divergence between two probability vectors.
double js_divergence(std::span<const double> p, std::span<const double> q);
/// sqrt of the base-2 JS divergence between the samples' histograms on shared pooled FD edges.
double js_distance(std::span<const double> a, std::span<const double> b);

struct BootstrapResult {
    double p_value = 1.0;
    double observed_diff = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

/// Two-sided paired bootstrap for CCC(A) - CCC(B); cases resampled jointly. nullopt when the
/// observed CCCs are undefined or resamples stay degenerate after bounded redraws.
std::optional<BootstrapResult> paired_bootstrap_ccc_diff(const PairedSample& a, const PairedSample& b,
                                                         int resamples, std::uint64_t seed);

enum class WilcoxonMethod { automatic, exact, normal };

struct WilcoxonResult {
    double w_plus = 0.0;
    double w_minus = 0.0;
    double statistic = 0.0; // min(W+, W-)
    double p_value = 1.0;
    std::size_t n_used = 0;
    bool exact = false;
};

/// Two-sided signed-rank test. Zeros dropped, ties share average ranks; exact for n <= 20
/// under `automatic`, otherwise normal approximation with tie and continuity corrections.
std::optional<WilcoxonResult> wilcoxon_signed_rank(std::span<const double> diffs,
                                                   WilcoxonMethod method = WilcoxonMethod::automatic);

/// 2|A∩B| / (|A|+|B|); two empty masks score 1.
double dice(const LabelGrid2D& a, const LabelGrid2D& b);
/// (|pred| - |ref|) / |ref|.
Maybe rvd(const LabelGrid2D& pred, const LabelGrid2D& ref);

double bonferroni_threshold(double alpha, int m);

struct ReportRow {
    std::string metric;
    Maybe value;
    Maybe p;
    Maybe ci_lo;
    Maybe ci_hi;
};

/// `metric,value,p,ci_lo,ci_hi`; undefined entries are written as "NA".
void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows);

std::string format_number(double v);

} // namespace padkit::stats
