#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "padkit/error.hpp"

// Small dense layer kit with explicit forward caches and exact backward passes.
// Activations are (channels x pixels) matrices with pixels in row-major order.
namespace padkit::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;

struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    Mat data; // channels x (height * width)

    Tensor() = default;
    Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(Mat::Zero(c, h * w)) {}
    [[nodiscard]] int pixels() const { return height * width; }
};

/// Location of one parameter block inside the flat parameter vector.
struct Slot {
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 1;

    [[nodiscard]] Eigen::Index size() const { return rows * cols; }
    [[nodiscard]] ConstMap view(const Vec& p) const { return {p.data() + offset, rows, cols}; }
    [[nodiscard]] MutMap view(Vec& p) const { return {p.data() + offset, rows, cols}; }
};

// ---------------------------------------------------------------- convolution

struct Conv2d {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3; // 1 or 3
    int stride = 1; // 1 or 2
    Slot weight;    // out x (in * k * k)
    Slot bias;      // out x 1

    struct Cache {
        Mat cols;
        int in_h = 0;
        int in_w = 0;
    };

    [[nodiscard]] Tensor forward(const Vec& p, const Tensor& x, Cache& cache) const;
    /// Accumulates parameter gradients into `grad`; returns d(input).
    Tensor backward(const Vec& p, const Tensor& dy, const Cache& cache, Vec& grad) const;
};

// ------------------------------------------------------------- group norm

struct GroupNorm {
    int channels = 0;
    int groups = 4;
    double eps = 1e-5;
    Slot gamma;
    Slot beta;

    struct Cache {
        Mat xhat;
        Vec inv_std; // per group
    };

    [[nodiscard]] Tensor forward(const Vec& p, const Tensor& x, Cache& cache) const;
    Tensor backward(const Vec& p, const Tensor& dy, const Cache& cache, Vec& grad) const;
};

// -------------------------------------------------------------- activations

Mat silu(const Mat& x);
/// d/dx silu evaluated at the pre-activation x, times upstream dy.
Mat silu_backward(const Mat& x, const Mat& dy);
double logistic(double x);

// ------------------------------------------------------------------ dense

struct Dense {
    int in = 0;
    int out = 0;
    Slot weight; // out x in
    Slot bias;   // out x 1

    [[nodiscard]] Vec forward(const Vec& p, const Vec& x) const;
    Vec backward(const Vec& p, const Vec& x, const Vec& dy, Vec& grad) const;
};

// ------------------------------------------------------------- attention

/// Single-head self-attention over pixels with a group-normalised input and a residual path.
struct SelfAttention {
    int channels = 0;
    GroupNorm norm;
    Conv2d q, k, v, proj; // 1x1

    struct Cache {
        GroupNorm::Cache norm;
        Tensor hn;
        Mat Q, K, V, A, O;
    };

    [[nodiscard]] Tensor forward(const Vec& p, const Tensor& x, Cache& cache) const;
    Tensor backward(const Vec& p, const Tensor& dy, const Cache& cache, Vec& grad) const;
};

// --------------------------------------------------------------- res block

/// GN-SiLU-conv, add timestep projection, GN-SiLU-conv, residual add.
struct ResBlock {
    int channels = 0;
    GroupNorm norm1, norm2;
    Conv2d conv1, conv2;
    Dense time_proj;

    struct Cache {
        GroupNorm::Cache n1, n2;
        Conv2d::Cache c1, c2;
        Mat h1, h2; // normalised pre-activations
    };

    [[nodiscard]] Tensor forward(const Vec& p, const Tensor& x, const Vec& temb, Cache& cache) const;
    /// Returns d(input); adds d(temb) into `dtemb`.
    Tensor backward(const Vec& p, const Tensor& dy, const Vec& temb, const Cache& cache, Vec& grad,
                    Vec& dtemb) const;
};

Tensor upsample_nearest2(const Tensor& x);
Tensor upsample_nearest2_backward(const Tensor& dy);

/// Sinusoidal embedding of a (possibly fractional) timestep.
Vec timestep_embedding(double t, int dim);

} // namespace padkit::nn
