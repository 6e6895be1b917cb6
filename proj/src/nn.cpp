#include "padkit/nn.hpp"

#include <cmath>

namespace padkit::nn {

namespace {

int out_extent(int in, int kernel, int stride) {
    const int pad = kernel / 2;
    return (in + 2 * pad - kernel) / stride + 1;
}

} // namespace

Tensor Conv2d::forward(const Vec& p, const Tensor& x, Cache& cache) const {
    if (x.channels != in_channels) {
        throw ShapeError("conv: expected " + std::to_string(in_channels) + " channels, got " +
                         std::to_string(x.channels));
    }
    const int ho = out_extent(x.height, kernel, stride);
    const int wo = out_extent(x.width, kernel, stride);
    cache.in_h = x.height;
    cache.in_w = x.width;
    if (kernel == 1 && stride == 1) {
        cache.cols = x.data;
    } else {
        const int kk = kernel * kernel;
        const int pad = kernel / 2;
        cache.cols.setZero(in_channels * kk, ho * wo);
        for (int c = 0; c < in_channels; ++c) {
            for (int ky = 0; ky < kernel; ++ky) {
                for (int kx = 0; kx < kernel; ++kx) {
                    const int row = c * kk + ky * kernel + kx;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= x.height) continue;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= x.width) continue;
                            cache.cols(row, oy * wo + ox) = x.data(c, iy * x.width + ix);
                        }
                    }
                }
            }
        }
    }
    Tensor y(out_channels, ho, wo);
    y.data.noalias() = weight.view(p) * cache.cols;
    y.data.colwise() += bias.view(p).col(0);
    return y;
}

Tensor Conv2d::backward(const Vec& p, const Tensor& dy, const Cache& cache, Vec& grad) const {
    weight.view(grad).noalias() += dy.data * cache.cols.transpose();
    bias.view(grad).col(0) += dy.data.rowwise().sum();
    const Mat dcols = weight.view(p).transpose() * dy.data;
    Tensor dx(in_channels, cache.in_h, cache.in_w);
    if (kernel == 1 && stride == 1) {
        dx.data = dcols;
        return dx;
    }
    const int kk = kernel * kernel;
    const int pad = kernel / 2;
    const int ho = dy.height;
    const int wo = dy.width;
    for (int c = 0; c < in_channels; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                const int row = c * kk + ky * kernel + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= cache.in_h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= cache.in_w) continue;
                        dx.data(c, iy * cache.in_w + ix) += dcols(row, oy * wo + ox);
                    }
                }
            }
        }
    }
    return dx;
}

Tensor GroupNorm::forward(const Vec& p, const Tensor& x, Cache& cache) const {
    if (x.channels != channels || channels % groups != 0) throw ShapeError("group norm: channel mismatch");
    const int cpg = channels / groups;
    const double n = double(cpg) * x.pixels();
    cache.xhat.resize(channels, x.pixels());
    cache.inv_std.resize(groups);
    const auto g = gamma.view(p).col(0);
    const auto b = beta.view(p).col(0);
    Tensor y(channels, x.height, x.width);
    for (int grp = 0; grp < groups; ++grp) {
        const auto block = x.data.middleRows(grp * cpg, cpg);
        const double mu = block.sum() / n;
        const double var = (block.array() - mu).square().sum() / n;
        const double inv = 1.0 / std::sqrt(var + eps);
        cache.inv_std[grp] = inv;
        cache.xhat.middleRows(grp * cpg, cpg) = ((block.array() - mu) * inv).matrix();
    }
    for (int c = 0; c < channels; ++c) y.data.row(c) = (g[c] * cache.xhat.row(c).array() + b[c]).matrix();
    return y;
}

Tensor GroupNorm::backward(const Vec& p, const Tensor& dy, const Cache& cache, Vec& grad) const {
    const int cpg = channels / groups;
    const double n = double(cpg) * dy.pixels();
    const auto g = gamma.view(p).col(0);
    auto dg = gamma.view(grad).col(0);
    auto db = beta.view(grad).col(0);
    Mat dxhat(channels, dy.pixels());
    for (int c = 0; c < channels; ++c) {
        dg[c] += dy.data.row(c).dot(cache.xhat.row(c));
        db[c] += dy.data.row(c).sum();
        dxhat.row(c) = g[c] * dy.data.row(c);
    }
    Tensor dx(channels, dy.height, dy.width);
    for (int grp = 0; grp < groups; ++grp) {
        const auto dxh = dxhat.middleRows(grp * cpg, cpg).array();
        const auto xh = cache.xhat.middleRows(grp * cpg, cpg).array();
        const double s1 = dxh.sum();
        const double s2 = (dxh * xh).sum();
        dx.data.middleRows(grp * cpg, cpg) = ((cache.inv_std[grp] / n) * (n * dxh - s1 - xh * s2)).matrix();
    }
    return dx;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat silu(const Mat& x) {
    return x.unaryExpr([](double v) { return v * logistic(v); });
}

Mat silu_backward(const Mat& x, const Mat& dy) {
    return dy.binaryExpr(x, [](double d, double v) {
        const double s = logistic(v);
        return d * s * (1.0 + v * (1.0 - s));
    });
}

Vec Dense::forward(const Vec& p, const Vec& x) const {
    return weight.view(p) * x + bias.view(p).col(0);
}

Vec Dense::backward(const Vec& p, const Vec& x, const Vec& dy, Vec& grad) const {
    weight.view(grad).noalias() += dy * x.transpose();
    bias.view(grad).col(0) += dy;
    return weight.view(p).transpose() * dy;
}

Tensor SelfAttention::forward(const Vec& p, const Tensor& x, Cache& cache) const {
    cache.hn = norm.forward(p, x, cache.norm);
    Conv2d::Cache unused;
    cache.Q = q.forward(p, cache.hn, unused).data;
    cache.K = k.forward(p, cache.hn, unused).data;
    cache.V = v.forward(p, cache.hn, unused).data;
    const double scale = 1.0 / std::sqrt(double(channels));
    Mat S = scale * (cache.Q.transpose() * cache.K); // queries x keys
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
        const double m = S.row(i).maxCoeff();
        S.row(i) = (S.row(i).array() - m).exp().matrix();
        S.row(i) /= S.row(i).sum();
    }
    cache.A = std::move(S);
    cache.O = cache.V * cache.A.transpose();
    Tensor o(channels, x.height, x.width);
    o.data = cache.O;
    Conv2d::Cache pc;
    Tensor y = proj.forward(p, o, pc);
    y.data += x.data;
    return y;
}

Tensor SelfAttention::backward(const Vec& p, const Tensor& dy, const Cache& cache, Vec& grad) const {
    const double scale = 1.0 / std::sqrt(double(channels));
    Conv2d::Cache pc;
    pc.cols = cache.O;
    pc.in_h = dy.height;
    pc.in_w = dy.width;
    const Tensor dO = proj.backward(p, dy, pc, grad);
    const Mat dV = dO.data * cache.A;
    const Mat dA = dO.data.transpose() * cache.V;
    Mat dS(cache.A.rows(), cache.A.cols());
    for (Eigen::Index i = 0; i < dS.rows(); ++i) {
        const double inner = cache.A.row(i).dot(dA.row(i));
        dS.row(i) = (cache.A.row(i).array() * (dA.row(i).array() - inner)).matrix();
    }
    const Mat dQ = scale * (cache.K * dS.transpose());
    const Mat dK = scale * (cache.Q * dS);

    Conv2d::Cache hc;
    hc.cols = cache.hn.data;
    hc.in_h = dy.height;
    hc.in_w = dy.width;
    auto wrap = [&](const Mat& m) {
        Tensor t(channels, dy.height, dy.width);
        t.data = m;
        return t;
    };
    Tensor dhn = q.backward(p, wrap(dQ), hc, grad);
    dhn.data += k.backward(p, wrap(dK), hc, grad).data;
    dhn.data += v.backward(p, wrap(dV), hc, grad).data;
    Tensor dx = norm.backward(p, dhn, cache.norm, grad);
    dx.data += dy.data;
    return dx;
}

Tensor ResBlock::forward(const Vec& p, const Tensor& x, const Vec& temb, Cache& cache) const {
    const Tensor n1 = norm1.forward(p, x, cache.n1);
    cache.h1 = n1.data;
    Tensor a1(channels, x.height, x.width);
    a1.data = silu(n1.data);
    Tensor c1 = conv1.forward(p, a1, cache.c1);
    c1.data.colwise() += time_proj.forward(p, temb);
    const Tensor n2 = norm2.forward(p, c1, cache.n2);
    cache.h2 = n2.data;
    Tensor a2(channels, x.height, x.width);
    a2.data = silu(n2.data);
    Tensor y = conv2.forward(p, a2, cache.c2);
    y.data += x.data;
    return y;
}

Tensor ResBlock::backward(const Vec& p, const Tensor& dy, const Vec& temb, const Cache& cache, Vec& grad,
                          Vec& dtemb) const {
    Tensor da2 = conv2.backward(p, dy, cache.c2, grad);
    da2.data = silu_backward(cache.h2, da2.data);
    const Tensor dc1 = norm2.backward(p, da2, cache.n2, grad);
    dtemb += time_proj.backward(p, temb, dc1.data.rowwise().sum(), grad);
    Tensor da1 = conv1.backward(p, dc1, cache.c1, grad);
    da1.data = silu_backward(cache.h1, da1.data);
    Tensor dx = norm1.backward(p, da1, cache.n1, grad);
    dx.data += dy.data;
    return dx;
}

Tensor upsample_nearest2(const Tensor& x) {
    Tensor y(x.channels, x.height * 2, x.width * 2);
    for (int r = 0; r < y.height; ++r) {
        for (int c = 0; c < y.width; ++c) y.data.col(r * y.width + c) = x.data.col((r / 2) * x.width + c / 2);
    }
    return y;
}

Tensor upsample_nearest2_backward(const Tensor& dy) {
    Tensor dx(dy.channels, dy.height / 2, dy.width / 2);
    for (int r = 0; r < dy.height; ++r) {
        for (int c = 0; c < dy.width; ++c) dx.data.col((r / 2) * dx.width + c / 2) += dy.data.col(r * dy.width + c);
    }
    return dx;
}

Vec timestep_embedding(double t, int dim) {
    const int half = dim / 2;
    Vec e = Vec::Zero(dim);
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
        e[k] = std::sin(t * freq);
        e[k + half] = std::cos(t * freq);
    }
    return e;
}

} // namespace padkit::nn
