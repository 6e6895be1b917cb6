#include "padkit/denoiser.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace padkit {

using nn::Tensor;

std::string_view to_string(Phase p) { return p == Phase::base ? "base" : "super"; }

Phase phase_from_string(std::string_view name) {
    if (name == "base") return Phase::base;
    if (name == "super" || name == "super_res" || name == "super-res") return Phase::super_res;
    throw InvalidParameter("unknown phase '" + std::string(name) + "'");
}

std::string_view to_string(LayerGroup g) {
    switch (g) {
    case LayerGroup::embedding: return "embedding";
    case LayerGroup::encoder: return "encoder";
    case LayerGroup::decoder: return "decoder";
    case LayerGroup::head: return "head";
    }
    return "unknown";
}

std::string_view to_string(LayerKind k) {
    switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::norm: return "norm";
    case LayerKind::dense: return "dense";
    case LayerKind::attention: return "attention";
    }
    return "unknown";
}

void DenoiserConfig::validate() const {
    if (base_channels < groups || base_channels % groups != 0) {
        throw ConfigError("denoiser: base_channels must be a positive multiple of groups");
    }
    if (groups < 1) throw ConfigError("denoiser: groups must be >= 1");
    if (time_dim < 2 || time_dim % 2 != 0) throw ConfigError("denoiser: time_dim must be even and >= 2");
}

Eigen::VectorXd DenoiserParams::group_mask(LayerGroup group) const {
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(values.size());
    for (const auto& e : manifest) {
        if (e.group == group) mask.segment(e.slot.offset, e.slot.size()).setOnes();
    }
    return mask;
}

const LayerEntry& DenoiserParams::layer(const std::string& name) const {
    for (const auto& e : manifest) {
        if (e.name == name) return e;
    }
    throw InvalidParameter("no layer named '" + name + "'");
}

nn::Slot Denoiser::add(const std::string& name, LayerKind kind, LayerGroup group, Eigen::Index rows,
                       Eigen::Index cols) {
    nn::Slot s{count_, rows, cols};
    count_ += s.size();
    manifest_.push_back({name, kind, group, s});
    return s;
}

nn::Conv2d Denoiser::make_conv(const std::string& name, LayerGroup group, int in, int out, int kernel, int stride,
                               LayerKind kind) {
    nn::Conv2d c;
    c.in_channels = in;
    c.out_channels = out;
    c.kernel = kernel;
    c.stride = stride;
    c.weight = add(name + ".weight", kind, group, out, in * kernel * kernel);
    c.bias = add(name + ".bias", kind, group, out, 1);
    return c;
}

nn::GroupNorm Denoiser::make_norm(const std::string& name, LayerGroup group, int channels, LayerKind kind) {
    nn::GroupNorm g;
    g.channels = channels;
    g.groups = config_.groups;
    g.gamma = add(name + ".gamma", kind, group, channels, 1);
    g.beta = add(name + ".beta", kind, group, channels, 1);
    return g;
}

nn::ResBlock Denoiser::make_res(const std::string& name, LayerGroup group, int channels) {
    nn::ResBlock r;
    r.channels = channels;
    r.norm1 = make_norm(name + ".norm1", group, channels);
    r.conv1 = make_conv(name + ".conv1", group, channels, channels, 3, 1);
    r.time_proj.in = 2 * config_.base_channels;
    r.time_proj.out = channels;
    r.time_proj.weight = add(name + ".time.weight", LayerKind::dense, group, channels, r.time_proj.in);
    r.time_proj.bias = add(name + ".time.bias", LayerKind::dense, group, channels, 1);
    r.norm2 = make_norm(name + ".norm2", group, channels);
    r.conv2 = make_conv(name + ".conv2", group, channels, channels, 3, 1);
    return r;
}

Denoiser::Denoiser(DenoiserConfig config) : config_(config) {
    config_.validate();
    const int c = config_.base_channels;
    const int c2 = 2 * c;
    const int temb = 2 * c;

    time1_.in = config_.time_dim;
    time1_.out = temb;
    time1_.weight = add("time.dense.weight", LayerKind::dense, LayerGroup::embedding, temb, config_.time_dim);
    time1_.bias = add("time.dense.bias", LayerKind::dense, LayerGroup::embedding, temb, 1);

    in_conv_ = make_conv("in_conv", LayerGroup::encoder, config_.in_channels(), c, 3, 1);
    enc0_ = make_res("enc0", LayerGroup::encoder, c);
    down_ = make_conv("down", LayerGroup::encoder, c, c2, 3, 2);
    enc1_ = make_res("enc1", LayerGroup::encoder, c2);

    attn_.channels = c2;
    attn_.norm = make_norm("attn.norm", LayerGroup::decoder, c2, LayerKind::attention);
    attn_.q = make_conv("attn.q", LayerGroup::decoder, c2, c2, 1, 1, LayerKind::attention);
    attn_.k = make_conv("attn.k", LayerGroup::decoder, c2, c2, 1, 1, LayerKind::attention);
    attn_.v = make_conv("attn.v", LayerGroup::decoder, c2, c2, 1, 1, LayerKind::attention);
    attn_.proj = make_conv("attn.proj", LayerGroup::decoder, c2, c2, 1, 1, LayerKind::attention);

    mid_ = make_res("mid", LayerGroup::decoder, c2);
    up_conv_ = make_conv("up_conv", LayerGroup::decoder, c2, c, 3, 1);
    dec0_ = make_res("dec0", LayerGroup::decoder, c);

    head_norm_ = make_norm("head.norm", LayerGroup::head, c);
    head_conv1_ = make_conv("head.conv1", LayerGroup::head, c, c, 3, 1);
    head_conv2_ = make_conv("head.conv2", LayerGroup::head, c, 2, 3, 1);
}

namespace {

Eigen::Index fan_in(const LayerEntry& e) { return e.slot.cols; }

bool is_weight(const LayerEntry& e) { return e.name.ends_with(".weight"); }
bool is_gain(const LayerEntry& e) { return e.name.ends_with(".gamma"); }

} // namespace

DenoiserParams Denoiser::initialize(std::uint64_t seed) const {
    DenoiserParams p{config_, manifest_, Eigen::VectorXd::Zero(count_)};
    Rng rng(mix_seed(seed, 0x494e4954ULL));
    for (const auto& e : manifest_) {
        auto block = p.values.segment(e.slot.offset, e.slot.size());
        if (is_gain(e)) {
            block.setOnes();
        } else if (is_weight(e) && e.name != kOutConvWeight) {
            const double bound = 1.0 / std::sqrt(double(fan_in(e)));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (Eigen::Index i = 0; i < block.size(); ++i) block[i] = u(rng);
        }
    }
    return p;
}

DenoiserParams Denoiser::initialize_random(std::uint64_t seed, double scale) const {
    DenoiserParams p{config_, manifest_, Eigen::VectorXd::Zero(count_)};
    Rng rng(mix_seed(seed, 0x52414e44ULL));
    for (const auto& e : manifest_) {
        auto block = p.values.segment(e.slot.offset, e.slot.size());
        const double bound = scale / std::sqrt(double(std::max<Eigen::Index>(fan_in(e), 1)));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index i = 0; i < block.size(); ++i) block[i] = u(rng);
        if (is_gain(e)) block.array() += 1.0;
    }
    return p;
}

DenoiserOutput Denoiser::forward(const Eigen::VectorXd& params, const Input& in) const {
    Cache cache;
    return forward(params, in, cache);
}

DenoiserOutput Denoiser::forward(const Eigen::VectorXd& p, const Input& in, Cache& cache) const {
    if (p.size() != count_) throw ShapeError("denoiser: parameter vector has wrong length");
    require_same_shape(in.x_t, in.condition, "denoiser condition");
    if (config_.super_resolution != in.lowres.has_value()) {
        throw ShapeError("denoiser: low-resolution input must be given exactly for the super-resolution phase");
    }
    if (in.lowres) require_same_shape(in.x_t, *in.lowres, "denoiser lowres");
    const auto h = static_cast<int>(in.x_t.rows());
    const auto w = static_cast<int>(in.x_t.cols());
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("denoiser: image sides must be even");
    cache.height = h;
    cache.width = w;

    cache.emb = nn::timestep_embedding(in.t, config_.time_dim);
    cache.temb_pre = time1_.forward(p, cache.emb);
    cache.temb = nn::silu(cache.temb_pre);

    Tensor x(config_.in_channels(), h, w);
    x.data.row(0) = Eigen::Map<const nn::Vec>(in.x_t.data(), h * w).transpose();
    x.data.row(1) = Eigen::Map<const nn::Vec>(in.condition.data(), h * w).transpose();
    if (in.lowres) x.data.row(2) = Eigen::Map<const nn::Vec>(in.lowres->data(), h * w).transpose();

    cache.h0 = in_conv_.forward(p, x, cache.in_conv);
    cache.e0 = enc0_.forward(p, cache.h0, cache.temb, cache.enc0);
    cache.d = down_.forward(p, cache.e0, cache.down);
    cache.e1 = enc1_.forward(p, cache.d, cache.temb, cache.enc1);
    cache.a = attn_.forward(p, cache.e1, cache.attn);
    cache.m = mid_.forward(p, cache.a, cache.temb, cache.mid);
    cache.up = up_conv_.forward(p, nn::upsample_nearest2(cache.m), cache.up_conv);
    cache.s = cache.up;
    cache.s.data += cache.e0.data;
    cache.r = dec0_.forward(p, cache.s, cache.temb, cache.dec0);

    const Tensor hn = head_norm_.forward(p, cache.r, cache.head_norm);
    cache.head_pre1 = hn.data;
    Tensor a1(hn.channels, h, w);
    a1.data = nn::silu(hn.data);
    const Tensor k1 = head_conv1_.forward(p, a1, cache.head1);
    cache.head_pre2 = k1.data;
    Tensor a2(k1.channels, h, w);
    a2.data = nn::silu(k1.data);
    const Tensor out = head_conv2_.forward(p, a2, cache.head2);

    DenoiserOutput o;
    o.eps_hat.resize(h, w);
    o.v.resize(h, w);
    Eigen::Map<nn::Vec>(o.eps_hat.data(), h * w) = out.data.row(0).transpose();
    Eigen::Map<nn::Vec>(o.v.data(), h * w) = out.data.row(1).transpose().unaryExpr(&nn::logistic);
    cache.v = o.v;
    return o;
}

void Denoiser::backward(const Eigen::VectorXd& p, const Cache& cache, const Image& d_eps_hat, const Image& d_v,
                        Eigen::VectorXd& grad) const {
    if (grad.size() != count_) throw ShapeError("denoiser: gradient vector has wrong length");
    const int h = cache.height;
    const int w = cache.width;
    Tensor dout(2, h, w);
    dout.data.row(0) = Eigen::Map<const nn::Vec>(d_eps_hat.data(), h * w).transpose();
    const Image dv_raw = d_v.cwiseProduct(cache.v.unaryExpr([](double s) { return s * (1.0 - s); }));
    dout.data.row(1) = Eigen::Map<const nn::Vec>(dv_raw.data(), h * w).transpose();

    Tensor da2 = head_conv2_.backward(p, dout, cache.head2, grad);
    da2.data = nn::silu_backward(cache.head_pre2, da2.data);
    Tensor da1 = head_conv1_.backward(p, da2, cache.head1, grad);
    da1.data = nn::silu_backward(cache.head_pre1, da1.data);
    const Tensor dr = head_norm_.backward(p, da1, cache.head_norm, grad);

    nn::Vec dtemb = nn::Vec::Zero(cache.temb.size());
    const Tensor ds = dec0_.backward(p, dr, cache.temb, cache.dec0, grad, dtemb);
    const Tensor dup = up_conv_.backward(p, ds, cache.up_conv, grad);
    const Tensor dm = nn::upsample_nearest2_backward(dup);
    const Tensor da = mid_.backward(p, dm, cache.temb, cache.mid, grad, dtemb);
    const Tensor de1 = attn_.backward(p, da, cache.attn, grad);
    const Tensor dd = enc1_.backward(p, de1, cache.temb, cache.enc1, grad, dtemb);
    Tensor de0 = down_.backward(p, dd, cache.down, grad);
    de0.data += ds.data; // skip connection
    const Tensor dh0 = enc0_.backward(p, de0, cache.temb, cache.enc0, grad, dtemb);
    in_conv_.backward(p, dh0, cache.in_conv, grad);

    const nn::Vec dtemb_pre = nn::silu_backward(cache.temb_pre, dtemb);
    time1_.backward(p, cache.emb, dtemb_pre, grad);
}

// ------------------------------------------------------------------ optimizer

OptimizerState OptimizerState::for_size(Eigen::Index n, double weight_decay) {
    OptimizerState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    s.weight_decay = weight_decay;
    return s;
}

void adamw_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimizerState& opt, double lr,
                const Eigen::VectorXd* trainable_mask) {
    if (grads.size() != params.size() || opt.m.size() != params.size() || opt.v.size() != params.size()) {
        throw ShapeError("adamw_step: parameter, gradient and moment sizes differ");
    }
    if (trainable_mask && trainable_mask->size() != params.size()) throw ShapeError("adamw_step: mask size differs");
    ++opt.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, double(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, double(opt.step));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        if (trainable_mask && (*trainable_mask)[i] == 0.0) continue;
        const double g = grads[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        const double mhat = opt.m[i] / bc1;
        const double vhat = opt.v[i] / bc2;
        params[i] -= lr * opt.weight_decay * params[i];
        params[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
}

// ------------------------------------------------------------------- training

void TrainConfig::validate() const {
    if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
    if (freeze_iters < 0 || freeze_iters > iterations) throw ConfigError("train: need iterations >= freeze_iters >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(initial_lr >= 0.0)) throw ConfigError("train: initial_lr must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema_decay must be in [0, 1)");
    if (timesteps < 1) throw ConfigError("train: timesteps must be >= 1");
    if (weights.lambda_vb < 0.0 || weights.lambda_l1 < 0.0) throw ConfigError("train: loss weights must be >= 0");
    if (net.super_resolution != (phase == Phase::super_res)) {
        throw ConfigError("train: network super_resolution flag must match the phase");
    }
    net.validate();
}

TrainConfig TrainConfig::defaults_for(Phase phase) {
    TrainConfig c;
    c.phase = phase;
    c.net.super_resolution = phase == Phase::super_res;
    if (phase == Phase::base) {
        c.weights = LossWeights::base_phase();
        c.schedule_kind = ScheduleKind::squared_cosine;
    } else {
        c.weights = LossWeights::super_phase();
        c.schedule_kind = ScheduleKind::linear;
    }
    return c;
}

void write_loss_trace_csv(std::ostream& os, const std::vector<LossTraceRow>& trace) {
    os << "iter,t,total,mse,vb,l1,lr\n";
    std::ostringstream line;
    line.precision(12);
    for (const auto& r : trace) {
        line.str({});
        line << r.iter << ',' << r.t << ',' << r.terms.total << ',' << r.terms.mse << ',' << r.terms.vb << ','
             << r.terms.l1 << ',' << r.lr << '\n';
        os << line.str();
    }
}

double linear_decay_lr(double initial_lr, int k, int iterations) {
    if (iterations <= 0) return 0.0;
    return initial_lr * (1.0 - double(k) / double(iterations));
}

int resolve_thread_count(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("PADKIT_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(std::size_t(threads));
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += threads) fn(i);
        });
    }
}

void check_dataset(const std::vector<TrainingPair>& dataset) {
    if (dataset.empty()) throw ConfigError("train: dataset is empty");
    const auto h = dataset.front().target.rows();
    const auto w = dataset.front().target.cols();
    if (h % 4 != 0 || w % 4 != 0) throw ConfigError("train: image sides must be divisible by 4");
    for (const auto& p : dataset) {
        if (p.target.rows() != h || p.target.cols() != w || p.condition.rows() != h || p.condition.cols() != w) {
            throw ConfigError("train: all pairs must share one resolution");
        }
    }
}

} // namespace

PhaseSample phase_sample(Phase phase, const TrainingPair& pair) {
    const ScalarGrid2D target{pair.target, UnitTag::normalized};
    const ScalarGrid2D cond{pair.condition, UnitTag::normalized};
    if (phase == Phase::base) {
        return {area_downsample(target, 2).values, area_downsample(cond, 2).values, std::nullopt};
    }
    return {pair.target, pair.condition, nearest_upsample(area_downsample(target, 2), 2).values};
}

TrainResult train_phase(const TrainConfig& config, const std::vector<TrainingPair>& dataset,
                        const ProgressFn& progress) {
    config.validate();
    check_dataset(dataset);
    const Denoiser net(config.net);
    TrainResult result;
    result.params = net.initialize(config.seed);
    result.ema.decay = config.ema_decay;
    result.ema.shadow = result.params.values;
    if (config.iterations == 0) return result;

    const ScheduleSpec schedule = make_schedule(config.schedule_kind, config.timesteps);
    std::vector<PhaseSample> samples;
    samples.reserve(dataset.size());
    for (const auto& pair : dataset) samples.push_back(phase_sample(config.phase, pair));

    ImportanceState importance(config.timesteps);
    OptimizerState opt = OptimizerState::for_size(net.parameter_count(), config.weight_decay);
    const Eigen::VectorXd frozen_mask = Eigen::VectorXd::Ones(net.parameter_count()) -
                                        result.params.group_mask(LayerGroup::decoder);
    const int threads = resolve_thread_count(config.threads);
    Rng rng(mix_seed(config.seed, 0x5452414eULL));
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    std::uniform_int_distribution<int> uniform_t(1, config.timesteps);

    struct Draw {
        std::size_t index;
        int t;
        double weight;
        Image eps;
    };
    const int b = config.batch_size;
    std::vector<Draw> draws(static_cast<std::size_t>(b));
    std::vector<Eigen::VectorXd> grads(static_cast<std::size_t>(b));
    std::vector<LossTerms> losses(static_cast<std::size_t>(b));
    Eigen::VectorXd& params = result.params.values;

    for (int iter = 0; iter < config.iterations; ++iter) {
        for (auto& d : draws) {
            d.index = pick(rng);
            if (config.importance_sampling) {
                std::tie(d.t, d.weight) = importance.sample(rng);
            } else {
                d.t = uniform_t(rng);
                d.weight = 1.0;
            }
            const Image& x0 = samples[d.index].x0;
            d.eps.resize(x0.rows(), x0.cols());
            for (Eigen::Index i = 0; i < d.eps.size(); ++i) d.eps.data()[i] = standard_normal(rng);
        }

        parallel_for(b, threads, [&](int k) {
            const Draw& d = draws[std::size_t(k)];
            const PhaseSample& s = samples[d.index];
            const Image x_t = q_sample(s.x0, d.t, d.eps, schedule);
            Denoiser::Cache cache;
            const DenoiserOutput out = net.forward(params, {x_t, double(d.t), s.condition, s.lowres}, cache);
            const LossWithGrad l = diffusion_loss(out, s.x0, x_t, d.t, d.eps, config.weights, schedule);
            auto& g = grads[std::size_t(k)];
            g = Eigen::VectorXd::Zero(net.parameter_count());
            const double scale = d.weight / double(b);
            net.backward(params, cache, scale * l.d_eps_hat, scale * l.d_v, g);
            losses[std::size_t(k)] = l.terms;
        });

        Eigen::VectorXd total = Eigen::VectorXd::Zero(net.parameter_count());
        for (const auto& g : grads) total += g; // fixed reduction order
        const bool frozen = iter < config.freeze_iters;
        if (frozen) total = total.cwiseProduct(frozen_mask);
        const double lr = linear_decay_lr(config.initial_lr, iter, config.iterations);
        adamw_step(params, total, opt, lr, frozen ? &frozen_mask : nullptr);
        ema_update(result.ema, params);

        LossTerms mean{};
        for (int k = 0; k < b; ++k) {
            const auto& d = draws[std::size_t(k)];
            const auto& l = losses[std::size_t(k)];
            importance.record(d.t, l.total);
            result.trace.push_back({iter, d.t, l, lr});
            mean.total += l.total / b;
            mean.mse += l.mse / b;
            mean.vb += l.vb / b;
            mean.l1 += l.l1 / b;
        }
        if (progress) progress(iter, mean);
    }
    return result;
}

Image sample_loop(const Denoiser& net, const Eigen::VectorXd& weights, const ScheduleSpec& schedule,
                  const Image& condition, const std::optional<Image>& lowres, Rng& rng) {
    Image x(condition.rows(), condition.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
    for (int t = schedule.T; t >= 1; --t) {
        const DenoiserOutput out = net.forward(weights, {x, double(t), condition, lowres});
        x = p_sample_step(x, t, out, schedule, rng);
    }
    return x.cwiseMax(0.0).cwiseMin(1.0);
}

ScalarGrid2D generate(const PhaseModel& base, const PhaseModel& super_res, const ScalarGrid2D& uniform_map, Rng& rng) {
    if (uniform_map.unit != UnitTag::normalized) throw InvalidParameter("generate: map must be normalized");
    if (base.net.super_resolution || !super_res.net.super_resolution) {
        throw ConfigError("generate: expected a base model and a super-resolution model");
    }
    if (uniform_map.height() % 4 != 0 || uniform_map.width() % 4 != 0) {
        throw ShapeError("generate: map sides must be divisible by 4");
    }
    const Denoiser base_net(base.net);
    const Denoiser sr_net(super_res.net);
    if (base.weights.size() != base_net.parameter_count() || super_res.weights.size() != sr_net.parameter_count()) {
        throw ShapeError("generate: weights do not match network configuration");
    }
    const Image cond_low = area_downsample(uniform_map, 2).values;
    const Image low = sample_loop(base_net, base.weights, base.schedule, cond_low, std::nullopt, rng);
    const Image low_up = nearest_upsample(ScalarGrid2D{low, UnitTag::normalized}, 2).values;
    const Image full = sample_loop(sr_net, super_res.weights, super_res.schedule, uniform_map.values, low_up, rng);
    return {full, UnitTag::normalized};
}

// ----------------------------------------------------------------- checkpoints

namespace {

void write_f64_le(std::ostream& os, const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(v[i]);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
}

Eigen::VectorXd read_f64_le(std::istream& is, Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        is.read(reinterpret_cast<char*>(&bits), sizeof bits);
        if (!is) throw FormatError("checkpoint blob truncated at element " + std::to_string(i));
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        v[i] = std::bit_cast<double>(bits);
    }
    return v;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
    return std::filesystem::path(stem.string() + suffix);
}

} // namespace

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt) {
    using nlohmann::json;
    json layers = json::array();
    for (const auto& e : ckpt.params.manifest) {
        layers.push_back({{"name", e.name},
                          {"kind", to_string(e.kind)},
                          {"group", to_string(e.group)},
                          {"offset", e.slot.offset},
                          {"shape", {e.slot.rows, e.slot.cols}}});
    }
    const auto n = ckpt.params.values.size();
    const json manifest = {
        {"format", "padkit-denoiser"},
        {"version", 1},
        {"phase", to_string(ckpt.phase)},
        {"network",
         {{"base_channels", ckpt.params.config.base_channels},
          {"groups", ckpt.params.config.groups},
          {"time_dim", ckpt.params.config.time_dim},
          {"super_resolution", ckpt.params.config.super_resolution}}},
        {"schedule", {{"kind", to_string(ckpt.schedule_kind)}, {"T", ckpt.timesteps}}},
        {"ema_decay", ckpt.ema_decay},
        {"dtype", "f64"},
        {"endianness", "little"},
        {"param_count", n},
        {"blob", with_suffix(stem, ".bin").filename().string()},
        {"sections", {{{"name", "params"}, {"offset", 0}, {"count", n}}, {{"name", "ema"}, {"offset", n}, {"count", n}}}},
        {"layers", layers}};
    std::ofstream js(with_suffix(stem, ".json"));
    if (!js) throw std::runtime_error("cannot write checkpoint manifest " + with_suffix(stem, ".json").string());
    js << manifest.dump(2) << '\n';
    std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write checkpoint blob " + with_suffix(stem, ".bin").string());
    write_f64_le(bin, ckpt.params.values);
    write_f64_le(bin, ckpt.ema.size() == n ? ckpt.ema : ckpt.params.values);
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
    using nlohmann::json;
    std::ifstream js(with_suffix(stem, ".json"));
    if (!js) throw FormatError("cannot open checkpoint manifest " + with_suffix(stem, ".json").string());
    json m;
    try {
        m = json::parse(js);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
    if (m.value("format", "") != "padkit-denoiser") throw FormatError("checkpoint manifest: field 'format' invalid");
    Checkpoint c;
    try {
        c.phase = phase_from_string(m.at("phase").get<std::string>());
        DenoiserConfig cfg;
        const auto& n = m.at("network");
        cfg.base_channels = n.at("base_channels").get<int>();
        cfg.groups = n.at("groups").get<int>();
        cfg.time_dim = n.at("time_dim").get<int>();
        cfg.super_resolution = n.at("super_resolution").get<bool>();
        c.schedule_kind = schedule_kind_from_string(m.at("schedule").at("kind").get<std::string>());
        c.timesteps = m.at("schedule").at("T").get<int>();
        c.ema_decay = m.at("ema_decay").get<double>();
        const Denoiser net(cfg);
        const auto count = m.at("param_count").get<Eigen::Index>();
        if (count != net.parameter_count()) {
            throw FormatError("checkpoint manifest: field 'param_count' is " + std::to_string(count) + ", network needs " +
                              std::to_string(net.parameter_count()));
        }
        std::ifstream bin(stem.parent_path() / m.at("blob").get<std::string>(), std::ios::binary);
        if (!bin) throw FormatError("cannot open checkpoint blob");
        c.params = {cfg, net.manifest(), read_f64_le(bin, count)};
        c.ema = read_f64_le(bin, count);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
    return c;
}

} // namespace padkit
