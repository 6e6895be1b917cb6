#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "padkit/diffusion.hpp"
#include "padkit/imagekit.hpp"
#include "padkit/nn.hpp"
#include "padkit/random.hpp"

namespace padkit {

enum class Phase { base, super_res };

std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view name);

/// Which part of the U-Net a parameter block belongs to. `decoder` blocks are the ones
/// held fixed during the freeze window.
enum class LayerGroup { embedding, encoder, decoder, head };

std::string_view to_string(LayerGroup g);

enum class LayerKind { conv, norm, dense, attention };

std::string_view to_string(LayerKind k);

struct LayerEntry {
    std::string name;
    LayerKind kind = LayerKind::conv;
    LayerGroup group = LayerGroup::encoder;
    nn::Slot slot;
};

struct DenoiserConfig {
    int base_channels = 16;
    int groups = 4;
    int time_dim = 32;
    bool super_resolution = false;

    [[nodiscard]] int in_channels() const { return super_resolution ? 3 : 2; }
    void validate() const;
};

/// Flat parameter vector plus its layer manifest.
struct DenoiserParams {
    DenoiserConfig config;
    std::vector<LayerEntry> manifest;
    Eigen::VectorXd values;

    [[nodiscard]] Eigen::Index size() const { return values.size(); }
    /// 1 where the entry belongs to `group`, 0 elsewhere.
    [[nodiscard]] Eigen::VectorXd group_mask(LayerGroup group) const;
    [[nodiscard]] const LayerEntry& layer(const std::string& name) const;
};

/// Conditional U-Net: two resolution levels, stride-2 down path, nearest-upsample up path,
/// one self-attention block at the coarse level, sinusoidal timestep embedding injected in
/// every residual block, and a two-convolution adapter head giving (eps_hat, v).
class Denoiser {
  public:
    explicit Denoiser(DenoiserConfig config);

    [[nodiscard]] const DenoiserConfig& config() const { return config_; }
    [[nodiscard]] const std::vector<LayerEntry>& manifest() const { return manifest_; }
    [[nodiscard]] Eigen::Index parameter_count() const { return count_; }

    /// Gains 1, biases 0, fan-in uniform weights, zero-initialised output convolution.
    [[nodiscard]] DenoiserParams initialize(std::uint64_t seed) const;
    /// Every parameter drawn from a fan-in uniform rule (used by gradient checks).
    [[nodiscard]] DenoiserParams initialize_random(std::uint64_t seed, double scale = 1.0) const;

    struct Input {
        Image x_t;
        double t = 1.0;
        Image condition;
        std::optional<Image> lowres; // full-size (already upsampled) low-resolution image
    };

    struct Cache;

    [[nodiscard]] DenoiserOutput forward(const Eigen::VectorXd& params, const Input& in) const;
    DenoiserOutput forward(const Eigen::VectorXd& params, const Input& in, Cache& cache) const;
    /// Gradient of a scalar loss given d(loss)/d(eps_hat) and d(loss)/d(v); accumulates into `grad`.
    void backward(const Eigen::VectorXd& params, const Cache& cache, const Image& d_eps_hat, const Image& d_v,
                  Eigen::VectorXd& grad) const;

    // Layer names of the output convolution (needed for the stop-gradient checks).
    static constexpr const char* kOutConvWeight = "head.conv2.weight";
    static constexpr const char* kOutConvBias = "head.conv2.bias";

  private:
    DenoiserConfig config_;
    std::vector<LayerEntry> manifest_;
    Eigen::Index count_ = 0;

    nn::Dense time1_;
    nn::Conv2d in_conv_;
    nn::ResBlock enc0_, enc1_, mid_, dec0_;
    nn::Conv2d down_, up_conv_;
    nn::SelfAttention attn_;
    nn::GroupNorm head_norm_;
    nn::Conv2d head_conv1_, head_conv2_;

    nn::Slot add(const std::string& name, LayerKind kind, LayerGroup group, Eigen::Index rows, Eigen::Index cols);
    nn::Conv2d make_conv(const std::string& name, LayerGroup group, int in, int out, int kernel, int stride,
                         LayerKind kind = LayerKind::conv);
    nn::GroupNorm make_norm(const std::string& name, LayerGroup group, int channels, LayerKind kind = LayerKind::norm);
    nn::ResBlock make_res(const std::string& name, LayerGroup group, int channels);
};

struct Denoiser::Cache {
    nn::Vec emb, temb_pre, temb;
    nn::Conv2d::Cache in_conv;
    nn::Tensor h0, e0, d, e1, a, m, up, s, r;
    nn::ResBlock::Cache enc0, enc1, mid, dec0;
    nn::Conv2d::Cache down, up_conv, head1, head2;
    nn::SelfAttention::Cache attn;
    nn::GroupNorm::Cache head_norm;
    nn::Mat head_pre1, head_pre2;
    Image v;
    int height = 0;
    int width = 0;
};

// ------------------------------------------------------------------ optimizer

struct OptimizerState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    static OptimizerState for_size(Eigen::Index n, double weight_decay = 0.0);
};

/// Decoupled-weight-decay Adam. Entries with `trainable_mask` == 0 are left untouched
/// (no moment update, no decay).
void adamw_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimizerState& opt, double lr,
                const Eigen::VectorXd* trainable_mask = nullptr);

// ------------------------------------------------------------------- training

struct TrainConfig {
    Phase phase = Phase::base;
    int iterations = 1000;
    double initial_lr = 1e-3;
    int freeze_iters = 0;
    int batch_size = 4;
    LossWeights weights = LossWeights::base_phase();
    ScheduleKind schedule_kind = ScheduleKind::squared_cosine;
    int timesteps = 1000;
    double ema_decay = 0.9999;
    double weight_decay = 0.0;
    bool importance_sampling = true;
    std::uint64_t seed = 0;
    int threads = 0; // 0 = PADKIT_THREADS or hardware concurrency
    DenoiserConfig net{};

    void validate() const;
    static TrainConfig defaults_for(Phase phase);
};

/// Full-resolution normalized (condition, target) pair.
struct TrainingPair {
    Image condition;
    Image target;
};

struct LossTraceRow {
    int iter = 0;
    int t = 0;
    LossTerms terms;
    double lr = 0.0;
};

void write_loss_trace_csv(std::ostream& os, const std::vector<LossTraceRow>& trace);

struct TrainResult {
    DenoiserParams params;
    EmaState ema;
    std::vector<LossTraceRow> trace;
};

using ProgressFn = std::function<void(int iter, const LossTerms& batch_mean)>;

/// Learning rate at 0-based iteration k: initial * (1 - k / iterations).
double linear_decay_lr(double initial_lr, int k, int iterations);

TrainResult train_phase(const TrainConfig& config, const std::vector<TrainingPair>& dataset,
                        const ProgressFn& progress = {});

/// The sample the network sees for one pair in a given phase.
struct PhaseSample {
    Image x0;
    Image condition;
    std::optional<Image> lowres;
};
PhaseSample phase_sample(Phase phase, const TrainingPair& pair);

struct PhaseModel {
    DenoiserConfig net;
    Eigen::VectorXd weights; // EMA weights for inference
    ScheduleSpec schedule;
};

/// Full ancestral loop from pure noise to a clamped [0, 1] image.
Image sample_loop(const Denoiser& net, const Eigen::VectorXd& weights, const ScheduleSpec& schedule,
                  const Image& condition, const std::optional<Image>& lowres, Rng& rng);

/// Base sample at half resolution from the downsampled map, then super-resolution at full size.
ScalarGrid2D generate(const PhaseModel& base, const PhaseModel& super_res, const ScalarGrid2D& uniform_map, Rng& rng);

// ----------------------------------------------------------------- checkpoints

struct Checkpoint {
    Phase phase = Phase::base;
    DenoiserParams params;
    Eigen::VectorXd ema;
    double ema_decay = 0.0;
    ScheduleKind schedule_kind = ScheduleKind::linear;
    int timesteps = 0;
};

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (little-endian f64: params then EMA).
void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

int resolve_thread_count(int requested);

} // namespace padkit
