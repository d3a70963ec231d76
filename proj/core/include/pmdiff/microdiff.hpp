#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pmdiff/gradcheck.hpp"
#include "pmdiff/optim.hpp"
#include "pmdiff/tensor.hpp"

namespace pmdiff {

// ---------------------------------------------------------------------------
// Noise schedule

/// Linear beta schedule over T training steps. Index 0 is the clean image
/// (alpha_bar(0) = 1); steps 1..T carry noise.
///
/// The endpoints are quoted for a 1000-step process; with `rescale` on they
/// are multiplied by 1000 / T so a short schedule still ends near pure noise.
class DiffusionSchedule {
   public:
    static constexpr std::size_t kReferenceSteps = 1000;

    explicit DiffusionSchedule(std::size_t steps = 100, double beta_start = 1e-4, double beta_end = 0.02,
                               bool rescale = true);

    std::size_t steps() const { return betas_.size(); }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }
    bool rescaled() const { return rescale_; }
    double beta(std::size_t tau) const;       // tau in 1..T
    double alpha_bar(std::size_t tau) const;  // tau in 0..T

    /// Descending DDIM timesteps from `from` to a value > 0, `count` entries.
    std::vector<std::size_t> ddim_timesteps(std::size_t from, std::size_t count) const;

   private:
    double beta_start_, beta_end_;
    bool rescale_;
    std::vector<double> betas_;       // betas_[tau - 1]
    std::vector<double> alpha_bars_;  // alpha_bars_[tau]
};

inline constexpr std::size_t kDefaultSamplerSteps = 50;

// ---------------------------------------------------------------------------
// Model

class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
    std::size_t image_width = 48;
    std::size_t image_height = 32;
    std::size_t image_channels = 3;
    std::array<std::size_t, 3> widths{8, 16, 16};  // per encoder level
    std::size_t groups = 4;
    std::size_t time_dim = 32;   // sinusoidal features
    std::size_t embed_dim = 64;  // time MLP width
    std::size_t encoding_channels = 24;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

/// Reference-attention sites at the half- and quarter-resolution encoder
/// levels. Keys and values come from the reference stream's encoder output at
/// that level (ControlNet residual included). Queries come from the target
/// decoder at the same resolution: after the half-resolution block and after
/// the bottleneck self-attention. Attention over every full-resolution pixel
/// pair costs several times the rest of the model, so that level has no site.
inline const std::array<std::string, 2> kRefSites{"half", "quarter"};

/// Named parameter tensors. Prefixes: "base." frozen denoiser, "cn." the
/// ControlNet encoder copy, "zc." its zero convolutions, "ref." reference
/// attention (projections, norms and the zero output convolution).
struct ModelParams {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    std::vector<NamedTensor> with_prefix(const std::string& prefix) const;
    std::vector<NamedTensor> trainable() const;  // cn. + zc. + ref.
    std::vector<NamedTensor> base() const { return with_prefix("base."); }
    std::size_t count(const std::string& prefix = "") const;
    void set_requires_grad(const std::string& prefix, bool on);
    ModelParams clone() const;
    /// SHA-256 over the names and raw values of the tensors under `prefix`.
    std::string hash(const std::string& prefix = "") const;
};

/// Builds the base denoiser with seeded initialization, then the conditional
/// branches: the ControlNet encoder is an exact copy of the base encoder, zero
/// convolutions are exactly zero, and every reference-attention site copies
/// the bottleneck self-attention (norm and Q/K/V), taking the leading block
/// at sites narrower than the bottleneck.
ModelParams build_model(const ModelConfig& cfg);

/// Re-derives the conditional branches from the (possibly trained) base, as
/// done before the conditional phase.
void reset_conditional(ModelParams& params);

struct EncoderFeatures {
    Tensor s1, s2, s3;  // full, half, quarter resolution
};

/// Reference-stream encoder outputs keyed by site, [N,C,H,W].
struct ReferenceFeatures {
    std::map<std::string, Tensor> sites;
};

/// Conditioning for one target batch.
struct Condition {
    Tensor target_encoding;                    // gamma(X^{t,t}) [N,24,H,W]
    std::vector<ReferenceFeatures> references;  // one entry per reference view
};

class Denoiser {
   public:
    explicit Denoiser(const ModelParams& params);

    /// Unconditional prediction F(z, tau; Theta).
    Tensor base_eps(Graph& g, const Tensor& z, const std::vector<double>& taus) const;

    /// f_CN = F(z;Theta) + Z(F(z + Z(gamma);Theta');Theta_z2), per encoder level.
    EncoderFeatures controlnet_forward(Graph& g, const Tensor& z, const Tensor& encoding,
                                       const std::vector<double>& taus) const;

    /// Reference stream: clean image, timestep 0, its own geometry encoding.
    ReferenceFeatures reference_features(Graph& g, const Tensor& z_ref, const Tensor& encoding) const;

    /// Conditional prediction with ControlNet residuals and reference attention.
    Tensor eps(Graph& g, const Tensor& z, const std::vector<double>& taus, const Condition& cond) const;

   private:
    Tensor time_embedding(Graph& g, const std::string& prefix, const std::vector<double>& taus) const;
    EncoderFeatures encoder(Graph& g, const std::string& prefix, const Tensor& z, const Tensor& temb,
                            const Tensor& hint) const;
    Tensor res_block(Graph& g, const std::string& prefix, const Tensor& x, const Tensor& temb) const;
    Tensor self_attention(Graph& g, const std::string& prefix, const Tensor& x) const;
    Tensor ref_site(Graph& g, const std::string& site, const Tensor& f, const Condition& cond) const;
    EncoderFeatures cn_features(Graph& g, const Tensor& z, const Tensor& encoding, const std::vector<double>& taus,
                                const Tensor& temb_base) const;
    /// Runs the bottleneck and decoder, attending to `cond` references when given.
    Tensor decode(Graph& g, const EncoderFeatures& f, const Tensor& temb, const Condition* cond) const;
    const Tensor& p(const std::string& name) const { return params_.at(name); }

    const ModelParams& params_;
};

// Attention primitives, exposed for direct testing.

/// [N,C,H,W] -> [N,H*W,C]
Tensor to_tokens(Graph& g, const Tensor& x);
/// [N,L,C] -> [N,C,H,W]
Tensor from_tokens(Graph& g, const Tensor& tokens, std::size_t height, std::size_t width);

/// softmax(Q K^T / sqrt(d)) V with Q = target W^Q, K = reference W^K,
/// V = reference W^V. Tokens are [N,L,C]; weights are [C,C].
Tensor ref_attention(Graph& g, const Tensor& target_tokens, const Tensor& reference_tokens, const Tensor& wq,
                     const Tensor& wk, const Tensor& wv);

/// Concatenates reference token sets along the sequence axis.
Tensor multiview_concat(Graph& g, const std::vector<Tensor>& reference_tokens);

/// f + Z(attn) where Z is a 1x1 convolution ([C,C,1,1] weight, [C] bias).
Tensor inject_ref(Graph& g, const Tensor& f, const Tensor& attn_tokens, const Tensor& zero_w, const Tensor& zero_b);

// ---------------------------------------------------------------------------
// Diffusion process

struct NoisedImage {
    Tensor z_tau;
    Tensor eps;
};

/// z_tau = sqrt(abar) z0 + sqrt(1 - abar) eps with eps ~ N(0, I) from `seed`.
NoisedImage add_noise(const Tensor& z0, std::size_t tau, const DiffusionSchedule& schedule, std::uint64_t seed);

/// Noise predictor used by the sampler: (z_tau, tau) -> eps.
using EpsFn = std::function<Tensor(const Tensor& z, std::size_t tau)>;

/// Deterministic DDIM (eta = 0) from `x_start` at `timesteps[0]` down to 0.
/// The clean estimate is clipped to [-1, 1] at every step.
Tensor ddim_run(const EpsFn& eps_fn, Tensor x_start, const std::vector<std::size_t>& timesteps,
                const DiffusionSchedule& schedule);

/// Samples from pure noise with `steps` DDIM steps.
Tensor ddim_sample(const EpsFn& eps_fn, const Shape& shape, const DiffusionSchedule& schedule,
                   std::size_t steps = kDefaultSamplerSteps, std::uint64_t seed = 0);

/// Perturbs `candidate` to tau = round(s T) and denoises back to 0 with a tail
/// of round(steps * tau / T) DDIM steps. s = 0 returns the input untouched.
Tensor refine_render(const EpsFn& eps_fn, const Tensor& candidate, double s, const DiffusionSchedule& schedule,
                     std::size_t steps = kDefaultSamplerSteps, std::uint64_t seed = 0);

/// Conditional predictor over a fixed condition; reference features are
/// computed once and reused at every step.
EpsFn conditional_eps_fn(const ModelParams& params, const Tensor& target_encoding,
                         const std::vector<std::pair<Tensor, Tensor>>& references);
EpsFn base_eps_fn(const ModelParams& params);

// ---------------------------------------------------------------------------
// Training

/// One conditional training example. Images are [1,3,H,W] in [-1,1]; the
/// encodings are [1,24,H,W] and share one normalization.
struct TrainSample {
    Tensor z_target;
    Tensor z_reference;
    Tensor enc_reference;  // gamma(X^{r,t})
    Tensor enc_target;     // gamma(X^{t,t})
    std::array<double, 16> reference_to_target{};  // metadata only
    std::array<double, 4> target_intrinsics{};    // fx, fy, cx, cy
};

/// Noise draws for one batch: a timestep and an eps tensor per sample.
struct NoiseDraw {
    std::vector<double> taus;
    Tensor eps;  // [N,3,H,W]
};

NoiseDraw draw_noise(std::size_t batch, const ModelConfig& cfg, const DiffusionSchedule& schedule,
                     std::mt19937_64& rng);

Tensor stack_batch(const std::vector<Tensor>& items);  // concat along axis 0, no tape

/// Mean-squared eps error of the conditional model (no tape).
double conditional_loss(const ModelParams& params, const std::vector<const TrainSample*>& batch,
                        const NoiseDraw& noise, const DiffusionSchedule& schedule);
/// Same for the unconditional base model on target images.
double base_loss(const ModelParams& params, const std::vector<const TrainSample*>& batch, const NoiseDraw& noise,
                 const DiffusionSchedule& schedule);

/// One optimizer step of the conditional phase. The base must already be
/// frozen (requires_grad off); throws NonFiniteError with a parameter summary
/// when the loss is not finite.
double train_step(ModelParams& params, const std::vector<const TrainSample*>& batch, const NoiseDraw& noise,
                  const DiffusionSchedule& schedule, AdamW& optimizer);

/// One optimizer step of base pretraining on plain images [N,3,H,W].
double pretrain_step(ModelParams& params, const Tensor& images, const NoiseDraw& noise,
                     const DiffusionSchedule& schedule, AdamW& optimizer);

struct TrainLogRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
    std::string phase;
    std::optional<double> probe_loss;  // fixed-batch loss, when measured at this step
};

/// Line-delimited JSON training log.
class TrainLog {
   public:
    TrainLog() = default;
    explicit TrainLog(const std::filesystem::path& path);
    void write(const TrainLogRecord& r);
    void event(const std::string& json_line);
    bool is_open() const { return out_.is_open(); }

   private:
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Checkpoints

struct SavedModel {
    ModelParams params;
    std::string schedule_json;
    std::string extra_json;  // free-form metadata written by the caller
};

void save_model(const std::filesystem::path& path, const ModelParams& params, const DiffusionSchedule& schedule,
                const std::string& extra_json = "{}");
SavedModel load_model(const std::filesystem::path& path);
DiffusionSchedule schedule_from_json(const std::string& text);
std::string schedule_to_json(const DiffusionSchedule& schedule);

}  // namespace pmdiff
