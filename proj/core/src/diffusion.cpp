#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <memory>
#include <nlohmann/json.hpp>
#include <sstream>

#include "pmdiff/checkpoint.hpp"
#include "pmdiff/microdiff.hpp"

namespace pmdiff {

// ---------------------------------------------------------------------------
// Schedule

DiffusionSchedule::DiffusionSchedule(std::size_t steps, double beta_start, double beta_end, bool rescale)
    : beta_start_(beta_start), beta_end_(beta_end), rescale_(rescale) {
    if (steps == 0) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end >= beta_start)) throw ConfigError("schedule: need 0 < beta_start <= beta_end");
    const double factor = rescale ? static_cast<double>(kReferenceSteps) / static_cast<double>(steps) : 1.0;
    const double lo = beta_start * factor, hi = beta_end * factor;
    if (!(hi < 1.0)) throw ConfigError("schedule: betas must stay below 1 (reduce beta_end or disable rescale)");
    betas_.resize(steps);
    alpha_bars_.resize(steps + 1);
    alpha_bars_[0] = 1.0;
    for (std::size_t k = 0; k < steps; ++k) {
        betas_[k] = steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(steps - 1);
        alpha_bars_[k + 1] = alpha_bars_[k] * (1.0 - betas_[k]);
    }
}

double DiffusionSchedule::beta(std::size_t tau) const {
    if (tau == 0 || tau > steps()) throw std::out_of_range("schedule: beta index " + std::to_string(tau));
    return betas_[tau - 1];
}

double DiffusionSchedule::alpha_bar(std::size_t tau) const {
    if (tau > steps()) throw std::out_of_range("schedule: timestep " + std::to_string(tau) + " > T");
    return alpha_bars_[tau];
}

std::vector<std::size_t> DiffusionSchedule::ddim_timesteps(std::size_t from, std::size_t count) const {
    if (from > steps()) throw std::out_of_range("ddim: start timestep " + std::to_string(from) + " > T");
    if (count == 0 || count > from)
        throw std::invalid_argument("ddim: step count " + std::to_string(count) + " must lie in [1, " +
                                    std::to_string(from) + "]");
    std::vector<std::size_t> ts(count);
    for (std::size_t i = 0; i < count; ++i) {
        ts[i] = static_cast<std::size_t>(
            std::llround(static_cast<double>(from) * static_cast<double>(count - i) / static_cast<double>(count)));
    }
    return ts;
}

// ---------------------------------------------------------------------------
// Forward process and sampler

namespace {

Tensor gaussian(const Shape& shape, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = nd(rng);
    return Tensor::from(shape, std::move(v));
}

// Per-sample noising with one timestep per batch element.
Tensor noised(const Tensor& z0, const std::vector<double>& taus, const Tensor& eps, const DiffusionSchedule& s) {
    if (z0.shape() != eps.shape()) throw ShapeError("noise: eps " + shape_str(eps.shape()) + " vs image " +
                                                    shape_str(z0.shape()));
    const std::size_t n = z0.dim(0), per = z0.numel() / n;
    std::vector<double> out(z0.numel());
    for (std::size_t i = 0; i < n; ++i) {
        const double ab = s.alpha_bar(static_cast<std::size_t>(taus[i]));
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (std::size_t k = i * per; k < (i + 1) * per; ++k) out[k] = a * z0[k] + b * eps[k];
    }
    return Tensor::from(z0.shape(), std::move(out));
}

}  // namespace

NoisedImage add_noise(const Tensor& z0, std::size_t tau, const DiffusionSchedule& schedule, std::uint64_t seed) {
    if (tau > schedule.steps())
        throw std::out_of_range("add_noise: timestep " + std::to_string(tau) + " outside [0, " +
                                std::to_string(schedule.steps()) + "]");
    std::mt19937_64 rng(seed);
    NoisedImage out;
    out.eps = gaussian(z0.shape(), rng);
    const double ab = schedule.alpha_bar(tau);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> v(z0.numel());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = a * z0[k] + b * out.eps[k];
    out.z_tau = Tensor::from(z0.shape(), std::move(v));
    return out;
}

Tensor ddim_run(const EpsFn& eps_fn, Tensor x, const std::vector<std::size_t>& timesteps,
                const DiffusionSchedule& schedule) {
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        const std::size_t tau = timesteps[i];
        const std::size_t prev = i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
        if (tau == 0 || prev >= tau) throw std::invalid_argument("ddim: timesteps must be strictly descending and > 0");
        const Tensor eps = eps_fn(x, tau);
        if (eps.shape() != x.shape()) throw ShapeError("ddim: predictor returned " + shape_str(eps.shape()));
        const double ab = schedule.alpha_bar(tau), abp = schedule.alpha_bar(prev);
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const double spa = std::sqrt(abp), spb = std::sqrt(1.0 - abp);
        std::vector<double> next(x.numel());
        for (std::size_t k = 0; k < next.size(); ++k) {
            const double x0 = std::clamp((x[k] - sb * eps[k]) / sa, -1.0, 1.0);
            const double e = (x[k] - sa * x0) / sb;
            next[k] = spa * x0 + spb * e;
        }
        x = Tensor::from(x.shape(), std::move(next));
    }
    return x;
}

Tensor ddim_sample(const EpsFn& eps_fn, const Shape& shape, const DiffusionSchedule& schedule, std::size_t steps,
                   std::uint64_t seed) {
    if (steps > schedule.steps())
        throw std::invalid_argument("ddim_sample: " + std::to_string(steps) + " steps exceed T = " +
                                    std::to_string(schedule.steps()));
    std::mt19937_64 rng(seed);
    return ddim_run(eps_fn, gaussian(shape, rng), schedule.ddim_timesteps(schedule.steps(), steps), schedule);
}

Tensor refine_render(const EpsFn& eps_fn, const Tensor& candidate, double s, const DiffusionSchedule& schedule,
                     std::size_t steps, std::uint64_t seed) {
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("refine_render: noise scale must lie in [0, 1]");
    if (steps == 0 || steps > schedule.steps()) throw std::invalid_argument("refine_render: bad step count");
    const double T = static_cast<double>(schedule.steps());
    const auto tau = static_cast<std::size_t>(std::llround(s * T));
    if (tau == 0) return candidate;
    const auto tail = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(steps) * static_cast<double>(tau) / T)));
    const NoisedImage z = add_noise(candidate, tau, schedule, seed);
    return ddim_run(eps_fn, z.z_tau, schedule.ddim_timesteps(tau, std::min(tail, tau)), schedule);
}

EpsFn base_eps_fn(const ModelParams& params) {
    auto frozen = std::make_shared<ModelParams>(params.clone());
    frozen->set_requires_grad("", false);
    return [frozen](const Tensor& z, std::size_t tau) {
        Graph g;
        return Denoiser(*frozen).base_eps(g, z, std::vector<double>(z.dim(0), static_cast<double>(tau)));
    };
}

EpsFn conditional_eps_fn(const ModelParams& params, const Tensor& target_encoding,
                         const std::vector<std::pair<Tensor, Tensor>>& references) {
    auto frozen = std::make_shared<ModelParams>(params.clone());
    frozen->set_requires_grad("", false);
    auto cond = std::make_shared<Condition>();
    cond->target_encoding = target_encoding;
    {
        Graph g;
        const Denoiser d(*frozen);
        for (const auto& [z_ref, enc_ref] : references) cond->references.push_back(d.reference_features(g, z_ref, enc_ref));
    }
    return [frozen, cond](const Tensor& z, std::size_t tau) {
        Graph g;
        return Denoiser(*frozen).eps(g, z, std::vector<double>(z.dim(0), static_cast<double>(tau)), *cond);
    };
}

// ---------------------------------------------------------------------------
// Training

NoiseDraw draw_noise(std::size_t batch, const ModelConfig& cfg, const DiffusionSchedule& schedule,
                     std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> td(1, schedule.steps());
    NoiseDraw d;
    for (std::size_t i = 0; i < batch; ++i) d.taus.push_back(static_cast<double>(td(rng)));
    d.eps = gaussian({batch, cfg.image_channels, cfg.image_height, cfg.image_width}, rng);
    return d;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
    if (items.empty()) throw std::invalid_argument("stack_batch: empty batch");
    Shape shape = items.front().shape();
    std::vector<double> v;
    v.reserve(items.size() * items.front().numel());
    for (const auto& t : items) {
        Shape s = t.shape();
        if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
            throw ShapeError("stack_batch: item " + shape_str(s) + " vs " + shape_str(shape));
        v.insert(v.end(), t.data().begin(), t.data().end());
    }
    shape[0] = v.size() / shape_numel(Shape(shape.begin() + 1, shape.end()));
    return Tensor::from(shape, std::move(v));
}

namespace {

struct BatchTensors {
    Tensor z_target, z_reference, enc_reference, enc_target;
};

BatchTensors gather(const std::vector<const TrainSample*>& batch) {
    if (batch.empty()) throw std::invalid_argument("training batch is empty");
    std::vector<Tensor> zt, zr, er, et;
    for (const auto* s : batch) {
        zt.push_back(s->z_target);
        zr.push_back(s->z_reference);
        er.push_back(s->enc_reference);
        et.push_back(s->enc_target);
    }
    return {stack_batch(zt), stack_batch(zr), stack_batch(er), stack_batch(et)};
}

Tensor conditional_prediction(Graph& g, const ModelParams& params, const BatchTensors& b, const Tensor& z_tau,
                              const std::vector<double>& taus) {
    const Denoiser d(params);
    Condition cond;
    cond.target_encoding = b.enc_target;
    cond.references.push_back(d.reference_features(g, b.z_reference, b.enc_reference));
    return d.eps(g, z_tau, taus, cond);
}

std::string parameter_summary(const ModelParams& params) {
    std::ostringstream os;
    os << std::setprecision(6);
    for (const char* prefix : {"base.", "cn.", "zc.", "ref."}) {
        double sq = 0.0;
        bool finite = true;
        for (const auto& [name, t] : params.with_prefix(prefix)) {
            for (double v : t.data()) {
                finite = finite && std::isfinite(v);
                sq += v * v;
            }
        }
        os << " " << prefix << "norm=" << std::sqrt(sq) << (finite ? "" : "(non-finite)");
    }
    return os.str();
}

double finish_step(Graph& g, const Tensor& loss, AdamW& opt, const ModelParams& params, const char* phase) {
    const double value = loss.item();
    if (!std::isfinite(value))
        throw NonFiniteError(std::string(phase) + ": non-finite loss at optimizer step " +
                             std::to_string(opt.steps_taken()) + ";" + parameter_summary(params));
    opt.zero_grad();
    g.backward(loss);
    opt.step();
    return value;
}

}  // namespace

double conditional_loss(const ModelParams& params, const std::vector<const TrainSample*>& batch,
                        const NoiseDraw& noise, const DiffusionSchedule& schedule) {
    ModelParams frozen = params.clone();
    frozen.set_requires_grad("", false);
    const BatchTensors b = gather(batch);
    Graph g;
    const Tensor pred =
        conditional_prediction(g, frozen, b, noised(b.z_target, noise.taus, noise.eps, schedule), noise.taus);
    return g.mse(pred, noise.eps).item();
}

double base_loss(const ModelParams& params, const std::vector<const TrainSample*>& batch, const NoiseDraw& noise,
                 const DiffusionSchedule& schedule) {
    ModelParams frozen = params.clone();
    frozen.set_requires_grad("", false);
    const BatchTensors b = gather(batch);
    Graph g;
    const Tensor pred =
        Denoiser(frozen).base_eps(g, noised(b.z_target, noise.taus, noise.eps, schedule), noise.taus);
    return g.mse(pred, noise.eps).item();
}

double train_step(ModelParams& params, const std::vector<const TrainSample*>& batch, const NoiseDraw& noise,
                  const DiffusionSchedule& schedule, AdamW& optimizer) {
    for (const auto& [name, t] : params.base()) {
        if (t.requires_grad()) throw std::logic_error("train_step: base parameter '" + name + "' is not frozen");
    }
    const BatchTensors b = gather(batch);
    Graph g;
    const Tensor pred =
        conditional_prediction(g, params, b, noised(b.z_target, noise.taus, noise.eps, schedule), noise.taus);
    return finish_step(g, g.mse(pred, noise.eps), optimizer, params, "train_step");
}

double pretrain_step(ModelParams& params, const Tensor& images, const NoiseDraw& noise,
                     const DiffusionSchedule& schedule, AdamW& optimizer) {
    Graph g;
    const Tensor pred = Denoiser(params).base_eps(g, noised(images, noise.taus, noise.eps, schedule), noise.taus);
    return finish_step(g, g.mse(pred, noise.eps), optimizer, params, "pretrain_step");
}

// ---------------------------------------------------------------------------
// Log and checkpoints

TrainLog::TrainLog(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open training log " + path.string());
}

void TrainLog::write(const TrainLogRecord& r) {
    if (!out_.is_open()) return;
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["loss"] = r.loss;
    j["lr"] = r.lr;
    j["wall_ms"] = r.wall_ms;
    if (!r.phase.empty()) j["phase"] = r.phase;
    if (r.probe_loss) j["probe_loss"] = *r.probe_loss;
    out_ << j.dump() << '\n';
    out_.flush();
}

void TrainLog::event(const std::string& json_line) {
    if (out_.is_open()) out_ << json_line << '\n' << std::flush;
}

std::string schedule_to_json(const DiffusionSchedule& s) {
    nlohmann::ordered_json j;
    j["T"] = s.steps();
    j["beta_start"] = s.beta_start();
    j["beta_end"] = s.beta_end();
    j["rescale"] = s.rescaled();
    return j.dump();
}

DiffusionSchedule schedule_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        return DiffusionSchedule(j.value("T", std::size_t{100}), j.value("beta_start", 1e-4),
                                 j.value("beta_end", 0.02), j.value("rescale", true));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("schedule config: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const ModelParams& params, const DiffusionSchedule& schedule,
                const std::string& extra_json) {
    Checkpoint ck;
    for (const auto& [name, t] : params.tensors) ck.tensors.emplace_back(name, t);
    nlohmann::ordered_json meta;
    meta["model"] = nlohmann::json::parse(params.config.to_json());
    meta["schedule"] = nlohmann::json::parse(schedule_to_json(schedule));
    meta["encoding_channel_order"] = "axis-major; per frequency cos then sin";
    meta["extra"] = nlohmann::json::parse(extra_json);
    ck.metadata_json = meta.dump();
    write_checkpoint(path, ck);
}

SavedModel load_model(const std::filesystem::path& path) {
    const Checkpoint ck = read_checkpoint(path);
    if (ck.metadata_json.empty()) throw FormatError(path.string() + ": checkpoint has no model config metadata");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ck.metadata_json);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad metadata: " + e.what());
    }
    SavedModel out;
    out.params = build_model(ModelConfig::from_json(meta.at("model").dump()));
    out.schedule_json = meta.value("schedule", nlohmann::json::object()).dump();
    out.extra_json = meta.value("extra", nlohmann::json::object()).dump();
    if (ck.tensors.size() != out.params.tensors.size())
        throw FormatError(path.string() + ": expected " + std::to_string(out.params.tensors.size()) +
                          " tensors, found " + std::to_string(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        auto it = out.params.tensors.find(name);
        if (it == out.params.tensors.end()) throw FormatError(path.string() + ": unexpected tensor '" + name + "'");
        if (it->second.shape() != t.shape())
            throw FormatError(path.string() + ": tensor '" + name + "' has shape " + shape_str(t.shape()) +
                              ", model expects " + shape_str(it->second.shape()));
        it->second = t.clone();
    }
    return out;
}

}  // namespace pmdiff
