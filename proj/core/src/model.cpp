#include <cmath>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "pmdiff/io.hpp"
#include "pmdiff/microdiff.hpp"

namespace pmdiff {

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
    if (image_width == 0 || image_height == 0 || image_width % 4 != 0 || image_height % 4 != 0)
        throw ConfigError("model: image size must be a positive multiple of 4 (two stride-2 levels)");
    if (image_channels == 0) throw ConfigError("model: image_channels must be >= 1");
    if (groups == 0) throw ConfigError("model: groups must be >= 1");
    for (std::size_t k = 0; k < widths.size(); ++k) {
        if (widths[k] == 0 || widths[k] % groups != 0)
            throw ConfigError("model: width " + std::to_string(widths[k]) + " at level " + std::to_string(k + 1) +
                              " is not divisible by the group count " + std::to_string(groups));
    }
    if (widths[1] > widths[2])
        throw ConfigError("model: the bottleneck must be the widest level so every reference-attention site can "
                          "be initialized from the bottleneck self-attention");
    if (time_dim == 0 || time_dim % 2 != 0) throw ConfigError("model: time_dim must be even and positive");
    if (embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
    if (encoding_channels == 0) throw ConfigError("model: encoding_channels must be positive");
}

std::string ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["image_width"] = image_width;
    j["image_height"] = image_height;
    j["image_channels"] = image_channels;
    j["widths"] = widths;
    j["groups"] = groups;
    j["time_dim"] = time_dim;
    j["embed_dim"] = embed_dim;
    j["encoding_channels"] = encoding_channels;
    j["seed"] = seed;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ModelConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.image_width = j.value("image_width", c.image_width);
        c.image_height = j.value("image_height", c.image_height);
        c.image_channels = j.value("image_channels", c.image_channels);
        if (j.contains("widths")) c.widths = j.at("widths").get<std::array<std::size_t, 3>>();
        c.groups = j.value("groups", c.groups);
        c.time_dim = j.value("time_dim", c.time_dim);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.encoding_channels = j.value("encoding_channels", c.encoding_channels);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Parameters

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::out_of_range("model parameter '" + name + "' not found");
    return it->second;
}

std::vector<NamedTensor> ModelParams::with_prefix(const std::string& prefix) const {
    std::vector<NamedTensor> out;
    for (const auto& [name, t] : tensors) {
        if (name.compare(0, prefix.size(), prefix) == 0) out.emplace_back(name, t);
    }
    return out;
}

std::vector<NamedTensor> ModelParams::trainable() const {
    std::vector<NamedTensor> out;
    for (const char* prefix : {"cn.", "zc.", "ref."}) {
        auto part = with_prefix(prefix);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

std::size_t ModelParams::count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, t] : with_prefix(prefix)) n += t.numel();
    return n;
}

void ModelParams::set_requires_grad(const std::string& prefix, bool on) {
    for (auto& [name, t] : tensors) {
        if (name.compare(0, prefix.size(), prefix) == 0) t.set_requires_grad(on);
    }
}

ModelParams ModelParams::clone() const {
    ModelParams out;
    out.config = config;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.clone(t.requires_grad()));
    return out;
}

std::string ModelParams::hash(const std::string& prefix) const {
    std::vector<std::uint8_t> buf;
    for (const auto& [name, t] : with_prefix(prefix)) {
        buf.insert(buf.end(), name.begin(), name.end());
        buf.push_back(0);
        const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data().data());
        buf.insert(buf.end(), raw, raw + t.numel() * sizeof(double));
    }
    return io::sha256_hex(buf);
}

namespace {

class Initializer {
   public:
    Initializer(ModelParams& p, std::uint64_t seed) : p_(p), rng_(seed) {}

    void uniform(const std::string& name, Shape shape, double bound) {
        std::uniform_real_distribution<double> d(-bound, bound);
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = d(rng_);
        p_.tensors[name] = Tensor::from(std::move(shape), std::move(v));
    }
    void constant(const std::string& name, Shape shape, double value) {
        p_.tensors[name] = Tensor::full(std::move(shape), value);
    }
    void conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k, double gain = 1.0) {
        const double bound = gain * std::sqrt(3.0 / static_cast<double>(in * k * k));
        uniform(name + ".w", {out, in, k, k}, bound);
        constant(name + ".b", {out}, 0.0);
    }
    void zero_conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
        constant(name + ".w", {out, in, k, k}, 0.0);
        constant(name + ".b", {out}, 0.0);
    }
    void linear(const std::string& name, std::size_t in, std::size_t out) {
        uniform(name + ".w", {in, out}, std::sqrt(3.0 / static_cast<double>(in)));
        constant(name + ".b", {out}, 0.0);
    }
    void norm(const std::string& name, std::size_t c) {
        constant(name + ".g", {c}, 1.0);
        constant(name + ".b", {c}, 0.0);
    }
    void res_block(const std::string& name, std::size_t in, std::size_t out, std::size_t emb) {
        norm(name + ".norm1", in);
        conv(name + ".conv1", out, in, 3);
        linear(name + ".temb", emb, out);
        norm(name + ".norm2", out);
        conv(name + ".conv2", out, out, 3);
        if (in != out) conv(name + ".skip", out, in, 1);
    }
    void attention(const std::string& name, std::size_t c) {
        norm(name + ".norm", c);
        const double bound = std::sqrt(3.0 / static_cast<double>(c));
        uniform(name + ".q", {c, c}, bound);
        uniform(name + ".k", {c, c}, bound);
        uniform(name + ".v", {c, c}, bound);
        linear(name + ".out", c, c);
    }

   private:
    ModelParams& p_;
    std::mt19937_64 rng_;
};

// Leading block of a bottleneck attention tensor, sized for a narrower site.
Tensor leading_block(const Tensor& t, std::size_t c) {
    if (t.rank() == 1) {
        const auto d = t.data();
        return Tensor::from({c}, std::vector<double>(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(c)));
    }
    const std::size_t full = t.dim(1);
    std::vector<double> v(c * c);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] = t[i * full + j];
    return Tensor::from({c, c}, std::move(v));
}

void init_encoder(Initializer& init, const std::string& prefix, const ModelConfig& c) {
    const auto [c1, c2, c3] = c.widths;
    init.conv(prefix + "conv_in", c1, c.image_channels, 3);
    init.res_block(prefix + "rb1", c1, c1, c.embed_dim);
    init.conv(prefix + "down1", c2, c1, 3);
    init.res_block(prefix + "rb2", c2, c2, c.embed_dim);
    init.conv(prefix + "down2", c3, c2, 3);
    init.res_block(prefix + "rb3", c3, c3, c.embed_dim);
}

}  // namespace

void reset_conditional(ModelParams& params) {
    const auto& c = params.config;
    for (auto it = params.tensors.begin(); it != params.tensors.end();) {
        const auto& n = it->first;
        const bool conditional = n.rfind("cn.", 0) == 0 || n.rfind("zc.", 0) == 0 || n.rfind("ref.", 0) == 0;
        it = conditional ? params.tensors.erase(it) : std::next(it);
    }
    // ControlNet: bit copy of the base encoder and its time MLP.
    std::vector<std::pair<std::string, Tensor>> copies;
    for (const auto& [name, t] : params.tensors) {
        if (name.rfind("base.enc.", 0) == 0 || name.rfind("base.time.", 0) == 0)
            copies.emplace_back("cn." + name.substr(5), t.clone());
    }
    for (auto& [name, t] : copies) params.tensors[name] = t;

    Initializer init(params, c.seed ^ 0x5a5a5a5aULL);
    const auto [c1, c2, c3] = c.widths;
    init.zero_conv("zc.hint", c1, c.encoding_channels, 3);
    init.zero_conv("zc.s1", c1, c1, 1);
    init.zero_conv("zc.s2", c2, c2, 1);
    init.zero_conv("zc.s3", c3, c3, 1);
    for (std::size_t site = 0; site < kRefSites.size(); ++site) {
        const std::string r = "ref." + kRefSites[site] + ".";
        const std::size_t ch = c.widths[site + 1];
        for (const char* leaf : {"norm.g", "norm.b", "q", "k", "v"}) {
            const Tensor& src = params.at(std::string("base.mid.attn.") + leaf);
            params.tensors[r + leaf] = ch == c3 ? src.clone() : leading_block(src, ch);
        }
        init.zero_conv(r + "zero", ch, ch, 1);
    }
}

ModelParams build_model(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    Initializer init(p, cfg.seed);
    const auto [c1, c2, c3] = cfg.widths;
    init.linear("base.time.lin1", cfg.time_dim, cfg.embed_dim);
    init.linear("base.time.lin2", cfg.embed_dim, cfg.embed_dim);
    init_encoder(init, "base.enc.", cfg);
    init.res_block("base.mid.rb1", c3, c3, cfg.embed_dim);
    init.attention("base.mid.attn", c3);
    init.res_block("base.mid.rb2", c3, c3, cfg.embed_dim);
    init.conv("base.dec.up2", c3, c3, 3);
    init.res_block("base.dec.rb2", c3 + c2, c2, cfg.embed_dim);
    init.conv("base.dec.up1", c2, c2, 3);
    init.res_block("base.dec.rb1", c2 + c1, c1, cfg.embed_dim);
    init.norm("base.out.norm", c1);
    init.conv("base.out.conv", cfg.image_channels, c1, 3, 0.1);
    reset_conditional(p);
    return p;
}

// ---------------------------------------------------------------------------
// Attention primitives

Tensor to_tokens(Graph& g, const Tensor& x) {
    const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2) * x.dim(3);
    return g.permute(g.reshape(x, {n, c, l}), {0, 2, 1});
}

Tensor from_tokens(Graph& g, const Tensor& tokens, std::size_t height, std::size_t width) {
    const std::size_t n = tokens.dim(0), c = tokens.dim(2);
    if (tokens.dim(1) != height * width)
        throw ShapeError("from_tokens: " + std::to_string(tokens.dim(1)) + " tokens for a " + std::to_string(height) +
                         "x" + std::to_string(width) + " map");
    return g.reshape(g.permute(tokens, {0, 2, 1}), {n, c, height, width});
}

namespace {

// [N,L,C] x [C,D] -> [N,L,D]
Tensor project(Graph& g, const Tensor& tokens, const Tensor& w) {
    const std::size_t n = tokens.dim(0), l = tokens.dim(1), c = tokens.dim(2);
    if (w.rank() != 2 || w.dim(0) != c)
        throw ShapeError("projection: tokens " + shape_str(tokens.shape()) + " vs weight " + shape_str(w.shape()));
    return g.reshape(g.matmul(g.reshape(tokens, {n * l, c}), w), {n, l, w.dim(1)});
}

Tensor attend(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
    const Tensor scores = g.scale(g.bmm(q, k, false, true), scale);
    return g.bmm(g.softmax(scores), v);
}

}  // namespace

Tensor ref_attention(Graph& g, const Tensor& target_tokens, const Tensor& reference_tokens, const Tensor& wq,
                     const Tensor& wk, const Tensor& wv) {
    auto s = g.scope("ref_attention");
    if (target_tokens.rank() != 3 || reference_tokens.rank() != 3 || target_tokens.dim(0) != reference_tokens.dim(0) ||
        target_tokens.dim(2) != reference_tokens.dim(2))
        throw ShapeError("ref_attention: target " + shape_str(target_tokens.shape()) + " vs reference " +
                         shape_str(reference_tokens.shape()));
    return attend(g, project(g, target_tokens, wq), project(g, reference_tokens, wk),
                  project(g, reference_tokens, wv));
}

Tensor multiview_concat(Graph& g, const std::vector<Tensor>& reference_tokens) {
    if (reference_tokens.empty()) throw std::invalid_argument("multiview_concat: no reference views");
    if (reference_tokens.size() == 1) return reference_tokens.front();
    return g.concat(reference_tokens, 1);
}

Tensor inject_ref(Graph& g, const Tensor& f, const Tensor& attn_tokens, const Tensor& zero_w, const Tensor& zero_b) {
    auto s = g.scope("inject_ref");
    const Tensor attn = from_tokens(g, attn_tokens, f.dim(2), f.dim(3));
    if (attn.shape() != f.shape())
        throw ShapeError("inject_ref: attention " + shape_str(attn.shape()) + " vs features " + shape_str(f.shape()));
    return g.add(f, g.conv2d(attn, zero_w, zero_b));
}

// ---------------------------------------------------------------------------
// Denoiser

Denoiser::Denoiser(const ModelParams& params) : params_(params) { params.config.validate(); }

Tensor Denoiser::time_embedding(Graph& g, const std::string& prefix, const std::vector<double>& taus) const {
    const std::size_t n = taus.size(), half = params_.config.time_dim / 2;
    std::vector<double> feats(n * 2 * half);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
            feats[i * 2 * half + k] = std::sin(taus[i] * freq);
            feats[i * 2 * half + half + k] = std::cos(taus[i] * freq);
        }
    }
    const Tensor sinus = Tensor::from({n, 2 * half}, std::move(feats));
    auto s = g.scope(prefix + "time");
    const std::size_t e = params_.config.embed_dim;
    Tensor h = g.add_broadcast(g.matmul(sinus, p(prefix + "time.lin1.w")),
                               g.reshape(p(prefix + "time.lin1.b"), {1, e}));
    h = g.silu(h);
    h = g.add_broadcast(g.matmul(h, p(prefix + "time.lin2.w")), g.reshape(p(prefix + "time.lin2.b"), {1, e}));
    return g.silu(h);  // consumers only ever see the activated embedding
}

Tensor Denoiser::res_block(Graph& g, const std::string& prefix, const Tensor& x, const Tensor& temb) const {
    auto s = g.scope(prefix);
    const std::size_t groups = params_.config.groups;
    Tensor h = g.silu(g.group_norm(x, groups, p(prefix + ".norm1.g"), p(prefix + ".norm1.b")));
    h = g.conv2d(h, p(prefix + ".conv1.w"), p(prefix + ".conv1.b"), {1, 1});
    const std::size_t n = x.dim(0), c = h.dim(1);
    const Tensor t = g.add_broadcast(g.matmul(temb, p(prefix + ".temb.w")),
                                     g.reshape(p(prefix + ".temb.b"), {1, c}));
    h = g.add_broadcast(h, g.reshape(t, {n, c, 1, 1}));
    h = g.silu(g.group_norm(h, groups, p(prefix + ".norm2.g"), p(prefix + ".norm2.b")));
    h = g.conv2d(h, p(prefix + ".conv2.w"), p(prefix + ".conv2.b"), {1, 1});
    const auto skip = params_.tensors.find(prefix + ".skip.w");
    const Tensor shortcut = skip == params_.tensors.end() ? x : g.conv2d(x, skip->second, p(prefix + ".skip.b"));
    return g.add(shortcut, h);
}

Tensor Denoiser::self_attention(Graph& g, const std::string& prefix, const Tensor& x) const {
    auto s = g.scope(prefix);
    const Tensor n = g.group_norm(x, params_.config.groups, p(prefix + ".norm.g"), p(prefix + ".norm.b"));
    const Tensor tok = to_tokens(g, n);
    const Tensor a = attend(g, project(g, tok, p(prefix + ".q")), project(g, tok, p(prefix + ".k")),
                            project(g, tok, p(prefix + ".v")));
    const std::size_t c = x.dim(1);
    Tensor o = g.add_broadcast(project(g, a, p(prefix + ".out.w")), g.reshape(p(prefix + ".out.b"), {1, 1, c}));
    return g.add(x, from_tokens(g, o, x.dim(2), x.dim(3)));
}

EncoderFeatures Denoiser::encoder(Graph& g, const std::string& prefix, const Tensor& z, const Tensor& temb,
                                  const Tensor& hint) const {
    if (z.rank() != 4 || z.dim(1) != params_.config.image_channels || z.dim(2) != params_.config.image_height ||
        z.dim(3) != params_.config.image_width)
        throw ShapeError("denoiser input " + shape_str(z.shape()) + " does not match the configured image size");
    auto s = g.scope(prefix + "enc");
    Tensor h = g.conv2d(z, p(prefix + "enc.conv_in.w"), p(prefix + "enc.conv_in.b"), {1, 1});
    if (hint.defined()) h = g.add(h, hint);
    EncoderFeatures f;
    f.s1 = res_block(g, prefix + "enc.rb1", h, temb);
    h = g.conv2d(f.s1, p(prefix + "enc.down1.w"), p(prefix + "enc.down1.b"), {2, 1});
    f.s2 = res_block(g, prefix + "enc.rb2", h, temb);
    h = g.conv2d(f.s2, p(prefix + "enc.down2.w"), p(prefix + "enc.down2.b"), {2, 1});
    f.s3 = res_block(g, prefix + "enc.rb3", h, temb);
    return f;
}

Tensor Denoiser::ref_site(Graph& g, const std::string& site, const Tensor& f, const Condition& cond) const {
    auto s = g.scope("ref." + site);
    const std::string r = "ref." + site + ".";
    const std::size_t groups = params_.config.groups;
    const Tensor q_tok = to_tokens(g, g.group_norm(f, groups, p(r + "norm.g"), p(r + "norm.b")));
    std::vector<Tensor> kv;
    kv.reserve(cond.references.size());
    for (const auto& ref : cond.references) {
        const auto it = ref.sites.find(site);
        if (it == ref.sites.end()) throw std::invalid_argument("reference features lack site '" + site + "'");
        kv.push_back(to_tokens(g, g.group_norm(it->second, groups, p(r + "norm.g"), p(r + "norm.b"))));
    }
    const Tensor a = ref_attention(g, q_tok, multiview_concat(g, kv), p(r + "q"), p(r + "k"), p(r + "v"));
    return inject_ref(g, f, a, p(r + "zero.w"), p(r + "zero.b"));
}

Tensor Denoiser::decode(Graph& g, const EncoderFeatures& f, const Tensor& temb, const Condition* cond) const {
    const bool attend_refs = cond != nullptr && !cond->references.empty();
    Tensor m = res_block(g, "base.mid.rb1", f.s3, temb);
    m = self_attention(g, "base.mid.attn", m);
    if (attend_refs) m = ref_site(g, "quarter", m, *cond);
    m = res_block(g, "base.mid.rb2", m, temb);

    auto s = g.scope("base.dec");
    Tensor u = g.conv2d(g.upsample_nearest2x(m), p("base.dec.up2.w"), p("base.dec.up2.b"), {1, 1});
    Tensor h = res_block(g, "base.dec.rb2", g.concat({u, f.s2}, 1), temb);
    if (attend_refs) h = ref_site(g, "half", h, *cond);
    u = g.conv2d(g.upsample_nearest2x(h), p("base.dec.up1.w"), p("base.dec.up1.b"), {1, 1});
    h = res_block(g, "base.dec.rb1", g.concat({u, f.s1}, 1), temb);
    h = g.silu(g.group_norm(h, params_.config.groups, p("base.out.norm.g"), p("base.out.norm.b")));
    return g.conv2d(h, p("base.out.conv.w"), p("base.out.conv.b"), {1, 1});
}

Tensor Denoiser::base_eps(Graph& g, const Tensor& z, const std::vector<double>& taus) const {
    if (taus.size() != z.dim(0)) throw ShapeError("base_eps: one timestep per batch element required");
    const Tensor temb = time_embedding(g, "base.", taus);
    return decode(g, encoder(g, "base.", z, temb, Tensor()), temb, nullptr);
}

EncoderFeatures Denoiser::cn_features(Graph& g, const Tensor& z, const Tensor& encoding,
                                      const std::vector<double>& taus, const Tensor& temb_base) const {
    if (encoding.rank() != 4 || encoding.dim(0) != z.dim(0) || encoding.dim(1) != params_.config.encoding_channels ||
        encoding.dim(2) != z.dim(2) || encoding.dim(3) != z.dim(3))
        throw ShapeError("controlnet: encoding " + shape_str(encoding.shape()) + " does not match image " +
                         shape_str(z.shape()));
    EncoderFeatures base = encoder(g, "base.", z, temb_base, Tensor());
    const Tensor temb_cn = time_embedding(g, "cn.", taus);
    auto s = g.scope("zc");
    const Tensor hint = g.conv2d(encoding, p("zc.hint.w"), p("zc.hint.b"), {1, 1});
    EncoderFeatures cn = encoder(g, "cn.", z, temb_cn, hint);
    base.s1 = g.add(base.s1, g.conv2d(cn.s1, p("zc.s1.w"), p("zc.s1.b")));
    base.s2 = g.add(base.s2, g.conv2d(cn.s2, p("zc.s2.w"), p("zc.s2.b")));
    base.s3 = g.add(base.s3, g.conv2d(cn.s3, p("zc.s3.w"), p("zc.s3.b")));
    return base;
}

EncoderFeatures Denoiser::controlnet_forward(Graph& g, const Tensor& z, const Tensor& encoding,
                                             const std::vector<double>& taus) const {
    if (taus.size() != z.dim(0)) throw ShapeError("controlnet_forward: one timestep per batch element required");
    return cn_features(g, z, encoding, taus, time_embedding(g, "base.", taus));
}

ReferenceFeatures Denoiser::reference_features(Graph& g, const Tensor& z_ref, const Tensor& encoding) const {
    auto s = g.scope("refstream");
    const std::vector<double> taus(z_ref.dim(0), 0.0);
    const Tensor temb = time_embedding(g, "base.", taus);
    const EncoderFeatures f = cn_features(g, z_ref, encoding, taus, temb);
    ReferenceFeatures taps;
    taps.sites[kRefSites[0]] = f.s2;
    taps.sites[kRefSites[1]] = f.s3;
    return taps;
}

Tensor Denoiser::eps(Graph& g, const Tensor& z, const std::vector<double>& taus, const Condition& cond) const {
    if (taus.size() != z.dim(0)) throw ShapeError("eps: one timestep per batch element required");
    if (!cond.target_encoding.defined()) throw std::invalid_argument("eps: target encoding missing");
    const Tensor temb = time_embedding(g, "base.", taus);
    return decode(g, cn_features(g, z, cond.target_encoding, taus, temb), temb, &cond);
}

}  // namespace pmdiff
