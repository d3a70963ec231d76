#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "pmdiff/microdiff.hpp"

using namespace pmdiff;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.image_width = 8;
    c.image_height = 8;
    c.widths = {4, 4, 8};
    c.time_dim = 8;
    c.embed_dim = 8;
    c.seed = 3;
    return c;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = n(rng);
    return Tensor::from(std::move(shape), std::move(v));
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

TrainSample random_sample(const ModelConfig& c, std::mt19937_64& rng) {
    TrainSample s;
    const Shape img{1, c.image_channels, c.image_height, c.image_width};
    const Shape enc{1, c.encoding_channels, c.image_height, c.image_width};
    s.z_target = random_tensor(img, rng, 0.5);
    s.z_reference = random_tensor(img, rng, 0.5);
    s.enc_reference = random_tensor(enc, rng);
    s.enc_target = random_tensor(enc, rng);
    return s;
}

// Perturbs every conditional parameter so the branches become active.
void activate_branches(ModelParams& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto& [name, t] : p.tensors) {
        if (name.rfind("base.", 0) == 0) continue;
        for (auto& x : t.mutable_data()) x += n(rng);
    }
}

}  // namespace

TEST_CASE("build_model initialization contracts") {
    const ModelParams p = build_model(tiny_config());
    CHECK(p.count("base.") > 0);
    for (const auto& [name, t] : p.with_prefix("zc.")) {
        for (double v : t.data()) CHECK(v == 0.0);
    }
    for (const auto& site : kRefSites) {
        for (double v : p.at("ref." + site + ".zero.w").data()) CHECK(v == 0.0);
        for (double v : p.at("ref." + site + ".zero.b").data()) CHECK(v == 0.0);
    }
    for (const auto& [name, t] : p.with_prefix("base.enc.")) {
        CHECK(bit_equal(p.at("cn." + name.substr(5)), t));
    }
    for (const auto& [name, t] : p.with_prefix("base.time.")) {
        CHECK(bit_equal(p.at("cn." + name.substr(5)), t));
    }
    // The bottleneck site has the self-attention's width and copies it whole.
    CHECK(bit_equal(p.at("ref.quarter.k"), p.at("base.mid.attn.k")));
    CHECK(bit_equal(p.at("ref.quarter.q"), p.at("base.mid.attn.q")));
    CHECK(bit_equal(p.at("ref.quarter.v"), p.at("base.mid.attn.v")));
    // Narrower sites take the leading block.
    const Tensor& k = p.at("base.mid.attn.k");
    const Tensor& kf = p.at("ref.half.k");
    REQUIRE(kf.shape() == Shape{4, 4});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(kf[i * 4 + j] == k[i * 8 + j]);
}

TEST_CASE("model config validation") {
    ModelConfig c = tiny_config();
    c.widths = {4, 6, 8};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.widths = {4, 8, 4};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.image_width = 10;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("fresh conditional model equals the base model bit for bit") {
    const ModelConfig c = tiny_config();
    const ModelParams p = build_model(c);
    std::mt19937_64 rng(11);
    const DiffusionSchedule sched;
    for (int trial = 0; trial < 5; ++trial) {
        const TrainSample s = random_sample(c, rng);
        const Tensor z = random_tensor({1, 3, 8, 8}, rng);
        const std::size_t tau = 1 + static_cast<std::size_t>(trial) * 20;
        const Tensor base = base_eps_fn(p)(z, tau);
        const Tensor cond = conditional_eps_fn(p, s.enc_target, {{s.z_reference, s.enc_reference}})(z, tau);
        CHECK(bit_equal(base, cond));
    }
}

TEST_CASE("controlnet_forward equals base encoder features at init and reacts to geometry after") {
    const ModelConfig c = tiny_config();
    ModelParams p = build_model(c);
    std::mt19937_64 rng(5);
    const Tensor z = random_tensor({1, 3, 8, 8}, rng);
    const Tensor enc = random_tensor({1, 24, 8, 8}, rng);
    const Tensor enc2 = random_tensor({1, 24, 8, 8}, rng);
    {
        Graph g;
        const EncoderFeatures f = Denoiser(p).controlnet_forward(g, z, enc, {10.0});
        const EncoderFeatures f2 = Denoiser(p).controlnet_forward(g, z, enc2, {10.0});
        CHECK(bit_equal(f.s1, f2.s1));
        CHECK(bit_equal(f.s3, f2.s3));
    }
    activate_branches(p, 9);
    Graph g;
    const EncoderFeatures f = Denoiser(p).controlnet_forward(g, z, enc, {10.0});
    const EncoderFeatures f2 = Denoiser(p).controlnet_forward(g, z, enc2, {10.0});
    CHECK_FALSE(bit_equal(f.s1, f2.s1));
    CHECK_FALSE(bit_equal(f.s3, f2.s3));
    Graph g2;
    CHECK_THROWS_AS(Denoiser(p).controlnet_forward(g2, z, random_tensor({1, 24, 4, 8}, rng), {10.0}), ShapeError);
}

TEST_CASE("ref_attention oracles") {
    std::mt19937_64 rng(21);
    const std::size_t c = 3;
    const Tensor wq = random_tensor({c, c}, rng), wk = random_tensor({c, c}, rng), wv = random_tensor({c, c}, rng);
    const Tensor target = random_tensor({2, 5, c}, rng);

    SUBCASE("singleton reference gives its projected value everywhere") {
        const Tensor ref = random_tensor({2, 1, c}, rng);
        Graph g;
        const Tensor out = ref_attention(g, target, ref, wq, wk, wv);
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t l = 0; l < 5; ++l)
                for (std::size_t j = 0; j < c; ++j) {
                    double v = 0.0;
                    for (std::size_t i = 0; i < c; ++i) v += ref[n * c + i] * wv[i * c + j];
                    CHECK(out[(n * 5 + l) * c + j] == doctest::Approx(v).epsilon(1e-12));
                }
    }
    SUBCASE("identical keys give the mean value") {
        const Tensor zero_k = Tensor::zeros({c, c});
        const Tensor ref = random_tensor({2, 4, c}, rng);
        Graph g;
        const Tensor out = ref_attention(g, target, ref, wq, zero_k, wv);
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t j = 0; j < c; ++j) {
                double mean = 0.0;
                for (std::size_t m = 0; m < 4; ++m)
                    for (std::size_t i = 0; i < c; ++i) mean += ref[(n * 4 + m) * c + i] * wv[i * c + j] / 4.0;
                for (std::size_t l = 0; l < 5; ++l) CHECK(out[(n * 5 + l) * c + j] == doctest::Approx(mean));
            }
    }
    SUBCASE("dense oracle") {
        const Tensor ref = random_tensor({2, 6, c}, rng);
        Graph g;
        const Tensor out = ref_attention(g, target, ref, wq, wk, wv);
        auto proj = [&](const Tensor& x, const Tensor& w, std::size_t row) {
            std::vector<double> r(c, 0.0);
            for (std::size_t j = 0; j < c; ++j)
                for (std::size_t i = 0; i < c; ++i) r[j] += x[row * c + i] * w[i * c + j];
            return r;
        };
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t l = 0; l < 5; ++l) {
                const auto q = proj(target, wq, n * 5 + l);
                std::vector<double> s(6);
                double mx = -1e300;
                for (std::size_t m = 0; m < 6; ++m) {
                    const auto k = proj(ref, wk, n * 6 + m);
                    s[m] = (q[0] * k[0] + q[1] * k[1] + q[2] * k[2]) / std::sqrt(3.0);
                    mx = std::max(mx, s[m]);
                }
                double z = 0.0;
                for (auto& v : s) z += (v = std::exp(v - mx));
                std::vector<double> o(c, 0.0);
                for (std::size_t m = 0; m < 6; ++m) {
                    const auto v = proj(ref, wv, n * 6 + m);
                    for (std::size_t j = 0; j < c; ++j) o[j] += s[m] / z * v[j];
                }
                for (std::size_t j = 0; j < c; ++j) CHECK(std::abs(out[(n * 5 + l) * c + j] - o[j]) < 1e-9);
            }
    }
    SUBCASE("dimension mismatch") {
        Graph g;
        CHECK_THROWS_AS(ref_attention(g, target, random_tensor({2, 4, 2}, rng), wq, wk, wv), ShapeError);
        CHECK_THROWS_AS(ref_attention(g, target, random_tensor({1, 4, c}, rng), wq, wk, wv), ShapeError);
    }
}

TEST_CASE("multiview_concat") {
    std::mt19937_64 rng(4);
    const std::size_t c = 4;
    const Tensor wq = random_tensor({c, c}, rng), wk = random_tensor({c, c}, rng), wv = random_tensor({c, c}, rng);
    const Tensor target = random_tensor({1, 3, c}, rng);
    const Tensor r1 = random_tensor({1, 5, c}, rng);
    Graph g;
    CHECK_THROWS_AS(multiview_concat(g, {}), std::invalid_argument);

    const Tensor single = ref_attention(g, target, r1, wq, wk, wv);
    CHECK(bit_equal(ref_attention(g, target, multiview_concat(g, {r1}), wq, wk, wv), single));

    const Tensor dup = ref_attention(g, target, multiview_concat(g, {r1, r1}), wq, wk, wv);
    for (std::size_t i = 0; i < dup.numel(); ++i) CHECK(dup[i] == doctest::Approx(single[i]).epsilon(1e-12));

    // Attention mass per reference view, computed from the concatenated keys.
    const Tensor r2 = random_tensor({1, 5, c}, rng, 3.0);
    const Tensor both = multiview_concat(g, {r1, r2});
    REQUIRE(both.shape() == Shape{1, 10, c});
    Graph h;
    const Tensor q = h.reshape(h.matmul(h.reshape(target, {3, c}), wq), {1, 3, c});
    const Tensor k = h.reshape(h.matmul(h.reshape(both, {10, c}), wk), {1, 10, c});
    const Tensor a = h.softmax(h.scale(h.bmm(q, k, false, true), 0.5));
    for (std::size_t l = 0; l < 3; ++l) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t m = 0; m < 5; ++m) m1 += a[l * 10 + m];
        for (std::size_t m = 5; m < 10; ++m) m2 += a[l * 10 + m];
        CHECK(m1 > 0.0);
        CHECK(m2 > 0.0);
        CHECK(std::abs(m1 + m2 - 1.0) < 1e-9);
    }
}

TEST_CASE("inject_ref is exact at zero init and checks shapes") {
    std::mt19937_64 rng(8);
    const Tensor f = random_tensor({1, 4, 2, 3}, rng);
    const Tensor attn = random_tensor({1, 6, 4}, rng);
    Graph g;
    CHECK(bit_equal(inject_ref(g, f, attn, Tensor::zeros({4, 4, 1, 1}), Tensor::zeros({4})), f));
    const Tensor changed = inject_ref(g, f, attn, random_tensor({4, 4, 1, 1}, rng), Tensor::zeros({4}));
    CHECK_FALSE(bit_equal(changed, f));
    CHECK_THROWS_AS(inject_ref(g, f, random_tensor({1, 5, 4}, rng), Tensor::zeros({4, 4, 1, 1}), Tensor::zeros({4})),
                    ShapeError);
}

TEST_CASE("schedule") {
    const DiffusionSchedule s;
    CHECK(s.steps() == 100);
    CHECK(s.alpha_bar(0) == 1.0);
    for (std::size_t t = 1; t <= s.steps(); ++t) {
        CHECK(s.beta(t) > 0.0);
        CHECK(s.beta(t) < 1.0);
        if (t > 1) CHECK(s.beta(t) >= s.beta(t - 1));
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        CHECK(s.alpha_bar(t) > 0.0);
    }
    const auto ts = s.ddim_timesteps(100, 50);
    CHECK(ts.size() == 50);
    CHECK(ts.front() == 100);
    CHECK(ts.back() > 0);
    CHECK(kDefaultSamplerSteps == 50);
    CHECK(schedule_from_json(schedule_to_json(s)).alpha_bar(37) == s.alpha_bar(37));
}

TEST_CASE("add_noise") {
    const DiffusionSchedule s;
    std::mt19937_64 rng(1);
    const Tensor z0 = random_tensor({1, 3, 4, 4}, rng, 0.5);
    const NoisedImage a = add_noise(z0, 0, s, 7);
    CHECK(bit_equal(a.z_tau, z0));
    CHECK(a.eps.numel() == z0.numel());
    CHECK(bit_equal(add_noise(z0, 40, s, 7).z_tau, add_noise(z0, 40, s, 7).z_tau));
    CHECK_FALSE(bit_equal(add_noise(z0, 40, s, 7).z_tau, add_noise(z0, 40, s, 8).z_tau));
    CHECK_THROWS_AS(add_noise(z0, 101, s, 7), std::out_of_range);

    // Monte-Carlo variance against abar Var(z0) + (1 - abar).
    const std::size_t n = 10000, tau = 30;
    std::vector<double> v0(n);
    std::normal_distribution<double> nd(0.0, 0.7);
    for (auto& x : v0) x = nd(rng);
    const Tensor big = Tensor::from({1, 1, 1, n}, v0);
    const Tensor zt = add_noise(big, tau, s, 99).z_tau;
    auto var = [](std::span<const double> d) {
        double m = 0.0, q = 0.0;
        for (double x : d) m += x;
        m /= static_cast<double>(d.size());
        for (double x : d) q += (x - m) * (x - m);
        return q / static_cast<double>(d.size() - 1);
    };
    const double ab = s.alpha_bar(tau);
    const double expected = ab * var(big.data()) + (1.0 - ab);
    const double se = expected * std::sqrt(2.0 / static_cast<double>(n - 1));
    CHECK(std::abs(var(zt.data()) - expected) < 3.0 * se);
}

TEST_CASE("DDIM with an oracle noise predictor recovers the clean image") {
    const DiffusionSchedule s;
    std::mt19937_64 rng(2);
    const Tensor z0 = random_tensor({1, 3, 4, 4}, rng, 0.3);
    const EpsFn oracle = [&](const Tensor& z, std::size_t tau) {
        const double ab = s.alpha_bar(tau);
        std::vector<double> e(z.numel());
        for (std::size_t i = 0; i < e.size(); ++i) e[i] = (z[i] - std::sqrt(ab) * z0[i]) / std::sqrt(1.0 - ab);
        return Tensor::from(z.shape(), std::move(e));
    };
    for (std::size_t steps : {std::size_t{50}, std::size_t{100}, std::size_t{7}}) {
        const Tensor out = ddim_sample(oracle, z0.shape(), s, steps, 3);
        for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out[i] - z0[i]) < 1e-9);
    }
    CHECK_THROWS(ddim_sample(oracle, z0.shape(), s, 101, 3));
    CHECK(bit_equal(ddim_sample(oracle, z0.shape(), s, 50, 3), ddim_sample(oracle, z0.shape(), s, 50, 3)));
}

TEST_CASE("refine_render boundaries") {
    const ModelConfig c = tiny_config();
    const ModelParams p = build_model(c);
    const DiffusionSchedule s;
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({1, 3, 8, 8}, rng, 0.4);
    const EpsFn f = base_eps_fn(p);
    CHECK(bit_equal(refine_render(f, x, 0.0, s), x));
    CHECK_THROWS(refine_render(f, x, -0.1, s));
    CHECK_THROWS(refine_render(f, x, 1.5, s));
    // Full noise: the candidate only survives through a vanishing sqrt(abar_T) term.
    const Tensor a = refine_render(f, x, 1.0, s, 10, 4);
    const Tensor b = refine_render(f, Tensor::zeros(x.shape()), 1.0, s, 10, 4);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff < 0.1);
}

TEST_CASE("train_step keeps the base frozen and starts at the base loss") {
    const ModelConfig c = tiny_config();
    ModelParams p = build_model(c);
    const DiffusionSchedule s;
    std::mt19937_64 rng(12);
    std::vector<TrainSample> samples;
    for (int i = 0; i < 3; ++i) samples.push_back(random_sample(c, rng));
    std::vector<const TrainSample*> batch;
    for (const auto& x : samples) batch.push_back(&x);
    std::mt19937_64 nrng(4);
    const NoiseDraw noise = draw_noise(batch.size(), c, s, nrng);

    CHECK(conditional_loss(p, batch, noise, s) == base_loss(p, batch, noise, s));

    std::vector<Tensor> trainable;
    for (auto& [n, t] : p.trainable()) trainable.push_back(t);
    AdamW opt(trainable, AdamWConfig{.lr = 1e-2});
    p.set_requires_grad("base.", true);
    CHECK_THROWS_AS(train_step(p, batch, noise, s, opt), std::logic_error);
    p.set_requires_grad("", false);
    for (const char* prefix : {"cn.", "zc.", "ref."}) p.set_requires_grad(prefix, true);

    const std::string before = p.hash("base.");
    const std::string cond_before = p.hash("zc.");
    const double first = train_step(p, batch, noise, s, opt);
    CHECK(first == doctest::Approx(base_loss(p, batch, noise, s)).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) train_step(p, batch, noise, s, opt);
    CHECK(p.hash("base.") == before);
    CHECK(p.hash("zc.") != cond_before);
}

TEST_CASE("conditional gradients match finite differences on every group") {
    const ModelConfig c = tiny_config();
    ModelParams p = build_model(c);
    activate_branches(p, 31);
    std::mt19937_64 rng(13);
    const TrainSample smp = random_sample(c, rng);
    const DiffusionSchedule s;
    std::mt19937_64 nrng(5);
    const NoiseDraw noise = draw_noise(1, c, s, nrng);
    std::vector<NamedTensor> params;
    for (auto& nt : p.trainable()) params.push_back(nt);
    const std::vector<const TrainSample*> batch{&smp};
    auto loss = [&](Graph& g) {
        const Denoiser d(p);
        Condition cond;
        cond.target_encoding = smp.enc_target;
        cond.references.push_back(d.reference_features(g, smp.z_reference, smp.enc_reference));
        const NoisedImage zt = add_noise(smp.z_target, static_cast<std::size_t>(noise.taus[0]), s, 1);
        return g.mse(d.eps(g, zt.z_tau, noise.taus, cond), zt.eps);
    };
    GradCheckOptions opt;
    opt.max_entries_per_param = 3;
    opt.seed = 2;
    const GradCheckReport r = gradient_check(loss, params, opt);
    CHECK(r.passed);
    bool q_nonzero = false;
    for (const auto& e : r.entries)
        if (e.name.find(".q") != std::string::npos && e.max_abs_grad > 0.0) q_nonzero = true;
    CHECK(q_nonzero);
}

TEST_CASE("checkpoint round trip") {
    const ModelConfig c = tiny_config();
    ModelParams p = build_model(c);
    activate_branches(p, 77);
    const DiffusionSchedule s(40);
    const auto path = std::filesystem::temp_directory_path() / "pmdiff_unit_model.pmdk";
    save_model(path, p, s, R"({"note":"x"})");
    const SavedModel m = load_model(path);
    CHECK(m.params.hash() == p.hash());
    CHECK(m.params.config.to_json() == c.to_json());
    CHECK(schedule_from_json(m.schedule_json).steps() == 40);
    CHECK(m.extra_json.find("note") != std::string::npos);
    std::filesystem::remove(path);
}
