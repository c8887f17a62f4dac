#include "hdexpit/controller.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace hdexpit {

ControllerVariant variant_from_string(const std::string& s) {
    if (s == "regression") return ControllerVariant::regression;
    if (s == "diffusion") return ControllerVariant::diffusion;
    throw ConfigError("unknown controller variant: " + s);
}

std::string to_string(ControllerVariant v) {
    return v == ControllerVariant::regression ? "regression" : "diffusion";
}

void LlModelConfig::validate() const {
    if (image <= 0 || chunk <= 0 || action_dim <= 0)
        throw ConfigError("controller dimensions must be positive");
    if (n_min < 1 || n_min > chunk) throw ConfigError("n_min must lie in [1, n]");
    if (image % 4 != 0) throw ConfigError("controller image size must be divisible by 4");
    if (enc_width % gn_groups != 0 || enc_width2 % gn_groups != 0)
        throw ConfigError("controller widths must be divisible by gn_groups");
    if (a_max <= 0.f) throw ConfigError("a_max must be positive");
    if (variant == ControllerVariant::diffusion && sched_steps < 2)
        throw ConfigError("controller schedule needs at least 2 steps");
}

template <class S>
LlNet<S>::LlNet(const LlModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    grid_ = cfg_.image / 4;
    const int out_dim = cfg_.chunk * cfg_.action_dim;

    patch_.setup(params_, "enc.patch", 6, cfg_.enc_width, 4, 4, 0, rng);
    gn1_.setup(params_, "enc.gn1", cfg_.enc_width, cfg_.gn_groups);
    conv_e_.setup(params_, "enc.conv", cfg_.enc_width, cfg_.enc_width, 3, 1, 1, rng);
    gn2_.setup(params_, "enc.gn2", cfg_.enc_width, cfg_.gn_groups);
    conv_d_.setup(params_, "enc.down", cfg_.enc_width, cfg_.enc_width2, 3, 2, 1, rng);
    gn3_.setup(params_, "enc.gn3", cfg_.enc_width2, cfg_.gn_groups);
    const int flat = cfg_.enc_width2 * (grid_ / 2) * (grid_ / 2);
    lin_z_.setup(params_, "enc.lin_z", flat, cfg_.z_dim, rng);

    lin_r1_.setup(params_, "reg.lin1", cfg_.z_dim, 2 * cfg_.head_width, rng);
    lin_r2_.setup(params_, "reg.lin2", 2 * cfg_.head_width, out_dim, rng, /*zero_init=*/true);

    lin_x_.setup(params_, "head.lin_x", out_dim, cfg_.head_width, rng);
    lin_t_.setup(params_, "head.lin_t", cfg_.d_temb, cfg_.head_width, rng);
    lin_cz_.setup(params_, "head.lin_cz", cfg_.z_dim, cfg_.head_width, rng);
    ln1_.setup(params_, "head.ln1", cfg_.head_width);
    lin_m1_.setup(params_, "head.lin_m1", cfg_.head_width, cfg_.head_width, rng);
    ln2_.setup(params_, "head.ln2", cfg_.head_width);
    lin_m2_.setup(params_, "head.lin_m2", cfg_.head_width, cfg_.head_width, rng);
    lin_out_.setup(params_, "head.lin_out", cfg_.head_width, out_dim, rng, /*zero_init=*/true);
}

template <class S>
const std::vector<S>& LlNet<S>::encoder_fwd(const std::vector<S>& o_pair, int B) {
    const int H = cfg_.image;
    if (o_pair.size() != static_cast<std::size_t>(B) * 6 * H * H)
        throw ConfigError("controller encoder: bad observation pair shape");
    const auto& p1 = patch_.fwd(o_pair, B, H, H);
    const auto& g1 = gn1_.fwd(p1, B, grid_ * grid_);
    const auto& s1 = se1_.fwd(g1);
    const auto& c1 = conv_e_.fwd(s1, B, grid_, grid_);
    const auto& g2 = gn2_.fwd(c1, B, grid_ * grid_);
    const auto& s2 = se2_.fwd(g2);
    const auto& c2 = conv_d_.fwd(s2, B, grid_, grid_);
    const int q = (grid_ / 2) * (grid_ / 2);
    const auto& g3 = gn3_.fwd(c2, B, q);
    const auto& s3 = se3_.fwd(g3);
    flat_ = s3;  // layout [B, C2*q] already contiguous per sample
    const auto& z = lin_z_.fwd(flat_, B);
    return sz_.fwd(z);
}

template <class S>
void LlNet<S>::encoder_bwd(const std::vector<S>& dz, int B) {
    const auto& d0 = sz_.bwd(dz);
    const auto& d1 = lin_z_.bwd(d0, B);
    const auto& d2 = se3_.bwd(d1);
    const int q = (grid_ / 2) * (grid_ / 2);
    const auto& d3 = gn3_.bwd(d2, B);
    (void)q;
    const auto& d4 = conv_d_.bwd(d3, B);
    const auto& d5 = se2_.bwd(d4);
    const auto& d6 = gn2_.bwd(d5, B);
    const auto& d7 = conv_e_.bwd(d6, B);
    const auto& d8 = se1_.bwd(d7);
    const auto& d9 = gn1_.bwd(d8, B);
    patch_.bwd(d9, B);
}

template <class S>
const std::vector<S>& LlNet<S>::forward_regression(const std::vector<S>& o_pair, int B) {
    const auto& z = encoder_fwd(o_pair, B);
    const auto& r1 = lin_r1_.fwd(z, B);
    const auto& r2 = sr_.fwd(r1);
    return lin_r2_.fwd(r2, B);
}

template <class S>
void LlNet<S>::backward_regression(const std::vector<S>& dpred, int B) {
    const auto& d1 = lin_r2_.bwd(dpred, B);
    const auto& d2 = sr_.bwd(d1);
    const auto& dz = lin_r1_.bwd(d2, B);
    encoder_bwd(dz, B);
}

template <class S>
const std::vector<S>& LlNet<S>::head_fwd(const std::vector<S>& z, const std::vector<S>& x,
                                         const std::vector<int>& jstep, int B) {
    temb_.assign(static_cast<std::size_t>(B) * cfg_.d_temb, S(0));
    for (int b = 0; b < B; ++b)
        nn::timestep_features<S>(jstep[b], cfg_.d_temb,
                                 temb_.data() + static_cast<std::size_t>(b) * cfg_.d_temb);
    const auto& hx = lin_x_.fwd(x, B);
    const auto& ht = lin_t_.fwd(temb_, B);
    const auto& hz = lin_cz_.fwd(z, B);
    h_.resize(hx.size());
    for (std::size_t i = 0; i < h_.size(); ++i) h_[i] = hx[i] + ht[i] + hz[i];
    const auto& n1 = ln1_.fwd(h_, B);
    const auto& a1 = sh1_.fwd(n1);
    const auto& m1 = lin_m1_.fwd(a1, B);
    h2_.resize(h_.size());
    for (std::size_t i = 0; i < h_.size(); ++i) h2_[i] = h_[i] + m1[i];
    const auto& n2 = ln2_.fwd(h2_, B);
    const auto& a2 = sh2_.fwd(n2);
    const auto& m2 = lin_m2_.fwd(a2, B);
    h3_.resize(h_.size());
    for (std::size_t i = 0; i < h_.size(); ++i) h3_[i] = h2_[i] + m2[i];
    return lin_out_.fwd(h3_, B);
}

template <class S>
const std::vector<S>& LlNet<S>::head_bwd(const std::vector<S>& dv, int B) {
    std::vector<S> dh3 = lin_out_.bwd(dv, B);
    const auto& dm2 = lin_m2_.bwd(dh3, B);
    const auto& da2 = sh2_.bwd(dm2);
    const auto& dn2 = ln2_.bwd(da2, B);
    std::vector<S> dh2 = dh3;
    for (std::size_t i = 0; i < dh2.size(); ++i) dh2[i] += dn2[i];
    const auto& dm1 = lin_m1_.bwd(dh2, B);
    const auto& da1 = sh1_.bwd(dm1);
    const auto& dn1 = ln1_.bwd(da1, B);
    std::vector<S> dh = dh2;
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dn1[i];
    lin_x_.bwd(dh, B);
    lin_t_.bwd(dh, B);
    dz_ = lin_cz_.bwd(dh, B);
    return dz_;
}

template <class S>
const std::vector<S>& LlNet<S>::forward_diffusion(const std::vector<S>& o_pair,
                                                  const std::vector<S>& x,
                                                  const std::vector<int>& jstep, int B) {
    const auto& z = encoder_fwd(o_pair, B);
    return head_fwd(z, x, jstep, B);
}

template <class S>
void LlNet<S>::backward_diffusion(const std::vector<S>& dv, int B) {
    const auto& dz = head_bwd(dv, B);
    encoder_bwd(dz, B);
}

template <class S>
std::vector<S> LlNet<S>::encode(const std::vector<S>& o_pair, int B) {
    return encoder_fwd(o_pair, B);
}

template <class S>
void LlNet<S>::diffusion_head(const std::vector<S>& z, const std::vector<S>& x,
                              const std::vector<int>& jstep, int B, std::vector<S>& v_out) {
    v_out = head_fwd(z, x, jstep, B);
}

template class LlNet<float>;
template class LlNet<double>;

ControllerParams make_controller(const LlModelConfig& cfg, std::uint64_t init_seed) {
    ControllerParams p;
    p.cfg = cfg;
    p.cfg.validate();
    p.sched = NoiseSchedule::make(cfg.sched_kind, cfg.sched_steps);
    Rng rng(derive_seed(init_seed, 0x4c4c2121ull));
    p.net = std::make_unique<LlNet<float>>(p.cfg, rng);
    return p;
}

ControllerParams ControllerParams::clone() const {
    ControllerParams p;
    p.cfg = cfg;
    p.sched = sched;
    Rng rng(0);
    p.net = std::make_unique<LlNet<float>>(cfg, rng);
    p.net->params().copy_params_from(net->params());
    p.adam = adam;
    p.train_steps = train_steps;
    return p;
}

ChunkSample extract_chunk(const Trajectory& traj, Rng& rng, int n_min, int n, int obs_h,
                          int obs_w) {
    const int N = traj.num_actions();
    if (N < 1) throw ConfigError("degenerate trajectory: no actions");
    const int i = rng.uniform_int(0, N - 1);
    const int m_raw = rng.uniform_int(n_min, n);
    const int m = std::min(m_raw, N - i);

    ChunkSample s;
    s.start = i;
    s.o_source = dequantize_observation(traj.observations.at(i));
    s.o_target = dequantize_observation(traj.observations.at(i + m));
    s.chunk.effective_len = m;
    s.chunk.actions.assign(n, static_action());
    for (int k = 0; k < m; ++k) s.chunk.actions[k] = traj.actions[i + k];
    (void)obs_h;
    (void)obs_w;
    return s;
}

std::vector<float> normalize_chunk(const ActionChunk& c, float a_max) {
    std::vector<float> v(c.actions.size() * 3);
    for (std::size_t k = 0; k < c.actions.size(); ++k) {
        const Action& a = c.actions[k];
        v[k * 3 + 0] = a.dx / a_max;
        v[k * 3 + 1] = a.dy / a_max;
        v[k * 3 + 2] = a.grip_cmd == GripCmd::close ? 1.f
                       : a.grip_cmd == GripCmd::open ? -1.f
                                                     : 0.f;
    }
    return v;
}

ActionChunk decode_chunk(std::span<const float> v, float a_max, int n) {
    ActionChunk c;
    c.effective_len = n;
    c.actions.resize(n);
    for (int k = 0; k < n; ++k) {
        Action a;
        a.dx = std::clamp(v[k * 3 + 0], -1.f, 1.f) * a_max;
        a.dy = std::clamp(v[k * 3 + 1], -1.f, 1.f) * a_max;
        const float g = v[k * 3 + 2];
        a.grip_cmd = g > 0.5f ? GripCmd::close : g < -0.5f ? GripCmd::open : GripCmd::hold;
        c.actions[k] = a;
    }
    return c;
}

LlTrainer::LlTrainer(ControllerParams& params, int workers)
    : p_(params), workers_(std::max(1, workers)) {
    Rng dummy(0);
    for (int w = 0; w < workers_; ++w)
        reps_.push_back(std::make_unique<LlNet<float>>(p_.cfg, dummy));
}

float LlTrainer::step(const LlBatch& batch, Rng& rng) {
    const int B = batch.B;
    if (B <= 0) throw ConfigError("empty controller batch");
    const int H = p_.cfg.image;
    const std::size_t opx = static_cast<std::size_t>(6) * H * H;
    const std::size_t D = static_cast<std::size_t>(p_.cfg.chunk) * p_.cfg.action_dim;
    const bool diff = p_.cfg.variant == ControllerVariant::diffusion;

    std::vector<int> jstep(B, 0);
    std::vector<float> xj, vt;
    if (diff) {
        const int J = p_.sched.steps();
        std::vector<float> eps(static_cast<std::size_t>(B) * D);
        for (int b = 0; b < B; ++b) jstep[b] = rng.uniform_int(0, J - 1);
        for (auto& e : eps) e = rng.normal_f();
        xj.resize(batch.chunks.size());
        vt.resize(batch.chunks.size());
        for (int b = 0; b < B; ++b) {
            const std::span<const float> x0(batch.chunks.data() + b * D, D);
            const std::span<const float> ee(eps.data() + b * D, D);
            forward_noise<float>(x0, jstep[b], ee, p_.sched, {xj.data() + b * D, D});
            velocity_target<float>(x0, ee, jstep[b], p_.sched, {vt.data() + b * D, D});
        }
    }

    const double denom = static_cast<double>(B) * D;
    std::vector<double> loss_sum(workers_, 0.0);
    std::vector<int> lo(workers_), hi(workers_);
    for (int w = 0; w < workers_; ++w) {
        lo[w] = static_cast<int>(static_cast<std::int64_t>(B) * w / workers_);
        hi[w] = static_cast<int>(static_cast<std::int64_t>(B) * (w + 1) / workers_);
    }

    auto run = [&](int w) {
        auto& rep = *reps_[w];
        const int n = hi[w] - lo[w];
        if (n == 0) return;
        rep.params().copy_params_from(p_.net->params());
        rep.params().zero_grad();
        std::vector<float> op(n * opx);
        std::memcpy(op.data(), batch.o_pairs.data() + lo[w] * opx, op.size() * sizeof(float));
        const float* tgt = (diff ? vt.data() : batch.chunks.data()) + lo[w] * D;

        const std::vector<float>* pred = nullptr;
        if (diff) {
            std::vector<float> x(n * D);
            std::memcpy(x.data(), xj.data() + lo[w] * D, x.size() * sizeof(float));
            std::vector<int> jj(n);
            for (int i = 0; i < n; ++i) jj[i] = jstep[lo[w] + i];
            pred = &rep.forward_diffusion(op, x, jj, n);
        } else {
            pred = &rep.forward_regression(op, n);
        }
        std::vector<float> dp(pred->size());
        double acc = 0.0;
        for (std::size_t i = 0; i < pred->size(); ++i) {
            const double diff_i = static_cast<double>((*pred)[i]) - tgt[i];
            acc += diff_i * diff_i;
            dp[i] = static_cast<float>(2.0 * diff_i / denom);
        }
        loss_sum[w] = acc;
        if (diff)
            rep.backward_diffusion(dp, n);
        else
            rep.backward_regression(dp, n);
    };

    if (workers_ == 1) {
        run(0);
    } else {
        std::vector<std::thread> ts;
        for (int w = 0; w < workers_; ++w) ts.emplace_back(run, w);
        for (auto& t : ts) t.join();
    }

    p_.net->params().zero_grad();
    for (int w = 0; w < workers_; ++w)
        if (hi[w] > lo[w]) p_.net->params().accumulate_grads_from(reps_[w]->params());

    double loss = 0.0;
    for (double l : loss_sum) loss += l;
    loss /= denom;
    if (!std::isfinite(loss))
        throw NumericalError("controller loss became non-finite at training step " +
                             std::to_string(p_.train_steps));
    p_.adam.step(p_.net->params());
    ++p_.train_steps;
    return static_cast<float>(loss);
}

ActionChunk ll_predict(ControllerParams& p, std::span<const float> o_source,
                       std::span<const float> o_target, Rng& rng) {
    const int H = p.cfg.image;
    const std::size_t fpx = static_cast<std::size_t>(3) * H * H;
    if (o_source.size() != fpx || o_target.size() != fpx)
        throw ConfigError("ll_predict: bad observation shape");
    std::vector<float> pair(2 * fpx);
    std::memcpy(pair.data(), o_source.data(), fpx * sizeof(float));
    std::memcpy(pair.data() + fpx, o_target.data(), fpx * sizeof(float));

    const std::size_t D = static_cast<std::size_t>(p.cfg.chunk) * p.cfg.action_dim;
    if (p.cfg.variant == ControllerVariant::regression) {
        const auto& out = p.net->forward_regression(pair, 1);
        return decode_chunk(out, p.cfg.a_max, p.cfg.chunk);
    }

    const std::vector<float> z = p.net->encode(pair, 1);
    std::vector<float> v_buf;
    DenoiseFn fn = [&](std::span<const float> x, int j, bool, std::span<float> vc,
                       std::span<float>) {
        std::vector<float> xin(x.begin(), x.end());
        p.net->diffusion_head(z, xin, {j}, 1, v_buf);
        std::copy(v_buf.begin(), v_buf.end(), vc.begin());
    };
    SamplerConfig sc;
    sc.kind = p.cfg.infer_kind;
    sc.inference_steps = p.cfg.infer_steps;
    sc.eta = p.cfg.infer_eta;
    sc.guidance_lambda = 1.0;  // no guidance on the controller
    std::vector<float> out(D);
    sample(sc, fn, p.sched, rng, out, -1.f, 1.f);
    return decode_chunk(out, p.cfg.a_max, p.cfg.chunk);
}

std::string ll_config_to_json(const LlModelConfig& cfg) {
    json j;
    j["image"] = cfg.image;
    j["chunk"] = cfg.chunk;
    j["n_min"] = cfg.n_min;
    j["action_dim"] = cfg.action_dim;
    j["variant"] = to_string(cfg.variant);
    j["enc_width"] = cfg.enc_width;
    j["enc_width2"] = cfg.enc_width2;
    j["z_dim"] = cfg.z_dim;
    j["head_width"] = cfg.head_width;
    j["d_temb"] = cfg.d_temb;
    j["gn_groups"] = cfg.gn_groups;
    j["a_max"] = cfg.a_max;
    j["sched_kind"] = to_string(cfg.sched_kind);
    j["sched_steps"] = cfg.sched_steps;
    j["infer_kind"] = to_string(cfg.infer_kind);
    j["infer_steps"] = cfg.infer_steps;
    j["infer_eta"] = cfg.infer_eta;
    return j.dump();
}

LlModelConfig ll_config_from_json(const std::string& js) {
    const json j = json::parse(js);
    LlModelConfig cfg;
    cfg.image = j.at("image").get<int>();
    cfg.chunk = j.at("chunk").get<int>();
    cfg.n_min = j.at("n_min").get<int>();
    cfg.action_dim = j.at("action_dim").get<int>();
    cfg.variant = variant_from_string(j.at("variant").get<std::string>());
    cfg.enc_width = j.at("enc_width").get<int>();
    cfg.enc_width2 = j.at("enc_width2").get<int>();
    cfg.z_dim = j.at("z_dim").get<int>();
    cfg.head_width = j.at("head_width").get<int>();
    cfg.d_temb = j.at("d_temb").get<int>();
    cfg.gn_groups = j.at("gn_groups").get<int>();
    cfg.a_max = j.at("a_max").get<float>();
    cfg.sched_kind = schedule_kind_from_string(j.at("sched_kind").get<std::string>());
    cfg.sched_steps = j.at("sched_steps").get<int>();
    cfg.infer_kind = sampler_kind_from_string(j.at("infer_kind").get<std::string>());
    cfg.infer_steps = j.at("infer_steps").get<int>();
    cfg.infer_eta = j.at("infer_eta").get<double>();
    return cfg;
}

void save_controller(const ControllerParams& p, const std::string& path) {
    json header;
    header["format"] = "hdexpit-ckpt-1";
    header["kind"] = "ll";
    header["config"] = json::parse(ll_config_to_json(p.cfg));
    header["train_steps"] = p.train_steps;
    header["adam_t"] = p.adam.steps_taken();
    header["adam_n"] = p.adam.m().size();
    header["param_count"] = p.net->params().count();
    char dig[17];
    std::snprintf(dig, sizeof(dig), "%016llx",
                  static_cast<unsigned long long>(p.sched.digest()));
    header["schedule_digest"] = dig;
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("cannot write checkpoint " + path);
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto* blk : p.net->params().blocks())
        f.write(reinterpret_cast<const char*>(blk->w.data()),
                static_cast<std::streamsize>(blk->w.size() * sizeof(float)));
    const auto& m = p.adam.m();
    const auto& v = p.adam.v();
    f.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

ControllerParams load_controller(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("cannot open checkpoint " + path);
    std::uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw IntegrityError("truncated checkpoint header in " + path);
    const json header = json::parse(hs);
    if (header.value("format", "") != "hdexpit-ckpt-1" || header.value("kind", "") != "ll")
        throw IntegrityError("not a controller checkpoint: " + path);

    ControllerParams p = make_controller(ll_config_from_json(header.at("config").dump()), 0);
    p.train_steps = header.at("train_steps").get<std::int64_t>();
    const std::size_t n = p.net->params().count();
    if (header.at("param_count").get<std::size_t>() != n)
        throw IntegrityError("checkpoint parameter count mismatch in " + path);
    for (auto* blk : p.net->params().blocks())
        f.read(reinterpret_cast<char*>(blk->w.data()),
               static_cast<std::streamsize>(blk->w.size() * sizeof(float)));
    const std::size_t adam_n = header.value("adam_n", n);
    std::vector<double> m(adam_n), v(adam_n);
    f.read(reinterpret_cast<char*>(m.data()),
           static_cast<std::streamsize>(adam_n * sizeof(double)));
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(adam_n * sizeof(double)));
    if (!f) throw IntegrityError("truncated checkpoint payload in " + path);
    p.adam.restore(header.at("adam_t").get<std::int64_t>(), std::move(m), std::move(v));
    return p;
}

}  // namespace hdexpit
