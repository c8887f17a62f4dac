#include "hdexpit/planner.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace hdexpit {

namespace {
// fixed multiplier on the learned input-passthrough gain; see forward()
constexpr double kGainScale = 16.0;
}

void HlModelConfig::validate() const {
    if (image <= 0 || frames <= 0 || width <= 0 || blocks <= 0)
        throw ConfigError("planner model dimensions must be positive");
    if (image % patch != 0) throw ConfigError("image size must be divisible by patch");
    if (width % gn_groups != 0)
        throw ConfigError("planner width must be divisible by gn_groups");
    if (p_drop < 0.0 || p_drop >= 1.0) throw ConfigError("p_drop must lie in [0, 1)");
    if (sched_steps < 2) throw ConfigError("schedule needs at least 2 steps");
}

template <class S>
HlDenoiser<S>::HlDenoiser(const HlModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    grid_ = cfg_.image / cfg_.patch;
    P_ = grid_ * grid_;
    const int C = cfg_.width;

    goal_table_.setup(params_, "goal_table", cfg_.num_goals, cfg_.d_goal, rng);
    lin_goal_.setup(params_, "lin_goal", cfg_.d_goal, cfg_.d_cond, rng);
    lin_t1_.setup(params_, "lin_t1", cfg_.d_temb, cfg_.d_cond, rng);
    lin_t2_.setup(params_, "lin_t2", cfg_.d_cond, cfg_.d_cond, rng);
    patch_.setup(params_, "patch", 6, C, cfg_.patch, cfg_.patch, 0, rng);
    pos_emb_.setup("pos_emb", C, P_);
    params_.add(&pos_emb_);
    frame_emb_.setup("frame_emb", cfg_.frames, C);
    params_.add(&frame_emb_);
    for (int i = 0; i < cfg_.blocks; ++i) {
        auto b = std::make_unique<Block>();
        const std::string pre = "block" + std::to_string(i);
        b->gn_a.setup(params_, pre + ".gn_a", C, cfg_.gn_groups);
        b->film.setup(params_, pre + ".film", cfg_.d_cond, C, rng);
        b->conv.setup(params_, pre + ".conv", C, C, 3, 1, 1, rng);
        b->gn_b.setup(params_, pre + ".gn_b", C, cfg_.gn_groups);
        b->tconv.setup(params_, pre + ".tconv", C, C, rng);
        b->glin1.setup(params_, pre + ".glin1", C, 2 * C, rng);
        b->glin2.setup(params_, pre + ".glin2", 2 * C, C, rng, /*zero_init=*/true);
        blocks_.push_back(std::move(b));
    }
    gn_out_.setup(params_, "gn_out", C, cfg_.gn_groups);
    unpatch_.setup(params_, "unpatch", C, 3, cfg_.patch, rng, /*zero_init=*/true);
    lin_gain_.setup(params_, "lin_gain", cfg_.d_cond, 3, rng, /*zero_init=*/true);
}

template <class S>
const std::vector<S>& HlDenoiser<S>::forward(const std::vector<S>& x,
                                             const std::vector<S>& o0,
                                             const std::vector<int>& goal_rows,
                                             const std::vector<int>& jstep, int B) {
    ++forward_count;
    const int M = cfg_.frames, H = cfg_.image, C = cfg_.width;
    const std::size_t fpx = static_cast<std::size_t>(3) * H * H;
    if (x.size() != static_cast<std::size_t>(B) * M * fpx)
        throw ConfigError("planner forward: bad noisy plan shape");
    if (o0.size() != static_cast<std::size_t>(B) * fpx)
        throw ConfigError("planner forward: bad o0 shape");

    // interleave per frame: [3 noisy | 3 o0] channels
    xin_.assign(static_cast<std::size_t>(B) * M * 2 * fpx, S(0));
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            const std::size_t dst = (static_cast<std::size_t>(b) * M + m) * 2 * fpx;
            std::memcpy(xin_.data() + dst,
                        x.data() + (static_cast<std::size_t>(b) * M + m) * fpx,
                        fpx * sizeof(S));
            std::memcpy(xin_.data() + dst + fpx,
                        o0.data() + static_cast<std::size_t>(b) * fpx, fpx * sizeof(S));
        }

    // conditioning vector from timestep + goal
    temb_.assign(static_cast<std::size_t>(B) * cfg_.d_temb, S(0));
    for (int b = 0; b < B; ++b)
        nn::timestep_features<S>(jstep[b], cfg_.d_temb,
                                 temb_.data() + static_cast<std::size_t>(b) * cfg_.d_temb);
    rows_cache_ = goal_rows;
    const auto& ct1 = lin_t1_.fwd(temb_, B);
    const auto& ct2 = silu_t_.fwd(ct1);
    const auto& ct = lin_t2_.fwd(ct2, B);
    const auto& gv = goal_table_.fwd(goal_rows);
    const auto& gc = lin_goal_.fwd(gv, B);
    cond_.resize(ct.size());
    for (std::size_t i = 0; i < ct.size(); ++i) cond_[i] = ct[i] + gc[i];

    std::vector<S> h = patch_.fwd(xin_, B * M, H, H);
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < C; ++c) {
                const std::size_t base = ((static_cast<std::size_t>(b) * M + m) * C + c) * P_;
                const S fe = frame_emb_.w[static_cast<std::size_t>(m) * C + c];
                const S* pe = pos_emb_.w.data() + static_cast<std::size_t>(c) * P_;
                for (int p = 0; p < P_; ++p) h[base + p] += fe + pe[p];
            }
    for (auto& blkp : blocks_) {
        Block& blk = *blkp;
        const auto& u1 = blk.gn_a.fwd(h, B * M, P_);
        const auto& u2 = blk.film.fwd(u1, cond_, B, M, P_);
        const auto& u3 = blk.silu_a.fwd(u2);
        const auto& u4 = blk.conv.fwd(u3, B * M, grid_, grid_);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += u4[i];

        const auto& v1 = blk.gn_b.fwd(h, B * M, P_);
        const auto& v2 = blk.silu_b.fwd(v1);
        const auto& v3 = blk.tconv.fwd(v2, B, M, P_);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += v3[i];

        blk.gpool.assign(static_cast<std::size_t>(B) * C, S(0));
        const S inv = S(1) / static_cast<S>(M * P_);
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base =
                        ((static_cast<std::size_t>(b) * M + m) * C + c) * P_;
                    S acc = S(0);
                    for (int p = 0; p < P_; ++p) acc += h[base + p];
                    blk.gpool[static_cast<std::size_t>(b) * C + c] += acc * inv;
                }
        const auto& w1 = blk.glin1.fwd(blk.gpool, B);
        const auto& w2 = blk.silu_g.fwd(w1);
        const auto& w3 = blk.glin2.fwd(w2, B);
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base =
                        ((static_cast<std::size_t>(b) * M + m) * C + c) * P_;
                    const S add = w3[static_cast<std::size_t>(b) * C + c];
                    for (int p = 0; p < P_; ++p) h[base + p] += add;
                }
    }
    const auto& o1 = gn_out_.fwd(h, B * M, P_);
    const auto& o2 = silu_out_.fwd(o1);
    out_ = unpatch_.fwd(o2, B * M, grid_, grid_);

    // The optimal input gain approaches alpha/beta (order 10); the fixed
    // multiplier lets the zero-initialized head reach it quickly.
    x_noisy_ = x;
    gain_ = lin_gain_.fwd(cond_, B);
    const std::size_t px = static_cast<std::size_t>(H) * H;
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < 3; ++c) {
                const S g = static_cast<S>(kGainScale) * gain_[static_cast<std::size_t>(b) * 3 + c];
                const std::size_t base = ((static_cast<std::size_t>(b) * M + m) * 3 + c) * px;
                for (std::size_t q = 0; q < px; ++q)
                    out_[base + q] += g * x_noisy_[base + q];
            }
    return out_;
}

template <class S>
void HlDenoiser<S>::backward(const std::vector<S>& dv, int B) {
    const int M = cfg_.frames, C = cfg_.width, H = cfg_.image;
    dcond_.assign(static_cast<std::size_t>(B) * cfg_.d_cond, S(0));

    // input-passthrough gain
    {
        const std::size_t px = static_cast<std::size_t>(H) * H;
        std::vector<S> dgain(static_cast<std::size_t>(B) * 3, S(0));
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int c = 0; c < 3; ++c) {
                    const std::size_t base =
                        ((static_cast<std::size_t>(b) * M + m) * 3 + c) * px;
                    S acc = S(0);
                    for (std::size_t q = 0; q < px; ++q)
                        acc += dv[base + q] * x_noisy_[base + q];
                    dgain[static_cast<std::size_t>(b) * 3 + c] += static_cast<S>(kGainScale) * acc;
                }
        const auto& dc = lin_gain_.bwd(dgain, B);
        for (std::size_t i = 0; i < dc.size(); ++i) dcond_[i] += dc[i];
    }

    const auto& d1 = unpatch_.bwd(dv, B * M);
    const auto& d2 = silu_out_.bwd(d1);
    dh_ = gn_out_.bwd(d2, B * M);

    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
        Block& blk = **it;
        // global pathway: h' = h + broadcast(glin2(silu(glin1(meanpool h))))
        std::vector<S> dw3(static_cast<std::size_t>(B) * C, S(0));
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base =
                        ((static_cast<std::size_t>(b) * M + m) * C + c) * P_;
                    S acc = S(0);
                    for (int p = 0; p < P_; ++p) acc += dh_[base + p];
                    dw3[static_cast<std::size_t>(b) * C + c] += acc;
                }
        const auto& dw2 = blk.glin2.bwd(dw3, B);
        const auto& dw1 = blk.silu_g.bwd(dw2);
        const auto& dg = blk.glin1.bwd(dw1, B);
        const S inv = S(1) / static_cast<S>(M * P_);
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base =
                        ((static_cast<std::size_t>(b) * M + m) * C + c) * P_;
                    const S add = dg[static_cast<std::size_t>(b) * C + c] * inv;
                    for (int p = 0; p < P_; ++p) dh_[base + p] += add;
                }
        // temporal pathway
        const auto& dt1 = blk.tconv.bwd(dh_, B);
        const auto& dt2 = blk.silu_b.bwd(dt1);
        const auto& dt3 = blk.gn_b.bwd(dt2, B * M);
        for (std::size_t i = 0; i < dh_.size(); ++i) dh_[i] += dt3[i];
        // conv pathway
        const auto& dc1 = blk.conv.bwd(dh_, B * M);
        const auto& dc2 = blk.silu_a.bwd(dc1);
        const auto& dc3 = blk.film.bwd(dc2, B, M, P_);
        for (std::size_t i = 0; i < blk.film.dcond.size(); ++i)
            dcond_[i] += blk.film.dcond[i];
        const auto& dc4 = blk.gn_a.bwd(dc3, B * M);
        for (std::size_t i = 0; i < dh_.size(); ++i) dh_[i] += dc4[i];
    }
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < C; ++c) {
                const std::size_t base = ((static_cast<std::size_t>(b) * M + m) * C + c) * P_;
                S acc = S(0);
                S* pg = pos_emb_.g.data() + static_cast<std::size_t>(c) * P_;
                for (int p = 0; p < P_; ++p) {
                    acc += dh_[base + p];
                    pg[p] += dh_[base + p];
                }
                frame_emb_.g[static_cast<std::size_t>(m) * C + c] += acc;
            }
    patch_.bwd(dh_, B * M);

    // conditioning backward: cond = lin_t2(silu(lin_t1(temb))) + lin_goal(goal)
    const auto& dgc = lin_goal_.bwd(dcond_, B);
    goal_table_.bwd(dgc);
    const auto& dt2 = lin_t2_.bwd(dcond_, B);
    const auto& dt1 = silu_t_.bwd(dt2);
    lin_t1_.bwd(dt1, B);
}

template <class S>
std::vector<S> HlDenoiser<S>::goal_row_embedding(int row) const {
    std::vector<S> out(cfg_.d_goal, S(0));
    if (row < 0) return out;
    if (row >= cfg_.num_goals) throw ConfigError("goal row out of range");
    std::copy(goal_table_.W.w.begin() + static_cast<std::size_t>(row) * cfg_.d_goal,
              goal_table_.W.w.begin() + static_cast<std::size_t>(row + 1) * cfg_.d_goal,
              out.begin());
    return out;
}

template class HlDenoiser<float>;
template class HlDenoiser<double>;

PlannerParams make_planner(const HlModelConfig& cfg, std::uint64_t init_seed) {
    PlannerParams p;
    p.cfg = cfg;
    p.cfg.validate();
    p.sched = NoiseSchedule::make(cfg.sched_kind, cfg.sched_steps);
    Rng rng(derive_seed(init_seed, 0x48502121ull));
    p.model = std::make_unique<HlDenoiser<float>>(p.cfg, rng);
    return p;
}

PlannerParams PlannerParams::clone() const {
    PlannerParams p;
    p.cfg = cfg;
    p.sched = sched;
    Rng rng(0);
    p.model = std::make_unique<HlDenoiser<float>>(cfg, rng);
    p.model->params().copy_params_from(model->params());
    p.adam = adam;
    p.train_steps = train_steps;
    return p;
}

GoalEmbedding goal_embed(const PlannerParams& p, std::optional<int> goal_row) {
    GoalEmbedding e;
    if (!goal_row.has_value()) {
        e.vector.assign(p.cfg.d_goal, 0.f);
        e.null_flag = true;
        return e;
    }
    e.vector = p.model->goal_row_embedding(*goal_row);
    e.null_flag = false;
    return e;
}

std::vector<int> subgoal_indices(int num_actions, int frames) {
    if (num_actions < 1) throw ConfigError("degenerate trajectory: no actions");
    std::vector<int> idx(frames);
    for (int i = 1; i <= frames; ++i)
        idx[i - 1] = static_cast<int>(
            std::floor(static_cast<double>(i) * num_actions / frames + 0.5));
    idx.back() = num_actions;
    return idx;
}

std::pair<std::vector<float>, Plan> extract_subgoals(const Trajectory& traj, int frames,
                                                     int obs_h, int obs_w) {
    const int N = traj.num_actions();
    const auto idx = subgoal_indices(N, frames);
    Plan plan;
    plan.frames = frames;
    plan.h = obs_h;
    plan.w = obs_w;
    const std::size_t fpx = static_cast<std::size_t>(3) * obs_h * obs_w;
    plan.data.resize(static_cast<std::size_t>(frames) * fpx);
    for (int i = 0; i < frames; ++i) {
        const auto f = dequantize_observation(traj.observations.at(idx[i]));
        std::copy(f.begin(), f.end(), plan.data.begin() + i * fpx);
    }
    return {dequantize_observation(traj.observations.at(0)), plan};
}

HlTrainer::HlTrainer(PlannerParams& params, int workers)
    : p_(params), workers_(std::max(1, workers)) {
    Rng dummy(0);
    for (int w = 0; w < workers_; ++w)
        reps_.push_back(std::make_unique<HlDenoiser<float>>(p_.cfg, dummy));
}

float HlTrainer::step(const HlBatch& batch, Rng& rng) {
    const int B = batch.B;
    if (B <= 0) throw ConfigError("empty planner batch");
    const int M = p_.cfg.frames, H = p_.cfg.image;
    const std::size_t fpx = static_cast<std::size_t>(3) * H * H;
    const std::size_t D = static_cast<std::size_t>(M) * fpx;
    const int J = p_.sched.steps();

    // Per-element randomness is drawn serially in batch order, so the math is
    // identical for any worker count; only float summation order varies.
    std::vector<int> jstep(B), rows(B);
    std::vector<float> eps(static_cast<std::size_t>(B) * D);
    for (int b = 0; b < B; ++b) {
        jstep[b] = rng.uniform_int(0, J - 1);
        rows[b] = rng.uniform() < p_.cfg.p_drop ? -1 : batch.goal_rows[b];
    }
    for (auto& e : eps) e = rng.normal_f();

    std::vector<float> xj(batch.x0.size()), vt(batch.x0.size());
    for (int b = 0; b < B; ++b) {
        const std::span<const float> x0(batch.x0.data() + b * D, D);
        const std::span<const float> ee(eps.data() + b * D, D);
        forward_noise<float>(x0, jstep[b], ee, p_.sched, {xj.data() + b * D, D});
        velocity_target<float>(x0, ee, jstep[b], p_.sched, {vt.data() + b * D, D});
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
        rep.params().copy_params_from(p_.model->params());
        rep.params().zero_grad();
        std::vector<float> x(n * D), o0(n * fpx), tgt(n * D);
        std::vector<int> jj(n), rr(n);
        std::memcpy(x.data(), xj.data() + lo[w] * D, x.size() * sizeof(float));
        std::memcpy(o0.data(), batch.o0.data() + lo[w] * fpx, o0.size() * sizeof(float));
        std::memcpy(tgt.data(), vt.data() + lo[w] * D, tgt.size() * sizeof(float));
        for (int i = 0; i < n; ++i) {
            jj[i] = jstep[lo[w] + i];
            rr[i] = rows[lo[w] + i];
        }
        const auto& pred = rep.forward(x, o0, rr, jj, n);
        std::vector<float> dv(pred.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double diff = static_cast<double>(pred[i]) - tgt[i];
            acc += diff * diff;
            dv[i] = static_cast<float>(2.0 * diff / denom);
        }
        loss_sum[w] = acc;
        rep.backward(dv, n);
    };

    if (workers_ == 1) {
        run(0);
    } else {
        std::vector<std::thread> ts;
        for (int w = 0; w < workers_; ++w) ts.emplace_back(run, w);
        for (auto& t : ts) t.join();
    }

    p_.model->params().zero_grad();
    for (int w = 0; w < workers_; ++w)
        if (hi[w] > lo[w]) p_.model->params().accumulate_grads_from(reps_[w]->params());

    double loss = 0.0;
    for (double l : loss_sum) loss += l;
    loss /= denom;
    if (!std::isfinite(loss))
        throw NumericalError("planner loss became non-finite at training step " +
                             std::to_string(p_.train_steps));
    p_.adam.step(p_.model->params());
    ++p_.train_steps;
    return static_cast<float>(loss);
}

Plan hl_sample_plan(PlannerParams& p, std::span<const float> o0,
                    std::optional<int> goal_row, const SamplerConfig& sampler, Rng& rng) {
    const int M = p.cfg.frames, H = p.cfg.image;
    const std::size_t fpx = static_cast<std::size_t>(3) * H * H;
    const std::size_t D = static_cast<std::size_t>(M) * fpx;
    if (o0.size() != fpx) throw ConfigError("hl_sample_plan: bad o0 shape");
    const int row = goal_row.value_or(-1);

    std::vector<float> o0_single(o0.begin(), o0.end());
    std::vector<float> o0_pair(2 * fpx);
    std::memcpy(o0_pair.data(), o0.data(), fpx * sizeof(float));
    std::memcpy(o0_pair.data() + fpx, o0.data(), fpx * sizeof(float));

    DenoiseFn fn = [&](std::span<const float> x, int j, bool want_uncond,
                       std::span<float> vc, std::span<float> vu) {
        if (!want_uncond) {
            std::vector<float> xin(x.begin(), x.end());
            const auto& out = p.model->forward(xin, o0_single, {row}, {j}, 1);
            std::copy(out.begin(), out.end(), vc.begin());
            return;
        }
        // conditional and unconditional passes ride one batch of two
        std::vector<float> xin(2 * D);
        std::memcpy(xin.data(), x.data(), D * sizeof(float));
        std::memcpy(xin.data() + D, x.data(), D * sizeof(float));
        const auto& out = p.model->forward(xin, o0_pair, {row, -1}, {j, j}, 2);
        std::copy(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(D), vc.begin());
        std::copy(out.begin() + static_cast<std::ptrdiff_t>(D), out.end(), vu.begin());
    };

    Plan plan;
    plan.frames = M;
    plan.h = H;
    plan.w = H;
    plan.data.resize(D);
    sample(sampler, fn, p.sched, rng, plan.data, 0.f, 1.f);
    return plan;
}

std::string hl_config_to_json(const HlModelConfig& cfg) {
    json j;
    j["image"] = cfg.image;
    j["frames"] = cfg.frames;
    j["patch"] = cfg.patch;
    j["width"] = cfg.width;
    j["blocks"] = cfg.blocks;
    j["d_goal"] = cfg.d_goal;
    j["d_cond"] = cfg.d_cond;
    j["d_temb"] = cfg.d_temb;
    j["gn_groups"] = cfg.gn_groups;
    j["num_goals"] = cfg.num_goals;
    j["p_drop"] = cfg.p_drop;
    j["sched_kind"] = to_string(cfg.sched_kind);
    j["sched_steps"] = cfg.sched_steps;
    return j.dump();
}

HlModelConfig hl_config_from_json(const std::string& js) {
    const json j = json::parse(js);
    HlModelConfig cfg;
    cfg.image = j.at("image").get<int>();
    cfg.frames = j.at("frames").get<int>();
    cfg.patch = j.at("patch").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.blocks = j.at("blocks").get<int>();
    cfg.d_goal = j.at("d_goal").get<int>();
    cfg.d_cond = j.at("d_cond").get<int>();
    cfg.d_temb = j.at("d_temb").get<int>();
    cfg.gn_groups = j.at("gn_groups").get<int>();
    cfg.num_goals = j.at("num_goals").get<int>();
    cfg.p_drop = j.at("p_drop").get<double>();
    cfg.sched_kind = schedule_kind_from_string(j.at("sched_kind").get<std::string>());
    cfg.sched_steps = j.at("sched_steps").get<int>();
    return cfg;
}

namespace {

void write_blob(std::ofstream& f, const void* p, std::size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

}  // namespace

void save_planner(const PlannerParams& p, const std::string& path) {
    json header;
    header["format"] = "hdexpit-ckpt-1";
    header["kind"] = "hl";
    header["config"] = json::parse(hl_config_to_json(p.cfg));
    header["train_steps"] = p.train_steps;
    header["adam_t"] = p.adam.steps_taken();
    header["adam_n"] = p.adam.m().size();
    header["param_count"] = p.model->params().count();
    char dig[17];
    std::snprintf(dig, sizeof(dig), "%016llx",
                  static_cast<unsigned long long>(p.sched.digest()));
    header["schedule_digest"] = dig;
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("cannot write checkpoint " + path);
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    write_blob(f, &hlen, 4);
    write_blob(f, hs.data(), hs.size());
    for (const auto* blk : p.model->params().blocks())
        write_blob(f, blk->w.data(), blk->w.size() * sizeof(float));
    const auto& m = p.adam.m();
    const auto& v = p.adam.v();
    write_blob(f, m.data(), m.size() * sizeof(double));
    write_blob(f, v.data(), v.size() * sizeof(double));
}

PlannerParams load_planner(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IntegrityError("cannot open checkpoint " + path);
    std::uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw IntegrityError("truncated checkpoint header in " + path);
    const json header = json::parse(hs);
    if (header.value("format", "") != "hdexpit-ckpt-1" || header.value("kind", "") != "hl")
        throw IntegrityError("not a planner checkpoint: " + path);

    PlannerParams p = make_planner(hl_config_from_json(header.at("config").dump()), 0);
    p.train_steps = header.at("train_steps").get<std::int64_t>();
    const std::size_t n = p.model->params().count();
    if (header.at("param_count").get<std::size_t>() != n)
        throw IntegrityError("checkpoint parameter count mismatch in " + path);
    for (auto* blk : p.model->params().blocks()) {
        f.read(reinterpret_cast<char*>(blk->w.data()),
               static_cast<std::streamsize>(blk->w.size() * sizeof(float)));
    }
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
