#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hdexpit/errors.hpp"
#include "hdexpit/rng.hpp"

// Minimal trainable-layer toolkit: explicit forward/backward pairs built on
// Eigen GEMM, templated on the scalar so the finite-difference gradient
// checks can instantiate the exact training graph in double precision.
// Layers cache what backward needs; a model replica is therefore owned by a
// single worker thread and never shared mid-step.

namespace hdexpit::nn {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapMat = Eigen::Map<RowMat<S>>;
template <class S>
using CMapMat = Eigen::Map<const RowMat<S>>;

template <class S>
struct ParamBlock {
    std::string name;
    int rows = 0, cols = 0;
    std::vector<S> w, g;

    int size() const { return rows * cols; }

    void setup(std::string n, int r, int c) {
        name = std::move(n);
        rows = r;
        cols = c;
        w.assign(static_cast<std::size_t>(r) * c, S(0));
        g.assign(w.size(), S(0));
    }

    void init_uniform(Rng& rng, double scale) {
        for (auto& x : w) x = static_cast<S>(rng.uniform(-scale, scale));
    }
};

template <class S>
class ParamList {
public:
    void add(ParamBlock<S>* b) { blocks_.push_back(b); }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto* b : blocks_) n += b->w.size();
        return n;
    }

    void zero_grad() {
        for (auto* b : blocks_)
            std::fill(b->g.begin(), b->g.end(), S(0));
    }

    std::span<ParamBlock<S>* const> blocks() const { return blocks_; }

    // Flat views, used by the optimizer, checkpoints and gradient checks.
    S& param_at(std::size_t flat) {
        for (auto* b : blocks_) {
            if (flat < b->w.size()) return b->w[flat];
            flat -= b->w.size();
        }
        throw ConfigError("flat parameter index out of range");
    }
    S grad_at(std::size_t flat) const {
        for (auto* b : blocks_) {
            if (flat < b->g.size()) return b->g[flat];
            flat -= b->g.size();
        }
        throw ConfigError("flat gradient index out of range");
    }

    void copy_params_from(const ParamList<S>& other) {
        if (other.blocks_.size() != blocks_.size())
            throw ConfigError("parameter list structure mismatch");
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i]->w = other.blocks_[i]->w;
    }

    void accumulate_grads_from(const ParamList<S>& other) {
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            auto& g = blocks_[i]->g;
            const auto& og = other.blocks_[i]->g;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += og[k];
        }
    }

private:
    std::vector<ParamBlock<S>*> blocks_;
};

// ---------------------------------------------------------------------------

template <class S>
struct Linear {
    int in = 0, out = 0;
    ParamBlock<S> W, b;
    std::vector<S> x_cache, y, dx;

    void setup(ParamList<S>& ps, const std::string& name, int in_dim, int out_dim,
               Rng& rng, bool zero_init = false) {
        in = in_dim;
        out = out_dim;
        W.setup(name + ".w", out, in);
        b.setup(name + ".b", 1, out);
        if (!zero_init) W.init_uniform(rng, std::sqrt(1.0 / in));
        ps.add(&W);
        ps.add(&b);
    }

    // x: [B, in] -> y: [B, out]
    // Bias broadcast and bias-grad reduction are explicit scalar loops: the
    // vectorized Eigen idioms split lanes by runtime pointer alignment,
    // which breaks bit-reproducibility across heap layouts.
    const std::vector<S>& fwd(const std::vector<S>& x, int B) {
        x_cache = x;
        y.assign(static_cast<std::size_t>(B) * out, S(0));
        CMapMat<S> X(x.data(), B, in);
        CMapMat<S> Wm(W.w.data(), out, in);
        MapMat<S> Y(y.data(), B, out);
        Y.noalias() = X * Wm.transpose();
        for (int n = 0; n < B; ++n) {
            S* row = y.data() + static_cast<std::size_t>(n) * out;
            for (int j = 0; j < out; ++j) row[j] += b.w[j];
        }
        return y;
    }

    const std::vector<S>& bwd(const std::vector<S>& dy, int B) {
        dx.assign(static_cast<std::size_t>(B) * in, S(0));
        CMapMat<S> dY(dy.data(), B, out);
        CMapMat<S> X(x_cache.data(), B, in);
        CMapMat<S> Wm(W.w.data(), out, in);
        MapMat<S> gW(W.g.data(), out, in);
        MapMat<S> dX(dx.data(), B, in);
        gW.noalias() += dY.transpose() * X;
        for (int n = 0; n < B; ++n) {
            const S* row = dy.data() + static_cast<std::size_t>(n) * out;
            for (int j = 0; j < out; ++j) b.g[j] += row[j];
        }
        dX.noalias() = dY * Wm;
        return dx;
    }
};

// 2D convolution over [B, Cin, H, W] via im2col + one batch-wide GEMM.
template <class S>
struct Conv2d {
    int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;
    ParamBlock<S> W, b;  // W: [cout, cin*k*k]
    std::vector<S> col, y, dx, dyr;
    int B_ = 0, H_ = 0, W_in_ = 0, Ho_ = 0, Wo_ = 0;

    void setup(ParamList<S>& ps, const std::string& name, int cin_, int cout_, int k_,
               int stride_, int pad_, Rng& rng, bool zero_init = false) {
        cin = cin_;
        cout = cout_;
        k = k_;
        stride = stride_;
        pad = pad_;
        W.setup(name + ".w", cout, cin * k * k);
        b.setup(name + ".b", 1, cout);
        if (!zero_init) W.init_uniform(rng, std::sqrt(1.0 / (cin * k * k)));
        ps.add(&W);
        ps.add(&b);
    }

    const std::vector<S>& fwd(const std::vector<S>& x, int B, int H, int Win) {
        B_ = B;
        H_ = H;
        W_in_ = Win;
        Ho_ = (H + 2 * pad - k) / stride + 1;
        Wo_ = (Win + 2 * pad - k) / stride + 1;
        const int K = cin * k * k;
        const std::int64_t cols = static_cast<std::int64_t>(B) * Ho_ * Wo_;
        col.assign(static_cast<std::size_t>(K) * cols, S(0));
        // col[(c*k*k + di*k + dj)][b*P + p]
        for (int bi = 0; bi < B; ++bi) {
            const S* xs = x.data() + static_cast<std::size_t>(bi) * cin * H * Win;
            for (int c = 0; c < cin; ++c) {
                for (int di = 0; di < k; ++di) {
                    for (int dj = 0; dj < k; ++dj) {
                        S* crow = col.data() +
                                  (static_cast<std::size_t>(c * k * k + di * k + dj)) * cols +
                                  static_cast<std::size_t>(bi) * Ho_ * Wo_;
                        for (int oi = 0; oi < Ho_; ++oi) {
                            const int ii = oi * stride + di - pad;
                            if (ii < 0 || ii >= H) continue;
                            for (int oj = 0; oj < Wo_; ++oj) {
                                const int jj = oj * stride + dj - pad;
                                if (jj < 0 || jj >= Win) continue;
                                crow[oi * Wo_ + oj] = xs[(c * H + ii) * Win + jj];
                            }
                        }
                    }
                }
            }
        }
        y.assign(static_cast<std::size_t>(B) * cout * Ho_ * Wo_, S(0));
        RowMat<S> Y(cout, cols);
        CMapMat<S> Wm(W.w.data(), cout, K);
        CMapMat<S> C(col.data(), K, cols);
        Y.noalias() = Wm * C;
        const int P = Ho_ * Wo_;
        for (int c = 0; c < cout; ++c) {
            const S* row = Y.data() + static_cast<std::size_t>(c) * cols;
            const S bias = b.w[c];
            for (int bi = 0; bi < B; ++bi) {
                S* dst = y.data() + (static_cast<std::size_t>(bi) * cout + c) * P;
                const S* src = row + static_cast<std::size_t>(bi) * P;
                for (int p = 0; p < P; ++p) dst[p] = src[p] + bias;
            }
        }
        return y;
    }

    const std::vector<S>& bwd(const std::vector<S>& dy, int B) {
        const int K = cin * k * k;
        const int P = Ho_ * Wo_;
        const std::int64_t cols = static_cast<std::int64_t>(B) * P;
        dyr.assign(static_cast<std::size_t>(cout) * cols, S(0));
        for (int c = 0; c < cout; ++c) {
            S* row = dyr.data() + static_cast<std::size_t>(c) * cols;
            S gb = S(0);
            for (int bi = 0; bi < B; ++bi) {
                const S* src = dy.data() + (static_cast<std::size_t>(bi) * cout + c) * P;
                S* dst = row + static_cast<std::size_t>(bi) * P;
                for (int p = 0; p < P; ++p) {
                    dst[p] = src[p];
                    gb += src[p];
                }
            }
            b.g[c] += gb;
        }
        CMapMat<S> dYr(dyr.data(), cout, cols);
        CMapMat<S> C(col.data(), K, cols);
        MapMat<S> gW(W.g.data(), cout, K);
        gW.noalias() += dYr * C.transpose();

        RowMat<S> dcol(K, cols);
        CMapMat<S> Wm(W.w.data(), cout, K);
        dcol.noalias() = Wm.transpose() * dYr;

        dx.assign(static_cast<std::size_t>(B) * cin * H_ * W_in_, S(0));
        for (int bi = 0; bi < B; ++bi) {
            S* xs = dx.data() + static_cast<std::size_t>(bi) * cin * H_ * W_in_;
            for (int c = 0; c < cin; ++c) {
                for (int di = 0; di < k; ++di) {
                    for (int dj = 0; dj < k; ++dj) {
                        const S* crow = dcol.data() +
                                        (static_cast<std::size_t>(c * k * k + di * k + dj)) * cols +
                                        static_cast<std::size_t>(bi) * P;
                        for (int oi = 0; oi < Ho_; ++oi) {
                            const int ii = oi * stride + di - pad;
                            if (ii < 0 || ii >= H_) continue;
                            for (int oj = 0; oj < Wo_; ++oj) {
                                const int jj = oj * stride + dj - pad;
                                if (jj < 0 || jj >= W_in_) continue;
                                xs[(c * H_ + ii) * W_in_ + jj] += crow[oi * Wo_ + oj];
                            }
                        }
                    }
                }
            }
        }
        return dx;
    }
};

// Transposed convolution restricted to kernel == stride (patch expansion).
template <class S>
struct PatchExpand {
    int cin = 0, cout = 0, k = 1;
    ParamBlock<S> W, b;  // W: [cout*k*k, cin]
    std::vector<S> xmat, y, dx;
    int B_ = 0, H_ = 0, W_in_ = 0;

    void setup(ParamList<S>& ps, const std::string& name, int cin_, int cout_, int k_,
               Rng& rng, bool zero_init = false) {
        cin = cin_;
        cout = cout_;
        k = k_;
        W.setup(name + ".w", cout * k * k, cin);
        b.setup(name + ".b", 1, cout);
        if (!zero_init) W.init_uniform(rng, std::sqrt(1.0 / cin));
        ps.add(&W);
        ps.add(&b);
    }

    // x: [B, cin, H, W] -> y: [B, cout, H*k, W*k]
    const std::vector<S>& fwd(const std::vector<S>& x, int B, int H, int Win) {
        B_ = B;
        H_ = H;
        W_in_ = Win;
        const int P = H * Win;
        const std::int64_t cols = static_cast<std::int64_t>(B) * P;
        xmat.assign(static_cast<std::size_t>(cin) * cols, S(0));
        for (int bi = 0; bi < B; ++bi)
            for (int c = 0; c < cin; ++c) {
                const S* src = x.data() + (static_cast<std::size_t>(bi) * cin + c) * P;
                S* dst = xmat.data() + static_cast<std::size_t>(c) * cols +
                         static_cast<std::size_t>(bi) * P;
                std::copy(src, src + P, dst);
            }
        RowMat<S> Y(cout * k * k, cols);
        CMapMat<S> Wm(W.w.data(), cout * k * k, cin);
        CMapMat<S> X(xmat.data(), cin, cols);
        Y.noalias() = Wm * X;
        const int Hy = H * k, Wy = Win * k;
        y.assign(static_cast<std::size_t>(B) * cout * Hy * Wy, S(0));
        for (int c = 0; c < cout; ++c)
            for (int di = 0; di < k; ++di)
                for (int dj = 0; dj < k; ++dj) {
                    const S* row = Y.data() +
                                   (static_cast<std::size_t>((c * k + di) * k + dj)) * cols;
                    const S bias = b.w[c];
                    for (int bi = 0; bi < B; ++bi) {
                        S* ybase = y.data() + (static_cast<std::size_t>(bi) * cout + c) * Hy * Wy;
                        const S* src = row + static_cast<std::size_t>(bi) * P;
                        for (int i = 0; i < H; ++i)
                            for (int j = 0; j < Win; ++j)
                                ybase[(i * k + di) * Wy + (j * k + dj)] = src[i * Win + j] + bias;
                    }
                }
        return y;
    }

    const std::vector<S>& bwd(const std::vector<S>& dy, int B) {
        const int P = H_ * W_in_;
        const std::int64_t cols = static_cast<std::int64_t>(B) * P;
        const int Hy = H_ * k, Wy = W_in_ * k;
        RowMat<S> dY(cout * k * k, cols);
        for (int c = 0; c < cout; ++c) {
            S gb = S(0);
            for (int di = 0; di < k; ++di)
                for (int dj = 0; dj < k; ++dj) {
                    S* row = dY.data() + (static_cast<std::size_t>((c * k + di) * k + dj)) * cols;
                    for (int bi = 0; bi < B; ++bi) {
                        const S* ybase =
                            dy.data() + (static_cast<std::size_t>(bi) * cout + c) * Hy * Wy;
                        S* dst = row + static_cast<std::size_t>(bi) * P;
                        for (int i = 0; i < H_; ++i)
                            for (int j = 0; j < W_in_; ++j) {
                                const S v = ybase[(i * k + di) * Wy + (j * k + dj)];
                                dst[i * W_in_ + j] = v;
                                gb += v;
                            }
                    }
                }
            b.g[c] += gb;
        }
        CMapMat<S> X(xmat.data(), cin, cols);
        MapMat<S> gW(W.g.data(), cout * k * k, cin);
        gW.noalias() += dY * X.transpose();
        RowMat<S> dX(cin, cols);
        CMapMat<S> Wm(W.w.data(), cout * k * k, cin);
        dX.noalias() = Wm.transpose() * dY;
        dx.assign(static_cast<std::size_t>(B) * cin * P, S(0));
        for (int bi = 0; bi < B; ++bi)
            for (int c = 0; c < cin; ++c) {
                const S* src = dX.data() + static_cast<std::size_t>(c) * cols +
                               static_cast<std::size_t>(bi) * P;
                S* dst = dx.data() + (static_cast<std::size_t>(bi) * cin + c) * P;
                std::copy(src, src + P, dst);
            }
        return dx;
    }
};

// Kernel-3 convolution along the frame axis of [B, M, C, P], mixing channels.
template <class S>
struct TemporalConv {
    int cin = 0, cout = 0;
    static constexpr int kt = 3;
    ParamBlock<S> W, b;  // W: [cout, cin*kt]
    std::vector<S> col, y, dx, dyr;
    int B_ = 0, M_ = 0, P_ = 0;

    void setup(ParamList<S>& ps, const std::string& name, int cin_, int cout_, Rng& rng,
               bool zero_init = false) {
        cin = cin_;
        cout = cout_;
        W.setup(name + ".w", cout, cin * kt);
        b.setup(name + ".b", 1, cout);
        if (!zero_init) W.init_uniform(rng, std::sqrt(1.0 / (cin * kt)));
        ps.add(&W);
        ps.add(&b);
    }

    const std::vector<S>& fwd(const std::vector<S>& x, int B, int M, int P) {
        B_ = B;
        M_ = M;
        P_ = P;
        const int K = cin * kt;
        const std::int64_t cols = static_cast<std::int64_t>(B) * M * P;
        col.assign(static_cast<std::size_t>(K) * cols, S(0));
        for (int dm = 0; dm < kt; ++dm)
            for (int c = 0; c < cin; ++c) {
                S* crow = col.data() + static_cast<std::size_t>(c * kt + dm) * cols;
                for (int bi = 0; bi < B; ++bi)
                    for (int m = 0; m < M; ++m) {
                        const int ms = m + dm - 1;
                        if (ms < 0 || ms >= M) continue;
                        const S* src =
                            x.data() + ((static_cast<std::size_t>(bi) * M + ms) * cin + c) * P;
                        S* dst = crow + (static_cast<std::size_t>(bi) * M + m) * P;
                        std::copy(src, src + P, dst);
                    }
            }
        RowMat<S> Y(cout, cols);
        CMapMat<S> Wm(W.w.data(), cout, K);
        CMapMat<S> C(col.data(), K, cols);
        Y.noalias() = Wm * C;
        y.assign(static_cast<std::size_t>(B) * M * cout * P, S(0));
        for (int c = 0; c < cout; ++c) {
            const S* row = Y.data() + static_cast<std::size_t>(c) * cols;
            const S bias = b.w[c];
            for (int bi = 0; bi < B; ++bi)
                for (int m = 0; m < M; ++m) {
                    S* dst = y.data() + ((static_cast<std::size_t>(bi) * M + m) * cout + c) * P;
                    const S* src = row + (static_cast<std::size_t>(bi) * M + m) * P;
                    for (int p = 0; p < P; ++p) dst[p] = src[p] + bias;
                }
        }
        return y;
    }

    const std::vector<S>& bwd(const std::vector<S>& dy, int B) {
        const int K = cin * kt;
        const std::int64_t cols = static_cast<std::int64_t>(B) * M_ * P_;
        dyr.assign(static_cast<std::size_t>(cout) * cols, S(0));
        for (int c = 0; c < cout; ++c) {
            S* row = dyr.data() + static_cast<std::size_t>(c) * cols;
            S gb = S(0);
            for (int bi = 0; bi < B; ++bi)
                for (int m = 0; m < M_; ++m) {
                    const S* src =
                        dy.data() + ((static_cast<std::size_t>(bi) * M_ + m) * cout + c) * P_;
                    S* dst = row + (static_cast<std::size_t>(bi) * M_ + m) * P_;
                    for (int p = 0; p < P_; ++p) {
                        dst[p] = src[p];
                        gb += src[p];
                    }
                }
            b.g[c] += gb;
        }
        CMapMat<S> dYr(dyr.data(), cout, cols);
        CMapMat<S> C(col.data(), K, cols);
        MapMat<S> gW(W.g.data(), cout, K);
        gW.noalias() += dYr * C.transpose();
        RowMat<S> dcol(K, cols);
        CMapMat<S> Wm(W.w.data(), cout, K);
        dcol.noalias() = Wm.transpose() * dYr;
        dx.assign(static_cast<std::size_t>(B) * M_ * cin * P_, S(0));
        for (int dm = 0; dm < kt; ++dm)
            for (int c = 0; c < cin; ++c) {
                const S* crow = dcol.data() + static_cast<std::size_t>(c * kt + dm) * cols;
                for (int bi = 0; bi < B; ++bi)
                    for (int m = 0; m < M_; ++m) {
                        const int ms = m + dm - 1;
                        if (ms < 0 || ms >= M_) continue;
                        S* dst =
                            dx.data() + ((static_cast<std::size_t>(bi) * M_ + ms) * cin + c) * P_;
                        const S* src = crow + (static_cast<std::size_t>(bi) * M_ + m) * P_;
                        for (int p = 0; p < P_; ++p) dst[p] += src[p];
                    }
            }
        return dx;
    }
};

// Group normalization over [N, C, P] with per-channel affine.
template <class S>
struct GroupNorm {
    int C = 0, groups = 1;
    ParamBlock<S> gamma, beta;
    std::vector<S> xhat, invstd, y, dx;
    int N_ = 0, P_ = 0;
    static constexpr double eps = 1e-5;

    void setup(ParamList<S>& ps, const std::string& name, int channels, int groups_) {
        C = channels;
        groups = groups_;
        if (C % groups != 0) throw ConfigError("group norm channels not divisible by groups");
        gamma.setup(name + ".gamma", 1, C);
        beta.setup(name + ".beta", 1, C);
        std::fill(gamma.w.begin(), gamma.w.end(), S(1));
        ps.add(&gamma);
        ps.add(&beta);
    }

    const std::vector<S>& fwd(const std::vector<S>& x, int N, int P) {
        N_ = N;
        P_ = P;
        const int cg = C / groups;
        const std::int64_t gsz = static_cast<std::int64_t>(cg) * P;
        xhat.assign(x.size(), S(0));
        y.assign(x.size(), S(0));
        invstd.assign(static_cast<std::size_t>(N) * groups, S(0));
        for (int n = 0; n < N; ++n)
            for (int g = 0; g < groups; ++g) {
                const S* xs = x.data() + (static_cast<std::size_t>(n) * C + g * cg) * P;
                S mean = S(0);
                for (std::int64_t i = 0; i < gsz; ++i) mean += xs[i];
                mean /= static_cast<S>(gsz);
                S var = S(0);
                for (std::int64_t i = 0; i < gsz; ++i) {
                    const S d = xs[i] - mean;
                    var += d * d;
                }
                var /= static_cast<S>(gsz);
                const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
                invstd[static_cast<std::size_t>(n) * groups + g] = is;
                S* xh = xhat.data() + (static_cast<std::size_t>(n) * C + g * cg) * P;
                S* ys = y.data() + (static_cast<std::size_t>(n) * C + g * cg) * P;
                for (int c = 0; c < cg; ++c) {
                    const S ga = gamma.w[g * cg + c], be = beta.w[g * cg + c];
                    for (int p = 0; p < P; ++p) {
                        const S v = (xs[c * P + p] - mean) * is;
                        xh[c * P + p] = v;
                        ys[c * P + p] = ga * v + be;
                    }
                }
            }
        return y;
    }

    const std::vector<S>& bwd(const std::vector<S>& dy, int N) {
        const int cg = C / groups;
        const int P = P_;
        const std::int64_t gsz = static_cast<std::int64_t>(cg) * P;
        dx.assign(dy.size(), S(0));
        for (int n = 0; n < N; ++n)
            for (int g = 0; g < groups; ++g) {
                const std::size_t base = (static_cast<std::size_t>(n) * C + g * cg) * P;
                const S* dys = dy.data() + base;
                const S* xh = xhat.data() + base;
                S* dxs = dx.data() + base;
                const S is = invstd[static_cast<std::size_t>(n) * groups + g];
                S sum_d = S(0), sum_dx = S(0);
                for (int c = 0; c < cg; ++c) {
                    const S ga = gamma.w[g * cg + c];
                    S gg = S(0), gb = S(0);
                    for (int p = 0; p < P; ++p) {
                        const S d = dys[c * P + p] * ga;
                        sum_d += d;
                        sum_dx += d * xh[c * P + p];
                        gg += dys[c * P + p] * xh[c * P + p];
                        gb += dys[c * P + p];
                    }
                    gamma.g[g * cg + c] += gg;
                    beta.g[g * cg + c] += gb;
                }
                const S inv_m = S(1) / static_cast<S>(gsz);
                for (int c = 0; c < cg; ++c) {
                    const S ga = gamma.w[g * cg + c];
                    for (int p = 0; p < P; ++p) {
                        const S d = dys[c * P + p] * ga;
                        dxs[c * P + p] =
                            is * (d - inv_m * (sum_d + xh[c * P + p] * sum_dx));
                    }
                }
            }
        return dx;
    }
};

// Row-wise layer norm over [B, D].
template <class S>
struct LayerNorm {
    int D = 0;
    ParamBlock<S> gamma, beta;
    std::vector<S> xhat, invstd, y, dx;
    static constexpr double eps = 1e-5;

    void setup(ParamList<S>& ps, const std::string& name, int dim) {
        D = dim;
        gamma.setup(name + ".gamma", 1, D);
        beta.setup(name + ".beta", 1, D);
        std::fill(gamma.w.begin(), gamma.w.end(), S(1));
        ps.add(&gamma);
        ps.add(&beta);
    }

    const std::vector<S>& fwd(const std::vector<S>& x, int B) {
        xhat.assign(x.size(), S(0));
        y.assign(x.size(), S(0));
        invstd.assign(B, S(0));
        for (int n = 0; n < B; ++n) {
            const S* xs = x.data() + static_cast<std::size_t>(n) * D;
            S mean = S(0);
            for (int i = 0; i < D; ++i) mean += xs[i];
            mean /= static_cast<S>(D);
            S var = S(0);
            for (int i = 0; i < D; ++i) {
                const S d = xs[i] - mean;
                var += d * d;
            }
            var /= static_cast<S>(D);
            const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
            invstd[n] = is;
            S* xh = xhat.data() + static_cast<std::size_t>(n) * D;
            S* ys = y.data() + static_cast<std::size_t>(n) * D;
            for (int i = 0; i < D; ++i) {
                xh[i] = (xs[i] - mean) * is;
                ys[i] = gamma.w[i] * xh[i] + beta.w[i];
            }
        }
        return y;
    }

    const std::vector<S>& bwd(const std::vector<S>& dy, int B) {
        dx.assign(dy.size(), S(0));
        for (int n = 0; n < B; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * D;
            const S* dys = dy.data() + base;
            const S* xh = xhat.data() + base;
            S* dxs = dx.data() + base;
            const S is = invstd[n];
            S sum_d = S(0), sum_dx = S(0);
            for (int i = 0; i < D; ++i) {
                const S d = dys[i] * gamma.w[i];
                sum_d += d;
                sum_dx += d * xh[i];
                gamma.g[i] += dys[i] * xh[i];
                beta.g[i] += dys[i];
            }
            const S inv_m = S(1) / static_cast<S>(D);
            for (int i = 0; i < D; ++i) {
                const S d = dys[i] * gamma.w[i];
                dxs[i] = is * (d - inv_m * (sum_d + xh[i] * sum_dx));
            }
        }
        return dx;
    }
};

template <class S>
struct SiLU {
    std::vector<S> x_cache, y, dx;

    const std::vector<S>& fwd(const std::vector<S>& x) {
        x_cache = x;
        y.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const S s = S(1) / (S(1) + std::exp(-x[i]));
            y[i] = x[i] * s;
        }
        return y;
    }

    const std::vector<S>& bwd(const std::vector<S>& dy) {
        dx.resize(dy.size());
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const S s = S(1) / (S(1) + std::exp(-x_cache[i]));
            dx[i] = dy[i] * s * (S(1) + x_cache[i] * (S(1) - s));
        }
        return dx;
    }
};

// Learned lookup table; id < 0 selects the fixed all-zeros null row
// (no gradient), which is the unconditional token for guidance training.
template <class S>
struct EmbeddingTable {
    int rows = 0, dim = 0;
    ParamBlock<S> W;
    std::vector<int> ids_cache;
    std::vector<S> y;

    void setup(ParamList<S>& ps, const std::string& name, int rows_, int dim_, Rng& rng) {
        rows = rows_;
        dim = dim_;
        W.setup(name + ".w", rows, dim);
        W.init_uniform(rng, 0.5);
        ps.add(&W);
    }

    const std::vector<S>& fwd(const std::vector<int>& ids) {
        ids_cache = ids;
        y.assign(ids.size() * static_cast<std::size_t>(dim), S(0));
        for (std::size_t n = 0; n < ids.size(); ++n) {
            const int id = ids[n];
            if (id < 0) continue;
            if (id >= rows) throw ConfigError("embedding id out of range");
            std::copy(W.w.begin() + static_cast<std::size_t>(id) * dim,
                      W.w.begin() + static_cast<std::size_t>(id + 1) * dim,
                      y.begin() + n * dim);
        }
        return y;
    }

    void bwd(const std::vector<S>& dy) {
        for (std::size_t n = 0; n < ids_cache.size(); ++n) {
            const int id = ids_cache[n];
            if (id < 0) continue;
            for (int i = 0; i < dim; ++i)
                W.g[static_cast<std::size_t>(id) * dim + i] += dy[n * dim + i];
        }
    }
};

/// Sinusoidal features for an integer diffusion step.
template <class S>
void timestep_features(int j, int dim, S* out) {
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double f = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        out[i] = static_cast<S>(std::sin(j * f));
        out[half + i] = static_cast<S>(std::cos(j * f));
    }
    if (dim % 2) out[dim - 1] = S(0);
}

// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over a ParamList<float>. State rides along in checkpoints so
/// fine-tuning resumes exactly.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamList<float>& params) {
        ensure(params);
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        std::size_t off = 0;
        for (auto* b : params.blocks()) {
            for (std::size_t i = 0; i < b->w.size(); ++i, ++off) {
                const double g = b->g[i];
                m_[off] = cfg_.beta1 * m_[off] + (1.0 - cfg_.beta1) * g;
                v_[off] = cfg_.beta2 * v_[off] + (1.0 - cfg_.beta2) * g * g;
                const double mh = m_[off] / bc1;
                const double vh = v_[off] / bc2;
                b->w[i] -= static_cast<float>(cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }
    const std::vector<double>& m() const { return m_; }
    const std::vector<double>& v() const { return v_; }
    void restore(std::int64_t t, std::vector<double> m, std::vector<double> v) {
        t_ = t;
        m_ = std::move(m);
        v_ = std::move(v);
    }
    const AdamConfig& config() const { return cfg_; }

private:
    void ensure(const ParamList<float>& params) {
        const std::size_t n = params.count();
        if (m_.size() != n) {
            m_.assign(n, 0.0);
            v_.assign(n, 0.0);
        }
    }

    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace hdexpit::nn
