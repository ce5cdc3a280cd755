#include <algorithm>
#include <cmath>
#include <cstring>

#include "cftlab/engine.hpp"
#include "cftlab/error.hpp"
#include "cftlab/rng.hpp"

namespace cftlab::engine {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kRopeBase = 10000.0;

// y += M x, M is (out x in) row-major. Four independent accumulators break
// the reduction dependency so the loop vectorizes; the fixed reassociation
// keeps results deterministic.
void matvec_acc(const double* M, const double* x, double* y, int out, int in) {
    const int in4 = in & ~3;
    for (int r = 0; r < out; ++r) {
        const double* row = M + static_cast<size_t>(r) * in;
        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
        for (int c = 0; c < in4; c += 4) {
            a0 += row[c] * x[c];
            a1 += row[c + 1] * x[c + 1];
            a2 += row[c + 2] * x[c + 2];
            a3 += row[c + 3] * x[c + 3];
        }
        double acc = (a0 + a1) + (a2 + a3);
        for (int c = in4; c < in; ++c) acc += row[c] * x[c];
        y[r] += acc;
    }
}

// x += M^T g, M is (out x in) row-major, g has length out
void matvec_t_acc(const double* M, const double* g, double* x, int out, int in) {
    for (int r = 0; r < out; ++r) {
        const double* row = M + static_cast<size_t>(r) * in;
        double gr = g[r];
        if (gr == 0.0) continue;
        for (int c = 0; c < in; ++c) x[c] += row[c] * gr;
    }
}

// dM += g x^T
void outer_acc(double* dM, const double* g, const double* x, int out, int in) {
    for (int r = 0; r < out; ++r) {
        double* row = dM + static_cast<size_t>(r) * in;
        double gr = g[r];
        if (gr == 0.0) continue;
        for (int c = 0; c < in; ++c) row[c] += gr * x[c];
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LayerCache {
    std::vector<double> x_in;              // L x d
    std::vector<double> xhat1, a1;         // L x d
    std::vector<double> invstd1;           // L
    std::vector<double> q, k, v;           // L x d (head h in slots [h*hd, (h+1)*hd)); q,k post-rope
    std::vector<double> attw;              // H x L x L, row p holds weights over j <= p
    std::vector<double> concat;            // L x d
    std::vector<double> x_mid;             // L x d
    std::vector<double> xhat2, a2;         // L x d
    std::vector<double> invstd2;           // L
    std::vector<double> u, s;              // L x dff
    std::vector<double> x_out;             // L x d
};

struct SeqCache {
    std::vector<double> x0;  // embeddings, L x d
    std::vector<LayerCache> layers;
};

// Precomputed rotary table: row p holds hd/2 (cos, sin) pairs. Shared across
// layers, heads, and the q/k streams of one sequence.
struct RopeTable {
    int hd = 0;
    std::vector<double> cs;  // L x hd (cos, sin interleaved)

    RopeTable(int L, int head_dim) : hd(head_dim), cs(static_cast<size_t>(L) * head_dim) {
        for (int p = 0; p < L; ++p)
            for (int t = 0; t < hd / 2; ++t) {
                double theta = p * std::pow(kRopeBase, -2.0 * t / hd);
                cs[static_cast<size_t>(p) * hd + 2 * t] = std::cos(theta);
                cs[static_cast<size_t>(p) * hd + 2 * t + 1] = std::sin(theta);
            }
    }
};

void rope_rotate(double* vec, const RopeTable& table, int pos, bool inverse) {
    const double* row = &table.cs[static_cast<size_t>(pos) * table.hd];
    for (int t = 0; t < table.hd / 2; ++t) {
        double c = row[2 * t], s = row[2 * t + 1];
        if (inverse) s = -s;
        double a = vec[2 * t], b = vec[2 * t + 1];
        vec[2 * t] = a * c - b * s;
        vec[2 * t + 1] = a * s + b * c;
    }
}

void layer_norm_fwd(const double* x, const double* gain, const double* bias, int d,
                    double* xhat, double* invstd, double* out) {
    double mu = 0.0;
    for (int i = 0; i < d; ++i) mu += x[i];
    mu /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + kLnEps);
    *invstd = is;
    for (int i = 0; i < d; ++i) {
        xhat[i] = (x[i] - mu) * is;
        out[i] = gain[i] * xhat[i] + bias[i];
    }
}

void layer_norm_bwd(const double* dy, const double* xhat, double invstd, const double* gain,
                    int d, double* dx_acc, double* dgain_acc, double* dbias_acc) {
    double m_dxhat = 0.0, m_dxhat_xhat = 0.0;
    for (int i = 0; i < d; ++i) {
        dgain_acc[i] += dy[i] * xhat[i];
        dbias_acc[i] += dy[i];
        double dxh = dy[i] * gain[i];
        m_dxhat += dxh;
        m_dxhat_xhat += dxh * xhat[i];
    }
    m_dxhat /= d;
    m_dxhat_xhat /= d;
    for (int i = 0; i < d; ++i) {
        double dxh = dy[i] * gain[i];
        dx_acc[i] += invstd * (dxh - m_dxhat - xhat[i] * m_dxhat_xhat);
    }
}

const Tensor& tref(const Checkpoint& ckpt, const std::string& name) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) fail_internal("missing tensor: " + name);
    return it->second;
}

std::string layer_prefix(int i) { return "layer" + std::to_string(i) + "."; }
std::string head_tensor_name(int i, int h, char kind) {
    return layer_prefix(i) + "head" + std::to_string(h) + "." + std::string(1, kind);
}

// Forward pass over one sequence; fills cache when given, captures per-layer
// block outputs when requested.
void run_forward(const Checkpoint& ckpt, const std::vector<int>& seq, SeqCache* cache,
                 ForwardResult* out, bool capture) {
    const ModelConfig& cfg = ckpt.config;
    const int L = static_cast<int>(seq.size());
    const int d = cfg.d_model, hd = cfg.head_dim(), dff = cfg.d_ff, H = cfg.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<double> x(static_cast<size_t>(L) * d);
    const Tensor& embed = tref(ckpt, "embed");
    for (int p = 0; p < L; ++p)
        std::memcpy(&x[static_cast<size_t>(p) * d], &embed.v[static_cast<size_t>(seq[p]) * d],
                    sizeof(double) * static_cast<size_t>(d));
    if (cache) cache->x0 = x;
    if (cache) cache->layers.resize(static_cast<size_t>(cfg.n_layers));

    std::vector<double> a1(static_cast<size_t>(L) * d), xhat1(a1.size());
    std::vector<double> invstd1(static_cast<size_t>(L));
    std::vector<double> qb(a1.size()), kb(a1.size()), vb(a1.size());
    std::vector<double> concat(a1.size());
    const RopeTable rope(L, hd);

    for (int li = 0; li < cfg.n_layers; ++li) {
        const Tensor& ln1 = tref(ckpt, layer_prefix(li) + "ln1");
        const Tensor& ln2 = tref(ckpt, layer_prefix(li) + "ln2");
        const Tensor& Wo = tref(ckpt, layer_prefix(li) + "O");
        const Tensor& ff1 = tref(ckpt, layer_prefix(li) + "ff1");
        const Tensor& ff2 = tref(ckpt, layer_prefix(li) + "ff2");
        LayerCache* lc = cache ? &cache->layers[static_cast<size_t>(li)] : nullptr;
        if (lc) lc->x_in = x;

        for (int p = 0; p < L; ++p)
            layer_norm_fwd(&x[static_cast<size_t>(p) * d], ln1.v.data(), ln1.v.data() + d, d,
                           &xhat1[static_cast<size_t>(p) * d], &invstd1[static_cast<size_t>(p)],
                           &a1[static_cast<size_t>(p) * d]);

        std::fill(qb.begin(), qb.end(), 0.0);
        std::fill(kb.begin(), kb.end(), 0.0);
        std::fill(vb.begin(), vb.end(), 0.0);
        for (int h = 0; h < H; ++h) {
            const Tensor& Wq = tref(ckpt, head_tensor_name(li, h, 'Q'));
            const Tensor& Wk = tref(ckpt, head_tensor_name(li, h, 'K'));
            const Tensor& Wv = tref(ckpt, head_tensor_name(li, h, 'V'));
            for (int p = 0; p < L; ++p) {
                const double* ap = &a1[static_cast<size_t>(p) * d];
                double* qp = &qb[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                double* kp = &kb[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                double* vp = &vb[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                matvec_acc(Wq.v.data(), ap, qp, hd, d);
                matvec_acc(Wk.v.data(), ap, kp, hd, d);
                matvec_acc(Wv.v.data(), ap, vp, hd, d);
                rope_rotate(qp, rope, p, false);
                rope_rotate(kp, rope, p, false);
            }
        }
        if (lc) {
            lc->xhat1 = xhat1;
            lc->invstd1 = invstd1;
            lc->a1 = a1;
            lc->q = qb;
            lc->k = kb;
            lc->v = vb;
            lc->attw.assign(static_cast<size_t>(H) * L * L, 0.0);
        }

        std::fill(concat.begin(), concat.end(), 0.0);
        std::vector<double> scores(static_cast<size_t>(L));
        for (int h = 0; h < H; ++h) {
            for (int p = 0; p < L; ++p) {
                const double* qp = &qb[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                double maxs = -1e300;
                for (int j = 0; j <= p; ++j) {
                    const double* kj = &kb[static_cast<size_t>(j) * d + static_cast<size_t>(h) * hd];
                    double s = 0.0;
                    for (int t = 0; t < hd; ++t) s += qp[t] * kj[t];
                    scores[static_cast<size_t>(j)] = s * att_scale;
                    maxs = std::max(maxs, scores[static_cast<size_t>(j)]);
                }
                double denom = 0.0;
                for (int j = 0; j <= p; ++j) {
                    scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - maxs);
                    denom += scores[static_cast<size_t>(j)];
                }
                double* op = &concat[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                for (int j = 0; j <= p; ++j) {
                    double w = scores[static_cast<size_t>(j)] / denom;
                    if (lc)
                        lc->attw[(static_cast<size_t>(h) * L + p) * L + static_cast<size_t>(j)] = w;
                    const double* vj = &vb[static_cast<size_t>(j) * d + static_cast<size_t>(h) * hd];
                    for (int t = 0; t < hd; ++t) op[t] += w * vj[t];
                }
            }
        }
        if (lc) lc->concat = concat;

        for (int p = 0; p < L; ++p)
            matvec_acc(Wo.v.data(), &concat[static_cast<size_t>(p) * d],
                       &x[static_cast<size_t>(p) * d], d, d);
        if (lc) lc->x_mid = x;

        // feed-forward
        if (lc) {
            lc->xhat2.resize(a1.size());
            lc->invstd2.resize(static_cast<size_t>(L));
            lc->a2.resize(a1.size());
            lc->u.assign(static_cast<size_t>(L) * dff, 0.0);
            lc->s.assign(static_cast<size_t>(L) * dff, 0.0);
        }
        std::vector<double> a2p(static_cast<size_t>(d)), xhat2p(static_cast<size_t>(d));
        std::vector<double> up(static_cast<size_t>(dff)), sp(static_cast<size_t>(dff));
        for (int p = 0; p < L; ++p) {
            double invstd2 = 0.0;
            layer_norm_fwd(&x[static_cast<size_t>(p) * d], ln2.v.data(), ln2.v.data() + d, d,
                           xhat2p.data(), &invstd2, a2p.data());
            std::fill(up.begin(), up.end(), 0.0);
            matvec_acc(ff1.v.data(), a2p.data(), up.data(), dff, d);
            for (int t = 0; t < dff; ++t) sp[static_cast<size_t>(t)] =
                up[static_cast<size_t>(t)] * sigmoid(up[static_cast<size_t>(t)]);
            matvec_acc(ff2.v.data(), sp.data(), &x[static_cast<size_t>(p) * d], d, dff);
            if (lc) {
                std::memcpy(&lc->xhat2[static_cast<size_t>(p) * d], xhat2p.data(),
                            sizeof(double) * static_cast<size_t>(d));
                std::memcpy(&lc->a2[static_cast<size_t>(p) * d], a2p.data(),
                            sizeof(double) * static_cast<size_t>(d));
                lc->invstd2[static_cast<size_t>(p)] = invstd2;
                std::memcpy(&lc->u[static_cast<size_t>(p) * dff], up.data(),
                            sizeof(double) * static_cast<size_t>(dff));
                std::memcpy(&lc->s[static_cast<size_t>(p) * dff], sp.data(),
                            sizeof(double) * static_cast<size_t>(dff));
            }
        }
        if (lc) lc->x_out = x;
        if (out && capture) out->activations.push_back(x);
    }

    if (out) {
        const Tensor& headw = tref(ckpt, "head");
        out->seq_len = L;
        out->logits.assign(static_cast<size_t>(L) * cfg.vocab_size, 0.0);
        for (int p = 0; p < L; ++p)
            matvec_acc(headw.v.data(), &x[static_cast<size_t>(p) * d],
                       &out->logits[static_cast<size_t>(p) * cfg.vocab_size], cfg.vocab_size, d);
    }
}

// Backward through one sequence given d(final block output), accumulating
// parameter gradients. dxf is L x d and is consumed.
void run_backward(const Checkpoint& ckpt, const std::vector<int>& seq, const SeqCache& cache,
                  std::vector<double>& dxf, std::map<std::string, Tensor>& grads) {
    const ModelConfig& cfg = ckpt.config;
    const int L = static_cast<int>(seq.size());
    const int d = cfg.d_model, hd = cfg.head_dim(), dff = cfg.d_ff, H = cfg.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<double> da1(static_cast<size_t>(L) * d);
    std::vector<double> dconcat(da1.size()), dq(da1.size()), dk(da1.size()), dv(da1.size());
    std::vector<double> da2(static_cast<size_t>(d)), du(static_cast<size_t>(dff)),
        ds(static_cast<size_t>(dff));
    const RopeTable rope(L, hd);

    for (int li = cfg.n_layers - 1; li >= 0; --li) {
        const LayerCache& lc = cache.layers[static_cast<size_t>(li)];
        const Tensor& ln1 = tref(ckpt, layer_prefix(li) + "ln1");
        const Tensor& ln2 = tref(ckpt, layer_prefix(li) + "ln2");
        const Tensor& Wo = tref(ckpt, layer_prefix(li) + "O");
        const Tensor& ff1 = tref(ckpt, layer_prefix(li) + "ff1");
        const Tensor& ff2 = tref(ckpt, layer_prefix(li) + "ff2");
        Tensor& dln1 = grads[layer_prefix(li) + "ln1"];
        Tensor& dln2 = grads[layer_prefix(li) + "ln2"];
        Tensor& dWo = grads[layer_prefix(li) + "O"];
        Tensor& dff1 = grads[layer_prefix(li) + "ff1"];
        Tensor& dff2 = grads[layer_prefix(li) + "ff2"];

        // feed-forward block: x_out = x_mid + ff2 * silu(ff1 * ln2(x_mid))
        // dxf currently holds d(x_out); accumulate into d(x_mid) in place.
        for (int p = 0; p < L; ++p) {
            double* dxp = &dxf[static_cast<size_t>(p) * d];
            const double* sp = &lc.s[static_cast<size_t>(p) * dff];
            const double* up = &lc.u[static_cast<size_t>(p) * dff];
            outer_acc(dff2.v.data(), dxp, sp, d, dff);
            std::fill(ds.begin(), ds.end(), 0.0);
            matvec_t_acc(ff2.v.data(), dxp, ds.data(), d, dff);
            for (int t = 0; t < dff; ++t) {
                double sg = sigmoid(up[static_cast<size_t>(t)]);
                du[static_cast<size_t>(t)] = ds[static_cast<size_t>(t)] * sg *
                                             (1.0 + up[static_cast<size_t>(t)] * (1.0 - sg));
            }
            outer_acc(dff1.v.data(), du.data(), &lc.a2[static_cast<size_t>(p) * d], dff, d);
            std::fill(da2.begin(), da2.end(), 0.0);
            matvec_t_acc(ff1.v.data(), du.data(), da2.data(), dff, d);
            layer_norm_bwd(da2.data(), &lc.xhat2[static_cast<size_t>(p) * d],
                           lc.invstd2[static_cast<size_t>(p)], ln2.v.data(), d, dxp,
                           dln2.v.data(), dln2.v.data() + d);
        }

        // attention block: x_mid = x_in + Wo * concat
        std::fill(dconcat.begin(), dconcat.end(), 0.0);
        for (int p = 0; p < L; ++p) {
            const double* dxp = &dxf[static_cast<size_t>(p) * d];
            outer_acc(dWo.v.data(), dxp, &lc.concat[static_cast<size_t>(p) * d], d, d);
            matvec_t_acc(Wo.v.data(), dxp, &dconcat[static_cast<size_t>(p) * d], d, d);
        }

        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        std::vector<double> dw(static_cast<size_t>(L));
        for (int h = 0; h < H; ++h) {
            for (int p = 0; p < L; ++p) {
                const double* dop =
                    &dconcat[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                const double* wrow = &lc.attw[(static_cast<size_t>(h) * L + p) * L];
                double wdw = 0.0;
                for (int j = 0; j <= p; ++j) {
                    const double* vj =
                        &lc.v[static_cast<size_t>(j) * d + static_cast<size_t>(h) * hd];
                    double acc = 0.0;
                    for (int t = 0; t < hd; ++t) acc += dop[t] * vj[t];
                    dw[static_cast<size_t>(j)] = acc;
                    wdw += wrow[j] * acc;
                    double* dvj = &dv[static_cast<size_t>(j) * d + static_cast<size_t>(h) * hd];
                    for (int t = 0; t < hd; ++t) dvj[t] += wrow[j] * dop[t];
                }
                const double* qp = &lc.q[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                double* dqp = &dq[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                for (int j = 0; j <= p; ++j) {
                    double dsc = wrow[j] * (dw[static_cast<size_t>(j)] - wdw) * att_scale;
                    if (dsc == 0.0) continue;
                    const double* kj =
                        &lc.k[static_cast<size_t>(j) * d + static_cast<size_t>(h) * hd];
                    double* dkj = &dk[static_cast<size_t>(j) * d + static_cast<size_t>(h) * hd];
                    for (int t = 0; t < hd; ++t) {
                        dqp[t] += dsc * kj[t];
                        dkj[t] += dsc * qp[t];
                    }
                }
            }
        }

        // undo rope, then project back through the per-head matrices
        std::fill(da1.begin(), da1.end(), 0.0);
        for (int h = 0; h < H; ++h) {
            const Tensor& Wq = tref(ckpt, head_tensor_name(li, h, 'Q'));
            const Tensor& Wk = tref(ckpt, head_tensor_name(li, h, 'K'));
            const Tensor& Wv = tref(ckpt, head_tensor_name(li, h, 'V'));
            Tensor& dWq = grads[head_tensor_name(li, h, 'Q')];
            Tensor& dWk = grads[head_tensor_name(li, h, 'K')];
            Tensor& dWv = grads[head_tensor_name(li, h, 'V')];
            for (int p = 0; p < L; ++p) {
                double* dqp = &dq[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                double* dkp = &dk[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                const double* dvp = &dv[static_cast<size_t>(p) * d + static_cast<size_t>(h) * hd];
                rope_rotate(dqp, rope, p, true);
                rope_rotate(dkp, rope, p, true);
                const double* ap = &lc.a1[static_cast<size_t>(p) * d];
                double* dap = &da1[static_cast<size_t>(p) * d];
                outer_acc(dWq.v.data(), dqp, ap, hd, d);
                outer_acc(dWk.v.data(), dkp, ap, hd, d);
                outer_acc(dWv.v.data(), dvp, ap, hd, d);
                matvec_t_acc(Wq.v.data(), dqp, dap, hd, d);
                matvec_t_acc(Wk.v.data(), dkp, dap, hd, d);
                matvec_t_acc(Wv.v.data(), dvp, dap, hd, d);
            }
        }
        for (int p = 0; p < L; ++p)
            layer_norm_bwd(&da1[static_cast<size_t>(p) * d], &lc.xhat1[static_cast<size_t>(p) * d],
                           lc.invstd1[static_cast<size_t>(p)], ln1.v.data(), d,
                           &dxf[static_cast<size_t>(p) * d], dln1.v.data(), dln1.v.data() + d);
    }

    Tensor& dembed = grads["embed"];
    for (int p = 0; p < L; ++p) {
        double* row = &dembed.v[static_cast<size_t>(seq[p]) * d];
        const double* dxp = &dxf[static_cast<size_t>(p) * d];
        for (int i = 0; i < d; ++i) row[i] += dxp[i];
    }
}

void check_tokens(const Checkpoint& ckpt, const std::vector<int>& tokens) {
    require(!tokens.empty(), "empty token sequence");
    require(static_cast<int>(tokens.size()) <= ckpt.config.max_seq_len,
            "sequence too long: " + std::to_string(tokens.size()) + " > max_seq_len " +
                std::to_string(ckpt.config.max_seq_len));
    for (int t : tokens)
        require(t >= 0 && t < ckpt.config.vocab_size,
                "token id " + std::to_string(t) + " out of vocabulary (size " +
                    std::to_string(ckpt.config.vocab_size) + ")");
}

}  // namespace

void ModelConfig::validate() const {
    require(n_layers >= 1 && n_heads >= 1 && d_model >= 1 && d_ff >= 1 && max_seq_len >= 1,
            "model config: all counts must be >= 1");
    require(vocab_size >= 1, "model config: vocab_size must be >= 1");
    require(d_model % n_heads == 0, "model config: d_model not divisible by n_heads");
    require(head_dim() % 2 == 0, "model config: head_dim must be even");
}

std::vector<std::pair<std::string, std::vector<int64_t>>> tensor_layout(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, std::vector<int64_t>>> out;
    const int64_t d = cfg.d_model, hd = cfg.head_dim(), dff = cfg.d_ff, V = cfg.vocab_size;
    out.emplace_back("embed", std::vector<int64_t>{V, d});
    for (int i = 0; i < cfg.n_layers; ++i) {
        for (int h = 0; h < cfg.n_heads; ++h)
            for (char k : {'Q', 'K', 'V'})
                out.emplace_back(head_tensor_name(i, h, k), std::vector<int64_t>{hd, d});
        out.emplace_back(layer_prefix(i) + "O", std::vector<int64_t>{d, d});
        out.emplace_back(layer_prefix(i) + "ff1", std::vector<int64_t>{dff, d});
        out.emplace_back(layer_prefix(i) + "ff2", std::vector<int64_t>{d, dff});
        out.emplace_back(layer_prefix(i) + "ln1", std::vector<int64_t>{2, d});
        out.emplace_back(layer_prefix(i) + "ln2", std::vector<int64_t>{2, d});
    }
    out.emplace_back("head", std::vector<int64_t>{V, d});
    return out;
}

Checkpoint init_checkpoint(const ModelConfig& cfg, const corpus::Vocab& vocab, uint64_t seed) {
    cfg.validate();
    if (vocab.size() > 0)
        require(vocab.size() <= cfg.vocab_size, "vocab larger than model vocab_size");
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.vocab = vocab;
    ckpt.prov.phase_tag = "init";
    ckpt.prov.seed = seed;
    Rng rng(seed);
    const double init_std = 0.08;
    for (const auto& [name, shape] : tensor_layout(cfg)) {
        Tensor t(shape);
        bool is_ln = name.find(".ln") != std::string::npos;
        if (is_ln) {
            const int d = cfg.d_model;
            for (int i = 0; i < d; ++i) t.v[static_cast<size_t>(i)] = 1.0;  // gain 1, bias 0
        } else {
            for (auto& x : t.v) x = static_cast<double>(static_cast<float>(rng.normal() * init_std));
        }
        ckpt.tensors.emplace(name, std::move(t));
    }
    return ckpt;
}

void validate_mask(const FreezeMask& mask, const ModelConfig& cfg) {
    for (const Region& r : mask.regions) {
        require(r.layer >= 0 && r.layer < cfg.n_layers,
                "freeze mask: layer " + std::to_string(r.layer) + " out of range");
        if (r.kind != 0) {
            require(r.kind == 'Q' || r.kind == 'K' || r.kind == 'V',
                    "freeze mask: bad kind " + std::string(1, r.kind));
            require(r.head >= 0 && r.head < cfg.n_heads,
                    "freeze mask: head " + std::to_string(r.head) + " out of range");
        }
    }
}

std::set<std::string> frozen_tensor_names(const FreezeMask& mask, const ModelConfig& cfg) {
    validate_mask(mask, cfg);
    std::set<std::string> out;
    for (const Region& r : mask.regions) {
        if (r.kind == 0) {
            for (int h = 0; h < cfg.n_heads; ++h)
                for (char k : {'Q', 'K', 'V'}) out.insert(head_tensor_name(r.layer, h, k));
            for (const char* s : {"O", "ff1", "ff2", "ln1", "ln2"})
                out.insert(layer_prefix(r.layer) + s);
        } else {
            out.insert(head_tensor_name(r.layer, r.head, r.kind));
        }
    }
    return out;
}

LowRankAdapter init_adapter(const Checkpoint& ckpt, int rank, double scale, uint64_t seed) {
    require(rank >= 1 && rank < ckpt.config.d_model, "adapter rank out of range");
    LowRankAdapter ad;
    ad.rank = rank;
    ad.scale = scale;
    Rng rng(seed);
    for (const auto& [name, t] : ckpt.tensors) {
        bool is_attn_proj = name.find(".head") != std::string::npos ||
                            (name.size() > 2 && name.compare(name.size() - 2, 2, ".O") == 0);
        if (!is_attn_proj) continue;
        int64_t out_dim = t.shape[0], in_dim = t.shape[1];
        Tensor A({out_dim, static_cast<int64_t>(rank)});
        Tensor B({static_cast<int64_t>(rank), in_dim});
        for (auto& x : A.v)
            x = static_cast<double>(static_cast<float>(rng.normal() / std::sqrt(rank)));
        ad.factors.emplace(name, std::make_pair(std::move(A), std::move(B)));
    }
    return ad;
}

Checkpoint merge_adapter(const Checkpoint& ckpt, const LowRankAdapter& adapter) {
    Checkpoint out = ckpt;
    for (const auto& [name, fac] : adapter.factors) {
        auto it = out.tensors.find(name);
        require(it != out.tensors.end(), "adapter target missing from checkpoint: " + name);
        const Tensor& A = fac.first;
        const Tensor& B = fac.second;
        Tensor& W = it->second;
        require(A.shape.size() == 2 && B.shape.size() == 2 && W.shape.size() == 2 &&
                    A.shape[0] == W.shape[0] && B.shape[1] == W.shape[1] &&
                    A.shape[1] == B.shape[0],
                "adapter factor shapes do not match target " + name);
        int64_t out_dim = W.shape[0], in_dim = W.shape[1], r = A.shape[1];
        for (int64_t i = 0; i < out_dim; ++i)
            for (int64_t j = 0; j < in_dim; ++j) {
                double acc = 0.0;
                for (int64_t t = 0; t < r; ++t)
                    acc += A.v[static_cast<size_t>(i * r + t)] *
                           B.v[static_cast<size_t>(t * in_dim + j)];
                W.v[static_cast<size_t>(i * in_dim + j)] += adapter.scale * acc;
            }
    }
    return out;
}

ForwardResult forward(const Checkpoint& ckpt, const std::vector<int>& tokens, bool capture) {
    check_tokens(ckpt, tokens);
    ForwardResult out;
    run_forward(ckpt, tokens, nullptr, &out, capture);
    for (double l : out.logits)
        if (!std::isfinite(l)) fail_internal("nonfinite logit");
    return out;
}

TokenizedExample tokenize_example(const corpus::Vocab& vocab, const corpus::Example& ex) {
    TokenizedExample te;
    te.prompt = tokenize(vocab, corpus::prompt_text(ex)).ids;
    te.response = tokenize(vocab, ex.output).ids;
    return te;
}

LossGrads loss_and_grads(const Checkpoint& ckpt, const std::vector<TokenizedExample>& batch) {
    require(!batch.empty(), "empty batch");
    const ModelConfig& cfg = ckpt.config;
    const int V = cfg.vocab_size, d = cfg.d_model;

    LossGrads out;
    for (const auto& [name, t] : ckpt.tensors) out.grads.emplace(name, Tensor(t.shape));

    size_t total_positions = 0;
    for (const auto& ex : batch) total_positions += ex.response.size() + 1;
    require(total_positions > 0, "all positions masked: no response tokens in batch");

    const Tensor& headw = tref(ckpt, "head");
    Tensor& dhead = out.grads["head"];
    double total_loss = 0.0;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    for (const auto& ex : batch) {
        std::vector<int> seq;
        seq.reserve(ex.prompt.size() + ex.response.size() + 2);
        seq.push_back(corpus::kBosId);
        seq.insert(seq.end(), ex.prompt.begin(), ex.prompt.end());
        const int resp_start = static_cast<int>(seq.size());  // position of first response token
        seq.insert(seq.end(), ex.response.begin(), ex.response.end());
        seq.push_back(corpus::kEosId);
        check_tokens(ckpt, seq);

        SeqCache cache;
        ForwardResult fr;
        run_forward(ckpt, seq, &cache, &fr, false);

        const int L = static_cast<int>(seq.size());
        const int n_pred = static_cast<int>(ex.response.size()) + 1;
        const double pos_w = inv_batch / n_pred;

        // positions resp_start-1 .. L-2 predict seq[p+1]
        std::vector<double> dxf(static_cast<size_t>(L) * d, 0.0);
        std::vector<double> probs(static_cast<size_t>(V));
        const std::vector<double>* final_x = &cache.layers.back().x_out;
        for (int p = resp_start - 1; p <= L - 2; ++p) {
            const double* lg = &fr.logits[static_cast<size_t>(p) * V];
            int target = seq[static_cast<size_t>(p) + 1];
            double maxl = *std::max_element(lg, lg + V);
            double denom = 0.0;
            for (int t = 0; t < V; ++t) {
                probs[static_cast<size_t>(t)] = std::exp(lg[t] - maxl);
                denom += probs[static_cast<size_t>(t)];
            }
            double logprob = lg[target] - maxl - std::log(denom);
            total_loss -= pos_w * logprob;
            // dlogits -> dhead and d(final x)
            double* dxp = &dxf[static_cast<size_t>(p) * d];
            const double* xp = &(*final_x)[static_cast<size_t>(p) * d];
            for (int t = 0; t < V; ++t) {
                double dl = (probs[static_cast<size_t>(t)] / denom -
                             (t == target ? 1.0 : 0.0)) * pos_w;
                if (dl == 0.0) continue;
                const double* hrow = &headw.v[static_cast<size_t>(t) * d];
                double* dhrow = &dhead.v[static_cast<size_t>(t) * d];
                for (int i = 0; i < d; ++i) {
                    dhrow[i] += dl * xp[i];
                    dxp[i] += dl * hrow[i];
                }
            }
        }
        run_backward(ckpt, seq, cache, dxf, out.grads);
    }

    require(std::isfinite(total_loss), "nonfinite loss");
    out.loss = total_loss;
    return out;
}

std::vector<int> generate(const Checkpoint& ckpt, const std::vector<int>& prompt,
                          const DecodeConfig& decode, int max_new) {
    require(max_new >= 1, "max_new must be >= 1");
    std::vector<int> seq;
    seq.push_back(corpus::kBosId);
    seq.insert(seq.end(), prompt.begin(), prompt.end());
    require(static_cast<int>(seq.size()) < ckpt.config.max_seq_len,
            "prompt too long: no room to generate");
    check_tokens(ckpt, seq);

    Rng rng(decode.seed);
    const int V = ckpt.config.vocab_size;
    std::vector<int> out;
    for (int n = 0; n < max_new && static_cast<int>(seq.size()) < ckpt.config.max_seq_len; ++n) {
        ForwardResult fr;
        run_forward(ckpt, seq, nullptr, &fr, false);
        const double* lg = &fr.logits[static_cast<size_t>(fr.seq_len - 1) * V];
        int next;
        if (decode.kind == DecodeConfig::Kind::greedy) {
            next = 0;
            for (int t = 1; t < V; ++t)
                if (lg[t] > lg[next]) next = t;  // ties keep the lowest id
        } else {
            require(decode.k >= 1, "top-k: k must be >= 1");
            int k = std::min(decode.k, V);
            std::vector<int> idx(static_cast<size_t>(V));
            for (int t = 0; t < V; ++t) idx[static_cast<size_t>(t)] = t;
            std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
                if (lg[a] != lg[b]) return lg[a] > lg[b];
                return a < b;
            });
            double maxl = lg[idx[0]];
            std::vector<double> w(static_cast<size_t>(k));
            double denom = 0.0;
            for (int i = 0; i < k; ++i) {
                w[static_cast<size_t>(i)] = std::exp(lg[idx[static_cast<size_t>(i)]] - maxl);
                denom += w[static_cast<size_t>(i)];
            }
            double r = rng.uniform01() * denom;
            int pick = k - 1;
            double acc = 0.0;
            for (int i = 0; i < k; ++i) {
                acc += w[static_cast<size_t>(i)];
                if (r < acc) { pick = i; break; }
            }
            next = idx[static_cast<size_t>(pick)];
        }
        if (next == corpus::kEosId) break;
        out.push_back(next);
        seq.push_back(next);
    }
    return out;
}

}  // namespace cftlab::engine
