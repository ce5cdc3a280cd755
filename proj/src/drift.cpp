#include "cftlab/drift.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cftlab/error.hpp"
#include "cftlab/svg.hpp"

namespace cftlab::drift {

namespace {

double frob_diff(const SymMat& a, const SymMat& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.m.size(); ++i) {
        double d = a.m[i] - b.m[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double spectral_diff(const SymMat& a, const SymMat& b) {
    SymMat diff(a.dim);
    for (size_t i = 0; i < a.m.size(); ++i) diff.m[i] = a.m[i] - b.m[i];
    std::vector<double> ev;
    std::vector<std::vector<double>> vecs;
    sym_eigen(diff, ev, vecs);
    double mx = 0.0;
    for (double e : ev) mx = std::max(mx, std::fabs(e));
    return mx;
}

// covariance over rows: center columns, (1/(rows-1)) X^T X
SymMat row_covariance(const std::vector<double>& rows, int n_rows, int d) {
    SymMat cov(d);
    if (n_rows < 2) fail_input("covariance needs at least 2 rows");
    std::vector<double> mu(static_cast<size_t>(d), 0.0);
    for (int r = 0; r < n_rows; ++r)
        for (int c = 0; c < d; ++c) mu[static_cast<size_t>(c)] += rows[static_cast<size_t>(r) * d + c];
    for (double& x : mu) x /= n_rows;
    for (int r = 0; r < n_rows; ++r) {
        for (int i = 0; i < d; ++i) {
            double xi = rows[static_cast<size_t>(r) * d + i] - mu[static_cast<size_t>(i)];
            if (xi == 0.0) continue;
            for (int j = i; j < d; ++j) {
                double xj = rows[static_cast<size_t>(r) * d + j] - mu[static_cast<size_t>(j)];
                cov.at(i, j) += xi * xj;
            }
        }
    }
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            cov.at(i, j) /= (n_rows - 1);
            cov.at(j, i) = cov.at(i, j);
        }
    return cov;
}

}  // namespace

ActivationSummary capture(const engine::Checkpoint& model, const corpus::Dataset& prompts,
                          PositionPooling pooling) {
    require(prompts.size() >= 2, "capture: need at least 2 prompts for covariances");
    require(model.vocab.size() > 0, "capture: checkpoint has no vocabulary");
    const int l = model.config.n_layers, d = model.config.d_model;
    const int n = static_cast<int>(prompts.size());

    ActivationSummary sum;
    sum.model_id = model.prov.dataset_id.empty() ? model.prov.phase_tag
                                                 : model.prov.phase_tag + ":" + model.prov.dataset_id;
    sum.prompt_set_id = prompts.meta.id;
    sum.n_layers = l;
    sum.d = d;
    sum.n_prompts = n;

    // per-prompt pooled activation vector per layer
    std::vector<std::vector<double>> pooled(static_cast<size_t>(l));
    for (auto& v : pooled) v.reserve(static_cast<size_t>(n) * static_cast<size_t>(d));

    for (const auto& ex : prompts.examples) {
        auto toks = corpus::tokenize(model.vocab, corpus::prompt_text(ex)).ids;
        require(!toks.empty(), "capture: prompt empty after tokenization: " + ex.instruction);
        std::vector<int> seq;
        seq.push_back(corpus::kBosId);
        seq.insert(seq.end(), toks.begin(), toks.end());
        auto fr = engine::forward(model, seq, /*capture=*/true);
        for (int li = 0; li < l; ++li) {
            const auto& act = fr.activations[static_cast<size_t>(li)];  // seq x d
            std::vector<double> vec(static_cast<size_t>(d), 0.0);
            if (pooling == PositionPooling::last_token) {
                for (int c = 0; c < d; ++c)
                    vec[static_cast<size_t>(c)] = act[static_cast<size_t>(fr.seq_len - 1) * d + c];
            } else {
                for (int p = 0; p < fr.seq_len; ++p)
                    for (int c = 0; c < d; ++c)
                        vec[static_cast<size_t>(c)] += act[static_cast<size_t>(p) * d + c];
                for (double& x : vec) x /= fr.seq_len;
            }
            pooled[static_cast<size_t>(li)].insert(pooled[static_cast<size_t>(li)].end(),
                                                   vec.begin(), vec.end());
        }
    }

    sum.mean_activations.assign(static_cast<size_t>(l) * d, 0.0);
    for (int li = 0; li < l; ++li) {
        for (int p = 0; p < n; ++p)
            for (int c = 0; c < d; ++c)
                sum.mean_activations[static_cast<size_t>(li) * d + c] +=
                    pooled[static_cast<size_t>(li)][static_cast<size_t>(p) * d + c];
        for (int c = 0; c < d; ++c) sum.mean_activations[static_cast<size_t>(li) * d + c] /= n;
        sum.per_layer_cov.push_back(row_covariance(pooled[static_cast<size_t>(li)], n, d));
    }
    return sum;
}

SymMat global_cov(const ActivationSummary& summary) {
    require(summary.n_layers >= 2, "global_cov: need at least 2 layers");
    return row_covariance(summary.mean_activations, summary.n_layers, summary.d);
}

DriftReport drift_norms(const ActivationSummary& a, const ActivationSummary& b, MatrixNorm norm) {
    require(a.prompt_set_id == b.prompt_set_id,
            "drift_norms: prompt sets differ (" + a.prompt_set_id + " vs " + b.prompt_set_id + ")");
    require(a.n_layers == b.n_layers && a.d == b.d, "drift_norms: dimension mismatch");
    DriftReport r;
    r.id_a = a.model_id;
    r.id_b = b.model_id;
    r.prompt_set_id = a.prompt_set_id;
    auto diff = norm == MatrixNorm::frobenius ? frob_diff : spectral_diff;
    r.global_cov_diff = diff(global_cov(a), global_cov(b));
    for (int li = 0; li < a.n_layers; ++li)
        r.per_layer_diff.push_back(
            diff(a.per_layer_cov[static_cast<size_t>(li)], b.per_layer_cov[static_cast<size_t>(li)]));
    return r;
}

void sym_eigen(const SymMat& a, std::vector<double>& eigenvalues,
               std::vector<std::vector<double>>& eigenvectors) {
    const int n = a.dim;
    SymMat A = a;
    std::vector<double> V(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) V[static_cast<size_t>(i) * n + i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += A.at(p, q) * A.at(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                double apq = A.at(p, q);
                if (std::fabs(apq) < 1e-300) continue;
                double theta = (A.at(q, q) - A.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int i = 0; i < n; ++i) {
                    double aip = A.at(i, p), aiq = A.at(i, q);
                    A.at(i, p) = c * aip - s * aiq;
                    A.at(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    double api = A.at(p, i), aqi = A.at(q, i);
                    A.at(p, i) = c * api - s * aqi;
                    A.at(q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    double vip = V[static_cast<size_t>(i) * n + p];
                    double viq = V[static_cast<size_t>(i) * n + q];
                    V[static_cast<size_t>(i) * n + p] = c * vip - s * viq;
                    V[static_cast<size_t>(i) * n + q] = s * vip + c * viq;
                }
            }
    }

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(),
              [&](int x, int y) { return A.at(x, x) > A.at(y, y); });
    eigenvalues.clear();
    eigenvectors.clear();
    for (int idx : order) {
        eigenvalues.push_back(A.at(idx, idx));
        std::vector<double> v(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = V[static_cast<size_t>(i) * n + idx];
        eigenvectors.push_back(std::move(v));
    }
}

std::vector<ProjectedPoint> project2d(const std::vector<ActivationSummary>& summaries) {
    require(!summaries.empty(), "project2d: no summaries");
    const int d = summaries[0].d;
    int total_rows = 0;
    for (const auto& s : summaries) {
        require(s.d == d, "project2d: dimension mismatch across summaries");
        total_rows += s.n_layers;
    }
    require(total_rows >= 3, "project2d: need at least 3 rows");

    std::vector<double> rows;
    rows.reserve(static_cast<size_t>(total_rows) * static_cast<size_t>(d));
    for (const auto& s : summaries)
        rows.insert(rows.end(), s.mean_activations.begin(), s.mean_activations.end());

    std::vector<double> mu(static_cast<size_t>(d), 0.0);
    for (int r = 0; r < total_rows; ++r)
        for (int c = 0; c < d; ++c) mu[static_cast<size_t>(c)] += rows[static_cast<size_t>(r) * d + c];
    for (double& x : mu) x /= total_rows;
    for (int r = 0; r < total_rows; ++r)
        for (int c = 0; c < d; ++c) rows[static_cast<size_t>(r) * d + c] -= mu[static_cast<size_t>(c)];

    SymMat cov = row_covariance(rows, total_rows, d);
    // rows were already centered; recenter is a no-op, reuse as-is
    std::vector<double> ev;
    std::vector<std::vector<double>> vecs;
    sym_eigen(cov, ev, vecs);

    auto fix_sign = [&](std::vector<double>& v) {
        for (double x : v) {
            if (x > 1e-12) return;
            if (x < -1e-12) {
                for (double& y : v) y = -y;
                return;
            }
        }
    };
    std::vector<double> pc1 = vecs[0];
    fix_sign(pc1);
    bool rank_deficient = vecs.size() < 2 || ev[1] <= 1e-12 * std::max(1.0, ev[0]);
    std::vector<double> pc2(static_cast<size_t>(d), 0.0);
    if (!rank_deficient) {
        pc2 = vecs[1];
        fix_sign(pc2);
    }

    std::vector<ProjectedPoint> out;
    int row = 0;
    for (const auto& s : summaries)
        for (int li = 0; li < s.n_layers; ++li, ++row) {
            ProjectedPoint p;
            p.model_id = s.model_id;
            p.layer = li;
            for (int c = 0; c < d; ++c) {
                double x = rows[static_cast<size_t>(row) * d + c];
                p.x += x * pc1[static_cast<size_t>(c)];
                p.y += x * pc2[static_cast<size_t>(c)];
            }
            out.push_back(p);
        }
    return out;
}

void write_drift_csv(const DriftReport& r, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot write drift csv: " + path);
    out << "layer,diff\n";
    char buf[48];
    for (size_t i = 0; i < r.per_layer_diff.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, r.per_layer_diff[i]);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "global,%.9g\n", r.global_cov_diff);
    out << buf;
}

void write_drift_svg(const std::vector<DriftReport>& reports, const std::string& path) {
    std::vector<svg::Series> series;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"};
    int i = 0;
    for (const auto& r : reports) {
        svg::Series s;
        s.label = r.id_a + " vs " + r.id_b;
        s.values = r.per_layer_diff;
        s.color = colors[i++ % 5];
        series.push_back(std::move(s));
    }
    svg::write_line_chart(path, "Per-layer activation covariance drift", series, "layer",
                          "||dSigma||_F");
}

void write_projection_csv(const std::vector<ProjectedPoint>& pts, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot write projection csv: " + path);
    out << "model,layer,x,y\n";
    char buf[96];
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof buf, ",%d,%.9g,%.9g\n", p.layer, p.x, p.y);
        out << p.model_id << buf;
    }
}

}  // namespace cftlab::drift
