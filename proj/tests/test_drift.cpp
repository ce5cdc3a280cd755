#include <cmath>

#include "cftlab/corpus.hpp"
#include "cftlab/drift.hpp"
#include "cftlab/engine.hpp"
#include "cftlab/error.hpp"
#include "cftlab/rng.hpp"
#include "doctest.h"

using namespace cftlab;

namespace {

engine::Checkpoint small_model(uint64_t seed) {
    corpus::Dataset ds;
    ds.examples.push_back({"t0 t1 t2 t3 t4", "", "", "L0", "copy", 0});
    auto vocab = corpus::build_vocab({&ds});
    engine::ModelConfig mc;
    mc.n_layers = 3;
    mc.n_heads = 2;
    mc.d_model = 8;
    mc.d_ff = 16;
    mc.vocab_size = vocab.size();
    return engine::init_checkpoint(mc, vocab, seed);
}

corpus::Dataset prompt_set(int n) {
    corpus::Dataset ds;
    ds.meta.id = "prompts";
    for (int i = 0; i < n; ++i)
        ds.examples.push_back({"t" + std::to_string(i % 5) + " t" + std::to_string((i + 1) % 5),
                               "t" + std::to_string((i + 2) % 5) + " ->", "t0", "L0", "copy", i});
    ds.recompute_histograms();
    return ds;
}

}  // namespace

TEST_CASE("capture: identical prompts give exactly zero covariance") {
    auto model = small_model(0);
    corpus::Dataset ds;
    ds.meta.id = "same";
    for (int i = 0; i < 4; ++i) ds.examples.push_back({"t0 t1", "t2 ->", "t0", "L0", "copy", 7});
    ds.recompute_histograms();
    auto sum = drift::capture(model, ds);
    for (const auto& cov : sum.per_layer_cov)
        for (double v : cov.m) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("capture: per-layer covariance matches a brute-force recomputation") {
    auto model = small_model(1);
    auto ds = prompt_set(6);
    auto sum = drift::capture(model, ds);
    const int l = model.config.n_layers, d = model.config.d_model;
    const int n = static_cast<int>(ds.size());

    // recompute pooled vectors straight from forward() and form the covariance
    // with the textbook double loop
    std::vector<std::vector<std::vector<double>>> pooled(
        static_cast<size_t>(l), std::vector<std::vector<double>>());
    for (const auto& ex : ds.examples) {
        auto toks = corpus::tokenize(model.vocab, corpus::prompt_text(ex)).ids;
        std::vector<int> seq{corpus::kBosId};
        seq.insert(seq.end(), toks.begin(), toks.end());
        auto fr = engine::forward(model, seq, true);
        for (int li = 0; li < l; ++li) {
            std::vector<double> v(static_cast<size_t>(d), 0.0);
            for (int p = 0; p < fr.seq_len; ++p)
                for (int c = 0; c < d; ++c)
                    v[static_cast<size_t>(c)] +=
                        fr.activations[static_cast<size_t>(li)][static_cast<size_t>(p) * d + c];
            for (double& x : v) x /= fr.seq_len;
            pooled[static_cast<size_t>(li)].push_back(std::move(v));
        }
    }
    for (int li = 0; li < l; ++li) {
        std::vector<double> mean(static_cast<size_t>(d), 0.0);
        for (const auto& v : pooled[static_cast<size_t>(li)])
            for (int c = 0; c < d; ++c) mean[static_cast<size_t>(c)] += v[static_cast<size_t>(c)] / n;
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c) {
                double acc = 0.0;
                for (const auto& v : pooled[static_cast<size_t>(li)])
                    acc += (v[static_cast<size_t>(r)] - mean[static_cast<size_t>(r)]) *
                           (v[static_cast<size_t>(c)] - mean[static_cast<size_t>(c)]);
                acc /= (n - 1);
                CHECK(std::abs(sum.per_layer_cov[static_cast<size_t>(li)].at(r, c) - acc) < 1e-12);
            }
        // mean activations row must agree too
        for (int c = 0; c < d; ++c)
            CHECK(std::abs(sum.mean_activations[static_cast<size_t>(li) * d + c] -
                           mean[static_cast<size_t>(c)]) < 1e-12);
    }
}

TEST_CASE("capture: requires at least two prompts") {
    auto model = small_model(0);
    auto ds = prompt_set(1);
    CHECK_THROWS_AS(drift::capture(model, ds), CftError);
}

TEST_CASE("global covariance of opposing unit rows") {
    drift::ActivationSummary sum;
    sum.n_layers = 2;
    sum.d = 2;
    sum.n_prompts = 2;
    sum.mean_activations = {1.0, 0.0, -1.0, 0.0};
    auto g = drift::global_cov(sum);
    CHECK(g.at(0, 0) == doctest::Approx(2.0));
    CHECK(g.at(0, 1) == doctest::Approx(0.0));
    CHECK(g.at(1, 0) == doctest::Approx(0.0));
    CHECK(g.at(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("global covariance matches brute force on random summaries") {
    Rng rng(5);
    drift::ActivationSummary sum;
    sum.n_layers = 6;
    sum.d = 4;
    sum.mean_activations.resize(24);
    for (double& v : sum.mean_activations) v = rng.normal();
    auto g = drift::global_cov(sum);
    const int l = sum.n_layers, d = sum.d;
    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (int r = 0; r < l; ++r)
        for (int c = 0; c < d; ++c)
            mean[static_cast<size_t>(c)] += sum.mean_activations[static_cast<size_t>(r) * d + c] / l;
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            double acc = 0.0;
            for (int r = 0; r < l; ++r)
                acc += (sum.mean_activations[static_cast<size_t>(r) * d + a] - mean[static_cast<size_t>(a)]) *
                       (sum.mean_activations[static_cast<size_t>(r) * d + b] - mean[static_cast<size_t>(b)]);
            CHECK(std::abs(g.at(a, b) - acc / (l - 1)) < 1e-12);
        }
}

TEST_CASE("drift norms: zero for identical summaries, fixed values on planted diffs") {
    auto model = small_model(2);
    auto ds = prompt_set(5);
    auto sum = drift::capture(model, ds);
    auto zero = drift::drift_norms(sum, sum);
    CHECK(zero.global_cov_diff == doctest::Approx(0.0));
    for (double v : zero.per_layer_diff) CHECK(v == doctest::Approx(0.0));

    // hand-planted difference: layer-0 covariance differs by diag(3, 4, 0, ...)
    auto b = sum;
    b.per_layer_cov[0].at(0, 0) += 3.0;
    b.per_layer_cov[0].at(1, 1) += 4.0;
    auto fro = drift::drift_norms(sum, b, drift::MatrixNorm::frobenius);
    CHECK(fro.per_layer_diff[0] == doctest::Approx(5.0));
    CHECK(fro.per_layer_diff[1] == doctest::Approx(0.0));
    auto spec = drift::drift_norms(sum, b, drift::MatrixNorm::spectral);
    CHECK(spec.per_layer_diff[0] == doctest::Approx(4.0));
}

TEST_CASE("drift norms: mismatched shapes are rejected") {
    auto m1 = small_model(0);
    auto ds = prompt_set(4);
    auto a = drift::capture(m1, ds);
    auto b = a;
    b.n_layers = a.n_layers - 1;
    b.per_layer_cov.pop_back();
    CHECK_THROWS_AS(drift::drift_norms(a, b), CftError);
}

TEST_CASE("symmetric eigensolver matches hand computations and properties") {
    drift::SymMat m(2);
    m.at(0, 0) = 2.0;
    m.at(1, 1) = 1.0;
    m.at(0, 1) = m.at(1, 0) = 1.0;
    std::vector<double> vals;
    std::vector<std::vector<double>> vecs;
    drift::sym_eigen(m, vals, vecs);
    // eigenvalues of [[2,1],[1,1]] are (3 ± sqrt(5)) / 2, descending
    CHECK(vals[0] == doctest::Approx((3.0 + std::sqrt(5.0)) / 2).epsilon(1e-12));
    CHECK(vals[1] == doctest::Approx((3.0 - std::sqrt(5.0)) / 2).epsilon(1e-12));

    Rng rng(9);
    drift::SymMat r(5);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j <= i; ++j) r.at(i, j) = r.at(j, i) = rng.normal();
    drift::sym_eigen(r, vals, vecs);
    for (size_t i = 1; i < vals.size(); ++i) CHECK(vals[i - 1] >= vals[i]);
    for (int i = 0; i < 5; ++i) {
        // A v = lambda v
        for (int row = 0; row < 5; ++row) {
            double av = 0.0;
            for (int col = 0; col < 5; ++col) av += r.at(row, col) * vecs[static_cast<size_t>(i)][static_cast<size_t>(col)];
            CHECK(std::abs(av - vals[static_cast<size_t>(i)] * vecs[static_cast<size_t>(i)][static_cast<size_t>(row)]) < 1e-10);
        }
        // orthonormal basis
        for (int j = 0; j <= i; ++j) {
            double dot = 0.0;
            for (int c = 0; c < 5; ++c)
                dot += vecs[static_cast<size_t>(i)][static_cast<size_t>(c)] * vecs[static_cast<size_t>(j)][static_cast<size_t>(c)];
            CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-10);
        }
    }
}

TEST_CASE("2D projection recovers planar coordinates with fixed signs") {
    drift::ActivationSummary sum;
    sum.model_id = "planted";
    sum.n_layers = 4;
    sum.d = 4;
    // rows live exactly in the span of e0 and e1, coefficients zero-mean and
    // orthogonal so the principal axes are the generating axes
    const double a[] = {2.0, -2.0, 1.0, -1.0};
    const double b[] = {0.5, 0.5, -0.5, -0.5};
    sum.mean_activations.assign(16, 0.0);
    for (int r = 0; r < 4; ++r) {
        sum.mean_activations[static_cast<size_t>(r) * 4 + 0] = a[r];
        sum.mean_activations[static_cast<size_t>(r) * 4 + 1] = b[r];
    }
    auto pts = drift::project2d({sum});
    REQUIRE(pts.size() == 4);
    for (int r = 0; r < 4; ++r) {
        CHECK(pts[static_cast<size_t>(r)].layer == r);
        CHECK(std::abs(pts[static_cast<size_t>(r)].x - a[r]) < 1e-8);
        CHECK(std::abs(pts[static_cast<size_t>(r)].y - b[r]) < 1e-8);
    }
}

TEST_CASE("2D projection: rank-one input zeroes the second axis") {
    drift::ActivationSummary sum;
    sum.model_id = "line";
    sum.n_layers = 3;
    sum.d = 4;
    sum.mean_activations.assign(12, 0.0);
    const double a[] = {1.0, 0.0, -1.0};
    for (int r = 0; r < 3; ++r) sum.mean_activations[static_cast<size_t>(r) * 4 + 2] = a[r];
    auto pts = drift::project2d({sum});
    for (const auto& p : pts) CHECK(std::abs(p.y) < 1e-12);
}

TEST_CASE("2D projection: deterministic across calls and models stay labeled") {
    auto m1 = small_model(0);
    auto m2 = small_model(3);
    auto ds = prompt_set(5);
    auto s1 = drift::capture(m1, ds);
    s1.model_id = "m1";
    auto s2 = drift::capture(m2, ds);
    s2.model_id = "m2";
    auto p1 = drift::project2d({s1, s2});
    auto p2 = drift::project2d({s1, s2});
    REQUIRE(p1.size() == p2.size());
    REQUIRE(p1.size() == static_cast<size_t>(2 * m1.config.n_layers));
    for (size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].x == p2[i].x);
        CHECK(p1[i].y == p2[i].y);
        CHECK(p1[i].model_id == (i < p1.size() / 2 ? "m1" : "m2"));
    }
}
