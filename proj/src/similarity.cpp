#include "cftlab/similarity.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "cftlab/error.hpp"
#include "cftlab/rng.hpp"
#include "json.hpp"

namespace cftlab::similarity {

namespace {

// deterministic pseudo-random unit-scale direction for a string key
std::vector<double> pattern(const std::string& key, int d) {
    Rng rng(fnv1a_str(key));
    std::vector<double> v(static_cast<size_t>(d));
    for (auto& x : v) x = rng.normal();
    return v;
}

void add_scaled(std::vector<double>& acc, const std::vector<double>& v, double s) {
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += s * v[i];
}

class HashedNgramEmbedder final : public Embedder {
public:
    HashedNgramEmbedder(int d, int n, uint64_t seed) : d_(d), n_(n), seed_(seed) {
        require(d >= 1 && n >= 1, "hashed-ngram embedder: d and n must be >= 1");
    }
    int dims() const override { return d_; }
    std::vector<double> embed(const corpus::Example& ex, size_t) const override {
        std::vector<double> v(static_cast<size_t>(d_), 0.0);
        auto toks = corpus::split_whitespace(ex.instruction + " " + ex.input + " " + ex.output);
        if (static_cast<int>(toks.size()) < n_) return v;
        for (size_t i = 0; i + static_cast<size_t>(n_) <= toks.size(); ++i) {
            uint64_t h = seed_;
            for (int j = 0; j < n_; ++j) h = fnv1a_str(toks[i + static_cast<size_t>(j)], h + 1);
            size_t idx = static_cast<size_t>(h % static_cast<uint64_t>(d_));
            double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
            v[idx] += sign;
        }
        return v;
    }
    std::string describe() const override {
        return "hashed-ngram(d=" + std::to_string(d_) + ",n=" + std::to_string(n_) +
               ",seed=" + std::to_string(seed_) + ")";
    }

private:
    int d_, n_;
    uint64_t seed_;
};

class TaskSignatureEmbedder final : public Embedder {
public:
    explicit TaskSignatureEmbedder(int d) : d_(d) {
        require(d >= 1, "task-signature embedder: d must be >= 1");
    }
    int dims() const override { return d_; }
    std::vector<double> embed(const corpus::Example& ex, size_t) const override {
        // only family tags and token counts: invariant under language remap
        std::vector<double> v = pattern("family:" + ex.task_family, d_);
        size_t n_in = corpus::split_whitespace(ex.input).size();
        size_t n_out = corpus::split_whitespace(ex.output).size();
        add_scaled(v, pattern("ilen:" + std::to_string(n_in), d_), 0.25);
        add_scaled(v, pattern("olen:" + std::to_string(n_out), d_), 0.25);
        return v;
    }
    std::string describe() const override {
        return "task-signature(d=" + std::to_string(d_) + ")";
    }

private:
    int d_;
};

class PrecomputedEmbedder final : public Embedder {
public:
    explicit PrecomputedEmbedder(const std::string& path) : path_(path) {
        std::ifstream in(path);
        require(in.good(), "cannot open precomputed embeddings: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            require(!j.is_discarded() && j.contains("example_index") && j.contains("vector"),
                    path + ":" + std::to_string(lineno) +
                        ": expected {example_index, vector} record");
            auto vec = j["vector"].get<std::vector<double>>();
            if (d_ == 0) d_ = static_cast<int>(vec.size());
            require(static_cast<int>(vec.size()) == d_,
                    path + ":" + std::to_string(lineno) + ": inconsistent vector dimension");
            vectors_[j["example_index"].get<size_t>()] = std::move(vec);
        }
        require(d_ > 0, "precomputed embeddings file is empty: " + path);
    }
    int dims() const override { return d_; }
    std::vector<double> embed(const corpus::Example&, size_t example_index) const override {
        auto it = vectors_.find(example_index);
        require(it != vectors_.end(), "no precomputed embedding for example index " +
                                          std::to_string(example_index) + " in " + path_);
        return it->second;
    }
    std::string describe() const override { return "precomputed(" + path_ + ")"; }

private:
    std::string path_;
    int d_ = 0;
    std::map<size_t, std::vector<double>> vectors_;
};

}  // namespace

std::unique_ptr<Embedder> make_hashed_ngram_embedder(int d, int n, uint64_t seed) {
    return std::make_unique<HashedNgramEmbedder>(d, n, seed);
}
std::unique_ptr<Embedder> make_task_signature_embedder(int d) {
    return std::make_unique<TaskSignatureEmbedder>(d);
}
std::unique_ptr<Embedder> make_precomputed_embedder(const std::string& path) {
    return std::make_unique<PrecomputedEmbedder>(path);
}

std::vector<double> embed_dataset(const corpus::Dataset& ds, const Embedder& emb,
                                  size_t sample_n, uint64_t seed) {
    require(!ds.examples.empty(), "embed_dataset: empty dataset");
    require(sample_n >= 1 && sample_n <= ds.size(),
            "embed_dataset: sample_n must be in [1, |dataset|]");
    Rng rng(seed);
    auto picks = rng.sample_without_replacement(ds.size(), sample_n);

    std::vector<double> mean(static_cast<size_t>(emb.dims()), 0.0);
    for (size_t idx : picks) {
        auto v = emb.embed(ds.examples[idx], idx);
        require(v.size() == mean.size(), "embedder returned wrong dimension");
        for (double x : v)
            require(std::isfinite(x), "embedder returned nonfinite value");
        add_scaled(mean, v, 1.0 / static_cast<double>(sample_n));
    }
    double norm = 0.0;
    for (double x : mean) norm += x * x;
    norm = std::sqrt(norm);
    require(norm > 1e-12, "degenerate embedding: mean vector of dataset '" + ds.meta.id +
                              "' is (numerically) zero");
    for (double& x : mean) x /= norm;
    return mean;
}

double des(const corpus::Dataset& d1, const corpus::Dataset& d2, const Embedder& emb,
           size_t sample_n, uint64_t seed) {
    auto e1 = embed_dataset(d1, emb, std::min(sample_n, d1.size()), seed);
    auto e2 = embed_dataset(d2, emb, std::min(sample_n, d2.size()), seed);
    double dot = 0.0;
    for (size_t i = 0; i < e1.size(); ++i) dot += e1[i] * e2[i];
    return dot;
}

double mpd(const engine::Checkpoint& c1, const engine::Checkpoint& c2, bool scalar_wise) {
    // architectures must agree tensor-for-tensor
    std::string mismatch;
    for (const auto& [name, t] : c1.tensors) {
        auto it = c2.tensors.find(name);
        if (it == c2.tensors.end() || it->second.shape != t.shape) mismatch += " " + name;
    }
    for (const auto& [name, t] : c2.tensors)
        if (!c1.tensors.count(name)) mismatch += " " + name;
    require(mismatch.empty(), "mpd: checkpoint architectures differ on tensors:" + mismatch);

    double sum = 0.0;
    int64_t n = 0;
    for (const auto& [name, t1] : c1.tensors) {
        const engine::Tensor& t2 = c2.tensors.at(name);
        if (scalar_wise) {
            for (size_t i = 0; i < t1.v.size(); ++i) sum += std::fabs(t1.v[i] - t2.v[i]);
            n += t1.numel();
        } else {
            double sq = 0.0;
            for (size_t i = 0; i < t1.v.size(); ++i) {
                double d = t1.v[i] - t2.v[i];
                sq += d * d;
            }
            sum += std::sqrt(sq);
            n += 1;
        }
    }
    return sum / static_cast<double>(n);
}

std::vector<double> normalize_mpd(const std::vector<double>& raw) {
    require(!raw.empty(), "normalize_mpd: empty score list");
    double mx = 0.0;
    for (double x : raw) {
        require(x >= 0.0, "normalize_mpd: negative score");
        mx = std::max(mx, x);
    }
    require(mx > 0.0, "normalize_mpd: all scores are zero");
    std::vector<double> out;
    out.reserve(raw.size());
    for (double x : raw) out.push_back(x / mx);
    return out;
}

void write_similarity_report_csv(const std::vector<SimilarityReport>& reports,
                                 const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot write similarity report: " + path);
    out << "id_a,id_b,des,mpd_raw,mpd_normalized,embedder,sample_count,mpd_pair\n";
    char buf[64];
    for (const auto& r : reports) {
        out << r.id_a << ',' << r.id_b << ',';
        std::snprintf(buf, sizeof buf, "%.9g,", r.des);
        out << buf;
        if (r.mpd_raw >= 0.0) {
            std::snprintf(buf, sizeof buf, "%.9g,", r.mpd_raw);
            out << buf;
        } else out << ',';
        if (r.mpd_normalized >= 0.0) {
            std::snprintf(buf, sizeof buf, "%.9g,", r.mpd_normalized);
            out << buf;
        } else out << ',';
        out << r.embedder << ',' << r.sample_count << ',' << r.mpd_pair << '\n';
    }
}

}  // namespace cftlab::similarity
