#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cftlab/corpus.hpp"
#include "cftlab/engine.hpp"

namespace cftlab::similarity {

// Per-example embedder. Deterministic: the same example always maps to the
// same finite vector.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual int dims() const = 0;
    virtual std::vector<double> embed(const corpus::Example& ex, size_t example_index) const = 0;
    virtual std::string describe() const = 0;
};

// Signed feature hashing over surface-token n-grams of the full text.
std::unique_ptr<Embedder> make_hashed_ngram_embedder(int d, int n, uint64_t seed);

// Language-blind features over task_family and template structure; the
// desk-scale stand-in for a language-agnostic sentence embedder.
std::unique_ptr<Embedder> make_task_signature_embedder(int d);

// Vectors read from a line-delimited file of {example_index, vector} records.
std::unique_ptr<Embedder> make_precomputed_embedder(const std::string& path);

struct SimilarityReport {
    std::string id_a, id_b;
    double des = 0.0;
    double mpd_raw = -1.0;         // < 0 when not computed
    double mpd_normalized = -1.0;
    std::string embedder;
    int sample_count = 0;
    std::string mpd_pair;          // "idA|idB" of the checkpoints mpd compared
};

// Normalized mean embedding over a seeded sample of sample_n examples.
// Result has unit L2 norm; an all-cancelling mean is a hard error.
std::vector<double> embed_dataset(const corpus::Dataset& ds, const Embedder& emb,
                                  size_t sample_n, uint64_t seed);

double des(const corpus::Dataset& d1, const corpus::Dataset& d2, const Embedder& emb,
           size_t sample_n, uint64_t seed);

// Mean per-tensor L2 distance between two same-architecture checkpoints.
// With scalar_wise, the mean runs over individual parameters instead.
double mpd(const engine::Checkpoint& c1, const engine::Checkpoint& c2,
           bool scalar_wise = false);

std::vector<double> normalize_mpd(const std::vector<double>& raw);

void write_similarity_report_csv(const std::vector<SimilarityReport>& reports,
                                 const std::string& path);

}  // namespace cftlab::similarity
