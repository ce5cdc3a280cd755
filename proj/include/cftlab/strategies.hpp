#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cftlab/corpus.hpp"
#include "cftlab/engine.hpp"

namespace cftlab::strategies {

using engine::Checkpoint;
using engine::FreezeMask;
using engine::Region;

struct RankedRegion {
    Region region;
    double score = 0.0;  // ||w_phase1 - w_base||_2 over the region
};

// All candidate regions with their change scores, sorted descending;
// ties resolve lexicographically by (layer, kind, head).
enum class Granularity { layer, per_kind_per_head };

std::vector<RankedRegion> change_ranking(const Checkpoint& base, const Checkpoint& phase1,
                                         Granularity granularity);

// LF_H1: k random transformer blocks (embeddings and output head excluded).
FreezeMask lf_random(const engine::ModelConfig& config, int k, uint64_t seed);

// LF_H2: top-k most-changed regions between base and phase-1 weights. With
// per-kind-per-head granularity the top-k is taken independently for Q, K,
// and V (3k regions total); `combined_pool` ranks all kinds together instead.
FreezeMask lf_top_changed(const Checkpoint& base, const Checkpoint& phase1, int k,
                          Granularity granularity, bool combined_pool = false);

void save_freeze_mask(const FreezeMask& mask, const std::string& path);
FreezeMask load_freeze_mask(const std::string& path);

// Replace every output with the phase-1 model's generation from the English
// counterpart instructions; original responses are discarded.
corpus::Dataset generate_replay(const Checkpoint& phase1, const corpus::Dataset& english_counterpart,
                                const engine::DecodeConfig& decode, int max_new);

// ER baseline: seeded subset of the English counterpart, original responses kept.
corpus::Dataset english_replay_subset(const corpus::Dataset& english_counterpart,
                                      double size_fraction, uint64_t seed);

// -------- phase-2 plans --------

struct Strategy {
    enum class Kind { none, lf_h1, lf_h2, gr, er, lora } kind = Kind::none;
    int k = 0;                 // lf_h1 / lf_h2
    Granularity granularity = Granularity::per_kind_per_head;
    double fraction = 0.0;     // gr / er
    int rank = 4;              // lora
    uint64_t seed = 0;

    std::string name() const;
    static Strategy parse(const std::string& name, uint64_t seed);
};

struct Phase2Inputs {
    const corpus::Dataset* phase2_dataset = nullptr;
    const corpus::Dataset* english_counterpart = nullptr;  // gr / er
    const Checkpoint* base = nullptr;                      // lf_h2
    const Checkpoint* phase1 = nullptr;                    // lf_h2, gr, lora
};

struct Phase2Plan {
    corpus::Dataset dataset;
    std::optional<FreezeMask> freeze_mask;
    std::optional<engine::LowRankAdapter> adapter;
    std::string description;
};

Phase2Plan build_phase2_plan(const Strategy& strategy, const Phase2Inputs& inputs);

}  // namespace cftlab::strategies
