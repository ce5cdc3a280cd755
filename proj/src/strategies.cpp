#include "cftlab/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cftlab/error.hpp"
#include "cftlab/rng.hpp"

namespace cftlab::strategies {

namespace {

double tensor_delta_norm_sq(const engine::Tensor& a, const engine::Tensor& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        double d = a.v[i] - b.v[i];
        s += d * d;
    }
    return s;
}

void check_compatible(const Checkpoint& a, const Checkpoint& b) {
    std::string mismatch;
    for (const auto& [name, t] : a.tensors) {
        auto it = b.tensors.find(name);
        if (it == b.tensors.end() || it->second.shape != t.shape) mismatch += " " + name;
    }
    for (const auto& [name, t] : b.tensors)
        if (!a.tensors.count(name)) mismatch += " " + name;
    require(mismatch.empty(), "checkpoint architectures differ on tensors:" + mismatch);
}

void sort_ranking(std::vector<RankedRegion>& rs) {
    std::stable_sort(rs.begin(), rs.end(), [](const RankedRegion& a, const RankedRegion& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.region < b.region;
    });
}

}  // namespace

std::vector<RankedRegion> change_ranking(const Checkpoint& base, const Checkpoint& phase1,
                                         Granularity granularity) {
    check_compatible(base, phase1);
    const auto& cfg = base.config;
    std::vector<RankedRegion> out;
    if (granularity == Granularity::layer) {
        for (int i = 0; i < cfg.n_layers; ++i) {
            std::string prefix = "layer" + std::to_string(i) + ".";
            double sq = 0.0;
            for (const auto& [name, t] : base.tensors)
                if (name.rfind(prefix, 0) == 0)
                    sq += tensor_delta_norm_sq(t, phase1.tensors.at(name));
            out.push_back({Region{i, 0, -1}, std::sqrt(sq)});
        }
    } else {
        for (int i = 0; i < cfg.n_layers; ++i)
            for (char kind : {'K', 'Q', 'V'})
                for (int h = 0; h < cfg.n_heads; ++h) {
                    std::string name = "layer" + std::to_string(i) + ".head" +
                                       std::to_string(h) + "." + std::string(1, kind);
                    out.push_back({Region{i, kind, h},
                                   std::sqrt(tensor_delta_norm_sq(base.tensors.at(name),
                                                                  phase1.tensors.at(name)))});
                }
    }
    sort_ranking(out);
    return out;
}

FreezeMask lf_random(const engine::ModelConfig& config, int k, uint64_t seed) {
    require(k >= 0 && k <= config.n_layers,
            "lf_random: k=" + std::to_string(k) + " exceeds n_layers=" +
                std::to_string(config.n_layers));
    FreezeMask mask;
    mask.heuristic = "lf_h1";
    mask.provenance_note = "k=" + std::to_string(k) + " seed=" + std::to_string(seed);
    Rng rng(seed);
    for (size_t li : rng.sample_without_replacement(static_cast<size_t>(config.n_layers),
                                                    static_cast<size_t>(k)))
        mask.regions.insert(Region{static_cast<int>(li), 0, -1});
    return mask;
}

FreezeMask lf_top_changed(const Checkpoint& base, const Checkpoint& phase1, int k,
                          Granularity granularity, bool combined_pool) {
    auto ranking = change_ranking(base, phase1, granularity);
    FreezeMask mask;
    mask.heuristic = "lf_h2";
    mask.provenance_note = "k=" + std::to_string(k) + " granularity=" +
                           (granularity == Granularity::layer ? "layer" : "per-kind-per-head") +
                           (combined_pool ? " combined-pool" : "");

    bool all_zero = std::all_of(ranking.begin(), ranking.end(),
                                [](const RankedRegion& r) { return r.score == 0.0; });
    if (all_zero)
        mask.provenance_note += " warning=zero-change-ties-resolved-lexicographically";

    if (granularity == Granularity::layer || combined_pool) {
        require(k <= static_cast<int>(ranking.size()),
                "lf_top_changed: k exceeds number of candidate regions");
        for (int i = 0; i < k; ++i) mask.regions.insert(ranking[static_cast<size_t>(i)].region);
    } else {
        // top-k independently for each of Q, K, V
        for (char kind : {'Q', 'K', 'V'}) {
            std::vector<RankedRegion> of_kind;
            for (const auto& r : ranking)
                if (r.region.kind == kind) of_kind.push_back(r);
            require(k <= static_cast<int>(of_kind.size()),
                    "lf_top_changed: k exceeds candidate regions for kind " +
                        std::string(1, kind));
            for (int i = 0; i < k; ++i) mask.regions.insert(of_kind[static_cast<size_t>(i)].region);
        }
    }
    return mask;
}

void save_freeze_mask(const FreezeMask& mask, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot write freeze mask: " + path);
    out << "# heuristic=" << (mask.heuristic.empty() ? "manual" : mask.heuristic) << "\n";
    if (!mask.provenance_note.empty()) out << "# " << mask.provenance_note << "\n";
    for (const Region& r : mask.regions) {
        if (r.kind == 0)
            out << "layer=" << r.layer << "\n";
        else
            out << "layer=" << r.layer << " kind=" << r.kind << " head=" << r.head << "\n";
    }
}

FreezeMask load_freeze_mask(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open freeze mask: " + path);
    FreezeMask mask;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("# heuristic=", 0) == 0) mask.heuristic = line.substr(12);
            continue;
        }
        Region r{-1, 0, -1};
        for (const auto& tok : corpus::split_whitespace(line)) {
            auto eq = tok.find('=');
            require(eq != std::string::npos, path + ":" + std::to_string(lineno) +
                                                 ": expected key=value tokens");
            std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "layer") r.layer = std::stoi(val);
            else if (key == "kind") {
                require(val.size() == 1, path + ":" + std::to_string(lineno) + ": bad kind");
                r.kind = val[0];
            } else if (key == "head") r.head = std::stoi(val);
            else fail_input(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        require(r.layer >= 0, path + ":" + std::to_string(lineno) + ": missing layer");
        mask.regions.insert(r);
    }
    return mask;
}

corpus::Dataset generate_replay(const Checkpoint& phase1, const corpus::Dataset& english_counterpart,
                                const engine::DecodeConfig& decode, int max_new) {
    require(phase1.vocab.size() > 0, "generate_replay: checkpoint has no vocabulary");
    corpus::Dataset out;
    out.meta = english_counterpart.meta;
    out.meta.id = english_counterpart.meta.id + ".GR";
    out.meta.provenance = "GR";
    out.meta.empty_output_count = 0;
    for (const auto& src : english_counterpart.examples) {
        auto toks = corpus::tokenize(phase1.vocab, corpus::prompt_text(src)).ids;
        auto gen = engine::generate(phase1, toks, decode, max_new);
        corpus::Example ex = src;
        ex.output = corpus::detokenize(phase1.vocab, gen);
        if (ex.output.empty()) out.meta.empty_output_count++;
        out.examples.push_back(std::move(ex));
    }
    out.recompute_histograms();
    return out;
}

corpus::Dataset english_replay_subset(const corpus::Dataset& english_counterpart,
                                      double size_fraction, uint64_t seed) {
    require(size_fraction > 0.0 && size_fraction <= 1.0,
            "english_replay_subset: fraction out of (0,1]");
    size_t need = static_cast<size_t>(
        std::ceil(size_fraction * static_cast<double>(english_counterpart.size())));
    require(need >= 1, "english_replay_subset: empty result");
    Rng rng(seed);
    auto picks = rng.sample_without_replacement(english_counterpart.size(), need);
    corpus::Dataset out;
    out.meta = english_counterpart.meta;
    out.meta.id = english_counterpart.meta.id + ".ER";
    out.meta.provenance = "ER";
    for (size_t i : picks) out.examples.push_back(english_counterpart.examples[i]);
    out.recompute_histograms();
    return out;
}

std::string Strategy::name() const {
    switch (kind) {
        case Kind::none: return "none";
        case Kind::lf_h1: return "LF_H1";
        case Kind::lf_h2: return "LF_H2";
        case Kind::gr: return "GR_" + std::to_string(static_cast<int>(std::lround(fraction * 100)));
        case Kind::er: return "ER_" + std::to_string(static_cast<int>(std::lround(fraction * 100)));
        case Kind::lora: return "LORA";
    }
    return "?";
}

Strategy Strategy::parse(const std::string& name, uint64_t seed) {
    Strategy s;
    s.seed = seed;
    std::string n;
    for (char c : name) n += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (n == "none") s.kind = Kind::none;
    else if (n == "lf_h1") s.kind = Kind::lf_h1;
    else if (n == "lf_h2") s.kind = Kind::lf_h2;
    else if (n == "lora") s.kind = Kind::lora;
    else if (n.rfind("gr_", 0) == 0) {
        s.kind = Kind::gr;
        s.fraction = std::stod(n.substr(3)) / 100.0;
    } else if (n.rfind("er_", 0) == 0) {
        s.kind = Kind::er;
        s.fraction = std::stod(n.substr(3)) / 100.0;
    } else fail_input("unknown strategy '" + name + "'");
    return s;
}

Phase2Plan build_phase2_plan(const Strategy& strategy, const Phase2Inputs& inputs) {
    require(inputs.phase2_dataset != nullptr, "build_phase2_plan: phase2 dataset is required");
    Phase2Plan plan;
    plan.description = strategy.name();
    using K = Strategy::Kind;

    auto effective_k = [&](const engine::ModelConfig& cfg) {
        // paper preset is 10; desk default scales to the toy depth
        return strategy.k > 0 ? strategy.k : (cfg.n_layers + 1) / 2;
    };

    switch (strategy.kind) {
        case K::none:
            plan.dataset = *inputs.phase2_dataset;
            break;
        case K::lf_h1: {
            require(inputs.phase1 != nullptr, "LF_H1 plan needs the phase-1 checkpoint");
            plan.dataset = *inputs.phase2_dataset;
            plan.freeze_mask = lf_random(inputs.phase1->config,
                                         effective_k(inputs.phase1->config), strategy.seed);
            break;
        }
        case K::lf_h2: {
            require(inputs.base != nullptr, "LF_H2 plan needs the base checkpoint");
            require(inputs.phase1 != nullptr, "LF_H2 plan needs the phase-1 checkpoint");
            plan.dataset = *inputs.phase2_dataset;
            plan.freeze_mask = lf_top_changed(*inputs.base, *inputs.phase1,
                                              effective_k(inputs.phase1->config),
                                              strategy.granularity);
            break;
        }
        case K::gr: {
            require(inputs.phase1 != nullptr, "GR plan needs the phase-1 checkpoint");
            require(inputs.english_counterpart != nullptr,
                    "GR plan needs the english counterpart dataset");
            engine::DecodeConfig decode;  // greedy
            auto replay = generate_replay(*inputs.phase1, *inputs.english_counterpart, decode, 32);
            plan.dataset = corpus::mix(*inputs.phase2_dataset, replay, strategy.fraction,
                                       strategy.seed);
            break;
        }
        case K::er: {
            require(inputs.english_counterpart != nullptr,
                    "ER plan needs the english counterpart dataset");
            plan.dataset = corpus::mix(*inputs.phase2_dataset, *inputs.english_counterpart,
                                       strategy.fraction, strategy.seed);
            break;
        }
        case K::lora: {
            require(inputs.phase1 != nullptr, "LORA plan needs the phase-1 checkpoint");
            plan.dataset = *inputs.phase2_dataset;
            plan.adapter = engine::init_adapter(*inputs.phase1, strategy.rank, 1.0, strategy.seed);
            break;
        }
    }
    return plan;
}

}  // namespace cftlab::strategies
