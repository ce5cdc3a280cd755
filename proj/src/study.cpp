#include "cftlab/study.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "cftlab/drift.hpp"
#include "cftlab/error.hpp"
#include "cftlab/evalharness.hpp"
#include "cftlab/rng.hpp"
#include "cftlab/similarity.hpp"
#include "cftlab/strategies.hpp"
#include "cftlab/svg.hpp"
#include "json.hpp"

namespace cftlab::study {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

struct SeedArtifacts {
    corpus::BenchmarkSuite bench;
    corpus::Vocab vocab;
    std::string data_dir;
};

std::string canonical_serialize(const ExperimentConfig& c) {
    std::ostringstream s;
    s << "bench:" << c.bench.n_languages << ',' << c.bench.tasks_per_family << ','
      << c.bench.eval_per_family << ',' << c.bench.drift_prompt_count << ',' << c.bench.seed
      << ',' << c.bench.scaffold_l0_ratio << ";model:" << c.model.n_layers << ','
      << c.model.n_heads << ',' << c.model.d_model << ',' << c.model.d_ff << ','
      << c.model.max_seq_len << ";train:" << c.train.learning_rate << ',' << c.train.epochs
      << ',' << c.train.global_batch_size << ',' << c.train.warmup_steps << ','
      << c.train.beta1 << ',' << c.train.beta2 << ',' << c.train.adam_eps << ','
      << c.train.weight_decay << ',' << c.phase2_epochs << ',' << c.phase2_lr << ";conds:";
    for (const auto& cond : c.conditions) s << cond.name() << '+';
    s << ";seeds:";
    for (uint64_t x : c.seeds) s << x << '+';
    return s.str();
}

bool manifest_complete(const fs::path& manifest_path, const std::string& hash) {
    std::ifstream in(manifest_path);
    if (!in.good()) return false;
    json m = json::parse(in, nullptr, false);
    if (m.is_discarded()) return false;
    if (m.value("status", "") != "complete") return false;
    if (m.value("config_hash", "") != hash)
        fail_input("resume refused: existing manifest " + manifest_path.string() +
                   " was produced by a different config (hash " + m.value("config_hash", "?") +
                   " vs " + hash + "); delete the run directory or change --out");
    for (const auto& p : m.value("artifacts", std::vector<std::string>{}))
        if (!fs::exists(p)) return false;
    return true;
}

void write_manifest(const fs::path& path, const std::string& run_id, const std::string& hash,
                    const std::vector<std::string>& artifacts, double wall_s) {
    json m;
    m["run_id"] = run_id;
    m["config_hash"] = hash;
    m["status"] = "complete";
    m["artifacts"] = artifacts;
    m["wall_clock_s"] = wall_s;
    std::ofstream out(path);
    require(out.good(), "cannot write manifest: " + path.string());
    out << m.dump(2) << "\n";
}

corpus::Dataset phase1_dataset(const SeedArtifacts& sa, const std::string& tag) {
    if (tag == "A") return sa.bench.phase1_a;
    if (tag == "B") return sa.bench.phase1_b;
    fail_input("unknown phase1 dataset tag '" + tag + "' (expected A or B)");
}

}  // namespace

void ExperimentConfig::validate() const {
    bench.validate();
    train.validate();
    require(phase2_epochs >= 0, "experiment config: phase2_epochs must be >= 0");
    require(phase2_lr >= 0.0, "experiment config: phase2_lr must be >= 0");
    require(!seeds.empty(), "experiment config: seeds must be nonempty");
    require(!conditions.empty(), "experiment config: conditions must be nonempty");
    for (const auto& c : conditions) {
        require(c.phase1 == "A" || c.phase1 == "B",
                "experiment config: condition phase1 must be A or B");
        strategies::Strategy::parse(c.strategy, 0);  // throws on unknown strategy
    }
}

ExperimentConfig paper_analog_preset() {
    ExperimentConfig c;
    c.bench.n_languages = 2;
    c.bench.tasks_per_family = 400;
    c.bench.eval_per_family = 25;
    c.bench.drift_prompt_count = 64;
    // sharing part of the instruction scaffold across languages mirrors the way
    // real multilingual corpora share subwords; with fully disjoint alphabets
    // phase 2 would never touch the original tokens and replay could only
    // perturb them
    c.bench.scaffold_l0_ratio = 0.25;
    c.model.n_layers = 4;
    c.model.n_heads = 4;
    c.model.d_model = 64;
    c.model.d_ff = 128;
    c.model.max_seq_len = 64;
    c.train.learning_rate = 3e-3;
    c.train.epochs = 14;
    c.train.global_batch_size = 16;
    c.train.warmup_steps = 10;
    c.phase2_epochs = 6;
    c.conditions = {{"A", "none"},  {"B", "none"},  {"B", "GR_5"}, {"B", "GR_10"},
                    {"B", "ER_10"}, {"B", "LF_H1"}, {"B", "LF_H2"}, {"B", "LORA"}};
    c.seeds = {1, 2, 3, 4, 5};
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open experiment config: " + path);
    ExperimentConfig c = paper_analog_preset();
    c.conditions.clear();
    c.seeds.clear();
    std::string line;
    int lineno = 0;
    auto split_commas = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : s) {
            if (ch == ',') {
                out.push_back(cur);
                cur.clear();
            } else cur += ch;
        }
        if (!cur.empty()) out.push_back(cur);
        return out;
    };
    while (std::getline(in, line)) {
        ++lineno;
        auto toks = corpus::split_whitespace(line);
        if (toks.empty() || toks[0][0] == '#') continue;
        require(toks.size() == 2, "experiment config " + path + ":" + std::to_string(lineno) +
                                      ": expected 'key value'");
        const std::string& key = toks[0];
        const std::string& val = toks[1];
        if (key == "languages") c.bench.n_languages = std::stoi(val);
        else if (key == "tasks_per_family") c.bench.tasks_per_family = std::stoi(val);
        else if (key == "eval_per_family") c.bench.eval_per_family = std::stoi(val);
        else if (key == "drift_prompts") c.bench.drift_prompt_count = std::stoi(val);
        else if (key == "bench_seed") c.bench.seed = std::stoull(val);
        else if (key == "scaffold_l0_ratio") c.bench.scaffold_l0_ratio = std::stod(val);
        else if (key == "n_layers") c.model.n_layers = std::stoi(val);
        else if (key == "n_heads") c.model.n_heads = std::stoi(val);
        else if (key == "d_model") c.model.d_model = std::stoi(val);
        else if (key == "d_ff") c.model.d_ff = std::stoi(val);
        else if (key == "max_seq_len") c.model.max_seq_len = std::stoi(val);
        else if (key == "learning_rate") c.train.learning_rate = std::stod(val);
        else if (key == "epochs") c.train.epochs = std::stoi(val);
        else if (key == "phase2_epochs") c.phase2_epochs = std::stoi(val);
        else if (key == "phase2_lr") c.phase2_lr = std::stod(val);
        else if (key == "batch_size") c.train.global_batch_size = std::stoi(val);
        else if (key == "warmup_steps") c.train.warmup_steps = std::stoi(val);
        else if (key == "weight_decay") c.train.weight_decay = std::stod(val);
        else if (key == "out") c.out_dir = val;
        else if (key == "seeds") {
            for (const auto& s : split_commas(val)) c.seeds.push_back(std::stoull(s));
        } else if (key == "conditions") {
            for (const auto& s : split_commas(val)) {
                auto colon = s.find(':');
                require(colon != std::string::npos,
                        "experiment config " + path + ":" + std::to_string(lineno) +
                            ": condition must be phase1:strategy");
                c.conditions.push_back({s.substr(0, colon), s.substr(colon + 1)});
            }
        } else fail_input("experiment config " + path + ":" + std::to_string(lineno) +
                          ": unknown key '" + key + "'");
    }
    if (c.seeds.empty()) c.seeds = {1, 2, 3, 4, 5};
    if (c.conditions.empty()) c.conditions = paper_analog_preset().conditions;
    c.validate();
    return c;
}

void save_experiment_config(const ExperimentConfig& c, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot write experiment config: " + path);
    out << "languages " << c.bench.n_languages << "\n"
        << "tasks_per_family " << c.bench.tasks_per_family << "\n"
        << "eval_per_family " << c.bench.eval_per_family << "\n"
        << "drift_prompts " << c.bench.drift_prompt_count << "\n"
        << "bench_seed " << c.bench.seed << "\n"
        << "scaffold_l0_ratio " << c.bench.scaffold_l0_ratio << "\n"
        << "n_layers " << c.model.n_layers << "\n"
        << "n_heads " << c.model.n_heads << "\n"
        << "d_model " << c.model.d_model << "\n"
        << "d_ff " << c.model.d_ff << "\n"
        << "max_seq_len " << c.model.max_seq_len << "\n"
        << "learning_rate " << fmt9(c.train.learning_rate) << "\n"
        << "epochs " << c.train.epochs << "\n"
        << "phase2_epochs " << c.phase2_epochs << "\n"
        << "phase2_lr " << c.phase2_lr << "\n"
        << "batch_size " << c.train.global_batch_size << "\n"
        << "warmup_steps " << c.train.warmup_steps << "\n"
        << "weight_decay " << fmt9(c.train.weight_decay) << "\n"
        << "out " << c.out_dir << "\n";
    out << "seeds ";
    for (size_t i = 0; i < c.seeds.size(); ++i) out << (i ? "," : "") << c.seeds[i];
    out << "\nconditions ";
    for (size_t i = 0; i < c.conditions.size(); ++i)
        out << (i ? "," : "") << c.conditions[i].phase1 << ':' << c.conditions[i].strategy;
    out << "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
    uint64_t h = fnv1a_str(canonical_serialize(cfg));
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

// generate datasets + vocab for one seed; cached on disk
SeedArtifacts prepare_seed(const ExperimentConfig& cfg, uint64_t seed, const fs::path& root) {
    SeedArtifacts sa;
    corpus::BenchmarkSpec bspec = cfg.bench;
    bspec.seed = cfg.bench.seed ^ (seed * 0x9e3779b97f4a7c15ULL);
    sa.bench = corpus::synth_generate(bspec);
    sa.vocab = corpus::build_vocab({&sa.bench.phase1_a, &sa.bench.phase1_b,
                                    &sa.bench.phase2_multi_a, &sa.bench.phase2_multi_b,
                                    &sa.bench.english_counterpart_of_phase2, &sa.bench.eval_ta,
                                    &sa.bench.eval_la, &sa.bench.drift_prompts});
    fs::path dir = root / "data" / ("seed" + std::to_string(seed));
    fs::create_directories(dir);
    sa.data_dir = dir.string();
    corpus::save_dataset(sa.bench.phase1_a, (dir / "phase1_A.jsonl").string());
    corpus::save_dataset(sa.bench.phase1_b, (dir / "phase1_B.jsonl").string());
    corpus::save_dataset(sa.bench.phase2_multi_a, (dir / "phase2_multi_A.jsonl").string());
    corpus::save_dataset(sa.bench.phase2_multi_b, (dir / "phase2_multi_B.jsonl").string());
    corpus::save_dataset(sa.bench.english_counterpart_of_phase2,
                         (dir / "phase2_english_counterpart.jsonl").string());
    corpus::save_dataset(sa.bench.eval_ta, (dir / "eval_TA.jsonl").string());
    corpus::save_dataset(sa.bench.eval_la, (dir / "eval_LA.jsonl").string());
    corpus::save_dataset(sa.bench.drift_prompts, (dir / "drift_prompts.jsonl").string());
    return sa;
}

// phase-1 training for one (tag, seed); cached via its own manifest
engine::Checkpoint ensure_phase1(const ExperimentConfig& cfg, const SeedArtifacts& sa,
                                 const std::string& tag, uint64_t seed, const fs::path& root,
                                 const std::string& hash) {
    fs::path dir = root / "phase1" / tag / ("seed" + std::to_string(seed));
    fs::create_directories(dir);
    fs::path ckpt_path = dir / "ckpt.bin";
    fs::path manifest_path = dir / "manifest.json";
    if (manifest_complete(manifest_path, hash)) return engine::load_checkpoint(ckpt_path.string());

    auto t0 = std::chrono::steady_clock::now();
    engine::ModelConfig mc = cfg.model;
    mc.vocab_size = sa.vocab.size();
    engine::Checkpoint base = engine::init_checkpoint(mc, sa.vocab, seed);
    base.prov.phase_tag = "base.s" + std::to_string(seed);
    engine::save_checkpoint(base, (dir / "base.bin").string());

    engine::TrainConfig tc = cfg.train;
    tc.seed = seed;
    auto res = engine::train_phase(base, phase1_dataset(sa, tag), tc);
    res.checkpoint.prov.phase_tag = "phase1-" + tag + ".s" + std::to_string(seed);
    engine::save_checkpoint(res.checkpoint, ckpt_path.string());
    engine::write_train_log_csv(res.log, (dir / "train_log.csv").string());

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(manifest_path, "phase1-" + tag + "-s" + std::to_string(seed), hash,
                   {ckpt_path.string(), (dir / "base.bin").string(),
                    (dir / "train_log.csv").string()},
                   wall);
    return res.checkpoint;
}

struct CellOutput {
    SummaryRow row;
    bool skipped = false;
};

CellOutput run_cell(const ExperimentConfig& cfg, const SeedArtifacts& sa,
                    const Condition& cond, uint64_t seed, const fs::path& root,
                    const std::string& hash) {
    fs::path dir = root / cond.name() / ("seed" + std::to_string(seed));
    fs::create_directories(dir);
    fs::path manifest_path = dir / "manifest.json";
    const std::string run_id = cond.name() + "-s" + std::to_string(seed);

    engine::Checkpoint phase1 = ensure_phase1(cfg, sa, cond.phase1, seed, root, hash);
    engine::Checkpoint base = engine::load_checkpoint(
        (root / "phase1" / cond.phase1 / ("seed" + std::to_string(seed)) / "base.bin").string());

    CellOutput out;
    bool skipped = manifest_complete(manifest_path, hash);
    auto t0 = std::chrono::steady_clock::now();

    engine::Checkpoint phase2;
    if (skipped) {
        phase2 = engine::load_checkpoint((dir / "phase2.bin").string());
        out.skipped = true;
    } else {
        auto strategy = strategies::Strategy::parse(cond.strategy, seed);
        // per-kind-per-head regions come in layers*heads per kind; freezing
        // three quarters of them keeps the heuristic's proportionate bite at
        // toy depth
        if (strategy.kind == strategies::Strategy::Kind::lf_h2)
            strategy.k = cfg.model.n_layers * cfg.model.n_heads * 3 / 4;
        strategies::Phase2Inputs inputs;
        inputs.phase2_dataset = &sa.bench.phase2_multi_a;
        inputs.english_counterpart = &sa.bench.english_counterpart_of_phase2;
        inputs.base = &base;
        inputs.phase1 = &phase1;
        auto plan = strategies::build_phase2_plan(strategy, inputs);

        engine::TrainConfig tc = cfg.train;
        tc.seed = seed;
        if (cfg.phase2_epochs > 0) tc.epochs = cfg.phase2_epochs;
        if (cfg.phase2_lr > 0.0) tc.learning_rate = cfg.phase2_lr;
        auto res = engine::train_phase(phase1, plan.dataset, tc,
                                       plan.freeze_mask ? &*plan.freeze_mask : nullptr,
                                       plan.adapter ? &*plan.adapter : nullptr);
        phase2 = plan.adapter ? engine::merge_adapter(res.checkpoint, *res.adapter)
                              : res.checkpoint;
        phase2.prov.phase_tag = "phase2-" + cond.name() + ".s" + std::to_string(seed);
        engine::save_checkpoint(phase2, (dir / "phase2.bin").string());
        engine::write_train_log_csv(res.log, (dir / "train_log.csv").string());
        if (plan.freeze_mask)
            strategies::save_freeze_mask(*plan.freeze_mask, (dir / "freeze_mask.txt").string());
    }

    // similarity of the phase-wise dataset pair + checkpoint distance
    auto embedder = similarity::make_task_signature_embedder(64);
    corpus::Dataset p1ds = phase1_dataset(sa, cond.phase1);
    similarity::SimilarityReport sim;
    sim.id_a = p1ds.meta.id;
    sim.id_b = sa.bench.phase2_multi_a.meta.id;
    size_t sample_n = std::min<size_t>(500, std::min(p1ds.size(), sa.bench.phase2_multi_a.size()));
    sim.des = similarity::des(p1ds, sa.bench.phase2_multi_a, *embedder, sample_n, seed);
    sim.mpd_raw = similarity::mpd(phase1, phase2);
    sim.mpd_pair = phase1.prov.phase_tag + "|" + phase2.prov.phase_tag;
    sim.embedder = embedder->describe();
    sim.sample_count = static_cast<int>(sample_n);
    similarity::write_similarity_report_csv({sim}, (dir / "similarity.csv").string());

    // activation drift between the phase checkpoints
    auto act1 = drift::capture(phase1, sa.bench.drift_prompts);
    auto act2 = drift::capture(phase2, sa.bench.drift_prompts);
    auto dr = drift::drift_norms(act1, act2);
    drift::write_drift_csv(dr, (dir / "drift.csv").string());
    drift::write_drift_svg({dr}, (dir / "drift.svg").string());
    drift::write_projection_csv(drift::project2d({act1, act2}),
                                (dir / "projection.csv").string());

    // TA/LA evaluation before and after phase 2. Task ability only counts the
    // families this condition trained in phase 1, so the TA suite set is
    // filtered per condition; language ability always covers the phase-2
    // families across L1..Lk.
    const auto& ta_fams =
        cond.phase1 == "A" ? corpus::families_a() : corpus::families_b();
    corpus::Dataset eval_all;
    eval_all.meta = sa.bench.eval_ta.meta;
    for (const auto& ex : sa.bench.eval_ta.examples)
        if (std::find(ta_fams.begin(), ta_fams.end(), ex.task_family) != ta_fams.end())
            eval_all.examples.push_back(ex);
    eval_all.examples.insert(eval_all.examples.end(), sa.bench.eval_la.examples.begin(),
                             sa.bench.eval_la.examples.end());
    eval_all.meta.id = "eval-" + cond.phase1 + ".s" + std::to_string(seed);
    eval_all.recompute_histograms();
    auto suites = evalharness::make_suites(eval_all);
    // phase-1 reports are shared by every condition with the same phase-1 tag
    evalharness::EvalReport rep1;
    {
        static std::mutex cache_mu;
        static std::map<std::string, evalharness::EvalReport> cache;
        std::string key = root.string() + "|" + cond.phase1 + "|" + std::to_string(seed);
        std::unique_lock<std::mutex> lk(cache_mu);
        auto it = cache.find(key);
        if (it != cache.end()) {
            rep1 = it->second;
        } else {
            lk.unlock();
            auto computed = evalharness::evaluate(phase1, suites);
            lk.lock();
            rep1 = cache.emplace(key, std::move(computed)).first->second;
        }
    }
    auto rep2 = evalharness::evaluate(phase2, suites);
    auto cmp = evalharness::compare(rep1, rep2);
    evalharness::write_eval_report_csv(rep1, (dir / "eval_phase1.csv").string());
    evalharness::write_eval_report_csv(rep2, (dir / "eval_phase2.csv").string());
    evalharness::write_compare_csv(cmp, (dir / "compare.csv").string());
    evalharness::write_compare_svg(rep1, rep2, (dir / "compare.svg").string());

    double mean_drift = 0.0;
    for (double v : dr.per_layer_diff) mean_drift += v;
    mean_drift /= static_cast<double>(dr.per_layer_diff.size());

    out.row = {cond.name(), seed,          sim.des,       sim.mpd_raw, -1.0,
               rep1.ta,     rep2.ta,       cmp.forgetting, rep1.la,    rep2.la,
               mean_drift,  dr.global_cov_diff};

    if (!skipped) {
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::vector<std::string> artifacts = {
            (dir / "phase2.bin").string(),     (dir / "train_log.csv").string(),
            (dir / "similarity.csv").string(), (dir / "drift.csv").string(),
            (dir / "drift.svg").string(),      (dir / "projection.csv").string(),
            (dir / "eval_phase1.csv").string(), (dir / "eval_phase2.csv").string(),
            (dir / "compare.csv").string(),    (dir / "compare.svg").string()};
        write_manifest(manifest_path, run_id, hash, artifacts, wall);
    }
    return out;
}

}  // namespace

StudyResult run_study(const ExperimentConfig& cfg, int jobs, bool verbose) {
    cfg.validate();
    require(jobs >= 1, "run_study: jobs must be >= 1");
    const std::string hash = config_hash(cfg);
    fs::path root = fs::path(cfg.out_dir) / hash;
    fs::create_directories(root);
    save_experiment_config(cfg, (root / "config.txt").string());

    // stage 1: per-seed data + phase-1 checkpoints (phase-1 models are shared
    // across all conditions of a seed, so build them before the cell fan-out)
    std::map<uint64_t, SeedArtifacts> per_seed;
    for (uint64_t seed : cfg.seeds) per_seed.emplace(seed, prepare_seed(cfg, seed, root));

    std::set<std::string> phase1_tags;
    for (const auto& cond : cfg.conditions) phase1_tags.insert(cond.phase1);
    {
        std::vector<std::pair<std::string, uint64_t>> work;
        for (const auto& tag : phase1_tags)
            for (uint64_t seed : cfg.seeds) work.emplace_back(tag, seed);
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        std::mutex err_mu;
        std::string first_error;
        for (int j = 0; j < std::min<int>(jobs, static_cast<int>(work.size())); ++j)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < work.size(); i = next.fetch_add(1)) {
                    try {
                        ensure_phase1(cfg, per_seed.at(work[i].second), work[i].first,
                                      work[i].second, root, hash);
                    } catch (const std::exception& e) {
                        std::lock_guard<std::mutex> lk(err_mu);
                        if (first_error.empty()) first_error = e.what();
                    }
                }
            });
        for (auto& t : pool) t.join();
        require(first_error.empty(), "phase-1 training failed: " + first_error);
    }

    // stage 2: cells
    struct Cell {
        Condition cond;
        uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const auto& cond : cfg.conditions)
        for (uint64_t seed : cfg.seeds) cells.push_back({cond, seed});

    std::vector<CellOutput> outputs(cells.size());
    {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        std::mutex mu;
        std::string first_error;
        auto worker = [&] {
            for (size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
                try {
                    outputs[i] = run_cell(cfg, per_seed.at(cells[i].seed), cells[i].cond,
                                          cells[i].seed, root, hash);
                    if (verbose) {
                        std::lock_guard<std::mutex> lk(mu);
                        std::fprintf(stderr, "[study] %s seed %llu %s\n",
                                     cells[i].cond.name().c_str(),
                                     static_cast<unsigned long long>(cells[i].seed),
                                     outputs[i].skipped ? "skipped" : "done");
                    }
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lk(mu);
                    if (first_error.empty())
                        first_error = cells[i].cond.name() + " seed " +
                                      std::to_string(cells[i].seed) + ": " + e.what();
                }
            }
        };
        for (int j = 0; j < std::min<int>(jobs, static_cast<int>(cells.size())); ++j)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        require(first_error.empty(), "study cell failed: " + first_error);
    }

    // stage 3: summary. MPD is max-normalized within each seed's comparison set.
    for (uint64_t seed : cfg.seeds) {
        std::vector<size_t> idx;
        std::vector<double> raw;
        for (size_t i = 0; i < cells.size(); ++i)
            if (cells[i].seed == seed) {
                idx.push_back(i);
                raw.push_back(outputs[i].row.mpd_raw);
            }
        bool all_zero = std::all_of(raw.begin(), raw.end(), [](double x) { return x == 0.0; });
        if (!all_zero) {
            auto norm = similarity::normalize_mpd(raw);
            for (size_t j = 0; j < idx.size(); ++j)
                outputs[idx[j]].row.mpd_normalized = norm[j];
        }
    }

    fs::path summary_path = root / "summary.csv";
    {
        std::ofstream out(summary_path);
        require(out.good(), "cannot write summary: " + summary_path.string());
        out << "condition,seed,des,mpd_raw,mpd_normalized,ta_phase1,ta_phase2,forgetting,"
               "la_phase1,la_phase2,mean_layer_drift,global_cov_drift\n";
        for (const auto& o : outputs) {
            const SummaryRow& r = o.row;
            out << r.condition << ',' << r.seed << ',' << fmt9(r.des) << ',' << fmt9(r.mpd_raw)
                << ',' << fmt9(r.mpd_normalized) << ',' << fmt9(r.ta_phase1) << ','
                << fmt9(r.ta_phase2) << ',' << fmt9(r.forgetting) << ',' << fmt9(r.la_phase1)
                << ',' << fmt9(r.la_phase2) << ',' << fmt9(r.mean_layer_drift) << ','
                << fmt9(r.global_cov_drift) << '\n';
        }
    }

    // summary charts: mean forgetting / LA per condition
    {
        std::vector<std::string> labels;
        svg::Series forg{"TA forgetting", {}, "#d62728"}, la{"LA after phase 2", {}, "#1f77b4"};
        for (const auto& cond : cfg.conditions) {
            labels.push_back(cond.name());
            double f = 0.0, l = 0.0;
            int n = 0;
            for (size_t i = 0; i < cells.size(); ++i)
                if (cells[i].cond.name() == cond.name()) {
                    f += outputs[i].row.forgetting;
                    l += outputs[i].row.la_phase2;
                    n++;
                }
            forg.values.push_back(f / n);
            la.values.push_back(l / n);
        }
        svg::write_bar_chart((root / "summary_forgetting.svg").string(),
                             "Mean TA forgetting by strategy", labels, {forg}, "TA drop");
        svg::write_bar_chart((root / "summary_la.svg").string(),
                             "Mean LA after phase 2 by strategy", labels, {la}, "LA");
    }

    StudyResult res;
    res.run_root = root.string();
    res.summary_csv = summary_path.string();
    for (const auto& o : outputs) (o.skipped ? res.cells_skipped : res.cells_run)++;
    return res;
}

std::vector<SummaryRow> read_summary(const std::string& summary_csv) {
    std::ifstream in(summary_csv);
    require(in.good(), "cannot open summary: " + summary_csv);
    std::vector<SummaryRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                f.push_back(cur);
                cur.clear();
            } else cur += ch;
        }
        f.push_back(cur);
        require(f.size() == 12, "summary row has wrong column count: " + line);
        SummaryRow r;
        r.condition = f[0];
        r.seed = std::stoull(f[1]);
        r.des = std::stod(f[2]);
        r.mpd_raw = std::stod(f[3]);
        r.mpd_normalized = std::stod(f[4]);
        r.ta_phase1 = std::stod(f[5]);
        r.ta_phase2 = std::stod(f[6]);
        r.forgetting = std::stod(f[7]);
        r.la_phase1 = std::stod(f[8]);
        r.la_phase2 = std::stod(f[9]);
        r.mean_layer_drift = std::stod(f[10]);
        r.global_cov_drift = std::stod(f[11]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace cftlab::study
