#include "cftlab.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cftlab/corpus.hpp"
#include "cftlab/drift.hpp"
#include "cftlab/engine.hpp"
#include "cftlab/error.hpp"
#include "cftlab/evalharness.hpp"
#include "cftlab/similarity.hpp"
#include "cftlab/strategies.hpp"
#include "cftlab/study.hpp"

namespace fs = std::filesystem;
using namespace cftlab;

struct cftlab_checkpoint {
    engine::Checkpoint ckpt;
};

struct cftlab_dataset {
    corpus::Dataset ds;
};

namespace {

thread_local std::string g_last_error;

cftlab_status set_error(ErrKind kind, const std::string& msg) {
    g_last_error = msg;
    return kind == ErrKind::invalid_input ? CFTLAB_ERR_INVALID : CFTLAB_ERR_INTERNAL;
}

// Runs fn, translating exceptions into status codes.
template <typename Fn>
cftlab_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return CFTLAB_OK;
    } catch (const CftError& e) {
        return set_error(e.kind(), e.what());
    } catch (const std::exception& e) {
        return set_error(ErrKind::internal, e.what());
    } catch (...) {
        return set_error(ErrKind::internal, "unknown error");
    }
}

std::string str_or(const char* s, const char* fallback = "") {
    return s ? s : fallback;
}

void require_arg(const char* p, const char* name) {
    if (!p || !*p) fail_input(std::string("missing required argument: ") + name);
}

std::unique_ptr<similarity::Embedder> make_embedder(const std::string& name, int dims, int ngram,
                                                    uint64_t seed) {
    if (name.empty() || name == "task-signature") return similarity::make_task_signature_embedder(dims);
    if (name == "hashed-ngram") return similarity::make_hashed_ngram_embedder(dims, ngram, seed);
    if (name.rfind("precomputed:", 0) == 0)
        return similarity::make_precomputed_embedder(name.substr(12));
    fail_input("unknown embedder: " + name +
               " (expected task-signature, hashed-ngram, or precomputed:<path>)");
}

}  // namespace

extern "C" {

const char* cftlab_last_error(void) { return g_last_error.c_str(); }

cftlab_status cftlab_checkpoint_open(const char* path, cftlab_checkpoint** out) {
    return guarded([&] {
        require_arg(path, "path");
        require(out != nullptr, "null output handle");
        auto handle = std::make_unique<cftlab_checkpoint>();
        handle->ckpt = engine::load_checkpoint(path);
        *out = handle.release();
    });
}

void cftlab_checkpoint_free(cftlab_checkpoint* ckpt) { delete ckpt; }

cftlab_status cftlab_checkpoint_save(const cftlab_checkpoint* ckpt, const char* path) {
    return guarded([&] {
        require(ckpt != nullptr, "null checkpoint handle");
        require_arg(path, "path");
        engine::save_checkpoint(ckpt->ckpt, path);
    });
}

cftlab_status cftlab_checkpoint_info(const cftlab_checkpoint* ckpt, char* buf, size_t buflen) {
    return guarded([&] {
        require(ckpt != nullptr, "null checkpoint handle");
        require(buf != nullptr && buflen > 0, "null info buffer");
        const auto& c = ckpt->ckpt;
        int64_t params = 0;
        for (const auto& [name, t] : c.tensors) params += t.numel();
        std::snprintf(buf, buflen,
                      "layers=%d heads=%d d_model=%d d_ff=%d vocab=%d params=%lld phase=%s "
                      "dataset=%s seed=%llu",
                      c.config.n_layers, c.config.n_heads, c.config.d_model, c.config.d_ff,
                      c.config.vocab_size, static_cast<long long>(params),
                      c.prov.phase_tag.empty() ? "-" : c.prov.phase_tag.c_str(),
                      c.prov.dataset_id.empty() ? "-" : c.prov.dataset_id.c_str(),
                      static_cast<unsigned long long>(c.prov.seed));
    });
}

cftlab_status cftlab_dataset_open(const char* path, cftlab_dataset** out) {
    return guarded([&] {
        require_arg(path, "path");
        require(out != nullptr, "null output handle");
        auto handle = std::make_unique<cftlab_dataset>();
        handle->ds = corpus::load_dataset(path);
        *out = handle.release();
    });
}

void cftlab_dataset_free(cftlab_dataset* ds) { delete ds; }

long cftlab_dataset_size(const cftlab_dataset* ds) {
    return ds ? static_cast<long>(ds->ds.size()) : -1;
}

cftlab_status cftlab_gen(const char* spec_path, const char* out_dir) {
    return guarded([&] {
        require_arg(out_dir, "out_dir");
        corpus::BenchmarkSpec spec;
        if (spec_path && *spec_path) spec = corpus::load_benchmark_spec(spec_path);
        spec.validate();
        auto suite = corpus::synth_generate(spec);
        fs::create_directories(out_dir);
        fs::path root(out_dir);
        corpus::save_benchmark_spec(spec, (root / "spec.txt").string());
        corpus::save_dataset(suite.phase1_a, (root / "phase1_A.jsonl").string());
        corpus::save_dataset(suite.phase1_b, (root / "phase1_B.jsonl").string());
        corpus::save_dataset(suite.phase2_multi_a, (root / "phase2_multi_A.jsonl").string());
        corpus::save_dataset(suite.phase2_multi_b, (root / "phase2_multi_B.jsonl").string());
        corpus::save_dataset(suite.english_counterpart_of_phase2,
                             (root / "phase2_english_counterpart.jsonl").string());
        corpus::save_dataset(suite.eval_ta, (root / "eval_TA.jsonl").string());
        corpus::save_dataset(suite.eval_la, (root / "eval_LA.jsonl").string());
        corpus::save_dataset(suite.drift_prompts, (root / "drift_prompts.jsonl").string());
    });
}

cftlab_status cftlab_train(const cftlab_train_opts* o) {
    return guarded([&] {
        require(o != nullptr, "null train options");
        require_arg(o->dataset, "dataset");
        require_arg(o->out_ckpt, "out_ckpt");

        corpus::Dataset dataset = corpus::load_dataset(o->dataset);

        engine::Checkpoint start;
        if (o->base_ckpt && *o->base_ckpt) {
            start = engine::load_checkpoint(o->base_ckpt);
        } else {
            engine::ModelConfig mc;
            if (o->n_layers > 0) mc.n_layers = o->n_layers;
            if (o->n_heads > 0) mc.n_heads = o->n_heads;
            if (o->d_model > 0) mc.d_model = o->d_model;
            if (o->d_ff > 0) mc.d_ff = o->d_ff;
            if (o->max_seq_len > 0) mc.max_seq_len = o->max_seq_len;
            std::vector<corpus::Dataset> extra;
            std::vector<const corpus::Dataset*> vocab_sets = {&dataset};
            for (const char* p : o->vocab_datasets) {
                if (!p || !*p) continue;
                extra.push_back(corpus::load_dataset(p));
            }
            for (const auto& d : extra) vocab_sets.push_back(&d);
            corpus::Vocab vocab = corpus::build_vocab(vocab_sets);
            mc.vocab_size = vocab.size();
            start = engine::init_checkpoint(mc, vocab, o->seed);
        }

        engine::TrainConfig tc = o->paper_preset ? engine::paper_train_config()
                                                 : engine::TrainConfig{};
        if (o->learning_rate > 0.0) tc.learning_rate = o->learning_rate;
        if (o->epochs > 0) tc.epochs = o->epochs;
        if (o->batch_size > 0) tc.global_batch_size = o->batch_size;
        if (o->warmup_steps > 0) tc.warmup_steps = o->warmup_steps;
        if (o->weight_decay > 0.0) tc.weight_decay = o->weight_decay;
        tc.seed = o->seed;
        tc.validate();

        std::string strategy_name = str_or(o->strategy, "none");
        corpus::Dataset counterpart;
        engine::Checkpoint ref_base;
        strategies::Phase2Inputs inputs;
        inputs.phase2_dataset = &dataset;
        if (o->english_counterpart && *o->english_counterpart) {
            counterpart = corpus::load_dataset(o->english_counterpart);
            inputs.english_counterpart = &counterpart;
        }
        if (o->ref_base_ckpt && *o->ref_base_ckpt) {
            ref_base = engine::load_checkpoint(o->ref_base_ckpt);
            inputs.base = &ref_base;
        }
        inputs.phase1 = &start;

        strategies::Strategy strat = strategies::Strategy::parse(strategy_name, o->seed);
        if (strat.kind == strategies::Strategy::Kind::lf_h1 ||
            strat.kind == strategies::Strategy::Kind::lf_h2)
            strat.k = o->k;
        if (strat.kind == strategies::Strategy::Kind::lora && o->lora_rank > 0)
            strat.rank = o->lora_rank;
        auto plan = strategies::build_phase2_plan(strat, inputs);

        engine::FreezeMask manual_mask;
        if (o->freeze_mask && *o->freeze_mask) {
            require(!plan.freeze_mask,
                    "freeze_mask file conflicts with a freezing strategy");
            manual_mask = strategies::load_freeze_mask(o->freeze_mask);
            plan.freeze_mask = manual_mask;
        }

        auto result = engine::train_phase(start, plan.dataset, tc,
                                          plan.freeze_mask ? &*plan.freeze_mask : nullptr,
                                          plan.adapter ? &*plan.adapter : nullptr);
        if (o->phase_tag && *o->phase_tag) result.checkpoint.prov.phase_tag = o->phase_tag;
        engine::save_checkpoint(result.checkpoint, o->out_ckpt);
        if (o->log_csv && *o->log_csv) engine::write_train_log_csv(result.log, o->log_csv);
    });
}

cftlab_status cftlab_plan(const cftlab_plan_opts* o) {
    return guarded([&] {
        require(o != nullptr, "null plan options");
        require_arg(o->strategy, "strategy");
        require_arg(o->phase1_ckpt, "phase1_ckpt");
        require_arg(o->out_mask, "out_mask");

        std::string strat = o->strategy;
        std::string gran = str_or(o->granularity, "per-kind-per-head");
        strategies::Granularity g;
        if (gran == "layer")
            g = strategies::Granularity::layer;
        else if (gran == "per-kind-per-head")
            g = strategies::Granularity::per_kind_per_head;
        else
            fail_input("unknown granularity: " + gran + " (expected layer or per-kind-per-head)");

        engine::Checkpoint phase1 = engine::load_checkpoint(o->phase1_ckpt);
        int k = o->k > 0 ? o->k : (phase1.config.n_layers + 1) / 2;

        engine::FreezeMask mask;
        if (strat == "lf_h1") {
            mask = strategies::lf_random(phase1.config, k, o->seed);
        } else if (strat == "lf_h2") {
            require_arg(o->base_ckpt, "base_ckpt");
            engine::Checkpoint base = engine::load_checkpoint(o->base_ckpt);
            mask = strategies::lf_top_changed(base, phase1, k, g);
        } else {
            fail_input("unknown plan strategy: " + strat + " (expected lf_h1 or lf_h2)");
        }
        strategies::save_freeze_mask(mask, o->out_mask);
    });
}

cftlab_status cftlab_metrics(const cftlab_metrics_opts* o) {
    return guarded([&] {
        require(o != nullptr, "null metrics options");
        require_arg(o->dataset_a, "dataset_a");
        require_arg(o->dataset_b, "dataset_b");
        require_arg(o->out_csv, "out_csv");
        bool have_a = o->ckpt_a && *o->ckpt_a;
        bool have_b = o->ckpt_b && *o->ckpt_b;
        require(have_a == have_b, "MPD needs both checkpoints or neither");

        corpus::Dataset da = corpus::load_dataset(o->dataset_a);
        corpus::Dataset db = corpus::load_dataset(o->dataset_b);
        int dims = o->dims > 0 ? o->dims : 64;
        int ngram = o->ngram > 0 ? o->ngram : 2;
        size_t sample_n = o->sample_n > 0 ? static_cast<size_t>(o->sample_n) : 500;
        auto emb = make_embedder(str_or(o->embedder), dims, ngram, o->seed);

        similarity::SimilarityReport rep;
        rep.id_a = da.meta.id;
        rep.id_b = db.meta.id;
        rep.embedder = emb->describe();
        rep.sample_count = static_cast<int>(std::min({sample_n, da.size(), db.size()}));
        rep.des = similarity::des(da, db, *emb, sample_n, o->seed);
        if (have_a) {
            engine::Checkpoint ca = engine::load_checkpoint(o->ckpt_a);
            engine::Checkpoint cb = engine::load_checkpoint(o->ckpt_b);
            rep.mpd_raw = similarity::mpd(ca, cb, o->scalar_wise != 0);
        }
        similarity::write_similarity_report_csv({rep}, o->out_csv);
    });
}

cftlab_status cftlab_drift(const cftlab_drift_opts* o) {
    return guarded([&] {
        require(o != nullptr, "null drift options");
        require_arg(o->ckpt_a, "ckpt_a");
        require_arg(o->ckpt_b, "ckpt_b");
        require_arg(o->prompts, "prompts");
        require_arg(o->out_csv, "out_csv");

        engine::Checkpoint a = engine::load_checkpoint(o->ckpt_a);
        engine::Checkpoint b = engine::load_checkpoint(o->ckpt_b);
        corpus::Dataset prompts = corpus::load_dataset(o->prompts);
        auto pooling = o->last_token_pooling ? drift::PositionPooling::last_token
                                             : drift::PositionPooling::mean;
        auto sa = drift::capture(a, prompts, pooling);
        auto sb = drift::capture(b, prompts, pooling);
        auto norm = o->spectral_norm ? drift::MatrixNorm::spectral : drift::MatrixNorm::frobenius;
        auto rep = drift::drift_norms(sa, sb, norm);
        drift::write_drift_csv(rep, o->out_csv);
        if (o->out_svg && *o->out_svg) drift::write_drift_svg({rep}, o->out_svg);
        if (o->out_projection_csv && *o->out_projection_csv)
            drift::write_projection_csv(drift::project2d({sa, sb}), o->out_projection_csv);
    });
}

cftlab_status cftlab_eval(const cftlab_eval_opts* o) {
    return guarded([&] {
        require(o != nullptr, "null eval options");
        require_arg(o->ckpt, "ckpt");
        require_arg(o->out_csv, "out_csv");

        engine::Checkpoint model = engine::load_checkpoint(o->ckpt);
        std::vector<evalharness::EvalSuite> suites;
        int n_sets = 0;
        for (const char* p : o->eval_datasets) {
            if (!p || !*p) continue;
            n_sets++;
            corpus::Dataset ds = corpus::load_dataset(p);
            for (auto& s : evalharness::make_suites(ds)) suites.push_back(std::move(s));
        }
        require(n_sets > 0, "no eval datasets given");
        auto report = evalharness::evaluate(model, suites);
        evalharness::write_eval_report_csv(report, o->out_csv);
    });
}

cftlab_status cftlab_study(cftlab_study_opts* o) {
    return guarded([&] {
        require(o != nullptr, "null study options");
        study::ExperimentConfig cfg = (o->config_path && *o->config_path)
                                          ? study::load_experiment_config(o->config_path)
                                          : study::paper_analog_preset();
        if (o->out_dir && *o->out_dir) cfg.out_dir = o->out_dir;
        int jobs = o->jobs > 0 ? o->jobs : 1;
        auto result = study::run_study(cfg, jobs, o->verbose != 0);
        std::snprintf(o->summary_path, sizeof o->summary_path, "%s",
                      result.summary_csv.c_str());
        o->cells_run = result.cells_run;
        o->cells_skipped = result.cells_skipped;
    });
}

cftlab_status cftlab_report(const cftlab_report_opts* o) {
    return guarded([&] {
        require(o != nullptr, "null report options");
        require_arg(o->run_root, "run_root");
        require_arg(o->out_csv, "out_csv");

        fs::path summary = fs::path(o->run_root) / "summary.csv";
        require(fs::exists(summary), "no summary.csv under " + std::string(o->run_root) +
                                         "; run the study first");
        auto rows = study::read_summary(summary.string());
        require(!rows.empty(), "summary.csv is empty");

        // condition -> per-metric accumulators, preserving first-seen order
        struct Acc {
            int n = 0;
            double des = 0, mpd_n = 0, ta1 = 0, ta2 = 0, forget = 0, la1 = 0, la2 = 0,
                   layer_drift = 0, global_drift = 0;
        };
        std::vector<std::string> order;
        std::map<std::string, Acc> acc;
        for (const auto& r : rows) {
            if (!acc.count(r.condition)) order.push_back(r.condition);
            Acc& a = acc[r.condition];
            a.n++;
            a.des += r.des;
            a.mpd_n += r.mpd_normalized;
            a.ta1 += r.ta_phase1;
            a.ta2 += r.ta_phase2;
            a.forget += r.forgetting;
            a.la1 += r.la_phase1;
            a.la2 += r.la_phase2;
            a.layer_drift += r.mean_layer_drift;
            a.global_drift += r.global_cov_drift;
        }
        std::FILE* out = std::fopen(o->out_csv, "w");
        require(out != nullptr, "cannot write report: " + std::string(o->out_csv));
        std::fprintf(out,
                     "condition,n_seeds,des,mpd_normalized,ta_phase1,ta_phase2,forgetting,"
                     "la_phase1,la_phase2,mean_layer_drift,global_cov_drift\n");
        for (const auto& name : order) {
            const Acc& a = acc.at(name);
            double n = a.n;
            std::fprintf(out, "%s,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                         name.c_str(), a.n, a.des / n, a.mpd_n / n, a.ta1 / n, a.ta2 / n,
                         a.forget / n, a.la1 / n, a.la2 / n, a.layer_drift / n,
                         a.global_drift / n);
        }
        std::fclose(out);
    });
}

}  // extern "C"
