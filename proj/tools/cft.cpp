// cft — command-line front end for the continual fine-tuning laboratory.
// Talks to the core exclusively through the C API in cftlab.h.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cftlab.h"

namespace {

int finish(cftlab_status st, const char* what) {
    if (st == CFTLAB_OK) return 0;
    std::fprintf(stderr, "cft %s: %s\n", what, cftlab_last_error());
    return static_cast<int>(st);
}

// --out flag falls back to the CFTLAB_OUT environment variable.
std::string default_out() {
    const char* env = std::getenv("CFTLAB_OUT");
    return env ? env : "";
}

void fill_paths(const char* dst[8], const std::vector<std::string>& src) {
    for (size_t i = 0; i < 8 && i < src.size(); i++) dst[i] = src[i].c_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual fine-tuning laboratory"};
    app.require_subcommand(1);

    std::string out_dir = default_out();
    uint64_t seed = 0;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();
    app.add_option("--out", out_dir, "output directory (or CFTLAB_OUT)");

    // ---- gen ----
    auto* gen = app.add_subcommand("gen", "generate the synthetic benchmark");
    std::string gen_spec;
    gen->add_option("--spec", gen_spec, "benchmark spec file (defaults when omitted)");

    // ---- train ----
    auto* train = app.add_subcommand("train", "train one phase");
    cftlab_train_opts t{};
    std::string t_base, t_data, t_out, t_log, t_tag, t_strategy = "none";
    std::string t_counterpart, t_refbase, t_mask;
    std::vector<std::string> t_vocab;
    double t_lr = 0.0, t_wd = 0.0;
    int t_epochs = 0, t_batch = 0, t_warmup = 0, t_k = 0, t_rank = 0;
    int t_layers = 0, t_heads = 0, t_dmodel = 0, t_dff = 0, t_seqlen = 0;
    bool t_paper = false;
    train->add_option("--base", t_base, "starting checkpoint (omit to initialize fresh)");
    train->add_option("--data", t_data, "training dataset")->required();
    train->add_option("--out-ckpt", t_out, "output checkpoint")->required();
    train->add_option("--log", t_log, "training log CSV");
    train->add_option("--tag", t_tag, "phase tag recorded in the checkpoint");
    train->add_option("--strategy", t_strategy,
                      "none|LF_H1|LF_H2|GR_5|GR_10|ER_10|LORA")->capture_default_str();
    train->add_option("--counterpart", t_counterpart, "English counterpart dataset (GR/ER)");
    train->add_option("--ref-base", t_refbase, "pre-phase-1 checkpoint (LF_H2)");
    train->add_option("--freeze-mask", t_mask, "manual freeze-mask file");
    train->add_option("--k", t_k, "freeze budget (layers or per-kind regions)");
    train->add_option("--lora-rank", t_rank, "adapter rank");
    train->add_option("--vocab-data", t_vocab, "extra datasets for vocabulary building");
    train->add_option("--layers", t_layers, "model depth for fresh init");
    train->add_option("--heads", t_heads, "attention heads for fresh init");
    train->add_option("--d-model", t_dmodel, "model width for fresh init");
    train->add_option("--d-ff", t_dff, "feed-forward width for fresh init");
    train->add_option("--max-seq-len", t_seqlen, "context length for fresh init");
    train->add_option("--lr", t_lr, "learning rate");
    train->add_option("--epochs", t_epochs, "epochs");
    train->add_option("--batch", t_batch, "global batch size");
    train->add_option("--warmup", t_warmup, "warmup steps");
    train->add_option("--weight-decay", t_wd, "decoupled weight decay");
    train->add_flag("--preset-paper", t_paper, "use the published hyperparameter table");

    // ---- plan ----
    auto* plan = app.add_subcommand("plan", "compute a layer-freezing mask");
    std::string p_strategy, p_base, p_phase1, p_gran = "per-kind-per-head", p_out;
    int p_k = 0;
    plan->add_option("--strategy", p_strategy, "lf_h1|lf_h2")->required();
    plan->add_option("--base", p_base, "pre-phase-1 checkpoint (lf_h2)");
    plan->add_option("--phase1", p_phase1, "phase-1 checkpoint")->required();
    plan->add_option("--k", p_k, "freeze budget");
    plan->add_option("--granularity", p_gran, "layer|per-kind-per-head")->capture_default_str();
    plan->add_option("--out-mask", p_out, "mask file to write")->required();

    // ---- metrics ----
    auto* metrics = app.add_subcommand("metrics", "dataset similarity and parameter distance");
    std::string m_da, m_db, m_ca, m_cb, m_emb = "task-signature", m_csv;
    int m_dims = 0, m_ngram = 0, m_sample = 0;
    bool m_scalar = false;
    metrics->add_option("--data-a", m_da, "first dataset")->required();
    metrics->add_option("--data-b", m_db, "second dataset")->required();
    metrics->add_option("--ckpt-a", m_ca, "first checkpoint (enables parameter distance)");
    metrics->add_option("--ckpt-b", m_cb, "second checkpoint");
    metrics->add_option("--embedder", m_emb,
                        "task-signature|hashed-ngram|precomputed:<path>")->capture_default_str();
    metrics->add_option("--dims", m_dims, "embedding dimensionality");
    metrics->add_option("--ngram", m_ngram, "n-gram order for hashed-ngram");
    metrics->add_option("--sample", m_sample, "examples sampled per dataset");
    metrics->add_flag("--scalar-wise", m_scalar, "parameter distance over scalars, not tensors");
    metrics->add_option("--csv", m_csv, "output CSV")->required();

    // ---- drift ----
    auto* drift = app.add_subcommand("drift", "activation drift between two checkpoints");
    std::string d_ca, d_cb, d_prompts, d_csv, d_svg, d_proj;
    bool d_last = false, d_spectral = false;
    drift->add_option("--ckpt-a", d_ca, "first checkpoint")->required();
    drift->add_option("--ckpt-b", d_cb, "second checkpoint")->required();
    drift->add_option("--prompts", d_prompts, "drift prompt dataset")->required();
    drift->add_option("--csv", d_csv, "output CSV")->required();
    drift->add_option("--svg", d_svg, "per-layer drift chart");
    drift->add_option("--projection-csv", d_proj, "2-D projection of layer activations");
    drift->add_flag("--last-token", d_last, "pool the last position instead of the mean");
    drift->add_flag("--spectral", d_spectral, "spectral norm instead of Frobenius");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "score a checkpoint on eval suites");
    std::string e_ckpt, e_csv;
    std::vector<std::string> e_data;
    eval->add_option("--ckpt", e_ckpt, "checkpoint")->required();
    eval->add_option("--data", e_data, "eval datasets (repeatable)")->required();
    eval->add_option("--csv", e_csv, "output CSV")->required();

    // ---- study ----
    auto* studyc = app.add_subcommand("study", "run the full condition-by-seed experiment");
    std::string s_config;
    std::string s_preset;
    int s_jobs = 1;
    bool s_verbose = false;
    studyc->add_option("--config", s_config, "experiment config file");
    studyc->add_option("--preset", s_preset, "named preset (paper-analog)");
    studyc->add_option("--jobs", s_jobs, "parallel cells")->capture_default_str();
    studyc->add_flag("--verbose", s_verbose, "per-cell progress on stderr");

    // ---- report ----
    auto* report = app.add_subcommand("report", "condition-mean table from a finished study");
    std::string r_root, r_csv;
    report->add_option("--run", r_root, "study run directory (contains summary.csv)")->required();
    report->add_option("--csv", r_csv, "output CSV")->required();

    // ---- info ----
    auto* info = app.add_subcommand("info", "describe a checkpoint");
    std::string i_ckpt;
    info->add_option("ckpt", i_ckpt, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (gen->parsed()) {
        if (out_dir.empty()) {
            std::fprintf(stderr, "cft gen: --out (or CFTLAB_OUT) is required\n");
            return 2;
        }
        return finish(cftlab_gen(gen_spec.empty() ? nullptr : gen_spec.c_str(),
                                 out_dir.c_str()),
                      "gen");
    }

    if (train->parsed()) {
        t.base_ckpt = t_base.empty() ? nullptr : t_base.c_str();
        t.dataset = t_data.c_str();
        t.out_ckpt = t_out.c_str();
        t.log_csv = t_log.empty() ? nullptr : t_log.c_str();
        t.phase_tag = t_tag.empty() ? nullptr : t_tag.c_str();
        t.strategy = t_strategy.c_str();
        t.english_counterpart = t_counterpart.empty() ? nullptr : t_counterpart.c_str();
        t.ref_base_ckpt = t_refbase.empty() ? nullptr : t_refbase.c_str();
        t.freeze_mask = t_mask.empty() ? nullptr : t_mask.c_str();
        t.k = t_k;
        t.lora_rank = t_rank;
        fill_paths(t.vocab_datasets, t_vocab);
        t.n_layers = t_layers;
        t.n_heads = t_heads;
        t.d_model = t_dmodel;
        t.d_ff = t_dff;
        t.max_seq_len = t_seqlen;
        t.learning_rate = t_lr;
        t.epochs = t_epochs;
        t.batch_size = t_batch;
        t.warmup_steps = t_warmup;
        t.weight_decay = t_wd;
        t.seed = seed;
        t.paper_preset = t_paper ? 1 : 0;
        return finish(cftlab_train(&t), "train");
    }

    if (plan->parsed()) {
        cftlab_plan_opts p{};
        p.strategy = p_strategy.c_str();
        p.base_ckpt = p_base.empty() ? nullptr : p_base.c_str();
        p.phase1_ckpt = p_phase1.c_str();
        p.k = p_k;
        p.granularity = p_gran.c_str();
        p.out_mask = p_out.c_str();
        p.seed = seed;
        return finish(cftlab_plan(&p), "plan");
    }

    if (metrics->parsed()) {
        cftlab_metrics_opts m{};
        m.dataset_a = m_da.c_str();
        m.dataset_b = m_db.c_str();
        m.ckpt_a = m_ca.empty() ? nullptr : m_ca.c_str();
        m.ckpt_b = m_cb.empty() ? nullptr : m_cb.c_str();
        m.embedder = m_emb.c_str();
        m.dims = m_dims;
        m.ngram = m_ngram;
        m.sample_n = m_sample;
        m.scalar_wise = m_scalar ? 1 : 0;
        m.seed = seed;
        m.out_csv = m_csv.c_str();
        return finish(cftlab_metrics(&m), "metrics");
    }

    if (drift->parsed()) {
        cftlab_drift_opts d{};
        d.ckpt_a = d_ca.c_str();
        d.ckpt_b = d_cb.c_str();
        d.prompts = d_prompts.c_str();
        d.out_csv = d_csv.c_str();
        d.out_svg = d_svg.empty() ? nullptr : d_svg.c_str();
        d.out_projection_csv = d_proj.empty() ? nullptr : d_proj.c_str();
        d.last_token_pooling = d_last ? 1 : 0;
        d.spectral_norm = d_spectral ? 1 : 0;
        return finish(cftlab_drift(&d), "drift");
    }

    if (eval->parsed()) {
        cftlab_eval_opts e{};
        e.ckpt = e_ckpt.c_str();
        fill_paths(e.eval_datasets, e_data);
        e.out_csv = e_csv.c_str();
        return finish(cftlab_eval(&e), "eval");
    }

    if (studyc->parsed()) {
        if (!s_preset.empty() && s_preset != "paper-analog") {
            std::fprintf(stderr, "cft study: unknown preset '%s' (have: paper-analog)\n",
                         s_preset.c_str());
            return 2;
        }
        if (!s_preset.empty() && !s_config.empty()) {
            std::fprintf(stderr, "cft study: --preset and --config are mutually exclusive\n");
            return 2;
        }
        cftlab_study_opts s{};
        s.config_path = s_config.empty() ? nullptr : s_config.c_str();
        s.out_dir = out_dir.empty() ? nullptr : out_dir.c_str();
        s.jobs = s_jobs;
        s.verbose = s_verbose ? 1 : 0;
        int code = finish(cftlab_study(&s), "study");
        if (code == 0) {
            std::printf("summary: %s (cells run: %d, reused: %d)\n", s.summary_path,
                        s.cells_run, s.cells_skipped);
        }
        return code;
    }

    if (report->parsed()) {
        cftlab_report_opts r{};
        r.run_root = r_root.c_str();
        r.out_csv = r_csv.c_str();
        return finish(cftlab_report(&r), "report");
    }

    if (info->parsed()) {
        cftlab_checkpoint* h = nullptr;
        cftlab_status st = cftlab_checkpoint_open(i_ckpt.c_str(), &h);
        if (st != CFTLAB_OK) return finish(st, "info");
        char buf[512];
        st = cftlab_checkpoint_info(h, buf, sizeof buf);
        cftlab_checkpoint_free(h);
        if (st != CFTLAB_OK) return finish(st, "info");
        std::printf("%s\n", buf);
        return 0;
    }

    return 2;
}
