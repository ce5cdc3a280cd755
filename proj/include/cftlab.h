/* C API for the continual fine-tuning laboratory. All heavy state lives
 * behind opaque handles; every call returns a status code and leaves a
 * human-readable message in cftlab_last_error() on failure. */
#ifndef CFTLAB_H
#define CFTLAB_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
    CFTLAB_OK = 0,
    CFTLAB_ERR_INVALID = 2, /* caller error: bad arguments or malformed inputs */
    CFTLAB_ERR_INTERNAL = 3 /* internal invariant violation */
} cftlab_status;

/* message for the most recent failure on this thread */
const char* cftlab_last_error(void);

typedef struct cftlab_checkpoint cftlab_checkpoint;
typedef struct cftlab_dataset cftlab_dataset;

/* ---- opaque handles ---- */
cftlab_status cftlab_checkpoint_open(const char* path, cftlab_checkpoint** out);
void cftlab_checkpoint_free(cftlab_checkpoint* ckpt);
cftlab_status cftlab_checkpoint_save(const cftlab_checkpoint* ckpt, const char* path);
/* writes a one-line description (config + provenance) into buf */
cftlab_status cftlab_checkpoint_info(const cftlab_checkpoint* ckpt, char* buf, size_t buflen);

cftlab_status cftlab_dataset_open(const char* path, cftlab_dataset** out);
void cftlab_dataset_free(cftlab_dataset* ds);
long cftlab_dataset_size(const cftlab_dataset* ds);

/* ---- benchmark generation ---- */
/* spec_path may be NULL for defaults; writes the eight benchmark files
 * (phase1_A/B, phase2_multi_A/B, english counterpart, eval_TA/LA,
 * drift_prompts) plus spec.txt into out_dir */
cftlab_status cftlab_gen(const char* spec_path, const char* out_dir);

/* ---- training ---- */
typedef struct {
    const char* base_ckpt;   /* NULL: initialize a fresh model */
    const char* dataset;     /* training dataset (phase-2 dataset when a strategy is set) */
    const char* out_ckpt;
    const char* log_csv;     /* optional */
    const char* phase_tag;   /* optional provenance tag */

    /* strategy wiring; strategy NULL or "none" trains plainly */
    const char* strategy;            /* none / LF_H1 / LF_H2 / GR_5 / GR_10 / ER_10 / LORA */
    const char* english_counterpart; /* GR / ER */
    const char* ref_base_ckpt;       /* LF_H2: checkpoint before phase-1 training */
    const char* freeze_mask;         /* optional: manual mask file */
    int k;                           /* LF_H1 / LF_H2; 0 = desk default */
    int lora_rank;                   /* LORA; 0 = default 4 */

    /* model shape, used only when base_ckpt is NULL */
    int n_layers, n_heads, d_model, d_ff, max_seq_len;
    const char* vocab_datasets[8]; /* extra datasets for vocabulary building */

    /* optimizer; zero-initialized fields fall back to desk defaults */
    double learning_rate;
    int epochs, batch_size, warmup_steps;
    double weight_decay;
    uint64_t seed;
    int paper_preset; /* nonzero: Table-A1 hyperparameters */
} cftlab_train_opts;
cftlab_status cftlab_train(const cftlab_train_opts* opts);

/* ---- freeze-mask planning ---- */
typedef struct {
    const char* strategy;    /* lf_h1 or lf_h2 */
    const char* base_ckpt;   /* lf_h2 */
    const char* phase1_ckpt;
    int k;                   /* 0 = desk default */
    const char* granularity; /* "layer" or "per-kind-per-head" */
    const char* out_mask;
    uint64_t seed;
} cftlab_plan_opts;
cftlab_status cftlab_plan(const cftlab_plan_opts* opts);

/* ---- similarity metrics ---- */
typedef struct {
    const char* dataset_a;
    const char* dataset_b;
    const char* ckpt_a; /* optional pair for MPD */
    const char* ckpt_b;
    const char* embedder; /* "task-signature", "hashed-ngram", "precomputed:<path>" */
    int dims;             /* 0 = 64 */
    int ngram;            /* 0 = 2 */
    int sample_n;         /* 0 = 500 */
    int scalar_wise;      /* MPD granularity flag */
    uint64_t seed;
    const char* out_csv;
} cftlab_metrics_opts;
cftlab_status cftlab_metrics(const cftlab_metrics_opts* opts);

/* ---- activation drift ---- */
typedef struct {
    const char* ckpt_a;
    const char* ckpt_b;
    const char* prompts;
    const char* out_csv;
    const char* out_svg;            /* optional */
    const char* out_projection_csv; /* optional */
    int last_token_pooling;         /* default: mean over positions */
    int spectral_norm;              /* default: Frobenius */
} cftlab_drift_opts;
cftlab_status cftlab_drift(const cftlab_drift_opts* opts);

/* ---- evaluation ---- */
typedef struct {
    const char* ckpt;
    const char* eval_datasets[8];
    const char* out_csv;
} cftlab_eval_opts;
cftlab_status cftlab_eval(const cftlab_eval_opts* opts);

/* ---- full study ---- */
typedef struct {
    const char* config_path; /* NULL: paper-analog preset */
    const char* out_dir;     /* optional override */
    int jobs;                /* 0 = 1 */
    int verbose;
    /* outputs */
    char summary_path[1024];
    int cells_run;
    int cells_skipped;
} cftlab_study_opts;
cftlab_status cftlab_study(cftlab_study_opts* opts);

/* ---- summary report ---- */
/* condition-by-strategy mean table from an existing study run directory */
typedef struct {
    const char* run_root;
    const char* out_csv;
} cftlab_report_opts;
cftlab_status cftlab_report(const cftlab_report_opts* opts);

#ifdef __cplusplus
}
#endif

#endif /* CFTLAB_H */
