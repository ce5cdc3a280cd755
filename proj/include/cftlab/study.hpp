#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cftlab/corpus.hpp"
#include "cftlab/engine.hpp"

namespace cftlab::study {

struct Condition {
    std::string phase1;    // "A" or "B"
    std::string strategy;  // none / LF_H1 / LF_H2 / GR_5 / GR_10 / ER_10 / LORA

    std::string name() const { return phase1 + "-" + strategy; }
};

struct ExperimentConfig {
    corpus::BenchmarkSpec bench;
    engine::ModelConfig model;
    engine::TrainConfig train;  // applies to both phases
    int phase2_epochs = 0;      // 0 = same as train.epochs
    double phase2_lr = 0.0;     // 0 = same as train.learning_rate
    std::vector<Condition> conditions;
    std::vector<uint64_t> seeds;
    std::string out_dir = "runs";

    void validate() const;
};

// Full Table-3-style condition matrix at desk scale.
ExperimentConfig paper_analog_preset();

ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::string& path);

// Stable under field reordering in the config file: hashes a canonical
// serialization, not the file bytes.
std::string config_hash(const ExperimentConfig& cfg);

struct StudyResult {
    std::string run_root;     // <out_dir>/<config-hash>
    std::string summary_csv;
    int cells_run = 0;
    int cells_skipped = 0;
};

StudyResult run_study(const ExperimentConfig& cfg, int jobs = 1, bool verbose = false);

// Per-cell summary row, parsed back from summary.csv.
struct SummaryRow {
    std::string condition;
    uint64_t seed;
    double des, mpd_raw, mpd_normalized;
    double ta_phase1, ta_phase2, forgetting;
    double la_phase1, la_phase2;
    double mean_layer_drift, global_cov_drift;
};

std::vector<SummaryRow> read_summary(const std::string& summary_csv);

}  // namespace cftlab::study
