#pragma once

#include <map>
#include <string>
#include <vector>

#include "cftlab/corpus.hpp"
#include "cftlab/engine.hpp"

namespace cftlab::evalharness {

struct EvalSuite {
    std::string id;
    std::string language;
    std::string task_family;
    corpus::Dataset examples;
    std::string primary_metric = "exact_match";
};

// Group an eval dataset into one suite per (language, task_family).
std::vector<EvalSuite> make_suites(const corpus::Dataset& eval_set);

struct SuiteScores {
    double exact_match = 0.0;
    double token_f1 = 0.0;
    double rouge1 = 0.0;
};

struct EvalReport {
    std::string model_id;
    std::map<std::string, SuiteScores> per_suite;      // suite id -> scores
    std::map<std::string, std::string> suite_language; // suite id -> language tag
    double ta = 0.0;                                   // mean over L0 suites
    double la = 0.0;                                   // mean over L1..Lk suites
    std::map<std::string, double> la_per_language;
    std::string decode;
    std::string timestamp;
};

double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold);
double rouge1(const std::string& pred, const std::string& gold);

EvalReport evaluate(const engine::Checkpoint& model, const std::vector<EvalSuite>& suites,
                    const engine::DecodeConfig& decode = {});

struct DeltaRow {
    std::string suite;
    double before = 0.0, after = 0.0, delta = 0.0;
    std::string classification;  // "improve" / "decline" / "flat"
};

struct CompareResult {
    std::vector<DeltaRow> rows;     // per suite, then TA/LA aggregate rows
    double forgetting = 0.0;        // TA(before) - TA(after)
};

CompareResult compare(const EvalReport& phase1, const EvalReport& phase2);

void write_eval_report_csv(const EvalReport& r, const std::string& path);
void write_compare_csv(const CompareResult& c, const std::string& path);
void write_compare_svg(const EvalReport& phase1, const EvalReport& phase2,
                       const std::string& path);

}  // namespace cftlab::evalharness
