#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cftlab::corpus {

struct Example {
    std::string instruction;
    std::string input;       // may be empty
    std::string output;
    std::string language;    // "L0" (English analog) .. "Lk"
    std::string task_family;
    int64_t template_id = 0;
};

struct DatasetMeta {
    std::string id;
    uint64_t seed = 0;
    std::string generator_version;
    std::map<std::string, int64_t> language_histogram;
    std::map<std::string, int64_t> family_histogram;
    std::string provenance;  // "", "GR", "ER", "mix(...)"
    int64_t empty_output_count = 0;
};

struct Dataset {
    DatasetMeta meta;
    std::vector<Example> examples;

    size_t size() const { return examples.size(); }
    void recompute_histograms();
};

// Task families. Set A is the Alpaca-analog, set B the Instruct-analog.
inline const std::vector<std::string>& families_a() {
    static const std::vector<std::string> f = {"copy", "reverse", "kv-lookup-QA"};
    return f;
}
inline const std::vector<std::string>& families_b() {
    static const std::vector<std::string> f = {"sort-digits", "first-m-extract-summarize"};
    return f;
}
inline const std::vector<std::string>& all_families() {
    static const std::vector<std::string> f = {
        "copy", "reverse", "kv-lookup-QA", "sort-digits", "first-m-extract-summarize"};
    return f;
}

struct BenchmarkSpec {
    int n_languages = 2;          // synthetic languages L1..Lk in addition to L0
    int tasks_per_family = 100;   // train templates per family
    int eval_per_family = 30;     // eval templates per family
    int drift_prompt_count = 16;
    uint64_t seed = 0;
    double scaffold_l0_ratio = 0.0;  // fraction of instruction scaffold left in L0

    void validate() const;
    std::vector<std::string> language_tags() const;  // L0..Lk
};

struct BenchmarkSuite {
    Dataset phase1_a;
    Dataset phase1_b;
    Dataset phase2_multi_a;
    Dataset phase2_multi_b;
    Dataset english_counterpart_of_phase2;
    Dataset eval_ta;
    Dataset eval_la;
    Dataset drift_prompts;
};

BenchmarkSuite synth_generate(const BenchmarkSpec& spec);

BenchmarkSpec load_benchmark_spec(const std::string& path);
void save_benchmark_spec(const BenchmarkSpec& spec, const std::string& path);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// -------- vocabulary --------

// id 0..3 reserved
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kUnkId = 3;

struct Vocab {
    std::vector<std::string> words;  // index = id, includes reserved markers
    std::unordered_map<std::string, int> index;

    int size() const { return static_cast<int>(words.size()); }
    int id_of(const std::string& w) const {
        auto it = index.find(w);
        return it == index.end() ? kUnkId : it->second;
    }
    const std::string& word(int id) const { return words.at(static_cast<size_t>(id)); }
};

Vocab build_vocab(const std::vector<const Dataset*>& datasets);

struct TokenizeResult {
    std::vector<int> ids;
    int64_t unk_count = 0;
};

std::vector<std::string> split_whitespace(const std::string& text);
TokenizeResult tokenize(const Vocab& vocab, const std::string& text);
std::string detokenize(const Vocab& vocab, const std::vector<int>& ids);

// Prompt text for an example: instruction plus input, nothing else.
std::string prompt_text(const Example& ex);

// -------- replay mixing --------

// All of `primary` plus ceil(fraction*|primary|) examples sampled from
// `replay` without replacement, shuffled with `seed`. With `substitute`,
// the sampled replay examples replace an equal number of primary examples
// instead of being appended.
Dataset mix(const Dataset& primary, const Dataset& replay, double fraction,
            uint64_t seed, bool substitute = false);

}  // namespace cftlab::corpus
