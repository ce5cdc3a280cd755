#include "cftlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cftlab/error.hpp"
#include "cftlab/rng.hpp"
#include "json.hpp"

namespace cftlab::corpus {

namespace {

constexpr const char* kGeneratorVersion = "cftlab-bench-1";

// L0 surface alphabets
std::vector<std::string> word_alphabet() {
    std::vector<std::string> w;
    for (int i = 0; i < 16; ++i) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "w%02d", i);
        w.emplace_back(buf);
    }
    return w;
}

std::vector<std::string> digit_alphabet() {
    std::vector<std::string> d;
    for (int i = 0; i < 10; ++i) d.push_back(std::to_string(i));
    return d;
}

std::vector<std::string> key_alphabet() {
    std::vector<std::string> k;
    for (int i = 0; i < 8; ++i) k.push_back("k" + std::to_string(i));
    return k;
}

std::string join(const std::vector<std::string>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i];
    }
    return out;
}

// Surface-token remap for a synthetic language. Language j > 0 suffixes every
// token, which keeps the per-language alphabets disjoint and the map bijective.
std::string remap_token(const std::string& tok, int lang) {
    if (lang == 0) return tok;
    return tok + "@L" + std::to_string(lang);
}

std::string remap_text(const std::string& text, int lang, int keep_prefix = 0) {
    if (lang == 0) return text;
    auto toks = split_whitespace(text);
    for (size_t i = 0; i < toks.size(); ++i) {
        if (static_cast<int>(i) < keep_prefix) continue;
        toks[i] = remap_token(toks[i], lang);
    }
    return join(toks);
}

// Template content in L0. The trailing "->" marks end of prompt.
Example make_l0_example(const std::string& family, int64_t template_id, uint64_t spec_seed) {
    uint64_t h = fnv1a_str(family, fnv1a(&template_id, sizeof template_id,
                                         fnv1a(&spec_seed, sizeof spec_seed)));
    Rng rng(h);
    static const std::vector<std::string> words = word_alphabet();
    static const std::vector<std::string> digits = digit_alphabet();
    static const std::vector<std::string> keys = key_alphabet();

    Example ex;
    ex.language = "L0";
    ex.task_family = family;
    ex.template_id = template_id;

    if (family == "copy" || family == "reverse") {
        size_t len = 3 + rng.uniform(2);
        std::vector<std::string> content;
        for (size_t i = 0; i < len; ++i) content.push_back(words[rng.uniform(words.size())]);
        ex.instruction = family == "copy" ? "copy the tokens" : "reverse the tokens";
        ex.input = join(content) + " ->";
        if (family == "reverse") std::reverse(content.begin(), content.end());
        ex.output = join(content);
    } else if (family == "kv-lookup-QA") {
        size_t pairs = 2 + rng.uniform(2);
        auto key_idx = rng.sample_without_replacement(keys.size(), pairs);
        std::vector<std::string> kv;
        std::vector<std::string> vals;
        for (size_t i = 0; i < pairs; ++i) {
            kv.push_back(keys[key_idx[i]]);
            vals.push_back(words[rng.uniform(words.size())]);
            kv.push_back(vals.back());
        }
        size_t target = rng.uniform(pairs);
        ex.instruction = "lookup key " + keys[key_idx[target]];
        ex.input = join(kv) + " ->";
        ex.output = vals[target];
    } else if (family == "sort-digits") {
        size_t len = 3 + rng.uniform(4);
        std::vector<std::string> ds;
        for (size_t i = 0; i < len; ++i) ds.push_back(digits[rng.uniform(digits.size())]);
        ex.instruction = "sort the digits";
        ex.input = join(ds) + " ->";
        std::sort(ds.begin(), ds.end());
        ex.output = join(ds);
    } else if (family == "first-m-extract-summarize") {
        size_t len = 4 + rng.uniform(3);
        size_t m = 1 + rng.uniform(3);
        std::vector<std::string> content;
        for (size_t i = 0; i < len; ++i) content.push_back(words[rng.uniform(words.size())]);
        ex.instruction = "extract first " + std::to_string(m);
        ex.input = join(content) + " ->";
        content.resize(m);
        ex.output = join(content);
    } else {
        fail_internal("unknown task family: " + family);
    }
    return ex;
}

Example render(const Example& l0, int lang, double scaffold_l0_ratio) {
    Example ex = l0;
    if (lang > 0) {
        auto instr_toks = split_whitespace(l0.instruction);
        int keep = static_cast<int>(
            std::ceil(scaffold_l0_ratio * static_cast<double>(instr_toks.size())));
        ex.instruction = remap_text(l0.instruction, lang, keep);
        ex.input = remap_text(l0.input, lang);
        ex.output = remap_text(l0.output, lang);
        ex.language = "L" + std::to_string(lang);
    }
    return ex;
}

bool valid_language_tag(const std::string& tag) {
    if (tag.size() < 2 || tag[0] != 'L') return false;
    for (size_t i = 1; i < tag.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(tag[i]))) return false;
    return true;
}

}  // namespace

void Dataset::recompute_histograms() {
    meta.language_histogram.clear();
    meta.family_histogram.clear();
    for (const auto& ex : examples) {
        meta.language_histogram[ex.language]++;
        meta.family_histogram[ex.task_family]++;
    }
}

void BenchmarkSpec::validate() const {
    require(n_languages >= 1, "benchmark spec: need at least one synthetic language");
    require(tasks_per_family >= 1, "benchmark spec: tasks_per_family must be >= 1");
    require(eval_per_family >= 1, "benchmark spec: eval_per_family must be >= 1");
    require(drift_prompt_count >= 2, "benchmark spec: drift_prompt_count must be >= 2");
    require(scaffold_l0_ratio >= 0.0 && scaffold_l0_ratio <= 1.0,
            "benchmark spec: scaffold_l0_ratio out of [0,1]");
    int64_t total = static_cast<int64_t>(tasks_per_family) + eval_per_family + drift_prompt_count;
    require(total <= 1'000'000, "benchmark spec: split sizes exceed template capacity");
}

std::vector<std::string> BenchmarkSpec::language_tags() const {
    std::vector<std::string> tags;
    for (int i = 0; i <= n_languages; ++i) tags.push_back("L" + std::to_string(i));
    return tags;
}

BenchmarkSuite synth_generate(const BenchmarkSpec& spec) {
    spec.validate();
    BenchmarkSuite out;
    const int T = spec.tasks_per_family;
    const int E = spec.eval_per_family;
    const int k = spec.n_languages;
    const std::string seed_tag = ".s" + std::to_string(spec.seed);

    auto init_meta = [&](Dataset& ds, const std::string& id) {
        ds.meta.id = id + seed_tag;
        ds.meta.seed = spec.seed;
        ds.meta.generator_version = kGeneratorVersion;
    };
    init_meta(out.phase1_a, "phase1_A");
    init_meta(out.phase1_b, "phase1_B");
    init_meta(out.phase2_multi_a, "phase2_multi_A");
    init_meta(out.phase2_multi_b, "phase2_multi_B");
    init_meta(out.english_counterpart_of_phase2, "phase2_english_counterpart");
    init_meta(out.eval_ta, "eval_TA");
    init_meta(out.eval_la, "eval_LA");
    init_meta(out.drift_prompts, "drift_prompts");

    // Phase-1 training sets, templates [0, T)
    for (const auto& fam : families_a())
        for (int t = 0; t < T; ++t)
            out.phase1_a.examples.push_back(make_l0_example(fam, t, spec.seed));
    for (const auto& fam : families_b())
        for (int t = 0; t < T; ++t)
            out.phase1_b.examples.push_back(make_l0_example(fam, t, spec.seed));

    // Phase-2 multilingual rendering of the family-A tasks, one language per
    // template, round-robin over L1..Lk for equal proportions. The English
    // counterpart is the same example kept in L0, in the same order.
    int fam_idx = 0;
    for (const auto& fam : families_a()) {
        for (int t = 0; t < T; ++t) {
            const Example& l0 = out.phase1_a.examples[static_cast<size_t>(fam_idx * T + t)];
            int lang = 1 + (fam_idx * T + t) % k;
            out.phase2_multi_a.examples.push_back(render(l0, lang, spec.scaffold_l0_ratio));
            out.english_counterpart_of_phase2.examples.push_back(l0);
        }
        ++fam_idx;
    }

    // Multilingual rendering of the family-B tasks, same round-robin scheme
    fam_idx = 0;
    for (const auto& fam : families_b()) {
        for (int t = 0; t < T; ++t) {
            const Example& l0 = out.phase1_b.examples[static_cast<size_t>(fam_idx * T + t)];
            int lang = 1 + (fam_idx * T + t) % k;
            out.phase2_multi_b.examples.push_back(render(l0, lang, spec.scaffold_l0_ratio));
        }
        ++fam_idx;
    }

    // Eval splits, templates [T, T+E), disjoint from training by template_id
    for (const auto& fam : all_families())
        for (int t = T; t < T + E; ++t)
            out.eval_ta.examples.push_back(make_l0_example(fam, t, spec.seed));
    for (const auto& fam : families_a())
        for (int t = T; t < T + E; ++t) {
            Example l0 = make_l0_example(fam, t, spec.seed);
            for (int lang = 1; lang <= k; ++lang)
                out.eval_la.examples.push_back(render(l0, lang, spec.scaffold_l0_ratio));
        }

    // Drift prompts, templates [T+E, ...), all families round-robin, L0
    const auto& fams = all_families();
    for (int i = 0; i < spec.drift_prompt_count; ++i) {
        const auto& fam = fams[static_cast<size_t>(i) % fams.size()];
        out.drift_prompts.examples.push_back(
            make_l0_example(fam, T + E + i / static_cast<int>(fams.size()), spec.seed));
    }

    for (Dataset* ds : {&out.phase1_a, &out.phase1_b, &out.phase2_multi_a, &out.phase2_multi_b,
                        &out.english_counterpart_of_phase2, &out.eval_ta, &out.eval_la,
                        &out.drift_prompts})
        ds->recompute_histograms();
    return out;
}

// -------- spec file (key value lines) --------

BenchmarkSpec load_benchmark_spec(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open benchmark spec: " + path);
    BenchmarkSpec spec;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto toks = split_whitespace(line);
        if (toks.empty() || toks[0][0] == '#') continue;
        require(toks.size() == 2, "benchmark spec " + path + ":" + std::to_string(lineno) +
                                      ": expected 'key value'");
        const std::string& key = toks[0];
        const std::string& val = toks[1];
        try {
            if (key == "languages") spec.n_languages = std::stoi(val);
            else if (key == "tasks_per_family") spec.tasks_per_family = std::stoi(val);
            else if (key == "eval_per_family") spec.eval_per_family = std::stoi(val);
            else if (key == "drift_prompts") spec.drift_prompt_count = std::stoi(val);
            else if (key == "seed") spec.seed = std::stoull(val);
            else if (key == "scaffold_l0_ratio") spec.scaffold_l0_ratio = std::stod(val);
            else fail_input("benchmark spec " + path + ":" + std::to_string(lineno) +
                            ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            fail_input("benchmark spec " + path + ":" + std::to_string(lineno) +
                       ": bad value for '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

void save_benchmark_spec(const BenchmarkSpec& spec, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot write benchmark spec: " + path);
    out << "languages " << spec.n_languages << "\n"
        << "tasks_per_family " << spec.tasks_per_family << "\n"
        << "eval_per_family " << spec.eval_per_family << "\n"
        << "drift_prompts " << spec.drift_prompt_count << "\n"
        << "seed " << spec.seed << "\n"
        << "scaffold_l0_ratio " << spec.scaffold_l0_ratio << "\n";
}

// -------- dataset I/O --------

using nlohmann::json;

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write dataset: " + path);
    json meta;
    meta["id"] = ds.meta.id;
    meta["seed"] = ds.meta.seed;
    meta["generator_version"] = ds.meta.generator_version;
    meta["language_histogram"] = ds.meta.language_histogram;
    meta["family_histogram"] = ds.meta.family_histogram;
    if (!ds.meta.provenance.empty()) meta["provenance"] = ds.meta.provenance;
    if (ds.meta.empty_output_count) meta["empty_output_count"] = ds.meta.empty_output_count;
    out << "#meta " << meta.dump() << "\n";
    for (const auto& ex : ds.examples) {
        json j;
        j["instruction"] = ex.instruction;
        j["input"] = ex.input;
        j["output"] = ex.output;
        j["language"] = ex.language;
        j["task_family"] = ex.task_family;
        j["template_id"] = ex.template_id;
        out << j.dump() << "\n";
    }
    require(out.good(), "write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open dataset: " + path);
    Dataset ds;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("#meta ", 0) == 0) {
            require(lineno == 1, path + ":" + std::to_string(lineno) + ": stray #meta line");
            json meta = json::parse(line.substr(6), nullptr, false);
            require(!meta.is_discarded(), path + ":1: malformed #meta record");
            ds.meta.id = meta.value("id", "");
            ds.meta.seed = meta.value("seed", uint64_t{0});
            ds.meta.generator_version = meta.value("generator_version", "");
            ds.meta.provenance = meta.value("provenance", "");
            ds.meta.empty_output_count = meta.value("empty_output_count", int64_t{0});
            if (meta.contains("language_histogram"))
                ds.meta.language_histogram =
                    meta["language_histogram"].get<std::map<std::string, int64_t>>();
            if (meta.contains("family_histogram"))
                ds.meta.family_histogram =
                    meta["family_histogram"].get<std::map<std::string, int64_t>>();
            continue;
        }
        json j = json::parse(line, nullptr, false);
        require(!j.is_discarded(), path + ":" + std::to_string(lineno) + ": malformed record");
        for (const char* field : {"instruction", "input", "output", "language",
                                  "task_family", "template_id"})
            require(j.contains(field), path + ":" + std::to_string(lineno) +
                                           ": missing field '" + std::string(field) + "'");
        Example ex;
        ex.instruction = j["instruction"].get<std::string>();
        ex.input = j["input"].get<std::string>();
        ex.output = j["output"].get<std::string>();
        ex.language = j["language"].get<std::string>();
        ex.task_family = j["task_family"].get<std::string>();
        ex.template_id = j["template_id"].get<int64_t>();
        require(!ex.instruction.empty(),
                path + ":" + std::to_string(lineno) + ": empty instruction");
        require(valid_language_tag(ex.language),
                path + ":" + std::to_string(lineno) + ": unknown language tag '" +
                    ex.language + "'");
        ds.examples.push_back(std::move(ex));
    }
    // metadata must agree with content
    std::map<std::string, int64_t> lang_hist, fam_hist;
    for (const auto& ex : ds.examples) {
        lang_hist[ex.language]++;
        fam_hist[ex.task_family]++;
    }
    if (!ds.meta.language_histogram.empty())
        require(lang_hist == ds.meta.language_histogram,
                path + ": language histogram does not match metadata");
    if (!ds.meta.family_histogram.empty())
        require(fam_hist == ds.meta.family_histogram,
                path + ": family histogram does not match metadata");
    ds.meta.language_histogram = std::move(lang_hist);
    ds.meta.family_histogram = std::move(fam_hist);
    return ds;
}

// -------- vocabulary --------

std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> toks;
    std::istringstream ss(text);
    std::string t;
    while (ss >> t) toks.push_back(t);
    return toks;
}

Vocab build_vocab(const std::vector<const Dataset*>& datasets) {
    std::vector<std::string> all;
    for (const Dataset* ds : datasets)
        for (const auto& ex : ds->examples)
            for (const std::string* field : {&ex.instruction, &ex.input, &ex.output})
                for (auto& t : split_whitespace(*field)) all.push_back(std::move(t));
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    Vocab v;
    v.words = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (auto& w : all) v.words.push_back(std::move(w));
    for (int i = 0; i < v.size(); ++i) v.index[v.words[static_cast<size_t>(i)]] = i;
    return v;
}

TokenizeResult tokenize(const Vocab& vocab, const std::string& text) {
    TokenizeResult r;
    for (const auto& t : split_whitespace(text)) {
        int id = vocab.id_of(t);
        if (id == kUnkId) r.unk_count++;
        r.ids.push_back(id);
    }
    return r;
}

std::string detokenize(const Vocab& vocab, const std::vector<int>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += vocab.word(ids[i]);
    }
    return out;
}

std::string prompt_text(const Example& ex) {
    if (ex.input.empty()) return ex.instruction;
    return ex.instruction + " " + ex.input;
}

// -------- replay mixing --------

Dataset mix(const Dataset& primary, const Dataset& replay, double fraction,
            uint64_t seed, bool substitute) {
    require(fraction >= 0.0 && fraction <= 1.0, "mix: fraction out of [0,1]");
    size_t need = static_cast<size_t>(
        std::ceil(fraction * static_cast<double>(primary.size())));
    require(replay.size() >= need, "mix: replay dataset too small (" +
                                       std::to_string(replay.size()) + " < " +
                                       std::to_string(need) + ")");
    Rng rng(seed);
    Dataset out;
    out.meta.id = primary.meta.id + "+mix";
    out.meta.seed = seed;
    out.meta.generator_version = primary.meta.generator_version;
    out.meta.provenance = "mix(" + primary.meta.id + "," + replay.meta.id + ",f=" +
                          std::to_string(fraction) +
                          (substitute ? ",substitute" : ",append") + ")";
    if (substitute) {
        require(need <= primary.size(), "mix: substitution larger than primary");
        auto keep = rng.sample_without_replacement(primary.size(), primary.size() - need);
        std::sort(keep.begin(), keep.end());
        for (size_t i : keep) out.examples.push_back(primary.examples[i]);
    } else {
        out.examples = primary.examples;
    }
    auto picks = rng.sample_without_replacement(replay.size(), need);
    std::sort(picks.begin(), picks.end());
    for (size_t i : picks) out.examples.push_back(replay.examples[i]);
    rng.shuffle(out.examples);
    out.recompute_histograms();
    return out;
}

}  // namespace cftlab::corpus
