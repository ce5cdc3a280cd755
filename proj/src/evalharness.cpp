#include "cftlab/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "cftlab/error.hpp"
#include "cftlab/svg.hpp"

namespace cftlab::evalharness {

namespace {

double clipped_overlap_f1(const std::vector<std::string>& pred,
                          const std::vector<std::string>& gold) {
    if (pred.empty() && gold.empty()) return 1.0;
    if (pred.empty() || gold.empty()) return 0.0;
    std::map<std::string, int> pc, gc;
    for (const auto& t : pred) pc[t]++;
    for (const auto& t : gold) gc[t]++;
    int overlap = 0;
    for (const auto& [t, c] : pc) {
        auto it = gc.find(t);
        if (it != gc.end()) overlap += std::min(c, it->second);
    }
    double p = static_cast<double>(overlap) / pred.size();
    double r = static_cast<double>(overlap) / gold.size();
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

std::string suite_primary_metric(const std::string& family) {
    if (family == "first-m-extract-summarize") return "rouge1";
    return "exact_match";
}

double primary_score(const SuiteScores& s, const std::string& metric) {
    if (metric == "token_f1") return s.token_f1;
    if (metric == "rouge1") return s.rouge1;
    return s.exact_match;
}

std::string now_iso8601() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    return clipped_overlap_f1(pred, gold);
}

double rouge1(const std::string& pred, const std::string& gold) {
    return clipped_overlap_f1(corpus::split_whitespace(pred), corpus::split_whitespace(gold));
}

std::vector<EvalSuite> make_suites(const corpus::Dataset& eval_set) {
    std::map<std::pair<std::string, std::string>, EvalSuite> grouped;
    for (const auto& ex : eval_set.examples) {
        auto key = std::make_pair(ex.language, ex.task_family);
        auto& suite = grouped[key];
        if (suite.examples.examples.empty()) {
            suite.language = ex.language;
            suite.task_family = ex.task_family;
            suite.id = ex.task_family + "/" + ex.language;
            suite.primary_metric = suite_primary_metric(ex.task_family);
            suite.examples.meta.id = eval_set.meta.id + "/" + suite.id;
        }
        suite.examples.examples.push_back(ex);
    }
    std::vector<EvalSuite> out;
    for (auto& [key, suite] : grouped) {
        suite.examples.recompute_histograms();
        out.push_back(std::move(suite));
    }
    return out;
}

EvalReport evaluate(const engine::Checkpoint& model, const std::vector<EvalSuite>& suites,
                    const engine::DecodeConfig& decode) {
    require(!suites.empty(), "evaluate: no suites");
    require(model.vocab.size() > 0, "evaluate: checkpoint has no vocabulary");

    EvalReport report;
    report.model_id = model.prov.phase_tag;
    report.decode = decode.kind == engine::DecodeConfig::Kind::greedy
                        ? "greedy"
                        : "top-k(" + std::to_string(decode.k) + ")";
    report.timestamp = now_iso8601();

    std::map<std::string, std::vector<double>> la_lang_scores;
    double ta_sum = 0.0, la_sum = 0.0;
    int ta_n = 0, la_n = 0;

    for (const auto& suite : suites) {
        require(!suite.examples.examples.empty(), "evaluate: empty suite " + suite.id);
        SuiteScores scores;
        for (const auto& ex : suite.examples.examples) {
            auto prompt = corpus::tokenize(model.vocab, corpus::prompt_text(ex));
            auto gold = corpus::tokenize(model.vocab, ex.output);
            if (prompt.unk_count > 0 || gold.unk_count > 0) {
                std::string unknown;
                for (const auto& t : corpus::split_whitespace(corpus::prompt_text(ex) + " " +
                                                              ex.output))
                    if (model.vocab.id_of(t) == corpus::kUnkId) unknown += " " + t;
                fail_input("evaluate: vocabulary mismatch in suite " + suite.id +
                           "; unknown tokens:" + unknown);
            }
            int max_new = static_cast<int>(gold.ids.size()) + 4;
            auto gen = engine::generate(model, prompt.ids, decode, max_new);
            auto pred_toks = corpus::split_whitespace(corpus::detokenize(model.vocab, gen));
            auto gold_toks = corpus::split_whitespace(ex.output);
            scores.exact_match += pred_toks == gold_toks ? 1.0 : 0.0;
            scores.token_f1 += token_f1(pred_toks, gold_toks);
            scores.rouge1 += clipped_overlap_f1(pred_toks, gold_toks);
        }
        double n = static_cast<double>(suite.examples.size());
        scores.exact_match /= n;
        scores.token_f1 /= n;
        scores.rouge1 /= n;
        report.per_suite[suite.id] = scores;
        report.suite_language[suite.id] = suite.language;

        double p = primary_score(scores, suite.primary_metric);
        if (suite.language == "L0") {
            ta_sum += p;
            ta_n++;
        } else {
            la_sum += p;
            la_n++;
            la_lang_scores[suite.language].push_back(p);
        }
    }
    report.ta = ta_n ? ta_sum / ta_n : 0.0;
    report.la = la_n ? la_sum / la_n : 0.0;
    for (const auto& [lang, v] : la_lang_scores) {
        double s = 0.0;
        for (double x : v) s += x;
        report.la_per_language[lang] = s / static_cast<double>(v.size());
    }
    return report;
}

CompareResult compare(const EvalReport& phase1, const EvalReport& phase2) {
    std::string mismatch;
    for (const auto& [id, s] : phase1.per_suite)
        if (!phase2.per_suite.count(id)) mismatch += " " + id;
    for (const auto& [id, s] : phase2.per_suite)
        if (!phase1.per_suite.count(id)) mismatch += " " + id;
    require(mismatch.empty(), "compare: suite sets differ:" + mismatch);

    CompareResult out;
    auto classify = [](double d) {
        return d > 0.0 ? "improve" : (d < 0.0 ? "decline" : "flat");
    };
    for (const auto& [id, s1] : phase1.per_suite) {
        const SuiteScores& s2 = phase2.per_suite.at(id);
        std::string family = id.substr(0, id.find('/'));
        std::string metric = suite_primary_metric(family);
        DeltaRow row;
        row.suite = id;
        row.before = primary_score(s1, metric);
        row.after = primary_score(s2, metric);
        row.delta = row.after - row.before;
        row.classification = classify(row.delta);
        out.rows.push_back(std::move(row));
    }
    out.rows.push_back({"TA", phase1.ta, phase2.ta, phase2.ta - phase1.ta,
                        classify(phase2.ta - phase1.ta)});
    out.rows.push_back({"LA", phase1.la, phase2.la, phase2.la - phase1.la,
                        classify(phase2.la - phase1.la)});
    out.forgetting = phase1.ta - phase2.ta;
    return out;
}

void write_eval_report_csv(const EvalReport& r, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot write eval report: " + path);
    out << "suite,language,family,metric,score\n";
    char buf[48];
    for (const auto& [id, s] : r.per_suite) {
        std::string family = id.substr(0, id.find('/'));
        const std::string& lang = r.suite_language.at(id);
        for (const auto& [metric, val] :
             {std::pair<const char*, double>{"exact_match", s.exact_match},
              {"token_f1", s.token_f1},
              {"rouge1", s.rouge1}}) {
            std::snprintf(buf, sizeof buf, ",%.9g\n", val);
            out << id << ',' << lang << ',' << family << ',' << metric << buf;
        }
    }
    std::snprintf(buf, sizeof buf, ",%.9g\n", r.ta);
    out << "TA,L0,aggregate,primary" << buf;
    std::snprintf(buf, sizeof buf, ",%.9g\n", r.la);
    out << "LA,multi,aggregate,primary" << buf;
    for (const auto& [lang, v] : r.la_per_language) {
        std::snprintf(buf, sizeof buf, ",%.9g\n", v);
        out << "LA," << lang << ",aggregate,primary" << buf;
    }
    // aggregates mix per-suite primary metrics (exact-match and rouge1)
    out << "# note: TA/LA average heterogeneous per-suite metrics\n";
}

void write_compare_csv(const CompareResult& c, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot write comparison: " + path);
    out << "suite,before,after,delta,classification\n";
    char buf[80];
    for (const auto& row : c.rows) {
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g,", row.before, row.after, row.delta);
        out << row.suite << buf << row.classification << '\n';
    }
    std::snprintf(buf, sizeof buf, "forgetting,,,%.9g,\n", c.forgetting);
    out << buf;
}

void write_compare_svg(const EvalReport& phase1, const EvalReport& phase2,
                       const std::string& path) {
    std::vector<std::string> labels;
    svg::Series before{"phase1", {}, "#1f77b4"}, after{"phase2", {}, "#d62728"};
    for (const auto& [id, s1] : phase1.per_suite) {
        std::string family = id.substr(0, id.find('/'));
        std::string metric = suite_primary_metric(family);
        labels.push_back(id);
        before.values.push_back(primary_score(s1, metric));
        after.values.push_back(primary_score(phase2.per_suite.at(id), metric));
    }
    labels.push_back("TA");
    before.values.push_back(phase1.ta);
    after.values.push_back(phase2.ta);
    labels.push_back("LA");
    before.values.push_back(phase1.la);
    after.values.push_back(phase2.la);
    svg::write_bar_chart(path, "Phase 1 vs Phase 2", labels, {before, after}, "score");
}

}  // namespace cftlab::evalharness
