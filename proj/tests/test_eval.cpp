#include <cmath>

#include "cftlab/corpus.hpp"
#include "cftlab/engine.hpp"
#include "cftlab/error.hpp"
#include "cftlab/evalharness.hpp"
#include "doctest.h"

using namespace cftlab;

namespace {

std::vector<std::string> words(const std::string& s) { return corpus::split_whitespace(s); }

corpus::Dataset eval_set_of(std::vector<corpus::Example> exs, const std::string& id) {
    corpus::Dataset ds;
    ds.meta.id = id;
    ds.examples = std::move(exs);
    ds.recompute_histograms();
    return ds;
}

}  // namespace

TEST_CASE("token F1 fixtures") {
    CHECK(evalharness::token_f1(words("a b c"), words("a b d")) == doctest::Approx(2.0 / 3.0));
    CHECK(evalharness::token_f1(words("a a b"), words("a b")) == doctest::Approx(0.8));
    CHECK(evalharness::token_f1(words("a b"), words("a b")) == doctest::Approx(1.0));
    CHECK(evalharness::token_f1(words("x"), words("y")) == doctest::Approx(0.0));
    CHECK(evalharness::token_f1({}, {}) == doctest::Approx(1.0));
    CHECK(evalharness::token_f1({}, words("a")) == doctest::Approx(0.0));
}

TEST_CASE("unigram overlap fixtures") {
    CHECK(evalharness::rouge1("x y", "x z") == doctest::Approx(0.5));
    CHECK(evalharness::rouge1("x y", "x y") == doctest::Approx(1.0));
    CHECK(evalharness::rouge1("x", "y") == doctest::Approx(0.0));
}

TEST_CASE("suite grouping: one suite per language-family pair") {
    auto ds = eval_set_of({{"i1", "p ->", "o", "L0", "copy", 0},
                           {"i2", "p ->", "o", "L0", "copy", 1},
                           {"i3", "p ->", "o", "L1", "copy", 2},
                           {"i4", "p ->", "o", "L0", "reverse", 3}},
                          "ev");
    auto suites = evalharness::make_suites(ds);
    REQUIRE(suites.size() == 3);
    int total = 0;
    for (const auto& s : suites) {
        total += static_cast<int>(s.examples.size());
        CHECK(s.id == s.task_family + "/" + s.language);
        for (const auto& ex : s.examples.examples) {
            CHECK(ex.language == s.language);
            CHECK(ex.task_family == s.task_family);
        }
    }
    CHECK(total == 4);
}

TEST_CASE("summarization suites score by unigram overlap, others by exact match") {
    auto ds = eval_set_of({{"i", "p ->", "o", "L0", "first-m-extract-summarize", 0},
                           {"i", "p ->", "o", "L0", "sort-digits", 1}},
                          "ev");
    for (const auto& s : evalharness::make_suites(ds)) {
        if (s.task_family == "first-m-extract-summarize") CHECK(s.primary_metric == "rouge1");
        else CHECK(s.primary_metric == "exact_match");
    }
}

TEST_CASE("a memorizing model scores perfect exact match on its training set") {
    corpus::Dataset train;
    train.meta.id = "memorize";
    for (int i = 0; i < 8; ++i) {
        std::string a = "t" + std::to_string(i % 4), b = "t" + std::to_string((i + 1) % 4);
        train.examples.push_back({a + " " + b, "->", b + " " + a, "L0", "reverse", i});
    }
    train.recompute_histograms();
    auto vocab = corpus::build_vocab({&train});
    engine::ModelConfig mc;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.d_model = 32;
    mc.d_ff = 64;
    mc.vocab_size = vocab.size();
    auto ckpt = engine::init_checkpoint(mc, vocab, 0);
    engine::TrainConfig tc;
    tc.learning_rate = 5e-3;
    tc.epochs = 150;
    tc.global_batch_size = 8;
    tc.warmup_steps = 10;
    auto trained = engine::train_phase(ckpt, train, tc).checkpoint;

    auto suites = evalharness::make_suites(train);
    auto report = evalharness::evaluate(trained, suites);
    CHECK(report.per_suite.at("reverse/L0").exact_match == doctest::Approx(1.0));
    CHECK(report.ta == doctest::Approx(1.0));
    CHECK(report.la == doctest::Approx(0.0));  // no non-L0 suites
}

TEST_CASE("an untrained model scores near zero on structured tasks") {
    corpus::BenchmarkSpec spec{2, 30, 10, 4, 5, 0.0};
    auto suite = corpus::synth_generate(spec);
    auto vocab = corpus::build_vocab({&suite.phase1_a, &suite.eval_ta});
    engine::ModelConfig mc;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.d_model = 32;
    mc.d_ff = 64;
    mc.vocab_size = vocab.size();
    mc.max_seq_len = 64;
    auto ckpt = engine::init_checkpoint(mc, vocab, 7);
    corpus::Dataset ta_only;
    ta_only.meta = suite.eval_ta.meta;
    for (const auto& ex : suite.eval_ta.examples)
        if (ex.task_family == "copy" || ex.task_family == "reverse")
            ta_only.examples.push_back(ex);
    ta_only.recompute_histograms();
    auto report = evalharness::evaluate(ckpt, evalharness::make_suites(ta_only));
    CHECK(report.ta <= 0.05);
}

TEST_CASE("evaluation fails loudly on vocabulary mismatch") {
    auto ds = eval_set_of({{"known", "tokens ->", "only", "L0", "copy", 0},
                           {"unknownword", "x ->", "y", "L0", "copy", 1}},
                          "ev");
    corpus::Dataset vocab_src;
    vocab_src.examples.push_back({"known tokens -> only", "", "", "L0", "copy", 0});
    auto vocab = corpus::build_vocab({&vocab_src});
    engine::ModelConfig mc;
    mc.n_layers = 1;
    mc.n_heads = 1;
    mc.d_model = 8;
    mc.d_ff = 16;
    mc.vocab_size = vocab.size();
    auto ckpt = engine::init_checkpoint(mc, vocab, 0);
    try {
        evalharness::evaluate(ckpt, evalharness::make_suites(ds));
        FAIL("expected vocabulary mismatch error");
    } catch (const CftError& e) {
        CHECK(std::string(e.what()).find("unknownword") != std::string::npos);
    }
}

TEST_CASE("phase comparison: forgetting and per-suite classifications") {
    evalharness::EvalReport before, after;
    before.per_suite["copy/L0"] = {0.8, 0.8, 0.8};
    before.suite_language["copy/L0"] = "L0";
    before.per_suite["copy/L1"] = {0.2, 0.2, 0.2};
    before.suite_language["copy/L1"] = "L1";
    before.ta = 0.8;
    before.la = 0.2;
    after = before;
    after.per_suite["copy/L0"] = {0.6, 0.6, 0.6};
    after.per_suite["copy/L1"] = {0.5, 0.5, 0.5};
    after.ta = 0.6;
    after.la = 0.5;

    auto cmp = evalharness::compare(before, after);
    CHECK(cmp.forgetting == doctest::Approx(0.2));
    for (const auto& row : cmp.rows) {
        if (row.suite == "copy/L0" || row.suite == "TA") {
            CHECK(row.classification == "decline");
        } else if (row.suite == "copy/L1" || row.suite == "LA") {
            CHECK(row.classification == "improve");
            CHECK(row.delta == doctest::Approx(0.3));
        }
    }
    REQUIRE(cmp.rows.size() == 4);  // two suites + TA + LA aggregates
}

TEST_CASE("phase comparison rejects mismatched suite sets") {
    evalharness::EvalReport a, b;
    a.per_suite["copy/L0"] = {};
    a.suite_language["copy/L0"] = "L0";
    b.per_suite["reverse/L0"] = {};
    b.suite_language["reverse/L0"] = "L0";
    CHECK_THROWS_AS(evalharness::compare(a, b), CftError);
}

TEST_CASE("language-ability means are tracked per language") {
    corpus::Dataset train;
    train.meta.id = "mini";
    train.examples.push_back({"t0@L1 t1@L1", "->", "t0@L1", "L1", "copy", 0});
    train.examples.push_back({"t0@L2 t1@L2", "->", "t0@L2", "L2", "copy", 1});
    train.recompute_histograms();
    auto vocab = corpus::build_vocab({&train});
    engine::ModelConfig mc;
    mc.n_layers = 1;
    mc.n_heads = 1;
    mc.d_model = 8;
    mc.d_ff = 16;
    mc.vocab_size = vocab.size();
    auto ckpt = engine::init_checkpoint(mc, vocab, 0);
    auto report = evalharness::evaluate(ckpt, evalharness::make_suites(train));
    CHECK(report.la_per_language.count("L1") == 1);
    CHECK(report.la_per_language.count("L2") == 1);
    CHECK(report.la == doctest::Approx((report.la_per_language["L1"] +
                                        report.la_per_language["L2"]) / 2.0));
}
