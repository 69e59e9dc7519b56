// Corpus generator, statistics helpers, reports, suite determinism.

#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cfrand/harness.hpp"
#include "cfrand/isa.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cfrand;

TEST_CASE("corpus programs parse, validate and stay within bounds") {
  harness::CorpusSpec spec;
  spec.programs = 60;
  spec.seed = 3;
  const std::vector<isa::Program> corpus = harness::generate_corpus(spec);
  REQUIRE(corpus.size() == spec.programs);

  std::set<std::string> texts;
  for (const auto& p : corpus) {
    CHECK(isa::validate(p).ok());
    CHECK(isa::validate_cfg(isa::build_cfg(p)).ok());
    texts.insert(isa::format_program(p));
  }
  // No degenerate duplicates.
  CHECK(texts.size() > spec.programs / 2);
}

TEST_CASE("corpus generation is deterministic in the seed") {
  harness::CorpusSpec spec;
  spec.programs = 10;
  spec.seed = 77;
  const auto a = harness::generate_corpus_asm(spec);
  const auto b = harness::generate_corpus_asm(spec);
  CHECK(a == b);
  spec.seed = 78;
  CHECK(harness::generate_corpus_asm(spec) != a);
}

TEST_CASE("corpus never nests a loop under a conditional") {
  // Loop trip counts must not depend on the input, or the observable-flow
  // invariant cannot hold. Structurally: no backward conditional branch may
  // sit between a forward conditional branch and its join label.
  harness::CorpusSpec spec;
  spec.programs = 80;
  spec.seed = 5;
  for (const auto& p : harness::generate_corpus(spec)) {
    isa::FunctionCfg cfg = isa::build_cfg(p);
    // Collect loop extents [header, latch] by block index.
    std::vector<std::pair<size_t, size_t>> loops;
    for (const auto& e : cfg.edges)
      if (e.dst <= e.src) loops.push_back({e.dst, e.src});
    // Any forward jump spanning a whole loop means that loop sits inside an
    // if or else arm (the generator's only source of forward jumps).
    for (const auto& e : cfg.edges) {
      if (e.dst <= e.src || e.kind == isa::EdgeKind::Fallthrough) continue;
      for (const auto& [h, l] : loops) {
        const bool wraps = e.src < h && l < e.dst;
        CHECK_FALSE(wraps);
      }
    }
  }
}

TEST_CASE("loop-free corpus keeps conditionals") {
  harness::CorpusSpec spec;
  spec.programs = 30;
  spec.seed = 9;
  spec.loops = false;
  for (const auto& p : harness::generate_corpus(spec)) {
    size_t jccs = 0, back = 0;
    isa::FunctionCfg cfg = isa::build_cfg(p);
    for (const auto& e : cfg.edges)
      if (e.dst <= e.src) ++back;
    for (const auto& in : p.code) jccs += isa::is_jcc(in.op);
    CHECK(back == 0);
    CHECK(jccs >= 1);
  }
}

TEST_CASE("binomial sigma and chi-square tail") {
  CHECK(harness::binomial_sigma(0.5, 100) == doctest::Approx(0.05));
  CHECK(harness::binomial_sigma(0.0, 100) == 0.0);

  // Wilson-Hilferty approximation against standard quantiles.
  CHECK(harness::chi_square_p(3.841, 1) == doctest::Approx(0.05).epsilon(0.2));
  CHECK(harness::chi_square_p(82.53, 63) ==
        doctest::Approx(0.05).epsilon(0.1));
  CHECK(harness::chi_square_p(0.0, 10) == doctest::Approx(1.0));
  CHECK(harness::chi_square_p(500.0, 10) < 1e-6);
}

TEST_CASE("report serialization carries every row") {
  harness::Report rep;
  rep.suite = "demo";
  rep.seed = 4;
  rep.add({"alpha", 0.5, 0.5, 0.1, true, "fine"});
  rep.add({"beta", 2.0, 1.0, 0.5, false, "off"});

  const nlohmann::json j = nlohmann::json::parse(rep.to_json());
  CHECK(j.at("suite") == "demo");
  CHECK(j.at("pass") == false);  // one failing row poisons the suite
  REQUIRE(j.at("checks").size() == 2);
  CHECK(j.at("checks")[0].at("id") == "alpha");
  CHECK(j.at("checks")[1].at("pass") == false);

  const std::string csv = rep.to_csv();
  CHECK(csv.find("suite,seed,id,value,expected,tolerance,pass,note") !=
        std::string::npos);
  CHECK(csv.find("beta") != std::string::npos);

  const std::string text = harness::format_report_text(rep.to_json());
  CHECK(text.find("alpha") != std::string::npos);
  CHECK(text.find("FAIL") != std::string::npos);
}

TEST_CASE("suites run deterministically") {
  harness::SuiteConfig cfg;
  cfg.seed = 21;
  cfg.corpus_programs = 4;
  cfg.equiv_inputs = 3;
  harness::Report a = harness::run_suite("equivalence", cfg);
  harness::Report b = harness::run_suite("equivalence", cfg);
  CHECK(a.pass);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.records_jsonl == b.records_jsonl);
  CHECK(a.artifacts == b.artifacts);

  CHECK_THROWS_AS(harness::run_suite("nope", cfg), Error);
}

TEST_CASE("random input vectors stay in the documented range") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const std::vector<int64_t> in = harness::random_inputs(rng);
    REQUIRE(in.size() == 8);
    for (int64_t v : in) {
      CHECK(v >= -100);
      CHECK(v <= 100);
    }
  }
}
