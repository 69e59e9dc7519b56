#pragma once

// Experiment harness: corpus generation, the six named suites, reports.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfrand/attack.hpp"

namespace cfrand::harness {

struct CorpusSpec {
  uint32_t programs = 20;
  uint32_t min_stmts = 2;
  uint32_t max_stmts = 6;
  uint32_t max_depth = 2;
  uint32_t min_trip = 1;
  uint32_t max_trip = 4;
  bool loops = true;
  uint64_t seed = 0;
};

// Structured generation (sequences, if, if/else, fixed-trip do-while): always
// reducible, loop trip counts are compile-time constants, every program ends
// in HALT and has at least one conditional when loops are disabled.
std::vector<std::string> generate_corpus_asm(const CorpusSpec& spec);
std::vector<isa::Program> generate_corpus(const CorpusSpec& spec);

std::vector<int64_t> random_inputs(std::mt19937_64& rng);

// ---- statistics ----

double binomial_sigma(double p, uint64_t n);
// upper-tail p-value via the Wilson-Hilferty cube-root normal approximation
double chi_square_p(double stat, unsigned df);

// ---- reports ----

struct CheckRow {
  std::string id;
  double value = 0;
  double expected = 0;
  double tolerance = 0;
  bool pass = false;
  std::string note;
};

struct Report {
  std::string suite;
  uint64_t seed = 0;
  std::string config_json = "{}";
  std::vector<CheckRow> rows;
  bool pass = true;
  std::string records_jsonl;                    // per-trial raw records
  std::map<std::string, std::string> artifacts;  // extra files (csv tables)

  void add(CheckRow row);
  std::string to_json() const;
  std::string to_csv() const;
};

// Renders a report (the JSON form) as aligned human-readable text.
std::string format_report_text(const std::string& report_json);

struct SuiteConfig {
  uint64_t seed = 7;
  // acceptance-scale defaults; the CLI exposes smaller knobs
  uint32_t corpus_programs = 500;
  uint32_t equiv_inputs = 20;
  uint32_t invariance_inputs = 100;
  uint64_t sweep_trials = 10000;
  uint64_t decay_trials = 20000;
  uint64_t reentry_trials = 100;
  uint64_t reentry_entries = 100;
  uint32_t campaign_programs = 25;
  uint64_t campaign_trials = 400;
  uint64_t area_size = 4096;  // eq1-sweep varies this itself
};

extern const std::vector<std::string> kSuiteNames;

Report run_suite(const std::string& name, const SuiteConfig& cfg);

// Single-entry placement uniformity: randomize a fresh copy per seed,
// chi-square the landing offsets against uniform over location_count bins.
struct UniformityResult {
  uint64_t seeds = 0;
  double chi_square = 0;
  unsigned bins = 0;
  double p_value = 0;
};
UniformityResult placement_uniformity(uint64_t area_size, uint64_t seeds,
                                      uint64_t base_seed);

}  // namespace cfrand::harness
