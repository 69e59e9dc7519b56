#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "cfrand/harness.hpp"
#include "cfrand/rng.hpp"
#include "json.hpp"

namespace cfrand::harness {

const std::vector<std::string> kSuiteNames = {
    "equivalence",    "trace-invariance", "gap-constancy",
    "eq1-sweep",      "baseline-break",   "reentry"};

namespace {

constexpr uint64_t kRunBudget = 2'000'000;

const char* kListingVictim =
    "  CMP r0, r1\n"
    "  JCC EQ else_branch\n"
    "  CONST r8, 1\n"
    "  OUT r8\n"
    "  JMP end\n"
    "else_branch:\n"
    "  CONST r8, 2\n"
    "  OUT r8\n"
    "end:\n"
    "  CONST r9, 7\n"
    "  OUT r9\n"
    "  HALT\n";

std::string multi_branch_victim(unsigned branches) {
  std::ostringstream os;
  for (unsigned i = 0; i < branches; ++i) {
    os << "  CMP r" << i << ", r" << i + 1 << "\n"
       << "  JCC EQ e" << i << "\n"
       << "  CONST r8, 1\n"
       << "  JMP j" << i << "\n"
       << "e" << i << ":\n"
       << "  CONST r8, 2\n"
       << "j" << i << ":\n"
       << "  OUT r8\n";
  }
  os << "  HALT\n";
  return os.str();
}

atk::InputSampler uniform_inputs() {
  return [](std::mt19937_64& rng) { return random_inputs(rng); };
}

struct RunOutcome {
  bool clean = false;  // halted without fault
  std::vector<int64_t> outputs;
};

RunOutcome run_outputs(mach::Machine& m, const std::vector<int64_t>& in) {
  m.enter_enclave(in);
  auto res = m.run_to_halt(kRunBudget);
  RunOutcome out;
  out.clean = res.halted && !res.fault;
  out.outputs = m.output();
  return out;
}

// Branch sites executed inside the static region, in order.  With the
// conditional branches eliminated these are exactly the jump-block firings.
std::vector<uint64_t> static_branch_sites(const mach::Machine& m,
                                          uint64_t static_base,
                                          uint64_t static_end) {
  std::vector<uint64_t> sites;
  for (const auto& ev : m.trace()) {
    if (ev.mode != mach::Mode::Enclave || !ev.is_branch) continue;
    if (ev.pc >= static_base && ev.pc < static_end) sites.push_back(ev.pc);
  }
  return sites;
}

// Enclave-instruction ordinals of each jump-block firing.
std::vector<std::pair<uint64_t, uint64_t>> jb_firings(
    const mach::Machine& m, uint64_t static_base, uint64_t static_end) {
  std::vector<std::pair<uint64_t, uint64_t>> fires;  // (pc, enclave ordinal)
  uint64_t ordinal = 0;
  for (const auto& ev : m.trace()) {
    if (ev.mode != mach::Mode::Enclave) continue;
    ++ordinal;
    if (ev.is_branch && ev.pc >= static_base && ev.pc < static_end)
      fires.push_back({ev.pc, ordinal});
  }
  return fires;
}

struct BuiltVictim {
  atk::VictimBundle bundle;
  uint64_t static_end = 0;
};

BuiltVictim build_victim(const isa::Program& p, const LayoutConfig& cfg) {
  BuiltVictim v{atk::prepare_victim(p, cfg), 0};
  uint64_t bytes = 0;
  for (const auto& i : v.bundle.op.static_program.code) bytes += i.length();
  v.static_end = cfg.static_base + bytes;
  return v;
}

nlohmann::json config_json(const SuiteConfig& c) {
  return {{"seed", c.seed},
          {"corpus_programs", c.corpus_programs},
          {"equiv_inputs", c.equiv_inputs},
          {"invariance_inputs", c.invariance_inputs},
          {"sweep_trials", c.sweep_trials},
          {"decay_trials", c.decay_trials},
          {"reentry_trials", c.reentry_trials},
          {"reentry_entries", c.reentry_entries},
          {"campaign_programs", c.campaign_programs},
          {"campaign_trials", c.campaign_trials},
          {"area_size", c.area_size}};
}

CorpusSpec corpus_spec(const SuiteConfig& cfg, bool loops) {
  CorpusSpec s;
  s.programs = loops ? cfg.corpus_programs : cfg.campaign_programs;
  s.loops = loops;
  s.seed = mix_seed(cfg.seed, loops ? 0x100 : 0x200);
  return s;
}

Report suite_equivalence(const SuiteConfig& cfg) {
  Report rep;
  rep.suite = "equivalence";
  rep.seed = cfg.seed;
  rep.config_json = config_json(cfg).dump();

  auto corpus = generate_corpus(corpus_spec(cfg, true));
  LayoutConfig lcfg;
  lcfg.area_size = cfg.area_size;

  uint64_t mismatches = 0;
  uint64_t trials = 0;
  std::ostringstream records;
  std::ostringstream overhead;
  overhead << "program,bytes_before,bytes_after,byte_ratio,dyn_before,"
              "dyn_after,dyn_ratio,conditional_sites\n";

  for (size_t p = 0; p < corpus.size(); ++p) {
    auto victim = build_victim(corpus[p], lcfg);
    const auto& b = victim.bundle;
    std::mt19937_64 in_rng(mix_seed(cfg.seed, 0x1000 + p));
    std::vector<std::vector<int64_t>> inputs;
    for (uint32_t t = 0; t < cfg.equiv_inputs; ++t)
      inputs.push_back(random_inputs(in_rng));

    for (uint32_t t = 0; t < cfg.equiv_inputs; ++t) {
      mach::Machine orig(b.unprotected_image);
      mach::Machine plain(b.built.image);
      auto tstate = obf::area_state_from(b.built.manifest, b.built.image);
      rnd::RandomizationPolicy pol;
      pol.reentry_threshold = 1;
      pol.seed = mix_seed(cfg.seed, 0x2000 + p * 1024 + t);
      mach::Machine rand_m(b.built.image, tstate, pol);

      auto o0 = run_outputs(orig, inputs[t]);
      auto o1 = run_outputs(plain, inputs[t]);
      auto o2 = run_outputs(rand_m, inputs[t]);
      bool match = o0.clean && o1.clean && o2.clean &&
                   o0.outputs == o1.outputs && o0.outputs == o2.outputs;
      if (!match) ++mismatches;
      ++trials;
      records << nlohmann::json({{"program", p},
                                 {"input", t},
                                 {"match", match},
                                 {"outputs", o0.outputs.size()}})
                     .dump()
              << "\n";
    }

    auto oh = obf::report_overhead(corpus[p], b.op, lcfg, inputs,
                                         kRunBudget);
    overhead << "p" << p << ',' << oh.bytes_before << ',' << oh.bytes_after
             << ',' << (double)oh.bytes_after / (double)oh.bytes_before << ','
             << oh.dyn_before << ',' << oh.dyn_after << ','
             << (double)oh.dyn_after / (double)oh.dyn_before << ','
             << oh.conditional_sites << "\n";
  }

  rep.add({"output-mismatches", (double)mismatches, 0, 0, mismatches == 0,
           std::to_string(trials) + " program/input trials"});
  rep.add({"programs", (double)corpus.size(), (double)corpus.size(), 0, true,
           "corpus size"});
  rep.records_jsonl = records.str();
  rep.artifacts["overhead.csv"] = overhead.str();
  return rep;
}

Report suite_trace_invariance(const SuiteConfig& cfg) {
  Report rep;
  rep.suite = "trace-invariance";
  rep.seed = cfg.seed;
  rep.config_json = config_json(cfg).dump();

  auto corpus = generate_corpus(corpus_spec(cfg, true));
  LayoutConfig lcfg;
  lcfg.area_size = cfg.area_size;

  uint64_t deviations = 0;
  uint64_t runs = 0;
  std::ostringstream records;

  for (size_t p = 0; p < corpus.size(); ++p) {
    auto victim = build_victim(corpus[p], lcfg);
    const auto& b = victim.bundle;
    std::mt19937_64 in_rng(mix_seed(cfg.seed, 0x3000 + p));
    std::vector<uint64_t> reference;
    for (uint32_t t = 0; t < cfg.invariance_inputs; ++t) {
      auto tstate = obf::area_state_from(b.built.manifest, b.built.image);
      rnd::RandomizationPolicy pol;
      pol.reentry_threshold = 1;
      pol.seed = mix_seed(cfg.seed, 0x4000 + p * 1024 + t);
      mach::Machine m(b.built.image, tstate, pol);
      m.set_trace(true);
      m.enter_enclave(random_inputs(in_rng));
      auto res = m.run_to_halt(kRunBudget);
      if (!res.halted || res.fault)
        throw Error("suite", "victim did not halt cleanly");
      auto seq = static_branch_sites(m, lcfg.static_base, victim.static_end);
      if (t == 0)
        reference = seq;
      else if (seq != reference)
        ++deviations;
      ++runs;
      records << nlohmann::json({{"program", p},
                                 {"input", t},
                                 {"sites", seq.size()},
                                 {"matches_reference", seq == reference}})
                     .dump()
              << "\n";
    }
  }

  rep.add({"sequence-deviations", (double)deviations, 0, 0, deviations == 0,
           std::to_string(runs) + " runs"});
  rep.records_jsonl = records.str();
  return rep;
}

Report suite_gap_constancy(const SuiteConfig& cfg) {
  Report rep;
  rep.suite = "gap-constancy";
  rep.seed = cfg.seed;
  rep.config_json = config_json(cfg).dump();

  auto corpus = generate_corpus(corpus_spec(cfg, true));
  LayoutConfig lcfg;
  lcfg.area_size = cfg.area_size;

  uint64_t unstable_groups = 0;
  uint64_t groups_total = 0;
  double max_spread = 0;
  std::ostringstream records;

  for (size_t p = 0; p < corpus.size(); ++p) {
    auto victim = build_victim(corpus[p], lcfg);
    const auto& b = victim.bundle;
    std::mt19937_64 in_rng(mix_seed(cfg.seed, 0x5000 + p));
    // gap samples keyed by (previous site, next site); key 0 = enclave entry
    std::map<std::pair<uint64_t, uint64_t>, std::vector<uint64_t>> gaps;
    for (uint32_t t = 0; t < cfg.invariance_inputs; ++t) {
      auto tstate = obf::area_state_from(b.built.manifest, b.built.image);
      rnd::RandomizationPolicy pol;
      pol.reentry_threshold = 1;
      pol.seed = mix_seed(cfg.seed, 0x6000 + p * 1024 + t);
      mach::Machine m(b.built.image, tstate, pol);
      m.set_trace(true);
      m.enter_enclave(random_inputs(in_rng));
      auto res = m.run_to_halt(kRunBudget);
      if (!res.halted || res.fault)
        throw Error("suite", "victim did not halt cleanly");
      auto fires = jb_firings(m, lcfg.static_base, victim.static_end);
      uint64_t prev_pc = 0;
      uint64_t prev_at = 0;
      for (const auto& [pc, at] : fires) {
        gaps[{prev_pc, pc}].push_back(at - prev_at);
        prev_pc = pc;
        prev_at = at;
      }
    }
    for (const auto& [key, samples] : gaps) {
      auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
      uint64_t spread = *mx - *mn;
      double mean = 0;
      for (auto s : samples) mean += (double)s;
      mean /= (double)samples.size();
      double var = 0;
      for (auto s : samples) var += ((double)s - mean) * ((double)s - mean);
      double stddev = std::sqrt(var / (double)samples.size());
      if (spread != 0) ++unstable_groups;
      max_spread = std::max(max_spread, (double)spread);
      ++groups_total;
      records << nlohmann::json({{"program", p},
                                 {"from", key.first},
                                 {"to", key.second},
                                 {"samples", samples.size()},
                                 {"gap", *mn},
                                 {"stddev", stddev}})
                     .dump()
              << "\n";
    }
  }

  rep.add({"unstable-gap-groups", (double)unstable_groups, 0, 0,
           unstable_groups == 0,
           std::to_string(groups_total) + " site-pair groups"});
  rep.add({"max-gap-spread", max_spread, 0, 0, max_spread == 0,
           "instructions between jump-block firings"});
  rep.records_jsonl = records.str();
  return rep;
}

void append_campaign_records(std::ostringstream& os, const std::string& tag,
                             const atk::CampaignResult& cr) {
  for (const auto& r : cr.records) {
    os << nlohmann::json({{"point", tag},
                          {"trial", r.trial},
                          {"entry", r.entry},
                          {"site", r.site},
                          {"truth_taken", r.truth_taken},
                          {"member", r.member},
                          {"lbr_detected", r.lbr_detected},
                          {"decision_correct", r.decision_correct}})
               .dump()
       << "\n";
  }
}

Report suite_eq1_sweep(const SuiteConfig& cfg) {
  Report rep;
  rep.suite = "eq1-sweep";
  rep.seed = cfg.seed;
  rep.config_json = config_json(cfg).dump();

  auto program = isa::parse_program(kListingVictim, "listing");
  std::ostringstream records;
  uint64_t point = 0;

  for (uint64_t area : {uint64_t{4096}, uint64_t{2048}}) {
    LayoutConfig lcfg;
    lcfg.area_size = area;
    auto victim = atk::prepare_victim(program, lcfg);
    uint64_t k = victim.built.manifest.k;
    for (uint64_t G : {uint64_t{256}, uint64_t{1024}, uint64_t{4096}}) {
      atk::CampaignConfig ccfg;
      ccfg.mode = atk::Mode::Randomized;
      ccfg.G = G;
      ccfg.trials = cfg.sweep_trials;
      ccfg.seed = mix_seed(cfg.seed, 0x7000 + point);
      ccfg.keep_records = true;
      ccfg.reentry_threshold = 1;
      auto cr = atk::run_single_step_campaign(victim, ccfg,
                                                 uniform_inputs());
      double p = atk::attack_probability(G, k);
      double tol = p < 1.0 ? 3 * binomial_sigma(p, cfg.sweep_trials) : 0.0;
      std::string tag = "G=" + std::to_string(G) + ",k=" + std::to_string(k);
      rep.add({"per-branch[" + tag + "]", cr.success_rate, p, tol,
               std::fabs(cr.success_rate - p) <= tol,
               std::to_string(cr.trials) + " trials"});
      if (G == 4096 && k == 8187) {
        rep.add({"half-upper-bound", cr.success_rate, 0.5, 0.015,
                 std::fabs(cr.success_rate - 0.5) <= 0.015,
                 "published operating point"});
      }
      append_campaign_records(records, tag, cr);
      ++point;
    }
  }

  {
    // physical LBR detection must coincide with guess membership when the
    // guesses occupy distinct prediction slots
    LayoutConfig lcfg;
    lcfg.area_size = 4096;
    auto victim = atk::prepare_victim(program, lcfg);
    atk::CampaignConfig ccfg;
    ccfg.mode = atk::Mode::Randomized;
    ccfg.G = 1024;
    ccfg.trials = cfg.sweep_trials;
    ccfg.seed = mix_seed(cfg.seed, 0x7100);
    ccfg.slot_disjoint = true;
    ccfg.keep_records = true;
    ccfg.reentry_threshold = 1;
    // equal r0/r1 keeps the probed (taken-chain) trampoline firing on every
    // trial; otherwise physical detection is capped by how often the branch
    // is taken, while membership is input-independent
    auto cr = atk::run_single_step_campaign(
        victim, ccfg,
        [](std::mt19937_64&) { return std::vector<int64_t>{5, 5}; });
    uint64_t diverging = 0;
    for (const auto& r : cr.records)
      if (r.member != r.lbr_detected) ++diverging;
    rep.add({"lbr-equals-membership", (double)diverging, 0, 0, diverging == 0,
             "slot-disjoint guesses, G=1024"});
    append_campaign_records(records, "physical", cr);
  }

  rep.records_jsonl = records.str();
  return rep;
}

Report suite_baseline_break(const SuiteConfig& cfg) {
  Report rep;
  rep.suite = "baseline-break";
  rep.seed = cfg.seed;
  rep.config_json = config_json(cfg).dump();

  auto corpus = generate_corpus(corpus_spec(cfg, false));
  LayoutConfig lcfg;
  lcfg.area_size = cfg.area_size;
  std::ostringstream records;

  double min_unprotected = 1.0;
  double min_baseline = 1.0;
  uint64_t rand_hits = 0;
  uint64_t rand_trials = 0;
  uint64_t k = 0;

  for (size_t p = 0; p < corpus.size(); ++p) {
    auto victim = atk::prepare_victim(corpus[p], lcfg);
    k = victim.built.manifest.k;
    std::string pname = "p" + std::to_string(p);

    atk::CampaignConfig un;
    un.mode = atk::Mode::Unprotected;
    un.trials = 40;
    un.seed = mix_seed(cfg.seed, 0x8000 + p);
    un.keep_records = true;
    auto cu = atk::run_single_step_campaign(victim, un, uniform_inputs());
    min_unprotected = std::min(min_unprotected, cu.decision_accuracy);
    append_campaign_records(records, pname + "/unprotected", cu);

    atk::CampaignConfig ba;
    ba.mode = atk::Mode::Baseline;
    ba.trials = 40;
    ba.seed = mix_seed(cfg.seed, 0x8800 + p);
    ba.keep_records = true;
    auto cb = atk::run_single_step_campaign(victim, ba, uniform_inputs());
    min_baseline = std::min(min_baseline, cb.decision_accuracy);
    append_campaign_records(records, pname + "/baseline", cb);

    atk::CampaignConfig rz;
    rz.mode = atk::Mode::Randomized;
    rz.G = 1024;
    rz.trials = cfg.campaign_trials;
    rz.seed = mix_seed(cfg.seed, 0x9000 + p);
    rz.keep_records = true;
    rz.reentry_threshold = 1;
    auto cz = atk::run_single_step_campaign(victim, rz, uniform_inputs());
    for (const auto& s : cz.per_branch) {
      rand_hits += s.hits;
      rand_trials += s.trials;
    }
    append_campaign_records(records, pname + "/randomized", cz);
  }

  rep.add({"unprotected-recovery", min_unprotected, 1.0, 0,
           min_unprotected == 1.0, "minimum per-program decision accuracy"});
  rep.add({"baseline-recovery", min_baseline, 1.0, 0, min_baseline == 1.0,
           "randomization disabled"});
  double p_eq1 = atk::attack_probability(1024, k);
  double rate = rand_trials ? (double)rand_hits / (double)rand_trials : 0.0;
  double tol = 3 * binomial_sigma(p_eq1, rand_trials);
  rep.add({"randomized-bound", rate, p_eq1, tol,
           std::fabs(rate - p_eq1) <= tol,
           std::to_string(rand_trials) + " pooled probes, G=1024"});
  rep.records_jsonl = records.str();
  return rep;
}

Report suite_reentry(const SuiteConfig& cfg) {
  Report rep;
  rep.suite = "reentry";
  rep.seed = cfg.seed;
  rep.config_json = config_json(cfg).dump();

  auto program = isa::parse_program(multi_branch_victim(5), "secrets5");
  LayoutConfig lcfg;
  lcfg.area_size = cfg.area_size;
  auto victim = atk::prepare_victim(program, lcfg);
  uint64_t k = victim.built.manifest.k;
  std::ostringstream records;

  {
    // one five-entry campaign; joint recovery of the first b branches is read
    // off the per-entry records, so every b point gets the full trial count
    atk::CampaignConfig ccfg;
    ccfg.mode = atk::Mode::Randomized;
    ccfg.G = 4096;
    ccfg.trials = cfg.decay_trials;
    ccfg.seed = mix_seed(cfg.seed, 0xA000);
    ccfg.keep_records = true;
    ccfg.reentry_threshold = 1;
    std::vector<size_t> cycle = {0, 1, 2, 3, 4};
    auto cr = atk::run_reentry_campaign(victim, ccfg, 5, cycle,
                                        uniform_inputs());
    if (cr.records.size() != cr.trials * 5)
      throw Error("suite", "unexpected re-entry record count");
    uint64_t joint[5] = {0, 0, 0, 0, 0};
    for (uint64_t t = 0; t < cr.trials; ++t) {
      bool all = true;
      for (unsigned b = 0; b < 5; ++b) {
        all &= cr.records[t * 5 + b].member;
        joint[b] += all;
      }
    }
    for (unsigned b = 1; b <= 5; ++b) {
      double pb = atk::multi_branch_success(4096, k, b);
      double tol = 3 * binomial_sigma(pb, cfg.decay_trials);
      double rate = (double)joint[b - 1] / (double)cr.trials;
      rep.add({"joint[b=" + std::to_string(b) + "]", rate, pb, tol,
               std::fabs(rate - pb) <= tol,
               std::to_string(cr.trials) + " trials, G=4096"});
    }
    append_campaign_records(records, "decay", cr);
  }

  {
    // successive entries should leak independently once re-randomized
    atk::CampaignConfig ccfg;
    ccfg.mode = atk::Mode::Randomized;
    ccfg.G = 1024;
    ccfg.trials = cfg.reentry_trials;
    ccfg.seed = mix_seed(cfg.seed, 0xA100);
    ccfg.keep_records = true;
    ccfg.reentry_threshold = 1;
    std::vector<size_t> cycle = {0, 1, 2, 3, 4};
    auto cr = atk::run_reentry_campaign(
        victim, ccfg, static_cast<uint32_t>(cfg.reentry_entries), cycle,
        uniform_inputs());
    uint64_t n[2][2] = {{0, 0}, {0, 0}};
    uint64_t hits = 0;
    for (size_t i = 0; i < cr.records.size(); ++i) {
      const auto& r = cr.records[i];
      if (r.member) ++hits;
      if (r.entry == 0) continue;
      const auto& prev = cr.records[i - 1];
      ++n[prev.member ? 1 : 0][r.member ? 1 : 0];
    }
    uint64_t total = n[0][0] + n[0][1] + n[1][0] + n[1][1];
    double stat = 0;
    for (int a = 0; a < 2; ++a) {
      for (int b2 = 0; b2 < 2; ++b2) {
        double row = (double)(n[a][0] + n[a][1]);
        double col = (double)(n[0][b2] + n[1][b2]);
        double e = row * col / (double)total;
        if (e > 0) stat += ((double)n[a][b2] - e) * ((double)n[a][b2] - e) / e;
      }
    }
    double pval = chi_square_p(stat, 1);
    rep.add({"entry-independence-p", pval, 1.0, 0, pval > 0.01,
             "consecutive-entry contingency, G=1024"});
    uint64_t probes = cr.trials * cfg.reentry_entries;
    double p1 = atk::attack_probability(1024, k);
    double rate = (double)hits / (double)probes;
    double tol = 3 * binomial_sigma(p1, probes);
    rep.add({"reentry-rate", rate, p1, tol, std::fabs(rate - p1) <= tol,
             std::to_string(probes) + " probed entries"});
    append_campaign_records(records, "independence", cr);
  }

  rep.records_jsonl = records.str();
  return rep;
}

}  // namespace

Report run_suite(const std::string& name, const SuiteConfig& cfg) {
  if (name == "equivalence") return suite_equivalence(cfg);
  if (name == "trace-invariance") return suite_trace_invariance(cfg);
  if (name == "gap-constancy") return suite_gap_constancy(cfg);
  if (name == "eq1-sweep") return suite_eq1_sweep(cfg);
  if (name == "baseline-break") return suite_baseline_break(cfg);
  if (name == "reentry") return suite_reentry(cfg);
  throw Error("usage", "unknown suite: " + name);
}

}  // namespace cfrand::harness
