#pragma once

// Single-stepping branch-shadowing attacker. The attacker sees the public
// template (static code, trampoline composition and template placements,
// geometry, k), counts enclave steps, and owns untrusted memory and the LBR.
// It never reads current trampoline placements or the jump table; campaigns
// get ground truth through the privileged harness side only.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cfrand/machine.hpp"
#include "cfrand/obfuscate.hpp"

namespace cfrand::atk {

enum class Mode { Unprotected, Baseline, Randomized };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& s);

struct AttackerView {
  bool obfuscated = false;
  MemoryImage template_image;  // the public compile-time artifact
  obf::Manifest manifest;      // valid when obfuscated
  uint64_t static_base = 0;
  uint64_t k = 0;

  std::string to_json() const;  // no runtime placement data by construction
};

AttackerView make_attacker_view(const MemoryImage& template_image,
                                const obf::Manifest* manifest);

// Conditional-branch sites visible in static code (non-empty only for
// unprotected images; obfuscated static code has none).
struct StaticBranchSite {
  uint64_t addr = 0;
  isa::Op op = isa::Op::Nop;
  uint64_t taken_target = 0;
};
std::vector<StaticBranchSite> enumerate_static_sites(const AttackerView& v);
// All branch instructions in static code, for structure checks.
std::vector<StaticBranchSite> enumerate_static_branches(const AttackerView& v);

// Virtual trampoline locations [0, k): the two areas viewed as one span.
uint64_t virtual_to_addr(const AttackerView& v, uint64_t loc);
uint64_t addr_to_virtual(const AttackerView& v, uint64_t addr);

// Uniform guesses without replacement; optionally rejects guesses whose
// shadow branch shares a BTB slot with an earlier guess (slot-disjoint mode
// makes physical detection equal to ground-truth membership). G >= k
// degenerates to full enumeration; G beyond the BTB capacity is an error.
std::vector<uint64_t> sample_guesses(const AttackerView& v, uint32_t G,
                                     uint32_t branch_offset, bool slot_disjoint,
                                     std::mt19937_64& rng);

struct SiteProbe {
  size_t block = 0;          // conditional block index
  uint32_t probe_tid = 0;    // final piece of the taken chain's first hop
  uint32_t entry_size = 0;
  uint32_t branch_offset = 0;  // branch position inside the entry
  uint64_t target_addr = 0;    // static target of that piece's JMP
  uint64_t sigma = 0;          // enclave step right after the probed branch
};

struct Schedule {
  std::vector<uint64_t> jb_fire_step;  // first firing per block, enclave steps
  std::vector<SiteProbe> sites;        // conditional sites in block order
};

// Calibration run on the attacker's own copy of the template image; the
// schedule is input-independent (gap constancy), so any input works.
Schedule compute_schedule(const AttackerView& v, uint64_t max_steps = 1u << 22);

// One shadow probe: plants JMP alias(target) at alias(branch_addr), executes
// it, reads the LBR prediction flag.
bool shadow_probe(mach::AttackerPort& port, uint64_t branch_addr,
                  uint64_t target_addr);
// Overwrites the BTB slot of branch_addr with an unrelated tag so stale probe
// state cannot fake a later detection.
void cleanse_slot(mach::AttackerPort& port, uint64_t branch_addr);

// Probes a guessed entry placement list in LBR-sized batches. Returns per
// guess whether the shadow branch reported predicted-correct. With cleanse
// set, every probed slot is scrubbed afterwards so the probe's own BTB
// record cannot satisfy a later probe of the same location (needed when the
// same machine is probed across multiple enclave entries).
std::vector<bool> probe_guesses(mach::AttackerPort& port,
                                const AttackerView& v,
                                const std::vector<uint64_t>& guesses,
                                uint32_t branch_offset, uint64_t target_addr,
                                bool cleanse = false);

// ---- campaigns ----

struct VictimBundle {
  isa::Program original;
  obf::ObfuscatedProgram op;
  MemoryImage unprotected_image;
  obf::BuiltImage built;
  LayoutConfig layout_cfg;
};

VictimBundle prepare_victim(const isa::Program& p, const LayoutConfig& cfg);

using InputSampler = std::function<std::vector<int64_t>(std::mt19937_64&)>;

struct CampaignConfig {
  Mode mode = Mode::Randomized;
  uint32_t G = 4096;
  uint64_t trials = 1000;
  uint64_t seed = 1;
  size_t site_index = 0;             // probed site (baseline/randomized)
  uint64_t reentry_threshold = 1;    // randomized mode
  bool slot_disjoint = false;
  bool keep_records = false;
  uint64_t step_budget = 1u << 22;
};

struct TrialRecord {
  uint64_t trial = 0;
  uint64_t entry = 0;       // enclave entry index within the trial
  size_t site = 0;
  bool truth_taken = false;
  bool member = false;        // truth location in the guess set
  bool lbr_detected = false;
  bool decision_correct = false;
};

struct SiteStats {
  std::string site;
  uint64_t trials = 0;
  uint64_t hits = 0;       // membership successes (spec detection)
  uint64_t lbr_hits = 0;   // physically observed detections
  uint64_t correct = 0;    // recovered decision matches ground truth
};

struct CampaignResult {
  std::string mode;
  uint32_t G = 0;
  uint64_t k = 0;
  uint64_t trials = 0;
  uint64_t seed = 0;
  std::vector<SiteStats> per_branch;
  double success_rate = 0;
  double lbr_rate = 0;
  double decision_accuracy = 0;
  uint64_t all_site_successes = 0;  // trials where every probed site hit
  std::vector<TrialRecord> records;

  std::string to_json() const;
  std::string records_jsonl() const;
};

// Fresh machine per trial. Unprotected: walks every conditional on the path.
// Baseline: probes every site at template positions. Randomized: G guesses on
// cfg.site_index during a single enclave entry.
CampaignResult run_single_step_campaign(const VictimBundle& victim,
                                        const CampaignConfig& cfg,
                                        const InputSampler& inputs);

// One machine per trial, `entries` enclave entries; entry e probes
// site_cycle[e % site_cycle.size()]. Used for the multi-branch product law
// and re-entry independence.
CampaignResult run_reentry_campaign(const VictimBundle& victim,
                                    const CampaignConfig& cfg,
                                    uint64_t entries,
                                    const std::vector<size_t>& site_cycle,
                                    const InputSampler& inputs);

// ---- model ----

double attack_probability(uint32_t G, uint64_t k);  // min(G/k, 1)
double multi_branch_success(uint32_t G, uint64_t k, unsigned branches);

}  // namespace cfrand::atk
