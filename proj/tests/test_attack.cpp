// Attacker model: guess sampling, shadow probes, schedules, campaigns.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "cfrand/attack.hpp"
#include "cfrand/harness.hpp"
#include "cfrand/image.hpp"
#include "cfrand/isa.hpp"
#include "cfrand/machine.hpp"
#include "cfrand/obfuscate.hpp"
#include "cfrand/randomize.hpp"
#include "cfrand/rng.hpp"
#include "doctest.h"

using namespace cfrand;

namespace {

const char* kDiamond =
    "CMP r0, r1\nJCC EQ, e\nCONST r2, 1\nJMP x\ne: CONST r2, 2\nx: OUT "
    "r2\nHALT\n";

atk::VictimBundle diamond_victim() {
  return atk::prepare_victim(isa::parse_program(kDiamond), LayoutConfig{});
}

}  // namespace

TEST_CASE("attack probability formula") {
  CHECK(atk::attack_probability(1024, 8187) == doctest::Approx(1024.0 / 8187));
  CHECK(atk::attack_probability(4096, 8187) == doctest::Approx(4096.0 / 8187));
  CHECK(atk::attack_probability(4096, 4091) == 1.0);  // G >= k saturates
  CHECK(atk::attack_probability(0, 8187) == 0.0);
  CHECK_THROWS_AS(atk::attack_probability(1, 0), Error);
  CHECK_THROWS_AS(atk::attack_probability(4097, 8187), Error);  // BTB capacity

  CHECK(atk::multi_branch_success(1024, 8187, 3) ==
        doctest::Approx(std::pow(1024.0 / 8187, 3)));
  CHECK(atk::multi_branch_success(1024, 8187, 0) == 1.0);
}

TEST_CASE("virtual location span covers both areas") {
  atk::VictimBundle v = diamond_victim();
  atk::AttackerView view =
      atk::make_attacker_view(v.built.image, &v.built.manifest);
  REQUIRE(view.k == 8187);

  // Round trip over the whole span.
  for (uint64_t loc = 0; loc < view.k; ++loc) {
    const uint64_t addr = atk::virtual_to_addr(view, loc);
    CHECK(atk::addr_to_virtual(view, addr) == loc);
  }
  // The span splits between the areas: first area_size locations in A.
  const auto& man = v.built.manifest;
  CHECK(atk::virtual_to_addr(view, 0) == man.area_base[0]);
  CHECK(atk::virtual_to_addr(view, man.area_size) == man.area_base[1]);
  CHECK_THROWS_AS(atk::virtual_to_addr(view, view.k), Error);
}

TEST_CASE("guess sampling: without replacement, uniform, reproducible") {
  atk::VictimBundle v = diamond_victim();
  atk::AttackerView view =
      atk::make_attacker_view(v.built.image, &v.built.manifest);

  std::mt19937_64 rng(123);
  std::vector<uint64_t> g = atk::sample_guesses(view, 1024, 0, false, rng);
  REQUIRE(g.size() == 1024);
  std::set<uint64_t> uniq(g.begin(), g.end());
  CHECK(uniq.size() == g.size());
  CHECK(*std::max_element(g.begin(), g.end()) < view.k);

  std::mt19937_64 rng2(123);
  CHECK(atk::sample_guesses(view, 1024, 0, false, rng2) == g);

  // G >= k degenerates to exhaustive enumeration. Needs k inside the BTB
  // capacity cap, so use half-size areas (k = 4091).
  LayoutConfig small;
  small.area_size = 2048;
  atk::VictimBundle vs =
      atk::prepare_victim(isa::parse_program(kDiamond), small);
  atk::AttackerView vsview =
      atk::make_attacker_view(vs.built.image, &vs.built.manifest);
  REQUIRE(vsview.k == 4091);
  std::vector<uint64_t> all = atk::sample_guesses(vsview, 4096, 0, false, rng);
  CHECK(all.size() == vsview.k);
  CHECK(std::set<uint64_t>(all.begin(), all.end()).size() == vsview.k);

  CHECK_THROWS_AS(atk::sample_guesses(view, 0, 0, false, rng), Error);
  CHECK_THROWS_AS(atk::sample_guesses(view, 8187, 0, false, rng), Error);

  // Coarse uniformity: mean of many one-guess draws near k/2.
  double acc = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i)
    acc += double(atk::sample_guesses(view, 1, 0, false, rng)[0]);
  const double mean = acc / n;
  const double sigma = double(view.k) / std::sqrt(12.0 * n);
  CHECK(std::fabs(mean - (view.k - 1) / 2.0) < 4 * sigma);
}

TEST_CASE("slot-disjoint sampling never reuses a BTB slot") {
  atk::VictimBundle v = diamond_victim();
  atk::AttackerView view =
      atk::make_attacker_view(v.built.image, &v.built.manifest);
  std::mt19937_64 rng(7);
  const uint32_t branch_offset = 2;
  std::vector<uint64_t> g =
      atk::sample_guesses(view, 1024, branch_offset, true, rng);
  std::set<uint32_t> slots;
  for (uint64_t loc : g)
    slots.insert(
        mach::btb_index(atk::virtual_to_addr(view, loc) + branch_offset));
  CHECK(slots.size() == g.size());

  // More slots than the BTB has cannot be disjoint.
  CHECK_THROWS_AS(atk::sample_guesses(view, 4097, branch_offset, true, rng),
                  Error);
}

TEST_CASE("static site enumeration tells protected from unprotected") {
  atk::VictimBundle v = diamond_victim();

  atk::AttackerView plain = atk::make_attacker_view(v.unprotected_image, nullptr);
  std::vector<atk::StaticBranchSite> sites = atk::enumerate_static_sites(plain);
  REQUIRE(sites.size() == 1);
  CHECK(sites[0].op == isa::Op::Jeq);

  // After obfuscation the static region exposes no conditional sites, and
  // every remaining branch is an indirect jump-block.
  atk::AttackerView prot =
      atk::make_attacker_view(v.built.image, &v.built.manifest);
  CHECK(atk::enumerate_static_sites(prot).empty());
  for (const auto& b : atk::enumerate_static_branches(prot))
    CHECK(b.op == isa::Op::Jmpr);
}

TEST_CASE("attacker view JSON never leaks placements") {
  atk::VictimBundle v = diamond_victim();
  atk::AttackerView view =
      atk::make_attacker_view(v.built.image, &v.built.manifest);
  const std::string j = view.to_json();
  CHECK(j.find("placement") == std::string::npos);
  CHECK(j.find("\"k\"") != std::string::npos);
}

TEST_CASE("schedule calibration finds the conditional site") {
  atk::VictimBundle v = diamond_victim();
  atk::AttackerView view =
      atk::make_attacker_view(v.built.image, &v.built.manifest);
  atk::Schedule sch = atk::compute_schedule(view);
  CHECK(sch.jb_fire_step.size() == v.built.manifest.blocks.size());
  REQUIRE(sch.sites.size() == 1);

  const atk::SiteProbe& sp = sch.sites[0];
  CHECK(sp.block == 0);
  CHECK(sp.entry_size >= obf::kMinTrampolineBytes);
  CHECK(sp.entry_size <= obf::kMaxTrampolineBytes);
  CHECK(sp.branch_offset < sp.entry_size);
  CHECK(sp.sigma > 0);

  // Schedules are input-independent, so recomputing gives the same result.
  atk::Schedule again = atk::compute_schedule(view);
  CHECK(again.jb_fire_step == sch.jb_fire_step);
  CHECK(again.sites[0].sigma == sp.sigma);
}

TEST_CASE("shadow probe detects a planted branch and cleanse removes it") {
  atk::VictimBundle v = diamond_victim();
  atk::AttackerView view =
      atk::make_attacker_view(v.built.image, &v.built.manifest);
  atk::Schedule sch = atk::compute_schedule(view);
  const atk::SiteProbe& sp = sch.sites[0];

  // Run the baseline victim (no randomization) down the taken arm, stopping
  // right after the probed trampoline branch retires.
  mach::Machine m(v.built.image);
  m.enter_enclave(std::vector<int64_t>{5, 5});
  bool probed = false, detected = false, after_cleanse = true;
  const uint64_t entry_addr =
      v.built.image.read64(v.built.manifest.jt_base + 8ull * sp.probe_tid);
  const uint64_t branch_addr = entry_addr + sp.branch_offset;

  m.run_single_step(1 << 20, [&](mach::AttackerPort& port) {
    if (port.enclave_steps() != sp.sigma) return true;
    probed = true;
    detected = atk::shadow_probe(port, branch_addr, sp.target_addr);
    atk::cleanse_slot(port, branch_addr);
    after_cleanse = atk::shadow_probe(port, branch_addr, sp.target_addr);
    return false;
  });
  REQUIRE(probed);
  CHECK(detected);
  CHECK_FALSE(after_cleanse);

  // Same probe on the not-taken arm: the entry never fired, no detection.
  mach::Machine m2(v.built.image);
  m2.enter_enclave(std::vector<int64_t>{5, 6});
  bool detected_nt = false;
  m2.run_single_step(1 << 20, [&](mach::AttackerPort& port) {
    if (port.enclave_steps() != sp.sigma) return true;
    detected_nt = atk::shadow_probe(port, branch_addr, sp.target_addr);
    return false;
  });
  CHECK_FALSE(detected_nt);
}

TEST_CASE("unprotected and baseline campaigns recover the secret") {
  atk::VictimBundle v = diamond_victim();
  std::mt19937_64 seeder(1);
  atk::InputSampler inputs = [](std::mt19937_64& rng) {
    return std::vector<int64_t>{int64_t(bounded(rng, 4)),
                                int64_t(bounded(rng, 4))};
  };

  for (atk::Mode mode : {atk::Mode::Unprotected, atk::Mode::Baseline}) {
    atk::CampaignConfig cfg;
    cfg.mode = mode;
    cfg.trials = 30;
    cfg.seed = 11;
    atk::CampaignResult r = atk::run_single_step_campaign(v, cfg, inputs);
    CHECK(r.trials == 30);
    CHECK(r.decision_accuracy == 1.0);
    CHECK(r.success_rate == 1.0);
  }
}

TEST_CASE("randomized campaign success tracks G/k") {
  atk::VictimBundle v = diamond_victim();
  atk::InputSampler inputs = [](std::mt19937_64& rng) {
    return std::vector<int64_t>{int64_t(bounded(rng, 4)),
                                int64_t(bounded(rng, 4))};
  };

  atk::CampaignConfig cfg;
  cfg.mode = atk::Mode::Randomized;
  cfg.G = 2048;
  cfg.trials = 600;
  cfg.seed = 3;
  cfg.keep_records = true;
  atk::CampaignResult r = atk::run_single_step_campaign(v, cfg, inputs);

  const double p = 2048.0 / 8187.0;
  const double sigma = harness::binomial_sigma(p, cfg.trials);
  CHECK(std::fabs(r.success_rate - p) <= 5 * sigma);
  CHECK(r.k == 8187);
  REQUIRE(r.records.size() == cfg.trials);

  // Records are self-consistent: success counts member flags.
  uint64_t members = 0;
  for (const auto& rec : r.records) members += rec.member;
  CHECK(double(members) / cfg.trials == doctest::Approx(r.success_rate));

  // JSON and JSONL render without blowing up and carry the headline numbers.
  CHECK(r.to_json().find("success_rate") != std::string::npos);
  const std::string lines = r.records_jsonl();
  CHECK(std::count(lines.begin(), lines.end(), '\n') == int64_t(cfg.trials));
}

TEST_CASE("a full-enumeration attacker always wins, even randomized") {
  LayoutConfig small;
  small.area_size = 2048;  // k = 4091, inside the BTB capacity cap
  atk::VictimBundle v =
      atk::prepare_victim(isa::parse_program(kDiamond), small);
  atk::InputSampler inputs = [](std::mt19937_64& rng) {
    return std::vector<int64_t>{int64_t(bounded(rng, 2)),
                                int64_t(bounded(rng, 2))};
  };
  atk::CampaignConfig cfg;
  cfg.mode = atk::Mode::Randomized;
  cfg.G = 4096;  // covers every location; membership is certain
  cfg.trials = 20;
  cfg.seed = 9;
  atk::CampaignResult r = atk::run_single_step_campaign(v, cfg, inputs);
  CHECK(r.success_rate == 1.0);
}
