#include "cfrand/attack.hpp"

#include <algorithm>
#include <set>

#include "cfrand/rng.hpp"
#include "json.hpp"

namespace cfrand::atk {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Unprotected: return "unprotected";
    case Mode::Baseline: return "baseline";
    case Mode::Randomized: return "randomized";
  }
  return "?";
}

Mode mode_from_name(const std::string& s) {
  if (s == "unprotected") return Mode::Unprotected;
  if (s == "baseline") return Mode::Baseline;
  if (s == "randomized") return Mode::Randomized;
  throw Error("attack", "unknown attack mode '" + s + "'");
}

std::string AttackerView::to_json() const {
  nlohmann::json j;
  j["obfuscated"] = obfuscated;
  j["static_base"] = static_base;
  j["k"] = k;
  j["template_image"] = nlohmann::json::parse(template_image.to_json());
  if (obfuscated) j["manifest"] = nlohmann::json::parse(manifest.to_json());
  return j.dump(2);
}

AttackerView make_attacker_view(const MemoryImage& template_image,
                                const obf::Manifest* manifest) {
  AttackerView v;
  v.template_image = template_image;
  v.static_base = template_image.region("static").base;
  if (manifest) {
    v.obfuscated = true;
    v.manifest = *manifest;
    v.k = manifest->k;
  } else {
    const Region& a = template_image.region("trampoline_a");
    const Region& b = template_image.region("trampoline_b");
    v.k = rnd::location_count(a.bytes.size() + b.bytes.size());
  }
  return v;
}

std::vector<StaticBranchSite> enumerate_static_branches(const AttackerView& v) {
  std::vector<StaticBranchSite> out;
  const Region& stat = v.template_image.region("static");
  for (const auto& [addr, in] : disassemble_region(stat)) {
    if (!isa::is_branch(in.op)) continue;
    out.push_back({addr, in.op,
                   in.op == isa::Op::Jmpr ? 0 : static_cast<uint64_t>(in.imm)});
  }
  return out;
}

std::vector<StaticBranchSite> enumerate_static_sites(const AttackerView& v) {
  std::vector<StaticBranchSite> out;
  for (const auto& s : enumerate_static_branches(v))
    if (isa::is_jcc(s.op)) out.push_back(s);
  return out;
}

namespace {

struct Geometry {
  uint64_t base_a = 0, base_b = 0, size = 0;
};

Geometry geometry_of(const AttackerView& v) {
  const Region& a = v.template_image.region("trampoline_a");
  const Region& b = v.template_image.region("trampoline_b");
  return {a.base, b.base, a.bytes.size()};
}

}  // namespace

uint64_t virtual_to_addr(const AttackerView& v, uint64_t loc) {
  const Geometry g = geometry_of(v);
  if (loc >= v.k) throw Error("attack", "virtual location out of range");
  return loc < g.size ? g.base_a + loc : g.base_b + (loc - g.size);
}

uint64_t addr_to_virtual(const AttackerView& v, uint64_t addr) {
  const Geometry g = geometry_of(v);
  if (addr >= g.base_a && addr < g.base_a + g.size) return addr - g.base_a;
  if (addr >= g.base_b && addr < g.base_b + g.size)
    return g.size + (addr - g.base_b);
  throw Error("attack", "address outside the trampoline areas");
}

std::vector<uint64_t> sample_guesses(const AttackerView& v, uint32_t G,
                                     uint32_t branch_offset, bool slot_disjoint,
                                     std::mt19937_64& rng) {
  if (G == 0) throw Error("attack", "guess count must be positive");
  if (G > mach::kBtbEntries)
    throw Error("attack", "guess count exceeds BTB capacity");
  if (G >= v.k) {
    std::vector<uint64_t> all(v.k);
    for (uint64_t i = 0; i < v.k; ++i) all[i] = i;
    return all;
  }
  std::vector<uint64_t> out;
  out.reserve(G);
  std::set<uint64_t> used;
  std::vector<bool> slot_used(mach::kBtbEntries, false);
  while (out.size() < G) {
    if (used.size() == v.k)
      throw Error("attack", "cannot satisfy slot-disjoint guess count");
    const uint64_t loc = bounded(rng, v.k);
    if (!used.insert(loc).second) continue;
    if (slot_disjoint) {
      const uint32_t slot =
          mach::btb_index(virtual_to_addr(v, loc) + branch_offset);
      if (slot_used[slot]) continue;  // loc stays consumed
      slot_used[slot] = true;
    }
    out.push_back(loc);
  }
  return out;
}

Schedule compute_schedule(const AttackerView& v, uint64_t max_steps) {
  if (!v.obfuscated)
    throw Error("attack", "schedule requires an obfuscated template");
  const obf::Manifest& m = v.manifest;

  mach::Machine cal(v.template_image);  // private copy, template placements
  cal.set_trace(true);
  cal.enter_enclave({});
  auto res = cal.run_to_halt(max_steps);
  if (!res.halted || res.fault)
    throw Error("attack", "calibration run did not halt cleanly");

  std::map<uint64_t, size_t> jb_block;
  for (size_t b = 0; b < m.blocks.size(); ++b)
    jb_block[v.template_image.symbol(m.blocks[b].jb_symbol)] = b;

  Schedule sch;
  sch.jb_fire_step.assign(m.blocks.size(), 0);
  std::vector<bool> seen(m.blocks.size(), false);
  uint64_t es = 0;
  for (const auto& ev : cal.trace()) {
    if (ev.mode != mach::Mode::Enclave) continue;
    ++es;
    auto it = jb_block.find(ev.pc);
    if (it != jb_block.end() && !seen[it->second]) {
      seen[it->second] = true;
      sch.jb_fire_step[it->second] = es;
    }
  }
  for (size_t b = 0; b < m.blocks.size(); ++b)
    if (!seen[b]) sch.jb_fire_step[b] = 0;  // block never reached (dead code)

  auto entry_of = [&](uint32_t tid) -> const obf::Manifest::Entry& {
    for (const auto& e : m.entries)
      if (e.tid == tid) return e;
    throw Error("attack", "manifest entry missing");
  };

  for (size_t b = 0; b < m.blocks.size(); ++b) {
    if (!m.blocks[b].conditional) continue;
    const obf::Manifest::Edge* taken = nullptr;
    for (const auto& e : m.edges)
      if (e.src == b && e.kind == "taken") taken = &e;
    if (!taken || taken->hops.empty())
      throw Error("attack", "conditional site without a taken chain");
    const std::vector<uint32_t>& first_hop = taken->hops.front();
    SiteProbe sp;
    sp.block = b;
    sp.probe_tid = first_hop.back();
    const auto& pe = entry_of(sp.probe_tid);
    sp.entry_size = pe.size;
    sp.branch_offset = pe.size - 5;  // the trailing JMP
    sp.target_addr = v.template_image.symbol(pe.target_symbol);
    uint64_t hop_instrs = 0;
    for (uint32_t tid : first_hop) hop_instrs += entry_of(tid).instrs;
    if (!seen[b])
      throw Error("attack", "probed site is unreachable in calibration");
    sp.sigma = sch.jb_fire_step[b] + hop_instrs;
    sch.sites.push_back(sp);
  }
  return sch;
}

bool shadow_probe(mach::AttackerPort& port, uint64_t branch_addr,
                  uint64_t target_addr) {
  const uint64_t src = branch_addr + kAliasOffset;
  isa::Instruction jmp;
  jmp.op = isa::Op::Jmp;
  jmp.imm = static_cast<int64_t>(target_addr + kAliasOffset);
  std::vector<uint8_t> bytes;
  isa::encode_instruction(jmp, bytes);
  port.write_untrusted(src, bytes);
  port.run_untrusted(src, 1);
  auto recs = port.read_lbr();
  if (recs.empty() || recs.back().source != src)
    throw Error("attack", "LBR did not record the shadow branch");
  return recs.back().predicted;
}

void cleanse_slot(mach::AttackerPort& port, uint64_t branch_addr) {
  const uint64_t src = branch_addr + kAliasOffset + 0x1000;  // same slot, new tag
  isa::Instruction jmp;
  jmp.op = isa::Op::Jmp;
  jmp.imm = static_cast<int64_t>(src);
  std::vector<uint8_t> bytes;
  isa::encode_instruction(jmp, bytes);
  port.write_untrusted(src, bytes);
  port.run_untrusted(src, 1);
}

std::vector<bool> probe_guesses(mach::AttackerPort& port,
                                const AttackerView& v,
                                const std::vector<uint64_t>& guesses,
                                uint32_t branch_offset, uint64_t target_addr,
                                bool cleanse) {
  std::vector<bool> detected(guesses.size(), false);
  isa::Instruction jmp;
  jmp.op = isa::Op::Jmp;
  jmp.imm = static_cast<int64_t>(target_addr + kAliasOffset);
  std::vector<uint8_t> bytes;
  isa::encode_instruction(jmp, bytes);

  for (size_t lo = 0; lo < guesses.size(); lo += mach::kLbrDepth) {
    const size_t hi = std::min(lo + mach::kLbrDepth, guesses.size());
    for (size_t i = lo; i < hi; ++i) {
      const uint64_t src =
          virtual_to_addr(v, guesses[i]) + branch_offset + kAliasOffset;
      port.write_untrusted(src, bytes);
      port.run_untrusted(src, 1);
    }
    auto recs = port.read_lbr();
    const size_t n = hi - lo;
    if (recs.size() < n)
      throw Error("attack", "LBR lost shadow branch records");
    for (size_t i = 0; i < n; ++i) {
      const auto& rec = recs[recs.size() - n + i];
      const uint64_t want =
          virtual_to_addr(v, guesses[lo + i]) + branch_offset + kAliasOffset;
      if (rec.source != want)
        throw Error("attack", "LBR record order mismatch");
      detected[lo + i] = rec.predicted;
    }
    if (cleanse)
      for (size_t i = lo; i < hi; ++i)
        cleanse_slot(port, virtual_to_addr(v, guesses[i]) + branch_offset);
  }
  return detected;
}

VictimBundle prepare_victim(const isa::Program& p, const LayoutConfig& cfg) {
  VictimBundle vb;
  vb.original = p;
  vb.layout_cfg = cfg;
  vb.unprotected_image = layout(p, cfg);
  vb.op = obf::pad_trampolines(obf::obfuscate(p));
  vb.built = materialize(vb.op, cfg);
  return vb;
}

std::string CampaignResult::to_json() const {
  nlohmann::json j;
  j["mode"] = mode;
  j["G"] = G;
  j["k"] = k;
  j["trials"] = trials;
  j["seed"] = seed;
  j["success_rate"] = success_rate;
  j["lbr_rate"] = lbr_rate;
  j["decision_accuracy"] = decision_accuracy;
  j["all_site_successes"] = all_site_successes;
  j["per_branch"] = nlohmann::json::array();
  for (const auto& s : per_branch)
    j["per_branch"].push_back({{"site", s.site},
                               {"hits", s.hits},
                               {"trials", s.trials},
                               {"lbr_hits", s.lbr_hits},
                               {"correct", s.correct}});
  return j.dump(2);
}

std::string CampaignResult::records_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j{{"trial", r.trial},
                     {"entry", r.entry},
                     {"site", r.site},
                     {"truth_taken", r.truth_taken},
                     {"member", r.member},
                     {"lbr_detected", r.lbr_detected},
                     {"decision_correct", r.decision_correct}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

// Ground-truth conditional outcomes via a privileged oracle run of the
// unprotected image.
std::vector<std::pair<uint64_t, bool>> oracle_decisions(
    const VictimBundle& victim, std::span<const int64_t> inputs,
    uint64_t budget) {
  mach::Machine m(victim.unprotected_image);
  m.set_trace(true);
  m.enter_enclave(inputs);
  auto res = m.run_to_halt(budget);
  if (!res.halted || res.fault)
    throw Error("attack", "oracle run did not halt cleanly");
  std::vector<std::pair<uint64_t, bool>> out;
  for (const auto& ev : m.trace())
    if (isa::is_jcc(ev.op)) out.emplace_back(ev.pc, ev.taken);
  return out;
}

// Maps a conditional block index to the address of its Jcc in the
// unprotected image (for matching oracle decisions to sites).
std::map<size_t, uint64_t> site_jcc_addrs(const VictimBundle& victim) {
  isa::FunctionCfg cfg = isa::build_cfg(victim.original);
  std::map<size_t, uint64_t> out;
  uint64_t addr = victim.unprotected_image.region("static").base;
  size_t block = 0;
  size_t in_block = 0;
  for (size_t i = 0; i < victim.original.code.size(); ++i) {
    while (block < cfg.blocks.size()) {
      const size_t blk_len = cfg.blocks[block].body.size() +
                             (cfg.blocks[block].term_instr ? 1 : 0);
      if (in_block < blk_len) break;
      ++block;
      in_block = 0;
    }
    const isa::Instruction& in = victim.original.code[i];
    if (isa::is_jcc(in.op)) out[block] = addr;
    addr += in.length();
    ++in_block;
  }
  return out;
}

}  // namespace

CampaignResult run_single_step_campaign(const VictimBundle& victim,
                                        const CampaignConfig& cfg,
                                        const InputSampler& inputs) {
  CampaignResult out;
  out.mode = mode_name(cfg.mode);
  out.G = cfg.mode == Mode::Randomized ? cfg.G : 1;
  out.seed = cfg.seed;
  out.trials = cfg.trials;

  AttackerView view =
      cfg.mode == Mode::Unprotected
          ? make_attacker_view(victim.unprotected_image, nullptr)
          : make_attacker_view(victim.built.image, &victim.built.manifest);
  out.k = view.k;

  const auto jcc_addrs = site_jcc_addrs(victim);

  Schedule sch;
  if (cfg.mode != Mode::Unprotected) sch = compute_schedule(view);

  std::map<std::string, size_t> stat_index;
  auto stats_for = [&](const std::string& name) -> SiteStats& {
    auto it = stat_index.find(name);
    if (it == stat_index.end()) {
      stat_index[name] = out.per_branch.size();
      out.per_branch.push_back({name, 0, 0, 0, 0});
      return out.per_branch.back();
    }
    return out.per_branch[it->second];
  };

  uint64_t member_sum = 0, lbr_sum = 0, correct_sum = 0, probe_sum = 0;

  for (uint64_t t = 0; t < cfg.trials; ++t) {
    std::mt19937_64 input_rng(mix_seed(cfg.seed, 3 * t));
    std::mt19937_64 guess_rng(mix_seed(cfg.seed, 3 * t + 1));
    const uint64_t entry_seed = mix_seed(cfg.seed, 3 * t + 2);
    const std::vector<int64_t> in = inputs(input_rng);
    const auto truth = oracle_decisions(victim, in, cfg.step_budget);
    // nullopt: the site's conditional was not on this input's execution path
    auto truth_of = [&](size_t block) -> std::optional<bool> {
      auto ait = jcc_addrs.find(block);
      if (ait == jcc_addrs.end())
        throw Error("attack", "site has no conditional branch");
      for (const auto& [addr, taken] : truth)
        if (addr == ait->second) return taken;
      return std::nullopt;
    };
    bool all_sites_ok = true;

    if (cfg.mode == Mode::Unprotected) {
      mach::Machine m(victim.unprotected_image);
      m.enter_enclave(in);
      // attacker walk: advance a model pc, probe right after each Jcc
      std::map<uint64_t, isa::Instruction> listing;
      for (const auto& [addr, insn] :
           disassemble_region(view.template_image.region("static")))
        listing[addr] = insn;
      uint64_t model_pc = view.static_base;
      std::vector<std::pair<uint64_t, bool>> recovered;
      m.run_single_step(cfg.step_budget, [&](mach::AttackerPort& port) {
        const isa::Instruction& insn = listing.at(model_pc);
        if (isa::is_jcc(insn.op)) {
          const bool det =
              shadow_probe(port, model_pc, static_cast<uint64_t>(insn.imm));
          cleanse_slot(port, model_pc);
          recovered.emplace_back(model_pc, det);
          model_pc = det ? static_cast<uint64_t>(insn.imm)
                         : model_pc + insn.length();
        } else if (insn.op == isa::Op::Jmp) {
          model_pc = static_cast<uint64_t>(insn.imm);
        } else if (insn.op == isa::Op::Halt) {
          return false;
        } else {
          model_pc += insn.length();
        }
        return true;
      });
      if (recovered.size() != truth.size())
        throw Error("attack", "attacker walk diverged from the victim");
      for (size_t i = 0; i < truth.size(); ++i) {
        const bool ok = recovered[i] == truth[i];
        SiteStats& st = stats_for("jcc@" + std::to_string(truth[i].first));
        ++st.trials;
        st.hits += ok;
        st.lbr_hits += recovered[i].second;
        st.correct += ok;
        ++probe_sum;
        member_sum += ok;
        lbr_sum += recovered[i].second;
        correct_sum += ok;
        all_sites_ok &= ok;
        if (cfg.keep_records)
          out.records.push_back(
              {t, 0, i, truth[i].second, ok, recovered[i].second, ok});
      }
    } else if (cfg.mode == Mode::Baseline) {
      rnd::RandomizationPolicy pol{};
      pol.reentry_threshold = rnd::RandomizationPolicy::kNever;
      pol.seed = entry_seed;
      mach::Machine m(victim.built.image,
                      obf::area_state_from(victim.built.manifest,
                                           victim.built.image),
                      pol);
      m.enter_enclave(in);
      size_t next_site = 0;
      std::vector<std::pair<size_t, bool>> found;
      m.run_single_step(cfg.step_budget, [&](mach::AttackerPort& port) {
        while (next_site < sch.sites.size() &&
               port.enclave_steps() == sch.sites[next_site].sigma) {
          const SiteProbe& sp = sch.sites[next_site];
          const uint64_t entry_addr =
              view.template_image.symbol("t" + std::to_string(sp.probe_tid));
          const bool det = shadow_probe(port, entry_addr + sp.branch_offset,
                                        sp.target_addr);
          cleanse_slot(port, entry_addr + sp.branch_offset);
          found.emplace_back(sp.block, det);
          ++next_site;
        }
        return next_site < sch.sites.size();
      });
      for (const auto& [block, det] : found) {
        const std::optional<bool> tk = truth_of(block);
        // executed sites must be recovered exactly; sites skipped by this
        // input's path must not produce a phantom detection
        const bool ok = tk ? det == *tk : !det;
        SiteStats& st = stats_for("site" + std::to_string(block));
        ++st.trials;
        st.hits += ok;
        st.lbr_hits += det;
        st.correct += ok;
        ++probe_sum;
        member_sum += ok;
        lbr_sum += det;
        correct_sum += ok;
        all_sites_ok &= ok;
        if (cfg.keep_records)
          out.records.push_back({t, 0, block, tk.value_or(false), ok, det, ok});
      }
    } else {
      if (cfg.site_index >= sch.sites.size())
        throw Error("attack", "site index out of range");
      const SiteProbe& sp = sch.sites[cfg.site_index];
      rnd::RandomizationPolicy pol{};
      pol.reentry_threshold = cfg.reentry_threshold;
      pol.seed = entry_seed;
      mach::Machine m(victim.built.image,
                      obf::area_state_from(victim.built.manifest,
                                           victim.built.image),
                      pol);
      m.enter_enclave(in);

      const auto guesses = sample_guesses(view, cfg.G, sp.branch_offset,
                                          cfg.slot_disjoint, guess_rng);
      // privileged: true placement of the probed entry
      const uint64_t truth_addr = m.tramp_state()->entry_addr(sp.probe_tid);
      const uint64_t truth_loc = addr_to_virtual(view, truth_addr);
      const bool member =
          std::find(guesses.begin(), guesses.end(), truth_loc) != guesses.end();

      bool lbr_detected = false;
      m.run_single_step(cfg.step_budget, [&](mach::AttackerPort& port) {
        if (port.enclave_steps() < sp.sigma) return true;
        auto det = probe_guesses(port, view, guesses, sp.branch_offset,
                                 sp.target_addr);
        for (bool d : det) lbr_detected |= d;
        return false;
      });

      const std::optional<bool> truth_taken = truth_of(sp.block);
      if (!truth_taken)
        throw Error("attack", "probed site not on the execution path");
      const bool tk = *truth_taken;
      // attacker decision: detected => the taken chain fired
      const bool decision = lbr_detected;
      const bool ok = decision == tk;
      SiteStats& st = stats_for("site" + std::to_string(sp.block));
      ++st.trials;
      st.hits += member;
      st.lbr_hits += lbr_detected;
      st.correct += ok;
      ++probe_sum;
      member_sum += member;
      lbr_sum += lbr_detected;
      correct_sum += ok;
      all_sites_ok &= member;
      if (cfg.keep_records)
        out.records.push_back({t, 0, sp.block, tk, member, lbr_detected, ok});
    }
    out.all_site_successes += all_sites_ok;
  }

  out.success_rate = probe_sum ? double(member_sum) / double(probe_sum) : 0.0;
  out.lbr_rate = probe_sum ? double(lbr_sum) / double(probe_sum) : 0.0;
  out.decision_accuracy =
      probe_sum ? double(correct_sum) / double(probe_sum) : 0.0;
  return out;
}

CampaignResult run_reentry_campaign(const VictimBundle& victim,
                                    const CampaignConfig& cfg,
                                    uint64_t entries,
                                    const std::vector<size_t>& site_cycle,
                                    const InputSampler& inputs) {
  if (cfg.mode != Mode::Randomized)
    throw Error("attack", "re-entry campaigns are for randomized mode");
  if (site_cycle.empty()) throw Error("attack", "empty site cycle");

  CampaignResult out;
  out.mode = "randomized";
  out.G = cfg.G;
  out.seed = cfg.seed;
  out.trials = cfg.trials;

  AttackerView view =
      make_attacker_view(victim.built.image, &victim.built.manifest);
  out.k = view.k;
  Schedule sch = compute_schedule(view);

  std::map<size_t, SiteStats> stats;
  uint64_t member_sum = 0, lbr_sum = 0, probe_sum = 0;

  for (uint64_t t = 0; t < cfg.trials; ++t) {
    rnd::RandomizationPolicy pol{};
    pol.reentry_threshold = cfg.reentry_threshold;
    pol.seed = mix_seed(cfg.seed, 2 * t);
    mach::Machine m(victim.built.image,
                    obf::area_state_from(victim.built.manifest,
                                         victim.built.image),
                    pol);
    bool all_ok = true;
    for (uint64_t e = 0; e < entries; ++e) {
      std::mt19937_64 input_rng(mix_seed(cfg.seed, (t << 20) ^ (2 * e)));
      std::mt19937_64 guess_rng(mix_seed(cfg.seed, (t << 20) ^ (2 * e + 1)));
      const size_t site = site_cycle[e % site_cycle.size()];
      if (site >= sch.sites.size())
        throw Error("attack", "site index out of range");
      const SiteProbe& sp = sch.sites[site];
      const std::vector<int64_t> in = inputs(input_rng);
      m.enter_enclave(in);
      const auto guesses = sample_guesses(view, cfg.G, sp.branch_offset,
                                          cfg.slot_disjoint, guess_rng);
      const uint64_t truth_addr = m.tramp_state()->entry_addr(sp.probe_tid);
      const uint64_t truth_loc = addr_to_virtual(view, truth_addr);
      const bool member =
          std::find(guesses.begin(), guesses.end(), truth_loc) !=
          guesses.end();
      bool lbr_detected = false;
      const uint64_t entry_base = m.enclave_steps();
      m.run_single_step(cfg.step_budget, [&](mach::AttackerPort& port) {
        if (port.enclave_steps() - entry_base < sp.sigma) return true;
        auto det = probe_guesses(port, view, guesses, sp.branch_offset,
                                 sp.target_addr, /*cleanse=*/true);
        for (bool d : det) lbr_detected |= d;
        return false;
      });
      if (!m.halted()) m.run_to_halt(cfg.step_budget);

      SiteStats& st = stats[site];
      st.site = "site" + std::to_string(sp.block);
      ++st.trials;
      st.hits += member;
      st.lbr_hits += lbr_detected;
      ++probe_sum;
      member_sum += member;
      lbr_sum += lbr_detected;
      all_ok &= member;
      if (cfg.keep_records)
        out.records.push_back({t, e, sp.block, false, member, lbr_detected,
                               member});
    }
    out.all_site_successes += all_ok;
  }
  for (auto& [idx, st] : stats) out.per_branch.push_back(st);
  out.success_rate = probe_sum ? double(member_sum) / double(probe_sum) : 0.0;
  out.lbr_rate = probe_sum ? double(lbr_sum) / double(probe_sum) : 0.0;
  out.decision_accuracy = out.success_rate;
  return out;
}

double attack_probability(uint32_t G, uint64_t k) {
  if (k == 0) throw Error("attack", "k must be positive");
  if (G > mach::kBtbEntries)
    throw Error("attack", "guess count exceeds BTB capacity");
  const double p = double(G) / double(k);
  return p > 1.0 ? 1.0 : p;
}

double multi_branch_success(uint32_t G, uint64_t k, unsigned branches) {
  double p = 1.0;
  const double per = attack_probability(G, k);
  for (unsigned i = 0; i < branches; ++i) p *= per;
  return p;
}

}  // namespace cfrand::atk
