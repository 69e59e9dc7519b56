#include "cfrand/obfuscate.hpp"

#include <algorithm>
#include <map>

#include "cfrand/machine.hpp"
#include "json.hpp"

namespace cfrand::obf {

namespace {

using isa::EdgeKind;
using isa::Instruction;
using isa::Op;

uint16_t jt_disp(uint32_t tid) {
  return static_cast<uint16_t>(isa::kJumpTableOffset + 8 * tid);
}

Instruction load_r15_slot(uint32_t tid) {
  Instruction in;
  in.op = Op::LoadData;
  in.rd = isa::kReservedReg;
  in.imm = jt_disp(tid);
  return in;
}

Instruction jmp_to(std::string label) {
  Instruction in;
  in.op = Op::Jmp;
  in.label = std::move(label);
  return in;
}

Instruction nop() { return Instruction{}; }

std::string body_sym(size_t b) { return "b" + std::to_string(b); }
std::string jb_sym(size_t b) { return "b" + std::to_string(b) + "_jb"; }

struct LoopInfo {
  // extent[h] = furthest back-edge source targeting header h (or h-1 if none)
  std::vector<size_t> extent;
};

LoopInfo analyze_loops(const std::vector<isa::Edge>& edges, size_t n) {
  LoopInfo li;
  li.extent.assign(n, 0);
  std::vector<bool> is_header(n, false);
  for (const auto& e : edges) {
    if (e.dst >= n) continue;  // virtual exit
    if (e.dst <= e.src) {
      is_header[e.dst] = true;
      li.extent[e.dst] = std::max(li.extent[e.dst], e.src);
    }
  }
  // proper nesting of [h, extent[h]] intervals
  std::vector<std::pair<size_t, size_t>> iv;
  for (size_t h = 0; h < n; ++h)
    if (is_header[h]) iv.emplace_back(h, li.extent[h]);
  for (size_t i = 0; i < iv.size(); ++i)
    for (size_t j = i + 1; j < iv.size(); ++j) {
      const auto [h1, e1] = iv[i];
      const auto [h2, e2] = iv[j];
      const bool disjoint = e1 < h2 || e2 < h1;
      const bool nested = (h1 <= h2 && e2 <= e1) || (h2 <= h1 && e1 <= e2);
      if (!disjoint && !nested)
        throw Error("obfuscate", "irreducible control flow: crossing loops");
    }
  // forward edges may only enter a loop at its header
  for (const auto& e : edges) {
    if (e.dst >= n || e.dst <= e.src) continue;
    for (const auto& [h, ex] : iv) {
      if (e.dst > h && e.dst <= ex && e.src < h)
        throw Error("obfuscate",
                    "irreducible control flow: jump into a loop body");
    }
  }
  return li;
}

}  // namespace

uint32_t TrampolineEntry::size() const {
  uint32_t s = 0;
  for (const auto& in : body) s += in.length();
  return s;
}

const TrampolineEntry& ObfuscatedProgram::entry(uint32_t tid) const {
  for (const auto& e : entries)
    if (e.tid == tid) return e;
  throw Error("obfuscate", "unknown trampoline id");
}

const EdgeChain* ObfuscatedProgram::chain(size_t src,
                                          isa::EdgeKind kind) const {
  for (const auto& c : chains)
    if (c.src == src && c.kind == kind) return &c;
  return nullptr;
}

ObfuscatedProgram obfuscate(const isa::Program& p) {
  auto rep = isa::validate(p);
  if (!rep.ok())
    throw Error("obfuscate",
                "invalid program: " + rep.violations.front().message);

  isa::FunctionCfg cfg = isa::build_cfg(p);
  const size_t n = cfg.blocks.size();
  ObfuscatedProgram op;
  if (n == 0) {
    op.padded = true;
    return op;
  }
  for (const auto& b : cfg.blocks)
    if (b.term == isa::Term::Jmpr)
      throw Error("obfuscate", "indirect jumps are not supported as input");

  // edge list in deterministic (block, kind) order with HALT -> virtual exit
  std::vector<isa::Edge> edges;
  for (size_t b = 0; b < n; ++b) {
    for (const auto& e : cfg.edges)
      if (e.src == b) edges.push_back(e);
    if (cfg.blocks[b].term == isa::Term::Halt)
      edges.push_back({b, n, EdgeKind::Unconditional});
  }
  const LoopInfo loops = analyze_loops(edges, n);

  // pass 1: hop skeletons with assigned tids
  struct HopPlan {
    enum { Skip, Enter, Exit } what;
    size_t block = 0;  // skipped block / entered block
    uint32_t tid = 0;
  };
  struct ChainPlan {
    isa::Edge edge;
    std::vector<HopPlan> hops;
  };
  std::vector<ChainPlan> plans;
  uint32_t next_tid = 0;
  for (const auto& e : edges) {
    ChainPlan cp;
    cp.edge = e;
    size_t sweep_end;  // last block skipped over
    if (e.dst > e.src) {
      sweep_end = e.dst - 1;  // forward edge (exit edge sweeps to n-1)
    } else {
      sweep_end = loops.extent[e.dst];  // back edge
    }
    for (size_t z = e.src + 1; z <= sweep_end; ++z)
      cp.hops.push_back({HopPlan::Skip, z, next_tid++});
    if (e.dst == n)
      cp.hops.push_back({HopPlan::Exit, 0, next_tid++});
    else
      cp.hops.push_back({HopPlan::Enter, e.dst, next_tid++});
    plans.push_back(std::move(cp));
  }

  auto chain_from = [&](size_t src) -> const ChainPlan& {
    const ChainPlan* found = nullptr;
    for (const auto& cp : plans) {
      if (cp.edge.src != src) continue;
      if (found) throw Error("obfuscate", "ambiguous successor chain");
      found = &cp;
    }
    if (!found) throw Error("obfuscate", "missing successor chain");
    return *found;
  };

  // pass 2: entry bodies
  for (const auto& cp : plans) {
    EdgeChain ec;
    ec.src = cp.edge.src;
    ec.dst = cp.edge.dst;
    ec.kind = cp.edge.kind;
    for (size_t h = 0; h < cp.hops.size(); ++h) {
      const HopPlan& hp = cp.hops[h];
      TrampolineEntry te;
      te.tid = hp.tid;
      switch (hp.what) {
        case HopPlan::Skip:
          te.kind = HopKind::Skip;
          te.body.push_back(load_r15_slot(cp.hops[h + 1].tid));
          te.target_symbol = jb_sym(hp.block);
          te.body.push_back(jmp_to(te.target_symbol));
          break;
        case HopPlan::Enter: {
          te.kind = HopKind::Enter;
          const isa::BasicBlock& tgt = cfg.blocks[hp.block];
          if (tgt.term != isa::Term::Jcc)
            te.body.push_back(
                load_r15_slot(chain_from(hp.block).hops.front().tid));
          te.target_symbol = body_sym(hp.block);
          te.body.push_back(jmp_to(te.target_symbol));
          break;
        }
        case HopPlan::Exit:
          te.kind = HopKind::Exit;
          te.target_symbol = "__halt";
          te.body.push_back(jmp_to(te.target_symbol));
          break;
      }
      op.entries.push_back(std::move(te));
      ec.hops.push_back({{hp.tid}});
    }
    op.chains.push_back(std::move(ec));
  }

  // static program: entry stub, bodies + selection, jump-blocks, epilogue
  isa::Program& sp = op.static_program;
  auto label_here = [&](const std::string& l) { sp.labels[l] = sp.code.size(); };

  if (cfg.blocks[0].term != isa::Term::Jcc) {
    sp.code.push_back(load_r15_slot(chain_from(0).hops.front().tid));
    op.entry_stub_instrs = 1;
  }
  bool any_exit = false;
  for (size_t b = 0; b < n; ++b) {
    const isa::BasicBlock& blk = cfg.blocks[b];
    BlockLayout bl;
    bl.body_symbol = body_sym(b);
    bl.jb_symbol = jb_sym(b);
    bl.source_id = blk.id;
    label_here(bl.body_symbol);
    for (const auto& in : blk.body) sp.code.push_back(in);
    if (blk.term == isa::Term::Jcc) {
      bl.conditional = true;
      const ChainPlan* taken = nullptr;
      const ChainPlan* fall = nullptr;
      for (const auto& cp : plans) {
        if (cp.edge.src != b) continue;
        if (cp.edge.kind == EdgeKind::Taken) taken = &cp;
        if (cp.edge.kind == EdgeKind::Fallthrough) fall = &cp;
      }
      if (!taken || !fall)
        throw Error("obfuscate", "conditional block missing an edge");
      Instruction spill;
      spill.op = Op::StoreData;
      spill.rs = 14;
      spill.imm = isa::kScratchOffset;
      sp.code.push_back(spill);
      sp.code.push_back(load_r15_slot(fall->hops.front().tid));
      Instruction load14 = load_r15_slot(taken->hops.front().tid);
      load14.rd = 14;
      sp.code.push_back(load14);
      Instruction sel;
      sel.op = Op::Cmov;
      sel.cc = isa::jcc_cond(blk.term_instr->op);
      sel.rd = isa::kReservedReg;
      sel.rs = 14;
      sp.code.push_back(sel);
      Instruction rest;
      rest.op = Op::LoadData;
      rest.rd = 14;
      rest.imm = isa::kScratchOffset;
      sp.code.push_back(rest);
    }
    bl.static_instrs =
        static_cast<uint32_t>(blk.body.size()) + (bl.conditional ? 5 : 0);
    label_here(bl.jb_symbol);
    Instruction jb;
    jb.op = Op::Jmpr;
    jb.rs = isa::kReservedReg;
    sp.code.push_back(jb);
    op.blocks.push_back(std::move(bl));
    op.jump_block_order.push_back(jb_sym(b));
  }
  for (const auto& cp : plans) any_exit |= cp.edge.dst == n;
  if (any_exit) {
    label_here("__halt");
    Instruction h;
    h.op = Op::Halt;
    sp.code.push_back(h);
  }
  return op;
}

namespace {

struct GapKey {
  std::string from, to;
  bool operator<(const GapKey& o) const {
    return std::tie(from, to) < std::tie(o.from, o.to);
  }
};

// instruction count a hop contributes to its jump-block gap
uint32_t hop_gap_instrs(const ObfuscatedProgram& op, const ChainHop& hop,
                        bool enter, size_t dst) {
  uint32_t g = 0;
  for (uint32_t tid : hop.pieces) g += op.entry(tid).instr_count();
  if (enter) g += op.blocks[dst].static_instrs;
  return g;
}

}  // namespace

ObfuscatedProgram pad_trampolines(const ObfuscatedProgram& in) {
  ObfuscatedProgram op = in;
  if (op.padded || op.entries.empty()) {
    op.padded = true;
    return op;
  }

  // group hops by (previous jump-block, next jump-block)
  struct HopRef {
    size_t chain, hop;
    GapKey key;
    bool enter;
  };
  std::vector<HopRef> refs;
  std::map<GapKey, uint32_t> group_max;
  for (size_t ci = 0; ci < op.chains.size(); ++ci) {
    const EdgeChain& c = op.chains[ci];
    std::string site = jb_sym(c.src);
    for (size_t hi = 0; hi < c.hops.size(); ++hi) {
      const TrampolineEntry& head = op.entry(c.hops[hi].pieces.front());
      if (head.kind == HopKind::Exit) continue;  // no next jump-block
      const bool enter = head.kind == HopKind::Enter;
      size_t over_or_into;
      if (enter) {
        over_or_into = c.dst;
      } else {
        // skip hop: target symbol is b<z>_jb
        over_or_into = std::stoul(head.target_symbol.substr(1));
      }
      GapKey key{site, jb_sym(over_or_into)};
      const uint32_t gap = hop_gap_instrs(op, c.hops[hi], enter, c.dst);
      auto it = group_max.find(key);
      if (it == group_max.end()) group_max[key] = gap;
      else it->second = std::max(it->second, gap);
      refs.push_back({ci, hi, key, enter});
      site = key.to;
    }
  }

  uint32_t next_tid = 0;
  for (const auto& e : op.entries) next_tid = std::max(next_tid, e.tid + 1);

  for (const auto& ref : refs) {
    ChainHop& hop = op.chains[ref.chain].hops[ref.hop];
    const uint32_t cur =
        hop_gap_instrs(op, hop, ref.enter, op.chains[ref.chain].dst);
    uint32_t pad = group_max.at(ref.key) - cur;
    if (pad == 0) continue;
    TrampolineEntry* head = nullptr;
    for (auto& e : op.entries)
      if (e.tid == hop.pieces.front()) head = &e;
    const uint32_t cap0 = kMaxTrampolineBytes - head->size();
    if (pad <= cap0) {
      head->body.insert(head->body.begin(), pad, nop());
      continue;
    }
    // split: leading pieces are [NOP* LOAD r15,JT[next] JMPR r15] (<= 9 NOPs);
    // the original entry keeps its tid as the first piece so upstream slot
    // references stay valid... the original body moves to a fresh final tid.
    uint32_t extra = 1;
    while (pad < 2 * extra || pad - 2 * extra > cap0 + 9 * extra) ++extra;
    uint32_t nops = pad - 2 * extra;

    std::vector<uint32_t> piece_tids{hop.pieces.front()};
    for (uint32_t i = 0; i < extra; ++i) piece_tids.push_back(next_tid++);

    // final piece: original body plus whatever NOPs exceed the lead pieces
    std::vector<uint32_t> lead_nops(extra, 0);
    uint32_t rest = nops;
    for (uint32_t i = 0; i < extra && rest; ++i) {
      lead_nops[i] = std::min<uint32_t>(9, rest);
      rest -= lead_nops[i];
    }
    TrampolineEntry final_piece = *head;
    final_piece.tid = piece_tids.back();
    final_piece.kind = head->kind;
    final_piece.body.insert(final_piece.body.begin(), rest, nop());

    for (uint32_t i = 0; i < extra; ++i) {
      TrampolineEntry piece;
      piece.tid = piece_tids[i];
      piece.kind = HopKind::Piece;
      piece.body.assign(lead_nops[i], nop());
      piece.body.push_back(load_r15_slot(piece_tids[i + 1]));
      Instruction j;
      j.op = Op::Jmpr;
      j.rs = isa::kReservedReg;
      piece.body.push_back(j);
      if (i == 0) {
        *head = std::move(piece);  // reuses the original tid and slot
      } else {
        op.entries.push_back(std::move(piece));
      }
    }
    op.entries.push_back(std::move(final_piece));
    hop.pieces = std::move(piece_tids);
  }

  for (const auto& e : op.entries) {
    if (e.size() < kMinTrampolineBytes || e.size() > kMaxTrampolineBytes)
      throw Error("obfuscate", "trampoline size out of range after padding");
  }
  op.padded = true;
  return op;
}

std::string Manifest::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["jt_base"] = jt_base;
  j["scratch_addr"] = scratch_addr;
  j["area_base"] = {area_base[0], area_base[1]};
  j["area_size"] = area_size;
  j["k"] = k;
  j["entry_stub_instrs"] = entry_stub_instrs;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries)
    j["entries"].push_back({{"tid", e.tid},
                            {"symbol", e.symbol},
                            {"kind", e.kind},
                            {"size", e.size},
                            {"instrs", e.instrs},
                            {"jt_slot", e.jt_slot},
                            {"target", e.target_symbol}});
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : blocks)
    j["blocks"].push_back({{"body", b.body_symbol},
                           {"jb", b.jb_symbol},
                           {"static_instrs", b.static_instrs},
                           {"conditional", b.conditional}});
  j["edges"] = nlohmann::json::array();
  for (const auto& e : edges)
    j["edges"].push_back(
        {{"src", e.src}, {"dst", e.dst}, {"kind", e.kind}, {"hops", e.hops}});
  return j.dump(2);
}

Manifest Manifest::from_json(const std::string& text) {
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("version").get<int>() != 1)
      throw Error("obfuscate", "unsupported manifest version");
    Manifest m;
    m.jt_base = j.at("jt_base").get<uint64_t>();
    m.scratch_addr = j.at("scratch_addr").get<uint64_t>();
    m.area_base[0] = j.at("area_base").at(0).get<uint64_t>();
    m.area_base[1] = j.at("area_base").at(1).get<uint64_t>();
    m.area_size = j.at("area_size").get<uint64_t>();
    m.k = j.at("k").get<uint64_t>();
    m.entry_stub_instrs = j.at("entry_stub_instrs").get<uint32_t>();
    for (const auto& ej : j.at("entries")) {
      Entry e;
      e.tid = ej.at("tid").get<uint32_t>();
      e.symbol = ej.at("symbol").get<std::string>();
      e.kind = ej.at("kind").get<std::string>();
      e.size = ej.at("size").get<uint32_t>();
      e.instrs = ej.at("instrs").get<uint32_t>();
      e.jt_slot = ej.at("jt_slot").get<uint64_t>();
      e.target_symbol = ej.at("target").get<std::string>();
      m.entries.push_back(std::move(e));
    }
    for (const auto& bj : j.at("blocks")) {
      Block b;
      b.body_symbol = bj.at("body").get<std::string>();
      b.jb_symbol = bj.at("jb").get<std::string>();
      b.static_instrs = bj.at("static_instrs").get<uint32_t>();
      b.conditional = bj.at("conditional").get<bool>();
      m.blocks.push_back(std::move(b));
    }
    for (const auto& ej : j.at("edges")) {
      Edge e;
      e.src = ej.at("src").get<uint64_t>();
      e.dst = ej.at("dst").get<uint64_t>();
      e.kind = ej.at("kind").get<std::string>();
      e.hops = ej.at("hops").get<std::vector<std::vector<uint32_t>>>();
      m.edges.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error("obfuscate", std::string("bad manifest json: ") + e.what());
  }
}

namespace {

const char* hop_kind_name(HopKind k) {
  switch (k) {
    case HopKind::Skip: return "skip";
    case HopKind::Enter: return "enter";
    case HopKind::Exit: return "exit";
    case HopKind::Piece: return "piece";
  }
  return "?";
}

const char* edge_kind_name(isa::EdgeKind k) {
  switch (k) {
    case EdgeKind::Taken: return "taken";
    case EdgeKind::Fallthrough: return "fallthrough";
    case EdgeKind::Unconditional: return "unconditional";
  }
  return "?";
}

}  // namespace

BuiltImage materialize(const ObfuscatedProgram& op, const LayoutConfig& cfg) {
  if (!op.padded)
    throw Error("obfuscate", "pad_trampolines must run before materialize");
  if (op.entries.size() > kMaxTrampolineEntries)
    throw Error("obfuscate", "jump table overflow");

  uint64_t total = 0;
  for (const auto& e : op.entries) total += e.size();
  if (total * 2 > cfg.area_size)
    throw Error("obfuscate", "trampoline occupancy exceeds half an area");

  EncodedProgram enc = encode_program_at(op.static_program, cfg.static_base);

  // template packing: tid order from the start of area A
  std::map<uint32_t, uint64_t> template_addr;
  std::vector<const TrampolineEntry*> by_tid;
  for (const auto& e : op.entries) by_tid.push_back(&e);
  std::sort(by_tid.begin(), by_tid.end(),
            [](auto* a, auto* b) { return a->tid < b->tid; });
  uint64_t off = 0;
  for (const auto* e : by_tid) {
    template_addr[e->tid] = cfg.trampoline_a_base + off;
    off += e->size();
  }
  for (const auto* e : by_tid)
    enc.symbols["t" + std::to_string(e->tid)] = template_addr[e->tid];

  MemoryImage img = assemble_image(std::move(enc), cfg);

  Region& area_a = img.region("trampoline_a");
  for (const auto* e : by_tid) {
    std::vector<uint8_t> bytes;
    for (const auto& in : e->body) {
      isa::Instruction copy = in;
      if (!copy.label.empty()) {
        copy.imm = static_cast<int64_t>(img.symbol(copy.label));
        copy.label.clear();
      }
      isa::encode_instruction(copy, bytes);
    }
    const uint64_t at = template_addr[e->tid] - area_a.base;
    std::copy(bytes.begin(), bytes.end(), area_a.bytes.begin() + at);
  }

  const uint64_t jt_base = cfg.data_base + isa::kJumpTableOffset;
  for (const auto* e : by_tid)
    img.write64(jt_base + 8ull * e->tid, template_addr[e->tid]);

  Manifest m;
  m.jt_base = jt_base;
  m.scratch_addr = cfg.data_base + isa::kScratchOffset;
  m.area_base[0] = cfg.trampoline_a_base;
  m.area_base[1] = cfg.trampoline_b_base;
  m.area_size = cfg.area_size;
  m.k = rnd::location_count(2 * cfg.area_size);
  m.entry_stub_instrs = op.entry_stub_instrs;
  for (const auto* e : by_tid) {
    Manifest::Entry me;
    me.tid = e->tid;
    me.symbol = "t" + std::to_string(e->tid);
    me.kind = hop_kind_name(e->kind);
    me.size = e->size();
    me.instrs = e->instr_count();
    me.jt_slot = jt_base + 8ull * e->tid;
    me.target_symbol = e->target_symbol;
    m.entries.push_back(std::move(me));
  }
  for (const auto& b : op.blocks) {
    m.blocks.push_back(
        {b.body_symbol, b.jb_symbol, b.static_instrs, b.conditional});
  }
  for (const auto& c : op.chains) {
    Manifest::Edge me;
    me.src = c.src;
    me.dst = c.dst;
    me.kind = edge_kind_name(c.kind);
    for (const auto& h : c.hops) me.hops.push_back(h.pieces);
    m.edges.push_back(std::move(me));
  }
  return {std::move(img), std::move(m)};
}

rnd::TrampolineAreaState area_state_from(const Manifest& m,
                                         const MemoryImage& img) {
  rnd::TrampolineAreaState st;
  st.area_base[0] = m.area_base[0];
  st.area_base[1] = m.area_base[1];
  st.area_size = static_cast<uint32_t>(m.area_size);
  st.jt_base = m.jt_base;
  st.active = 0;
  for (const auto& e : m.entries) {
    const uint64_t addr = img.symbol(e.symbol);
    if (addr < m.area_base[0] || addr + e.size > m.area_base[0] + m.area_size)
      throw Error("obfuscate", "template entry outside area A");
    st.placements.push_back(
        {e.tid, static_cast<uint32_t>(addr - m.area_base[0]), e.size});
  }
  return st;
}

double OverheadReport::byte_ratio() const {
  return bytes_before ? double(bytes_after) / double(bytes_before) : 0.0;
}
double OverheadReport::dyn_ratio() const {
  return dyn_before ? double(dyn_after) / double(dyn_before) : 0.0;
}

OverheadReport report_overhead(const isa::Program& original,
                               const ObfuscatedProgram& op,
                               const LayoutConfig& cfg,
                               const std::vector<std::vector<int64_t>>& inputs,
                               uint64_t max_steps) {
  OverheadReport rep;
  for (const auto& in : original.code) rep.bytes_before += in.length();
  for (const auto& in : op.static_program.code) rep.bytes_after += in.length();
  for (const auto& e : op.entries) rep.bytes_after += e.size();
  for (const auto& b : op.blocks) rep.conditional_sites += b.conditional;

  MemoryImage orig_img = layout(original, cfg);
  BuiltImage built = materialize(op, cfg);
  for (const auto& input : inputs) {
    mach::Machine m0(orig_img);
    m0.enter_enclave(input);
    auto r0 = m0.run_to_halt(max_steps);
    if (!r0.halted) throw Error("overhead", "original run exceeded budget");
    mach::Machine m1(built.image, area_state_from(built.manifest, built.image),
                     {rnd::RandomizationPolicy::kNever, 0});
    m1.enter_enclave(input);
    auto r1 = m1.run_to_halt(4 * max_steps + 64);
    if (!r1.halted) throw Error("overhead", "obfuscated run exceeded budget");
    rep.dyn_before += r0.steps;
    rep.dyn_after += r1.steps;
  }
  return rep;
}

}  // namespace cfrand::obf
