// Conditional-branch elimination: structure, padding, materialization.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cfrand/harness.hpp"
#include "cfrand/image.hpp"
#include "cfrand/isa.hpp"
#include "cfrand/machine.hpp"
#include "cfrand/obfuscate.hpp"
#include "doctest.h"

using namespace cfrand;

namespace {

const char* kDiamond =
    "CMP r0, r1\nJCC EQ, e\nCONST r2, 1\nJMP x\ne: CONST r2, 2\nx: OUT "
    "r2\nHALT\n";

obf::ObfuscatedProgram padded_diamond() {
  return obf::pad_trampolines(obf::obfuscate(isa::parse_program(kDiamond)));
}

}  // namespace

TEST_CASE("no conditional or direct branches survive in static code") {
  harness::CorpusSpec spec;
  spec.programs = 20;
  spec.seed = 41;
  for (const auto& p : harness::generate_corpus(spec)) {
    obf::ObfuscatedProgram op = obf::obfuscate(p);
    for (const auto& in : op.static_program.code) {
      CHECK_FALSE(isa::is_jcc(in.op));
      CHECK(in.op != isa::Op::Jmp);
    }
    // Exactly one jump-block per basic block.
    size_t jmprs = 0;
    for (const auto& in : op.static_program.code)
      jmprs += in.op == isa::Op::Jmpr;
    CHECK(jmprs == op.blocks.size());
  }
}

TEST_CASE("diamond decomposes into the expected chains") {
  obf::ObfuscatedProgram op = obf::obfuscate(isa::parse_program(kDiamond));
  REQUIRE(op.blocks.size() == 4);
  CHECK(op.blocks[0].conditional);
  CHECK_FALSE(op.blocks[1].conditional);
  CHECK(op.jump_block_order ==
        std::vector<std::string>{"b0_jb", "b1_jb", "b2_jb", "b3_jb"});

  // Chain hop counts: one skip per intermediate jump-block plus the enter.
  auto hops = [&](size_t src, isa::EdgeKind k) {
    const obf::EdgeChain* c = op.chain(src, k);
    REQUIRE(c != nullptr);
    return c->hops.size();
  };
  CHECK(hops(0, isa::EdgeKind::Fallthrough) == 1);  // b0 -> b1, adjacent
  CHECK(hops(0, isa::EdgeKind::Taken) == 2);        // b0 -> b2 skips b1_jb
  CHECK(hops(1, isa::EdgeKind::Unconditional) == 2);  // b1 -> b3 skips b2_jb
  CHECK(hops(2, isa::EdgeKind::Fallthrough) == 1);
  CHECK(hops(3, isa::EdgeKind::Unconditional) == 1);  // virtual exit

  // The exit chain ends in an Exit hop; every other chain in an Enter.
  for (const auto& ch : op.chains) {
    REQUIRE_FALSE(ch.hops.empty());
    const auto& last = op.entry(ch.hops.back().pieces.front());
    if (ch.dst == op.blocks.size())
      CHECK(last.kind == obf::HopKind::Exit);
    else
      CHECK(last.kind == obf::HopKind::Enter);
    for (size_t h = 0; h + 1 < ch.hops.size(); ++h)
      CHECK(op.entry(ch.hops[h].pieces.front()).kind == obf::HopKind::Skip);
  }
}

TEST_CASE("trampoline sizes stay inside the 5..15 byte window") {
  harness::CorpusSpec spec;
  spec.programs = 20;
  spec.seed = 43;
  for (const auto& p : harness::generate_corpus(spec)) {
    obf::ObfuscatedProgram op = obf::pad_trampolines(obf::obfuscate(p));
    CHECK(op.padded);
    for (const auto& e : op.entries) {
      CAPTURE(e.tid);
      CHECK(e.size() >= obf::kMinTrampolineBytes);
      CHECK(e.size() <= obf::kMaxTrampolineBytes);
    }
  }
}

namespace {

// Enclave-step gaps between consecutive jump-block executions, keyed by the
// (previous, current) jump-block pair. The defense promises these are the
// same whichever path reaches the pair.
std::map<std::pair<uint64_t, uint64_t>, uint64_t> jb_gaps(
    const MemoryImage& img, const obf::Manifest& man,
    std::vector<int64_t> inputs) {
  std::set<uint64_t> jbs;
  for (const auto& b : man.blocks) jbs.insert(img.symbols.at(b.jb_symbol));

  mach::Machine m(img);
  m.set_trace(true);
  m.enter_enclave(inputs);
  mach::RunResult r = m.run_to_halt(1 << 20);
  REQUIRE(r.halted);
  REQUIRE_FALSE(r.fault);

  std::map<std::pair<uint64_t, uint64_t>, uint64_t> gaps;
  uint64_t prev_pc = 0, prev_ord = 0, ord = 0;
  for (const auto& ev : m.trace()) {
    if (ev.mode != mach::Mode::Enclave) continue;
    ++ord;
    if (!jbs.count(ev.pc)) continue;
    gaps[{prev_pc, ev.pc}] = ord - prev_ord;
    prev_pc = ev.pc;
    prev_ord = ord;
  }
  return gaps;
}

}  // namespace

TEST_CASE("padding equalizes gaps between jump-block pairs across paths") {
  // Run both diamond arms; every jump-block pair reached on both paths must
  // show the identical instruction gap. The big-block variant forces skip
  // hops to split, which must not break the property.
  const char* cases[] = {kDiamond, nullptr};
  std::string big = "CMP r0, r1\nJCC EQ, big\n";
  for (int i = 0; i < 30; ++i) big += "ADD r2, r3\n";
  big += "JMP end\nbig: CONST r2, 9\nend: OUT r2\nHALT\n";
  cases[1] = big.c_str();

  for (const char* text : cases) {
    obf::ObfuscatedProgram op =
        obf::pad_trampolines(obf::obfuscate(isa::parse_program(text)));
    obf::BuiltImage built = obf::materialize(op, LayoutConfig{});

    auto eq = jb_gaps(built.image, built.manifest, {7, 7});
    auto ne = jb_gaps(built.image, built.manifest, {7, 8});
    REQUIRE_FALSE(eq.empty());
    // Same set of pairs (the jump-block walk is path-independent) and the
    // same gap for each.
    CHECK(eq == ne);
  }
}

TEST_CASE("padding splits oversized hops without changing the chain") {
  // A block big enough that the skip hop needs more NOPs than fit in one
  // 15-byte entry; the hop must split into pieces that keep the first tid.
  std::string text = "CMP r0, r1\nJCC EQ, big\n";
  for (int i = 0; i < 30; ++i) text += "ADD r2, r3\n";
  text += "JMP end\nbig: CONST r2, 9\nend: OUT r2\nHALT\n";

  obf::ObfuscatedProgram op = obf::obfuscate(isa::parse_program(text));
  obf::ObfuscatedProgram padded = obf::pad_trampolines(op);

  bool split_seen = false;
  for (const auto& ch : padded.chains)
    for (const auto& hop : ch.hops)
      if (hop.pieces.size() > 1) split_seen = true;
  CHECK(split_seen);

  // Same edge set before and after, and first-piece tids preserved.
  REQUIRE(padded.chains.size() == op.chains.size());
  for (size_t i = 0; i < op.chains.size(); ++i) {
    CHECK(padded.chains[i].src == op.chains[i].src);
    CHECK(padded.chains[i].dst == op.chains[i].dst);
    REQUIRE(padded.chains[i].hops.size() == op.chains[i].hops.size());
    for (size_t h = 0; h < op.chains[i].hops.size(); ++h)
      CHECK(padded.chains[i].hops[h].pieces.front() ==
            op.chains[i].hops[h].pieces.front());
  }
}

TEST_CASE("obfuscate rejects unsupported inputs") {
  // JMPR in the source.
  isa::Program p = isa::parse_program(kDiamond);
  p.code[3] = {.op = isa::Op::Jmpr, .rs = 2};
  CHECK_THROWS_AS(obf::obfuscate(p), Error);

  // r15 anywhere.
  p = isa::parse_program(kDiamond);
  p.code[2].rd = isa::kReservedReg;
  CHECK_THROWS_AS(obf::obfuscate(p), Error);

  // Crossing loops (irreducible by the extent rule).
  const char* crossing =
      "a: CONST r2, 1\n"
      "b: ADD r2, r2\n"
      "CMP r2, r0\n"
      "JCC LT, a\n"
      "SUB r2, r1\n"
      "CMP r2, r1\n"
      "JCC LT, b\n"
      "OUT r2\nHALT\n";
  CHECK_THROWS_AS(obf::obfuscate(isa::parse_program(crossing)), Error);
}

TEST_CASE("materialized jump table matches the manifest") {
  obf::ObfuscatedProgram op = padded_diamond();
  obf::BuiltImage built = obf::materialize(op, LayoutConfig{});
  const obf::Manifest& man = built.manifest;

  CHECK(man.k == 2 * man.area_size - 5);
  CHECK(man.entries.size() == op.entries.size());
  for (const auto& e : man.entries) {
    const uint64_t target = built.image.read64(e.jt_slot);
    // Template placement: every entry lives in area A.
    CHECK(target >= man.area_base[0]);
    CHECK(target + e.size <= man.area_base[0] + man.area_size);
    // The jump table slot sits where the manifest says it does.
    CHECK(e.jt_slot == man.jt_base + 8ull * e.tid);
  }

  // Entry symbols resolve inside area A as well.
  for (const auto& e : man.entries)
    CHECK(built.image.symbol(e.symbol) == built.image.read64(e.jt_slot));
}

TEST_CASE("manifest JSON round-trips") {
  obf::BuiltImage built = obf::materialize(padded_diamond(), LayoutConfig{});
  const std::string j = built.manifest.to_json();
  obf::Manifest back = obf::Manifest::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.k == built.manifest.k);
  CHECK(back.entries.size() == built.manifest.entries.size());
  CHECK(back.edges.size() == built.manifest.edges.size());
  CHECK_THROWS_AS(obf::Manifest::from_json("not json"), Error);
}

TEST_CASE("materialize refuses to overfill an area") {
  // Lots of conditional sites so the trampolines outgrow area_size / 2.
  std::string text;
  for (int i = 0; i < 12; ++i) {
    text += "CMP r0, r1\nJCC EQ, y" + std::to_string(i) + "\nADD r2, r3\n";
    text += "y" + std::to_string(i) + ": ADD r2, r4\n";
  }
  text += "OUT r2\nHALT\n";
  obf::ObfuscatedProgram op =
      obf::pad_trampolines(obf::obfuscate(isa::parse_program(text)));

  LayoutConfig cfg;
  cfg.area_size = 64;  // minimum allowed; 12 diamonds cannot fit in 32 bytes
  CHECK_THROWS_AS(obf::materialize(op, cfg), Error);
}

TEST_CASE("pad_trampolines must precede materialize") {
  obf::ObfuscatedProgram op = obf::obfuscate(isa::parse_program(kDiamond));
  CHECK_THROWS_AS(obf::materialize(op, LayoutConfig{}), Error);
}

TEST_CASE("overhead report is deterministic and counts sites") {
  isa::Program p = isa::parse_program(kDiamond);
  obf::ObfuscatedProgram op = padded_diamond();
  std::vector<std::vector<int64_t>> inputs = {{1, 1}, {1, 2}};
  obf::OverheadReport a = obf::report_overhead(p, op, LayoutConfig{}, inputs);
  obf::OverheadReport b = obf::report_overhead(p, op, LayoutConfig{}, inputs);
  CHECK(a.conditional_sites == 1);
  CHECK(a.bytes_after > a.bytes_before);
  CHECK(a.dyn_after > a.dyn_before);
  CHECK(a.byte_ratio() == b.byte_ratio());
  CHECK(a.dyn_ratio() == b.dyn_ratio());
}
