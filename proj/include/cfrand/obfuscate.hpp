#pragma once

// Conditional-branch elimination and trampoline construction.
//
// Every basic block loses its direct/conditional terminator and instead ends
// in a jump-block (JMPR r15). Control moves between blocks through trampoline
// entries: a chain per CFG edge made of skip hops (one per intermediate
// jump-block) and a final enter hop into the target block. Conditional blocks
// select the taken/fallthrough chain head into r15 with a CMOV sequence, so
// the static code contains no conditional branches at all. Skip hops carry
// dummy NOPs so that the instruction gap between any two consecutive
// jump-blocks is the same on every path (pad_trampolines).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfrand/image.hpp"
#include "cfrand/randomize.hpp"

namespace cfrand::obf {

inline constexpr uint32_t kMinTrampolineBytes = 5;
inline constexpr uint32_t kMaxTrampolineBytes = 15;
// jump table slots must stay inside the 16-bit displacement window
inline constexpr uint32_t kMaxTrampolineEntries =
    (0x10000 - isa::kJumpTableOffset) / 8 - 1;

enum class HopKind : uint8_t { Skip, Enter, Exit, Piece };

struct TrampolineEntry {
  uint32_t tid = 0;
  HopKind kind = HopKind::Enter;
  std::vector<isa::Instruction> body;  // NOP*, optional LOAD r15, branch
  std::string target_symbol;           // static symbol a JMP resolves to
  uint32_t size() const;
  uint32_t instr_count() const { return static_cast<uint32_t>(body.size()); }
};

struct ChainHop {
  std::vector<uint32_t> pieces;  // entry tids; >1 after padding splits
};

struct EdgeChain {
  size_t src = 0;
  size_t dst = 0;  // == block count for the virtual exit
  isa::EdgeKind kind = isa::EdgeKind::Unconditional;
  std::vector<ChainHop> hops;
};

struct BlockLayout {
  std::string body_symbol;  // b<i>
  std::string jb_symbol;    // b<i>_jb
  uint32_t static_instrs = 0;  // body + selection, jump-block excluded
  bool conditional = false;
  std::string source_id;  // block id in the source CFG
};

struct ObfuscatedProgram {
  isa::Program static_program;  // jump-blocks and epilogue included
  std::vector<TrampolineEntry> entries;
  std::vector<EdgeChain> chains;
  std::vector<BlockLayout> blocks;
  std::vector<std::string> jump_block_order;  // b0_jb, b1_jb, ...
  uint32_t entry_stub_instrs = 0;
  bool padded = false;

  const TrampolineEntry& entry(uint32_t tid) const;
  const EdgeChain* chain(size_t src, isa::EdgeKind kind) const;
};

// Rejects JMPR terminators, r15 uses, irreducible loop structure.
ObfuscatedProgram obfuscate(const isa::Program& p);

// Equalizes per-(jump-block pair) instruction gaps with dummy NOPs, splitting
// hops that would exceed the 15-byte trampoline limit into chained pieces.
ObfuscatedProgram pad_trampolines(const ObfuscatedProgram& in);

// Template manifest: the public, compile-time description of the obfuscated
// artifact (geometry, entry sizes and composition, chains, schedule inputs).
// It never describes post-randomization placements.
struct Manifest {
  struct Entry {
    uint32_t tid = 0;
    std::string symbol;  // t<tid>
    std::string kind;
    uint32_t size = 0;
    uint32_t instrs = 0;
    uint64_t jt_slot = 0;  // address of the jump table slot
    std::string target_symbol;
  };
  struct Block {
    std::string body_symbol;
    std::string jb_symbol;
    uint32_t static_instrs = 0;
    bool conditional = false;
  };
  struct Edge {
    uint64_t src = 0;
    uint64_t dst = 0;
    std::string kind;
    std::vector<std::vector<uint32_t>> hops;
  };
  uint64_t jt_base = 0;
  uint64_t scratch_addr = 0;
  uint64_t area_base[2] = {0, 0};
  uint64_t area_size = 0;
  uint64_t k = 0;
  uint32_t entry_stub_instrs = 0;
  std::vector<Entry> entries;
  std::vector<Block> blocks;
  std::vector<Edge> edges;

  std::string to_json() const;
  static Manifest from_json(const std::string& text);
};

struct BuiltImage {
  MemoryImage image;  // trampolines at template positions in area A
  Manifest manifest;
};

// Encodes the obfuscated program into an image. Entries are packed at the
// start of area A (template layout); randomize() moves them afterwards.
// Errors if total trampoline bytes exceed half an area.
BuiltImage materialize(const ObfuscatedProgram& op, const LayoutConfig& cfg);

rnd::TrampolineAreaState area_state_from(const Manifest& m,
                                         const MemoryImage& img);

struct OverheadReport {
  uint64_t bytes_before = 0;
  uint64_t bytes_after = 0;  // static + occupied trampoline bytes
  uint64_t dyn_before = 0;
  uint64_t dyn_after = 0;
  uint64_t conditional_sites = 0;
  double byte_ratio() const;
  double dyn_ratio() const;
};

OverheadReport report_overhead(const isa::Program& original,
                               const ObfuscatedProgram& op,
                               const LayoutConfig& cfg,
                               const std::vector<std::vector<int64_t>>& inputs,
                               uint64_t max_steps = 2'000'000);

}  // namespace cfrand::obf
