#pragma once

// Memory images: named regions with base, bytes, permissions and an
// enclave flag, plus a symbol table. JSON format in docs/formats.md.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfrand/isa.hpp"

namespace cfrand {

enum Perm : uint8_t { PermR = 1, PermW = 2, PermX = 4 };

std::string perm_name(uint8_t perm);
uint8_t perm_from_name(const std::string& name);

struct Region {
  std::string name;
  uint64_t base = 0;
  std::vector<uint8_t> bytes;
  uint8_t perm = PermR;
  bool enclave = false;

  uint64_t end() const { return base + bytes.size(); }
  bool contains(uint64_t addr) const { return addr >= base && addr < end(); }
};

struct MemoryImage {
  std::vector<Region> regions;
  std::map<std::string, uint64_t> symbols;

  Region* find(uint64_t addr);
  const Region* find(uint64_t addr) const;
  Region& region(const std::string& name);
  const Region& region(const std::string& name) const;
  uint64_t symbol(const std::string& name) const;  // Error("image") if missing

  // Raw accessors for host-level code (no permission checks).
  uint8_t read8(uint64_t addr) const;
  void write8(uint64_t addr, uint8_t v);
  uint64_t read64(uint64_t addr) const;
  void write64(uint64_t addr, uint64_t v);

  std::string to_json() const;
  static MemoryImage from_json(const std::string& text);
};

// Shadow branches live at victim address + 2^31: the branch target buffer
// ignores bit 31 and above.
inline constexpr uint64_t kAliasOffset = 1ull << 31;

struct LayoutConfig {
  uint64_t static_base = 0x0010'0000;
  uint64_t static_capacity = 0x4'0000;
  uint64_t trampoline_a_base = 0x0020'0000;
  uint64_t trampoline_b_base = 0x0020'2000;
  uint64_t area_size = 4096;
  uint64_t data_base = 0x0030'0000;
  uint64_t data_size = 0x1'0000;

  void check() const;  // Error("layout") on overlap / bad sizes
};

// Packs the program at static_base in declaration order, appends trap-filled
// trampoline areas, a zeroed data region, and the untrusted alias region.
MemoryImage layout(const isa::Program& p, const LayoutConfig& cfg);

// Encoding helper shared by layout() and the obfuscator: resolves labels
// against the packed addresses and encodes in declaration order. No
// validation (obfuscated code uses r15 and the reserved data window).
struct EncodedProgram {
  std::vector<uint8_t> bytes;
  std::map<std::string, uint64_t> symbols;
};
EncodedProgram encode_program_at(const isa::Program& p, uint64_t base);

// Builds the standard region set around already-encoded static bytes.
MemoryImage assemble_image(EncodedProgram enc, const LayoutConfig& cfg);

// Instruction listing of a contiguous code region (stops at region end;
// Error("decode") on garbage).
std::vector<std::pair<uint64_t, isa::Instruction>> disassemble_region(
    const Region& r);

// Recovers a Program from an unprotected image's static region, synthesizing
// labels at branch targets. Round-trip: canonical(disassemble(layout(p))) ==
// canonical(p).
isa::Program disassemble_program(const MemoryImage& img);

}  // namespace cfrand
