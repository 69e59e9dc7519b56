#pragma once

// Toy ISA: 16 general registers, CMP-set flags, byte-encoded instructions
// with fixed per-opcode lengths. See docs/assembly.md for the surface syntax.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cfrand {

struct Error : std::runtime_error {
  Error(std::string cat, const std::string& what)
      : std::runtime_error(what), category(std::move(cat)) {}
  std::string category;
};

namespace isa {

inline constexpr unsigned kRegCount = 16;
// r15 is reserved for the obfuscator's jump-block target register.
inline constexpr unsigned kReservedReg = 15;
// Data-region displacements at or above kSourceDataLimit are reserved for the
// obfuscator: an 8-byte scratch slot at kScratchOffset, jump table slots from
// kJumpTableOffset (8 bytes each).
inline constexpr uint16_t kSourceDataLimit = 0xE000;
inline constexpr uint16_t kScratchOffset = 0xE000;
inline constexpr uint16_t kJumpTableOffset = 0xE008;
inline constexpr uint8_t kTrapByte = 0xFF;

enum class Op : uint8_t {
  Nop = 0x01,
  Halt = 0x02,
  Out = 0x03,
  Jmpr = 0x04,
  Mov = 0x05,
  Const = 0x06,
  Add = 0x07,
  Sub = 0x08,
  Mul = 0x09,
  Cmp = 0x0A,
  Cmov = 0x0B,
  LoadReg = 0x0C,
  LoadData = 0x0D,
  StoreReg = 0x0E,
  StoreData = 0x0F,
  Jmp = 0x10,
  Jeq = 0x11,
  Jne = 0x12,
  Jlt = 0x13,
  Jge = 0x14,
};

enum class Cond : uint8_t { Eq = 0, Ne = 1, Lt = 2, Ge = 3 };

bool is_valid_opcode(uint8_t byte);
bool is_branch(Op op);  // Jmp, Jcc, Jmpr
bool is_jcc(Op op);
Op jcc_op(Cond cc);
Cond jcc_cond(Op op);
unsigned instr_length(Op op);
const char* mnemonic(Op op);
const char* cond_name(Cond cc);
std::optional<Cond> cond_from_name(std::string_view name);

struct Instruction {
  Op op = Op::Nop;
  uint8_t rd = 0;           // destination / first register
  uint8_t rs = 0;           // source / second register
  Cond cc = Cond::Eq;       // Cmov only; Jcc conditions live in the opcode
  int64_t imm = 0;          // Const value, data displacement, resolved address
  std::string label;        // unresolved branch target; empty once resolved

  unsigned length() const { return instr_length(op); }
  bool operator==(const Instruction&) const = default;
};

std::string format_instruction(const Instruction& in);

struct Program {
  std::string name = "main";
  std::vector<Instruction> code;
  std::map<std::string, size_t> labels;  // label -> instruction index

  bool operator==(const Program&) const = default;
};

std::string format_program(const Program& p);
// Renames labels to L0, L1, ... in first-use order (uses in code, then
// leftover definitions in index order). Equality of canonical forms is the
// round-trip criterion for assemble/disassemble.
Program canonical(const Program& p);

enum class Term : uint8_t { Jmp, Jcc, Jmpr, Halt, Fallthrough };

struct BasicBlock {
  std::string id;
  std::vector<Instruction> body;  // no branch/halt opcodes
  Term term = Term::Fallthrough;
  std::optional<Instruction> term_instr;  // absent for fallthrough
};

enum class EdgeKind : uint8_t { Taken, Fallthrough, Unconditional };

struct Edge {
  size_t src = 0;
  size_t dst = 0;
  EdgeKind kind = EdgeKind::Unconditional;
};

struct FunctionCfg {
  size_t entry = 0;
  std::vector<BasicBlock> blocks;  // program declaration order
  std::vector<Edge> edges;

  const BasicBlock* block(std::string_view id) const;
};

// Throws Error("cfg") on branches to undefined labels.
FunctionCfg build_cfg(const Program& p);

struct Violation {
  std::string code;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate(const Program& p);
ValidationReport validate_cfg(const FunctionCfg& cfg);

// Assembler front end. Throws Error("parse") with a line number on bad input.
Program parse_program(std::string_view text, std::string_view name = "main");

// Branch targets must be resolved (label empty) before encoding.
void encode_instruction(const Instruction& in, std::vector<uint8_t>& out);

struct Decoded {
  Instruction instr;
  unsigned length = 0;
};

// Throws Error("decode") on trap bytes, unknown opcodes or bad operands.
Decoded decode_instruction(std::span<const uint8_t> bytes);

}  // namespace isa
}  // namespace cfrand
