// Encoder/decoder, parser and CFG checks for the toy ISA.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cfrand/harness.hpp"
#include "cfrand/isa.hpp"
#include "cfrand/rng.hpp"
#include "doctest.h"

using namespace cfrand;

namespace {

// Byte budget per opcode, written out independently of instr_length() so a
// regression in the table is caught rather than mirrored.
unsigned expected_length(isa::Op op) {
  switch (op) {
    case isa::Op::Nop:
    case isa::Op::Halt:
      return 1;
    case isa::Op::Out:
    case isa::Op::Jmpr:
      return 2;
    case isa::Op::Mov:
    case isa::Op::Add:
    case isa::Op::Sub:
    case isa::Op::Mul:
    case isa::Op::Cmp:
    case isa::Op::Cmov:
    case isa::Op::Const:
      return 3;
    case isa::Op::LoadReg:
    case isa::Op::LoadData:
    case isa::Op::StoreReg:
    case isa::Op::StoreData:
      return 4;
    case isa::Op::Jmp:
    case isa::Op::Jeq:
    case isa::Op::Jne:
    case isa::Op::Jlt:
    case isa::Op::Jge:
      return 5;
  }
  return 0;
}

const std::vector<isa::Op> kAllOps = {
    isa::Op::Nop,      isa::Op::Halt,     isa::Op::Out,      isa::Op::Jmpr,
    isa::Op::Mov,      isa::Op::Const,    isa::Op::Add,      isa::Op::Sub,
    isa::Op::Mul,      isa::Op::Cmp,      isa::Op::Cmov,     isa::Op::LoadReg,
    isa::Op::LoadData, isa::Op::StoreReg, isa::Op::StoreData, isa::Op::Jmp,
    isa::Op::Jeq,      isa::Op::Jne,      isa::Op::Jlt,      isa::Op::Jge};

isa::Instruction random_instr(std::mt19937_64& rng) {
  isa::Instruction in;
  in.op = kAllOps[bounded(rng, kAllOps.size())];
  auto reg = [&] { return static_cast<uint8_t>(bounded(rng, 15)); };
  switch (in.op) {
    case isa::Op::Nop:
    case isa::Op::Halt:
      break;
    case isa::Op::Out:
    case isa::Op::Jmpr:
      in.rs = reg();
      break;
    case isa::Op::Mov:
    case isa::Op::Add:
    case isa::Op::Sub:
    case isa::Op::Mul:
    case isa::Op::Cmp:
      in.rd = reg();
      in.rs = reg();
      break;
    case isa::Op::Cmov:
      in.rd = reg();
      in.rs = reg();
      in.cc = static_cast<isa::Cond>(bounded(rng, 4));
      break;
    case isa::Op::Const:
      in.rd = reg();
      in.imm = static_cast<int8_t>(rng());
      break;
    case isa::Op::LoadReg:
    case isa::Op::StoreReg:
      in.rd = reg();
      in.rs = reg();
      break;
    case isa::Op::LoadData:
      in.rd = reg();
      in.imm = static_cast<int64_t>(bounded(rng, 0x10000));
      break;
    case isa::Op::StoreData:
      in.rs = reg();
      in.imm = static_cast<int64_t>(bounded(rng, 0x10000));
      break;
    case isa::Op::Jmp:
    case isa::Op::Jeq:
    case isa::Op::Jne:
    case isa::Op::Jlt:
    case isa::Op::Jge:
      in.imm = static_cast<int64_t>(bounded(rng, 1ull << 31));
      break;
  }
  return in;
}

}  // namespace

TEST_CASE("instruction lengths match the fixed encoding table") {
  for (isa::Op op : kAllOps) {
    CAPTURE(isa::mnemonic(op));
    CHECK(isa::instr_length(op) == expected_length(op));
  }
}

TEST_CASE("encode/decode round-trips random instructions") {
  std::mt19937_64 rng(0xedc0de);
  for (int i = 0; i < 2000; ++i) {
    isa::Instruction in = random_instr(rng);
    std::vector<uint8_t> bytes;
    isa::encode_instruction(in, bytes);
    REQUIRE(bytes.size() == in.length());
    isa::Decoded d = isa::decode_instruction(bytes);
    CHECK(d.length == bytes.size());
    CHECK(d.instr == in);
  }
}

TEST_CASE("decoder rejects traps, junk opcodes and truncated buffers") {
  std::vector<uint8_t> trap = {isa::kTrapByte};
  CHECK_THROWS_AS(isa::decode_instruction(trap), Error);

  std::vector<uint8_t> junk = {0x00};
  CHECK_THROWS_AS(isa::decode_instruction(junk), Error);
  junk[0] = 0x7f;
  CHECK_THROWS_AS(isa::decode_instruction(junk), Error);

  // A CONST cut off after the register byte.
  std::vector<uint8_t> cut = {static_cast<uint8_t>(isa::Op::Const), 3};
  CHECK_THROWS_AS(isa::decode_instruction(cut), Error);

  // Register operand out of range.
  std::vector<uint8_t> badreg = {static_cast<uint8_t>(isa::Op::Out), 16};
  CHECK_THROWS_AS(isa::decode_instruction(badreg), Error);
}

TEST_CASE("parser handles labels, conditions and comments") {
  const char* text = R"(
; diamond
  CMP r0, r1
  JCC EQ, other     ; alias for JEQ
  CONST r2, -7
  JMP end
other:
  CONST r2, 42
end:
  OUT r2
  HALT
)";
  isa::Program p = isa::parse_program(text);
  REQUIRE(p.code.size() == 7);
  CHECK(p.code[1].op == isa::Op::Jeq);
  CHECK(p.code[1].label == "other");
  CHECK(p.code[2].imm == -7);
  CHECK(p.labels.at("other") == 4);
  CHECK(p.labels.at("end") == 5);
  CHECK(isa::validate(p).ok());
}

TEST_CASE("parser rejects malformed programs") {
  auto bad = [](const char* text) {
    CHECK_THROWS_AS(isa::parse_program(text), Error);
  };
  bad("BOGUS r1\nHALT\n");           // unknown mnemonic
  bad("CONST r1\nHALT\n");           // missing operand
  bad("CONST r1, 99999\nHALT\n");    // immediate out of 16-bit range
  bad("x: NOP\nx: NOP\nHALT\n");     // duplicate label
  bad("JMP nowhere\nHALT\n");        // undefined label
  bad("OUT r16\nHALT\n");            // register out of range
}

TEST_CASE("validate flags reserved resources") {
  // r15 in any operand slot.
  isa::Program p = isa::parse_program("MOV r1, r2\nHALT\n");
  p.code[0].rd = isa::kReservedReg;
  CHECK_FALSE(isa::validate(p).ok());

  p = isa::parse_program("MOV r1, r2\nHALT\n");
  p.code[0].rs = isa::kReservedReg;
  CHECK_FALSE(isa::validate(p).ok());

  // Data displacement inside the reserved window.
  p = isa::parse_program("LOAD r1, [0x100]\nHALT\n");
  p.code[0].imm = isa::kScratchOffset;
  CHECK_FALSE(isa::validate(p).ok());

  // Control falling off the end of the program.
  CHECK_FALSE(isa::validate(isa::parse_program("NOP\n")).ok());
}

TEST_CASE("build_cfg splits the diamond into four blocks") {
  isa::Program p = isa::parse_program(
      "CMP r0, r1\nJCC EQ, e\nCONST r2, 1\nJMP x\ne: CONST r2, 2\nx: OUT "
      "r2\nHALT\n");
  isa::FunctionCfg cfg = isa::build_cfg(p);
  REQUIRE(cfg.blocks.size() == 4);
  CHECK(cfg.blocks[0].term == isa::Term::Jcc);
  CHECK(cfg.blocks[1].term == isa::Term::Jmp);
  CHECK(cfg.blocks[2].term == isa::Term::Fallthrough);
  CHECK(cfg.blocks[3].term == isa::Term::Halt);

  int taken = 0, fall = 0, uncond = 0;
  for (const auto& e : cfg.edges) {
    taken += e.kind == isa::EdgeKind::Taken;
    fall += e.kind == isa::EdgeKind::Fallthrough;
    uncond += e.kind == isa::EdgeKind::Unconditional;
  }
  CHECK(taken == 1);
  CHECK(fall == 2);  // Jcc fallthrough + block 2 into block 3
  CHECK(uncond == 1);
  CHECK(isa::validate_cfg(cfg).ok());
}

TEST_CASE("canonical form is stable under reformatting") {
  harness::CorpusSpec spec;
  spec.programs = 30;
  spec.seed = 11;
  for (const auto& p : harness::generate_corpus(spec)) {
    isa::Program again = isa::parse_program(isa::format_program(p), p.name);
    CHECK(isa::canonical(again) == isa::canonical(p));
  }
}
