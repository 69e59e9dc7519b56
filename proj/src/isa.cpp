#include "cfrand/isa.hpp"

#include <algorithm>
#include <array>
#include <sstream>

namespace cfrand::isa {

bool is_valid_opcode(uint8_t byte) {
  return byte >= static_cast<uint8_t>(Op::Nop) &&
         byte <= static_cast<uint8_t>(Op::Jge);
}

bool is_branch(Op op) {
  switch (op) {
    case Op::Jmp:
    case Op::Jeq:
    case Op::Jne:
    case Op::Jlt:
    case Op::Jge:
    case Op::Jmpr:
      return true;
    default:
      return false;
  }
}

bool is_jcc(Op op) {
  return op == Op::Jeq || op == Op::Jne || op == Op::Jlt || op == Op::Jge;
}

Op jcc_op(Cond cc) {
  switch (cc) {
    case Cond::Eq: return Op::Jeq;
    case Cond::Ne: return Op::Jne;
    case Cond::Lt: return Op::Jlt;
    case Cond::Ge: return Op::Jge;
  }
  throw Error("isa", "bad condition code");
}

Cond jcc_cond(Op op) {
  switch (op) {
    case Op::Jeq: return Cond::Eq;
    case Op::Jne: return Cond::Ne;
    case Op::Jlt: return Cond::Lt;
    case Op::Jge: return Cond::Ge;
    default: throw Error("isa", "not a conditional branch");
  }
}

unsigned instr_length(Op op) {
  switch (op) {
    case Op::Nop: return 1;
    case Op::Halt: return 1;
    case Op::Out: return 2;
    case Op::Jmpr: return 2;
    case Op::Mov:
    case Op::Const:
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Cmp:
    case Op::Cmov: return 3;
    case Op::LoadReg:
    case Op::LoadData:
    case Op::StoreReg:
    case Op::StoreData: return 4;
    case Op::Jmp:
    case Op::Jeq:
    case Op::Jne:
    case Op::Jlt:
    case Op::Jge: return 5;
  }
  throw Error("isa", "bad opcode");
}

const char* mnemonic(Op op) {
  switch (op) {
    case Op::Nop: return "NOP";
    case Op::Halt: return "HALT";
    case Op::Out: return "OUT";
    case Op::Jmpr: return "JMPR";
    case Op::Mov: return "MOV";
    case Op::Const: return "CONST";
    case Op::Add: return "ADD";
    case Op::Sub: return "SUB";
    case Op::Mul: return "MUL";
    case Op::Cmp: return "CMP";
    case Op::Cmov: return "CMOV";
    case Op::LoadReg:
    case Op::LoadData: return "LOAD";
    case Op::StoreReg:
    case Op::StoreData: return "STORE";
    case Op::Jmp: return "JMP";
    case Op::Jeq: return "JEQ";
    case Op::Jne: return "JNE";
    case Op::Jlt: return "JLT";
    case Op::Jge: return "JGE";
  }
  return "?";
}

const char* cond_name(Cond cc) {
  switch (cc) {
    case Cond::Eq: return "EQ";
    case Cond::Ne: return "NE";
    case Cond::Lt: return "LT";
    case Cond::Ge: return "GE";
  }
  return "?";
}

std::optional<Cond> cond_from_name(std::string_view name) {
  if (name == "EQ") return Cond::Eq;
  if (name == "NE") return Cond::Ne;
  if (name == "LT") return Cond::Lt;
  if (name == "GE") return Cond::Ge;
  return std::nullopt;
}

namespace {

std::string reg_name(uint8_t r) { return "r" + std::to_string(r); }

std::string target_name(const Instruction& in) {
  if (!in.label.empty()) return in.label;
  std::ostringstream os;
  os << "0x" << std::hex << in.imm;
  return os.str();
}

}  // namespace

std::string format_instruction(const Instruction& in) {
  std::ostringstream os;
  switch (in.op) {
    case Op::Nop:
    case Op::Halt:
      os << mnemonic(in.op);
      break;
    case Op::Out:
      os << "OUT " << reg_name(in.rs);
      break;
    case Op::Jmpr:
      os << "JMPR " << reg_name(in.rs);
      break;
    case Op::Mov:
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Cmp:
      os << mnemonic(in.op) << " " << reg_name(in.rd) << ", " << reg_name(in.rs);
      break;
    case Op::Const:
      os << "CONST " << reg_name(in.rd) << ", " << in.imm;
      break;
    case Op::Cmov:
      os << "CMOV " << cond_name(in.cc) << " " << reg_name(in.rd) << ", "
         << reg_name(in.rs);
      break;
    case Op::LoadReg:
      os << "LOAD " << reg_name(in.rd) << ", [" << reg_name(in.rs) << "]";
      break;
    case Op::LoadData:
      os << "LOAD " << reg_name(in.rd) << ", [0x" << std::hex << in.imm << "]";
      break;
    case Op::StoreReg:
      os << "STORE [" << reg_name(in.rd) << "], " << reg_name(in.rs);
      break;
    case Op::StoreData:
      os << "STORE [0x" << std::hex << in.imm << std::dec << "], "
         << reg_name(in.rs);
      break;
    case Op::Jmp:
      os << "JMP " << target_name(in);
      break;
    case Op::Jeq:
    case Op::Jne:
    case Op::Jlt:
    case Op::Jge:
      os << "JCC " << cond_name(jcc_cond(in.op)) << " " << target_name(in);
      break;
  }
  return os.str();
}

std::string format_program(const Program& p) {
  std::vector<std::vector<std::string>> labels_at(p.code.size() + 1);
  for (const auto& [name, idx] : p.labels) labels_at[idx].push_back(name);
  std::ostringstream os;
  for (size_t i = 0; i < p.code.size(); ++i) {
    for (const auto& l : labels_at[i]) os << l << ":\n";
    os << "    " << format_instruction(p.code[i]) << "\n";
  }
  return os.str();
}

Program canonical(const Program& p) {
  // Co-located labels are one label: name per instruction index, assigned in
  // first-use order (uses in code, then leftover definitions in index order).
  std::map<size_t, std::string> names;
  auto assign = [&](size_t idx) {
    if (!names.count(idx)) names[idx] = "L" + std::to_string(names.size());
  };
  for (const auto& in : p.code)
    if (!in.label.empty()) assign(p.labels.at(in.label));
  std::vector<size_t> defs;
  for (const auto& [name, idx] : p.labels) defs.push_back(idx);
  std::sort(defs.begin(), defs.end());
  for (size_t idx : defs) assign(idx);

  Program out;
  out.name = p.name;
  out.code = p.code;
  for (auto& in : out.code)
    if (!in.label.empty()) in.label = names.at(p.labels.at(in.label));
  for (const auto& [idx, name] : names) out.labels[name] = idx;
  return out;
}

const BasicBlock* FunctionCfg::block(std::string_view id) const {
  for (const auto& b : blocks)
    if (b.id == id) return &b;
  return nullptr;
}

FunctionCfg build_cfg(const Program& p) {
  FunctionCfg cfg;
  if (p.code.empty()) return cfg;

  // block leaders: index 0, label targets, instruction after a terminator
  std::vector<bool> leader(p.code.size(), false);
  leader[0] = true;
  for (const auto& [name, idx] : p.labels)
    if (idx < p.code.size()) leader[idx] = true;
  for (size_t i = 0; i < p.code.size(); ++i) {
    const Op op = p.code[i].op;
    if ((is_branch(op) || op == Op::Halt) && i + 1 < p.code.size())
      leader[i + 1] = true;
  }

  std::vector<size_t> block_of(p.code.size(), 0);
  std::vector<size_t> starts;
  for (size_t i = 0; i < p.code.size(); ++i) {
    if (leader[i]) starts.push_back(i);
    block_of[i] = starts.size() - 1;
  }

  std::map<size_t, std::string> label_of_index;
  for (const auto& [name, idx] : p.labels) {
    // first label alphabetically wins as the block id; all resolve the same
    if (!label_of_index.count(idx)) label_of_index[idx] = name;
  }

  for (size_t b = 0; b < starts.size(); ++b) {
    const size_t lo = starts[b];
    const size_t hi = (b + 1 < starts.size()) ? starts[b + 1] : p.code.size();
    BasicBlock blk;
    blk.id = label_of_index.count(lo) ? label_of_index[lo]
                                      : "b" + std::to_string(b);
    size_t end = hi;
    const Instruction& last = p.code[hi - 1];
    if (is_branch(last.op) || last.op == Op::Halt) {
      end = hi - 1;
      blk.term_instr = last;
      if (last.op == Op::Jmp) blk.term = Term::Jmp;
      else if (last.op == Op::Jmpr) blk.term = Term::Jmpr;
      else if (last.op == Op::Halt) blk.term = Term::Halt;
      else blk.term = Term::Jcc;
    } else {
      blk.term = Term::Fallthrough;
    }
    blk.body.assign(p.code.begin() + lo, p.code.begin() + end);
    cfg.blocks.push_back(std::move(blk));
  }

  auto target_block = [&](const Instruction& in) -> size_t {
    auto it = p.labels.find(in.label);
    if (in.label.empty() || it == p.labels.end())
      throw Error("cfg", "branch to undefined label '" + in.label + "'");
    if (it->second >= p.code.size())
      throw Error("cfg", "label '" + in.label + "' has no instruction");
    return block_of[it->second];
  };

  for (size_t b = 0; b < cfg.blocks.size(); ++b) {
    const BasicBlock& blk = cfg.blocks[b];
    switch (blk.term) {
      case Term::Jmp:
        cfg.edges.push_back({b, target_block(*blk.term_instr),
                             EdgeKind::Unconditional});
        break;
      case Term::Jcc:
        cfg.edges.push_back({b, target_block(*blk.term_instr), EdgeKind::Taken});
        if (b + 1 < cfg.blocks.size())
          cfg.edges.push_back({b, b + 1, EdgeKind::Fallthrough});
        break;
      case Term::Fallthrough:
        if (b + 1 < cfg.blocks.size())
          cfg.edges.push_back({b, b + 1, EdgeKind::Fallthrough});
        break;
      case Term::Jmpr:
      case Term::Halt:
        break;
    }
  }
  return cfg;
}

namespace {

void check_instruction(const Instruction& in, size_t idx,
                       std::vector<Violation>& out) {
  auto bad = [&](std::string code, std::string msg) {
    out.push_back({std::move(code),
                   "instruction " + std::to_string(idx) + ": " + msg});
  };
  auto check_reg = [&](uint8_t r) {
    if (r >= kRegCount) bad("bad-register", "register out of range");
    else if (r == kReservedReg)
      bad("reserved-register", "r15 is reserved for the obfuscator");
  };
  switch (in.op) {
    case Op::Nop:
    case Op::Halt:
      break;
    case Op::Out:
    case Op::Jmpr:
      check_reg(in.rs);
      break;
    case Op::Mov:
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Cmp:
    case Op::Cmov:
      check_reg(in.rd);
      check_reg(in.rs);
      break;
    case Op::Const:
      check_reg(in.rd);
      if (in.imm < -128 || in.imm > 127)
        bad("imm-range", "CONST immediate must fit in signed 8 bits");
      break;
    case Op::LoadReg:
      check_reg(in.rd);
      check_reg(in.rs);
      break;
    case Op::StoreReg:
      check_reg(in.rd);
      check_reg(in.rs);
      break;
    case Op::LoadData:
      check_reg(in.rd);
      if (in.imm < 0 || in.imm + 8 > kSourceDataLimit)
        bad("data-window", "data displacement outside the program window");
      break;
    case Op::StoreData:
      check_reg(in.rs);
      if (in.imm < 0 || in.imm + 8 > kSourceDataLimit)
        bad("data-window", "data displacement outside the program window");
      break;
    case Op::Jmp:
    case Op::Jeq:
    case Op::Jne:
    case Op::Jlt:
    case Op::Jge:
      break;
  }
}

}  // namespace

ValidationReport validate(const Program& p) {
  ValidationReport rep;
  for (size_t i = 0; i < p.code.size(); ++i)
    check_instruction(p.code[i], i, rep.violations);
  if (!p.code.empty()) {
    const Op last = p.code.back().op;
    if (!is_branch(last) && last != Op::Halt)
      rep.violations.push_back(
          {"missing-terminator",
           "control must not fall off the end of the program"});
  }
  for (const auto& [name, idx] : p.labels) {
    if (idx >= p.code.size())
      rep.violations.push_back(
          {"dangling-label", "label '" + name + "' has no instruction"});
  }
  for (size_t i = 0; i < p.code.size(); ++i) {
    const Instruction& in = p.code[i];
    if ((in.op == Op::Jmp || is_jcc(in.op)) && !in.label.empty() &&
        !p.labels.count(in.label))
      rep.violations.push_back(
          {"undefined-label", "branch to undefined label '" + in.label + "'"});
  }
  if (!rep.ok()) return rep;
  return validate_cfg(build_cfg(p));
}

ValidationReport validate_cfg(const FunctionCfg& cfg) {
  ValidationReport rep;
  if (cfg.blocks.empty()) return rep;
  if (cfg.entry >= cfg.blocks.size())
    rep.violations.push_back({"bad-entry", "entry block out of range"});
  for (const auto& b : cfg.blocks) {
    for (const auto& in : b.body) {
      if (is_branch(in.op) || in.op == Op::Halt) {
        rep.violations.push_back(
            {"multiple-terminators",
             "block '" + b.id + "' has a branch or halt inside its body"});
        break;
      }
    }
  }
  for (const auto& e : cfg.edges) {
    if (e.src >= cfg.blocks.size() || e.dst >= cfg.blocks.size())
      rep.violations.push_back({"bad-edge", "edge endpoint out of range"});
  }
  for (size_t b = 0; b < cfg.blocks.size(); ++b) {
    if (cfg.blocks[b].term != Term::Jcc) continue;
    bool taken = false, fall = false;
    for (const auto& e : cfg.edges) {
      if (e.src != b) continue;
      if (e.kind == EdgeKind::Taken) taken = true;
      if (e.kind == EdgeKind::Fallthrough) fall = true;
    }
    if (!taken || !fall)
      rep.violations.push_back(
          {"jcc-without-fallthrough", "conditional block '" +
                                          cfg.blocks[b].id +
                                          "' lacks a taken or fallthrough successor"});
  }
  return rep;
}

namespace {

void push_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(v & 0xFF);
  out.push_back((v >> 8) & 0xFF);
}

void push_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

}  // namespace

void encode_instruction(const Instruction& in, std::vector<uint8_t>& out) {
  auto need_reg = [&](uint8_t r) {
    if (r >= kRegCount) throw Error("encode", "register out of range");
    return r;
  };
  out.push_back(static_cast<uint8_t>(in.op));
  switch (in.op) {
    case Op::Nop:
    case Op::Halt:
      break;
    case Op::Out:
    case Op::Jmpr:
      out.push_back(need_reg(in.rs));
      break;
    case Op::Mov:
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Cmp:
      out.push_back(need_reg(in.rd));
      out.push_back(need_reg(in.rs));
      break;
    case Op::Const:
      if (in.imm < -128 || in.imm > 127)
        throw Error("encode", "CONST immediate out of range");
      out.push_back(need_reg(in.rd));
      out.push_back(static_cast<uint8_t>(static_cast<int8_t>(in.imm)));
      break;
    case Op::Cmov:
      out.push_back(static_cast<uint8_t>(
          (static_cast<uint8_t>(in.cc) << 4) | need_reg(in.rd)));
      out.push_back(need_reg(in.rs));
      break;
    case Op::LoadReg:
      out.push_back(need_reg(in.rd));
      out.push_back(need_reg(in.rs));
      out.push_back(0);
      break;
    case Op::LoadData:
      if (in.imm < 0 || in.imm > 0xFFFF)
        throw Error("encode", "data displacement out of range");
      out.push_back(need_reg(in.rd));
      push_u16(out, static_cast<uint16_t>(in.imm));
      break;
    case Op::StoreReg:
      out.push_back(need_reg(in.rd));
      out.push_back(need_reg(in.rs));
      out.push_back(0);
      break;
    case Op::StoreData:
      if (in.imm < 0 || in.imm > 0xFFFF)
        throw Error("encode", "data displacement out of range");
      out.push_back(need_reg(in.rs));
      push_u16(out, static_cast<uint16_t>(in.imm));
      break;
    case Op::Jmp:
    case Op::Jeq:
    case Op::Jne:
    case Op::Jlt:
    case Op::Jge:
      if (!in.label.empty())
        throw Error("encode", "unresolved branch label '" + in.label + "'");
      if (in.imm < 0 || in.imm > 0xFFFFFFFFll)
        throw Error("encode", "branch target out of range");
      push_u32(out, static_cast<uint32_t>(in.imm));
      break;
  }
}

Decoded decode_instruction(std::span<const uint8_t> bytes) {
  if (bytes.empty()) throw Error("decode", "empty byte range");
  const uint8_t opb = bytes[0];
  if (opb == kTrapByte) throw Error("decode", "trap byte");
  if (!is_valid_opcode(opb)) throw Error("decode", "invalid opcode");
  const Op op = static_cast<Op>(opb);
  const unsigned len = instr_length(op);
  if (bytes.size() < len) throw Error("decode", "truncated instruction");
  auto reg = [&](uint8_t b) {
    if (b >= kRegCount) throw Error("decode", "bad register encoding");
    return b;
  };
  Decoded d;
  d.length = len;
  Instruction& in = d.instr;
  in.op = op;
  switch (op) {
    case Op::Nop:
    case Op::Halt:
      break;
    case Op::Out:
    case Op::Jmpr:
      in.rs = reg(bytes[1]);
      break;
    case Op::Mov:
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Cmp:
      in.rd = reg(bytes[1]);
      in.rs = reg(bytes[2]);
      break;
    case Op::Const:
      in.rd = reg(bytes[1]);
      in.imm = static_cast<int8_t>(bytes[2]);
      break;
    case Op::Cmov: {
      const uint8_t cc = bytes[1] >> 4;
      if (cc > 3) throw Error("decode", "bad condition code");
      in.cc = static_cast<Cond>(cc);
      in.rd = reg(bytes[1] & 0x0F);
      in.rs = reg(bytes[2]);
      break;
    }
    case Op::LoadReg:
      in.rd = reg(bytes[1]);
      in.rs = reg(bytes[2]);
      break;
    case Op::LoadData:
      in.rd = reg(bytes[1]);
      in.imm = bytes[2] | (bytes[3] << 8);
      break;
    case Op::StoreReg:
      in.rd = reg(bytes[1]);
      in.rs = reg(bytes[2]);
      break;
    case Op::StoreData:
      in.rs = reg(bytes[1]);
      in.imm = bytes[2] | (bytes[3] << 8);
      break;
    case Op::Jmp:
    case Op::Jeq:
    case Op::Jne:
    case Op::Jlt:
    case Op::Jge: {
      uint32_t a = 0;
      for (int i = 0; i < 4; ++i) a |= static_cast<uint32_t>(bytes[1 + i]) << (8 * i);
      in.imm = a;
      break;
    }
  }
  return d;
}

}  // namespace cfrand::isa
