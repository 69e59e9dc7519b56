#include "cfrand/machine.hpp"

#include "json.hpp"

namespace cfrand::mach {

Btb::Prediction Btb::lookup(uint64_t src) const {
  const Slot& s = slots_[btb_index(src)];
  if (!s.valid || s.tag != btb_tag(src)) return {};
  return {true, s.target};
}

void Btb::record(uint64_t src, uint64_t dst) {
  Slot& s = slots_[btb_index(src)];
  s.valid = true;
  s.tag = btb_tag(src);
  s.target = static_cast<uint32_t>(dst & kBtbAddrMask);
}

void Btb::clear() { slots_.fill({}); }

std::string trace_jsonl(const std::vector<StepEvent>& trace) {
  std::string out;
  for (const auto& ev : trace) {
    nlohmann::json j{{"step", ev.step},
                     {"pc", ev.pc},
                     {"op", isa::mnemonic(ev.op)},
                     {"mode", ev.mode == Mode::Enclave ? "enclave" : "untrusted"}};
    if (ev.is_branch) {
      j["branch"] = true;
      j["taken"] = ev.taken;
      if (ev.taken) {
        j["target"] = ev.target;
        j["btb_hit"] = ev.btb_hit;
        j["predicted"] = ev.predicted;
      }
    }
    if (ev.fault) {
      j["fault"] = true;
      j["fault_reason"] = ev.fault_reason;
    }
    if (ev.halted) j["halted"] = true;
    out += j.dump();
    out += '\n';
  }
  return out;
}

uint64_t AttackerPort::enclave_steps() const { return m_.enclave_steps(); }
bool AttackerPort::victim_in_enclave() const {
  return !m_.halted() && m_.mode_at(m_.pc()) == Mode::Enclave;
}
bool AttackerPort::victim_halted() const { return m_.halted(); }

void AttackerPort::write_untrusted(uint64_t addr,
                                   std::span<const uint8_t> bytes) {
  for (size_t i = 0; i < bytes.size(); ++i) {
    Region* r = m_.image_.find(addr + i);
    if (!r || r->enclave)
      throw Error("attack", "attacker write outside untrusted memory");
    r->bytes[addr + i - r->base] = bytes[i];
  }
}

RunResult AttackerPort::run_untrusted(uint64_t start_pc, uint64_t max_steps) {
  return m_.run_untrusted_internal(start_pc, max_steps);
}

std::vector<LbrRecord> AttackerPort::read_lbr() const {
  return m_.lbr_snapshot();
}

Machine::Machine(MemoryImage image) : image_(std::move(image)) {}

Machine::Machine(MemoryImage image, rnd::TrampolineAreaState tstate,
                 rnd::RandomizationPolicy policy)
    : image_(std::move(image)),
      tstate_(std::move(tstate)),
      has_tstate_(true),
      policy_(policy) {}

Mode Machine::mode_at(uint64_t addr) const {
  const Region* r = image_.find(addr);
  return (r && r->enclave) ? Mode::Enclave : Mode::Untrusted;
}

std::vector<LbrRecord> Machine::lbr_snapshot() const {
  return {lbr_.begin(), lbr_.end()};
}

void Machine::host_write(uint64_t addr, std::span<const uint8_t> bytes) {
  for (size_t i = 0; i < bytes.size(); ++i) image_.write8(addr + i, bytes[i]);
}

void Machine::enter_enclave(std::span<const int64_t> inputs) {
  if (entered_ && !halted_)
    throw Error("machine", "enclave entry while the enclave is still running");
  if (inputs.size() > 8)
    throw Error("machine", "at most 8 input values (r0..r7)");
  regs_.fill(0);
  for (size_t i = 0; i < inputs.size(); ++i)
    regs_[i] = static_cast<uint64_t>(inputs[i]);
  flag_eq_ = flag_lt_ = false;
  output_.clear();
  pc_ = image_.symbol("__entry");
  halted_ = false;
  entered_ = true;
  if (has_tstate_) {
    auto ev = rnd::on_enclave_enter(policy_, counters_, image_, tstate_);
    if (ev) event_log_.push_back(std::move(*ev));
  } else {
    ++counters_.total_entries;
  }
}

void Machine::mem_read(uint64_t addr, unsigned n, uint8_t* out) {
  const Region* r = image_.find(addr);
  if (!r || !r->contains(addr + n - 1))
    throw Error("fault", "memory read outside a region");
  if (!(r->perm & PermR)) throw Error("fault", "memory read permission");
  for (unsigned i = 0; i < n; ++i) out[i] = r->bytes[addr - r->base + i];
}

void Machine::mem_write(uint64_t addr, unsigned n, const uint8_t* in) {
  Region* r = image_.find(addr);
  if (!r || !r->contains(addr + n - 1))
    throw Error("fault", "memory write outside a region");
  if (!(r->perm & PermW)) throw Error("fault", "memory write permission");
  for (unsigned i = 0; i < n; ++i) r->bytes[addr - r->base + i] = in[i];
}

StepEvent Machine::exec_one() {
  StepEvent ev;
  ev.pc = pc_;
  const Region* r = image_.find(pc_);
  ev.mode = (r && r->enclave) ? Mode::Enclave : Mode::Untrusted;

  ++total_steps_;
  if (ev.mode == Mode::Enclave) ++enclave_steps_;
  ev.step = total_steps_;

  auto fault = [&](const std::string& why) -> StepEvent& {
    ev.fault = true;
    ev.fault_reason = why;
    ev.halted = true;
    halted_ = true;
    entered_ = false;
    return ev;
  };

  if (!r) return fault("fetch from unmapped address");
  if (!(r->perm & PermX)) return fault("fetch from non-executable region");

  isa::Decoded d;
  try {
    d = isa::decode_instruction(
        std::span<const uint8_t>(r->bytes).subspan(pc_ - r->base));
  } catch (const Error& e) {
    return fault(e.what());
  }
  const isa::Instruction& in = d.instr;
  ev.op = in.op;
  uint64_t next_pc = pc_ + d.length;

  auto rd64 = [&](uint64_t addr) {
    uint8_t b[8];
    mem_read(addr, 8, b);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  };
  auto wr64 = [&](uint64_t addr, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xFF;
    mem_write(addr, 8, b);
  };
  auto data_addr = [&](int64_t disp) {
    return image_.region("data").base + static_cast<uint64_t>(disp);
  };
  auto cond_holds = [&](isa::Cond cc) {
    switch (cc) {
      case isa::Cond::Eq: return flag_eq_;
      case isa::Cond::Ne: return !flag_eq_;
      case isa::Cond::Lt: return flag_lt_;
      case isa::Cond::Ge: return !flag_lt_;
    }
    return false;
  };

  try {
    switch (in.op) {
      case isa::Op::Nop:
        break;
      case isa::Op::Halt:
        halted_ = true;
        entered_ = false;
        ev.halted = true;
        break;
      case isa::Op::Out:
        output_.push_back(static_cast<int64_t>(regs_[in.rs]));
        break;
      case isa::Op::Mov:
        regs_[in.rd] = regs_[in.rs];
        break;
      case isa::Op::Const:
        regs_[in.rd] = static_cast<uint64_t>(in.imm);
        break;
      case isa::Op::Add:
        regs_[in.rd] += regs_[in.rs];
        break;
      case isa::Op::Sub:
        regs_[in.rd] -= regs_[in.rs];
        break;
      case isa::Op::Mul:
        regs_[in.rd] *= regs_[in.rs];
        break;
      case isa::Op::Cmp: {
        const uint64_t a = regs_[in.rd], b = regs_[in.rs];
        flag_eq_ = a == b;
        flag_lt_ = static_cast<int64_t>(a) < static_cast<int64_t>(b);
        break;
      }
      case isa::Op::Cmov:
        if (cond_holds(in.cc)) regs_[in.rd] = regs_[in.rs];
        break;
      case isa::Op::LoadReg:
        regs_[in.rd] = rd64(regs_[in.rs]);
        break;
      case isa::Op::LoadData:
        regs_[in.rd] = rd64(data_addr(in.imm));
        break;
      case isa::Op::StoreReg:
        wr64(regs_[in.rd], regs_[in.rs]);
        break;
      case isa::Op::StoreData:
        wr64(data_addr(in.imm), regs_[in.rs]);
        break;
      case isa::Op::Jmp:
      case isa::Op::Jeq:
      case isa::Op::Jne:
      case isa::Op::Jlt:
      case isa::Op::Jge:
      case isa::Op::Jmpr: {
        ev.is_branch = true;
        bool taken = true;
        uint64_t target = 0;
        if (in.op == isa::Op::Jmp) {
          target = static_cast<uint64_t>(in.imm);
        } else if (in.op == isa::Op::Jmpr) {
          target = regs_[in.rs];
        } else {
          taken = cond_holds(isa::jcc_cond(in.op));
          target = static_cast<uint64_t>(in.imm);
        }
        ev.taken = taken;
        if (taken) {
          ev.target = target;
          const Btb::Prediction pred = btb_.lookup(pc_);
          ev.btb_hit = pred.hit;
          ev.predicted =
              pred.hit && pred.target == (target & kBtbAddrMask);
          btb_.record(pc_, target);
          if (ev.mode == Mode::Untrusted) {
            if (lbr_.size() == kLbrDepth) lbr_.pop_front();
            lbr_.push_back({pc_, target, ev.predicted});
          }
          next_pc = target;
        }
        break;
      }
    }
  } catch (const Error& e) {
    return fault(e.what());
  }

  if (!halted_) pc_ = next_pc;
  return ev;
}

StepEvent Machine::step() {
  if (halted_) throw Error("machine", "machine is halted; enter the enclave first");
  StepEvent ev = exec_one();
  if (trace_on_) trace_.push_back(ev);
  return ev;
}

RunResult Machine::run_to_halt(uint64_t max_steps) {
  if (max_steps == 0) throw Error("machine", "step budget must be positive");
  RunResult res;
  while (!halted_ && res.steps < max_steps) {
    StepEvent ev = step();
    ++res.steps;
    if (ev.fault) {
      res.fault = true;
      res.fault_reason = ev.fault_reason;
    }
  }
  res.halted = halted_;
  return res;
}

RunResult Machine::run_steps(uint64_t steps) {
  if (steps == 0) throw Error("machine", "step budget must be positive");
  RunResult res;
  while (!halted_ && res.steps < steps) {
    StepEvent ev = step();
    ++res.steps;
    if (ev.fault) {
      res.fault = true;
      res.fault_reason = ev.fault_reason;
    }
  }
  res.halted = halted_;
  return res;
}

RunResult Machine::run_single_step(
    uint64_t max_steps, const std::function<bool(AttackerPort&)>& hook) {
  if (max_steps == 0) throw Error("machine", "step budget must be positive");
  RunResult res;
  AttackerPort port(*this);
  while (!halted_ && res.steps < max_steps) {
    StepEvent ev = step();
    ++res.steps;
    if (ev.fault) {
      res.fault = true;
      res.fault_reason = ev.fault_reason;
    }
    if (ev.mode == Mode::Enclave && hook && !hook(port)) break;
  }
  res.halted = halted_;
  return res;
}

RunResult Machine::run_untrusted_internal(uint64_t start_pc,
                                          uint64_t max_steps) {
  if (halted_) throw Error("machine", "victim is halted");
  if (mode_at(start_pc) == Mode::Enclave)
    throw Error("attack", "attacker cannot start execution inside the enclave");
  // context switch: save victim register state, run attacker code, restore
  const auto saved_regs = regs_;
  const bool saved_eq = flag_eq_, saved_lt = flag_lt_;
  const uint64_t saved_pc = pc_;
  const bool saved_entered = entered_;
  pc_ = start_pc;
  RunResult res;
  while (!halted_ && res.steps < max_steps) {
    if (mode_at(pc_) == Mode::Enclave)
      throw Error("attack", "attacker code reached an enclave region");
    StepEvent ev = exec_one();
    if (trace_on_) trace_.push_back(ev);
    ++res.steps;
    if (ev.fault) {
      res.fault = true;
      res.fault_reason = ev.fault_reason;
    }
  }
  if (res.fault)
    throw Error("attack", "attacker code faulted: " + res.fault_reason);
  halted_ = false;
  entered_ = saved_entered;
  regs_ = saved_regs;
  flag_eq_ = saved_eq;
  flag_lt_ = saved_lt;
  pc_ = saved_pc;
  res.halted = false;
  return res;
}

}  // namespace cfrand::mach
