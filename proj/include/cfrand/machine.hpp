#pragma once

// Simulated machine: fetch/decode/execute over a MemoryImage, plus the two
// microarchitectural structures the attack needs: a direct-mapped branch
// target buffer that ignores address bit 31 and survives enclave exits, and a
// 32-entry last-branch-record buffer that only logs untrusted-mode branches.

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfrand/image.hpp"
#include "cfrand/randomize.hpp"

namespace cfrand::mach {

inline constexpr unsigned kBtbEntries = 4096;
inline constexpr unsigned kLbrDepth = 32;
inline constexpr uint64_t kBtbAddrMask = (1ull << 31) - 1;

inline uint32_t btb_index(uint64_t addr) {
  return static_cast<uint32_t>(addr & (kBtbEntries - 1));
}
inline uint32_t btb_tag(uint64_t addr) {
  return static_cast<uint32_t>((addr & kBtbAddrMask) >> 12);
}

class Btb {
 public:
  struct Prediction {
    bool hit = false;
    uint32_t target = 0;  // branch target modulo 2^31
  };
  Prediction lookup(uint64_t src) const;
  void record(uint64_t src, uint64_t dst);  // on taken branches
  void clear();
  bool slot_valid(uint32_t index) const { return slots_[index].valid; }

 private:
  struct Slot {
    bool valid = false;
    uint32_t tag = 0;
    uint32_t target = 0;
  };
  std::array<Slot, kBtbEntries> slots_{};
};

struct LbrRecord {
  uint64_t source = 0;
  uint64_t target = 0;
  bool predicted = false;
};

enum class Mode : uint8_t { Enclave, Untrusted };

struct StepEvent {
  uint64_t step = 0;  // total retired instructions, 1-based
  uint64_t pc = 0;
  isa::Op op = isa::Op::Nop;
  Mode mode = Mode::Enclave;
  bool is_branch = false;
  bool taken = false;
  uint64_t target = 0;
  bool btb_hit = false;
  bool predicted = false;
  bool fault = false;
  std::string fault_reason;
  bool halted = false;
};

std::string trace_jsonl(const std::vector<StepEvent>& trace);

struct RunResult {
  uint64_t steps = 0;
  bool halted = false;
  bool fault = false;
  std::string fault_reason;
};

class Machine;

// The attacker-visible surface at interrupt points: step counts, the region
// kind of the victim pc, untrusted memory, and the LBR. Nothing else.
class AttackerPort {
 public:
  explicit AttackerPort(Machine& m) : m_(m) {}
  uint64_t enclave_steps() const;
  bool victim_in_enclave() const;
  bool victim_halted() const;
  void write_untrusted(uint64_t addr, std::span<const uint8_t> bytes);
  // Runs attacker-supplied code; victim registers and pc are saved/restored
  // (context switch), BTB and LBR are shared (that is the side channel).
  RunResult run_untrusted(uint64_t start_pc, uint64_t max_steps);
  std::vector<LbrRecord> read_lbr() const;

 private:
  Machine& m_;
};

class Machine {
 public:
  explicit Machine(MemoryImage image);
  Machine(MemoryImage image, rnd::TrampolineAreaState tstate,
          rnd::RandomizationPolicy policy);

  // Resets registers/flags, loads inputs into r0..r7, jumps to __entry and
  // fires the randomization hook. Error("machine") if still running.
  void enter_enclave(std::span<const int64_t> inputs);

  StepEvent step();                    // Error("machine") if halted
  RunResult run_to_halt(uint64_t max_steps);
  RunResult run_steps(uint64_t steps);
  // Calls hook after every enclave-mode instruction (single-stepping
  // attacker); hook returning false stops the run.
  RunResult run_single_step(uint64_t max_steps,
                            const std::function<bool(AttackerPort&)>& hook);

  bool halted() const { return halted_; }
  uint64_t total_steps() const { return total_steps_; }
  uint64_t enclave_steps() const { return enclave_steps_; }
  uint64_t pc() const { return pc_; }
  Mode mode_at(uint64_t addr) const;
  uint64_t reg(unsigned i) const { return regs_.at(i); }
  const std::vector<int64_t>& output() const { return output_; }

  void set_trace(bool on) { trace_on_ = on; }
  const std::vector<StepEvent>& trace() const { return trace_; }

  const Btb& btb() const { return btb_; }
  void clear_btb() { btb_.clear(); }  // host/test use only
  std::vector<LbrRecord> lbr_snapshot() const;

  const MemoryImage& image() const { return image_; }
  MemoryImage& image() { return image_; }
  const rnd::TrampolineAreaState* tramp_state() const {
    return has_tstate_ ? &tstate_ : nullptr;
  }
  const std::vector<rnd::RandomizeEvent>& event_log() const {
    return event_log_;
  }
  const rnd::EntryCounters& counters() const { return counters_; }

  void host_write(uint64_t addr, std::span<const uint8_t> bytes);

 private:
  friend class AttackerPort;

  StepEvent exec_one();
  void mem_read(uint64_t addr, unsigned n, uint8_t* out);
  void mem_write(uint64_t addr, unsigned n, const uint8_t* in);
  RunResult run_untrusted_internal(uint64_t start_pc, uint64_t max_steps);

  MemoryImage image_;
  rnd::TrampolineAreaState tstate_;
  bool has_tstate_ = false;
  rnd::RandomizationPolicy policy_;
  rnd::EntryCounters counters_;
  std::vector<rnd::RandomizeEvent> event_log_;

  std::array<uint64_t, isa::kRegCount> regs_{};
  bool flag_eq_ = false;
  bool flag_lt_ = false;
  uint64_t pc_ = 0;
  bool halted_ = true;
  bool entered_ = false;
  uint64_t total_steps_ = 0;
  uint64_t enclave_steps_ = 0;

  Btb btb_;
  std::deque<LbrRecord> lbr_;
  std::vector<int64_t> output_;
  bool trace_on_ = false;
  std::vector<StepEvent> trace_;
};

}  // namespace cfrand::mach
