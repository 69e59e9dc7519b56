#include <sstream>

#include "cfrand/harness.hpp"
#include "cfrand/rng.hpp"

namespace cfrand::harness {

namespace {

// Register roles used by generated programs.  Inputs arrive in r0..r7 and are
// never written; r8 is the running accumulator, r14 a scratch destination,
// r9..r11 hold loop counters (one per nesting depth), r12/r13 are pinned to
// the constants 0/1 so loop back-edges can be expressed with CMP.
constexpr int kAcc = 8;
constexpr int kTmp = 14;
constexpr int kZero = 12;
constexpr int kOne = 13;
constexpr int kLoopBase = 9;

struct Gen {
  const CorpusSpec& spec;
  std::mt19937_64 rng;
  std::vector<std::string> lines;
  int next_label = 0;
  int conditionals = 0;
  // Loops under a conditional would make trip counts input-dependent; the
  // observable-flow invariant only holds for fixed trip counts.
  bool in_conditional = false;

  Gen(const CorpusSpec& s, uint64_t seed) : spec(s), rng(seed) {}

  std::string fresh_label(const char* stem) {
    return std::string(stem) + std::to_string(next_label++);
  }

  int source_reg(uint32_t depth) {
    // inputs, the accumulator, scratch, the constant one, live counters
    uint64_t pick = bounded(rng, 11 + depth);
    if (pick < 8) return static_cast<int>(pick);
    if (pick == 8) return kAcc;
    if (pick == 9) return kTmp;
    if (pick == 10) return kOne;
    return kLoopBase + static_cast<int>(pick - 11);
  }

  int dest_reg() { return bounded(rng, 4) == 0 ? kTmp : kAcc; }

  std::string cond_name() {
    static const char* names[] = {"EQ", "NE", "LT", "GE"};
    return names[bounded(rng, 4)];
  }

  void emit(const std::string& line) { lines.push_back(line); }

  void emit_arith(uint32_t depth) {
    switch (bounded(rng, 7)) {
      case 0:
        emit("  ADD r" + std::to_string(dest_reg()) + ", r" +
             std::to_string(source_reg(depth)));
        break;
      case 1:
        emit("  SUB r" + std::to_string(dest_reg()) + ", r" +
             std::to_string(source_reg(depth)));
        break;
      case 2:
        emit("  MUL r" + std::to_string(dest_reg()) + ", r" +
             std::to_string(source_reg(depth)));
        break;
      case 3:
        emit("  MOV r" + std::to_string(dest_reg()) + ", r" +
             std::to_string(source_reg(depth)));
        break;
      case 4:
        emit("  CONST r" + std::to_string(dest_reg()) + ", " +
             std::to_string(static_cast<int64_t>(bounded(rng, 201)) - 100));
        break;
      case 5:
        emit("  STORE [" + std::to_string(0x40 + 8 * bounded(rng, 8)) +
             "], r" + std::to_string(source_reg(depth)));
        break;
      default:
        emit("  LOAD r" + std::to_string(dest_reg()) + ", [" +
             std::to_string(0x40 + 8 * bounded(rng, 8)) + "]");
        break;
    }
  }

  void emit_block(uint32_t depth, uint32_t stmts);

  void emit_if(uint32_t depth, bool with_else) {
    ++conditionals;
    const bool saved = in_conditional;
    in_conditional = true;
    int a = source_reg(depth);
    int b = source_reg(depth);
    std::string skip = fresh_label(with_else ? "else" : "skip");
    emit("  CMP r" + std::to_string(a) + ", r" + std::to_string(b));
    emit("  JCC " + cond_name() + " " + skip);
    emit_block(depth + 1, 1 + bounded(rng, 2));
    if (with_else) {
      std::string end = fresh_label("end");
      emit("  JMP " + end);
      emit(skip + ":");
      emit_block(depth + 1, 1 + bounded(rng, 2));
      emit(end + ":");
    } else {
      emit(skip + ":");
    }
    in_conditional = saved;
  }

  void emit_loop(uint32_t depth) {
    ++conditionals;
    int counter = kLoopBase + static_cast<int>(depth);
    uint64_t trips =
        spec.min_trip + bounded(rng, spec.max_trip - spec.min_trip + 1);
    std::string head = fresh_label("loop");
    emit("  CONST r" + std::to_string(counter) + ", " + std::to_string(trips));
    emit(head + ":");
    emit_block(depth + 1, 1 + bounded(rng, 2));
    emit("  SUB r" + std::to_string(counter) + ", r" + std::to_string(kOne));
    emit("  CMP r" + std::to_string(counter) + ", r" + std::to_string(kZero));
    emit("  JCC NE " + head);
  }

  void emit_stmt(uint32_t depth) {
    bool nested = depth < spec.max_depth;
    uint64_t roll = bounded(rng, 100);
    if (roll < 45 || !nested) {
      emit_arith(depth);
    } else if (roll < 55) {
      emit("  OUT r" + std::to_string(kAcc));
    } else if (roll < 70) {
      emit_if(depth, false);
    } else if (roll < 85 || !spec.loops || in_conditional) {
      emit_if(depth, true);
    } else if (depth < 3) {  // counters r9..r11
      emit_loop(depth);
    } else {
      emit_arith(depth);
    }
  }
};

void Gen::emit_block(uint32_t depth, uint32_t stmts) {
  for (uint32_t i = 0; i < stmts; ++i) emit_stmt(depth);
}

std::string generate_one(const CorpusSpec& spec, uint64_t seed) {
  Gen g(spec, seed);
  g.emit("  CONST r12, 0");
  g.emit("  CONST r13, 1");
  g.emit("  CONST r8, " +
         std::to_string(static_cast<int64_t>(bounded(g.rng, 17)) - 8));
  uint32_t stmts =
      spec.min_stmts + bounded(g.rng, spec.max_stmts - spec.min_stmts + 1);
  g.emit_block(0, stmts);
  if (g.conditionals == 0) g.emit_if(0, true);
  g.emit("  OUT r8");
  g.emit("  HALT");
  std::ostringstream out;
  for (const auto& line : g.lines) out << line << "\n";
  return out.str();
}

}  // namespace

std::vector<std::string> generate_corpus_asm(const CorpusSpec& spec) {
  std::vector<std::string> out;
  out.reserve(spec.programs);
  for (uint32_t i = 0; i < spec.programs; ++i)
    out.push_back(generate_one(spec, mix_seed(spec.seed, i)));
  return out;
}

std::vector<isa::Program> generate_corpus(const CorpusSpec& spec) {
  auto texts = generate_corpus_asm(spec);
  std::vector<isa::Program> out;
  out.reserve(texts.size());
  for (size_t i = 0; i < texts.size(); ++i)
    out.push_back(isa::parse_program(texts[i], "p" + std::to_string(i)));
  return out;
}

std::vector<int64_t> random_inputs(std::mt19937_64& rng) {
  std::vector<int64_t> v(8);
  for (auto& x : v) x = static_cast<int64_t>(bounded(rng, 201)) - 100;
  return v;
}

}  // namespace cfrand::harness
