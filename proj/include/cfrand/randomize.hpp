#pragma once

// Run-time trampoline randomization: two write+execute areas, entries live in
// one (active) area at a time; randomize() reshuffles every entry into the
// other area at fresh uniform offsets, rewrites the jump table, and trap-fills
// the old area. Intended to run at enclave-entry boundaries (r15 not live).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfrand/image.hpp"

namespace cfrand::rnd {

// Number of distinct placements for a minimum-size (5-byte) trampoline in an
// area of the given size: area_size - 5. A 4096-byte area gives 4091.
uint64_t location_count(uint64_t area_size);  // Error("randomize") below 15

struct PlacedEntry {
  uint32_t tid = 0;
  uint32_t offset = 0;  // inside the active area
  uint32_t size = 0;
};

struct TrampolineAreaState {
  uint64_t area_base[2] = {0, 0};
  uint32_t area_size = 0;
  uint64_t jt_base = 0;  // address of jump-table slot 0 (slot i at +8*i)
  int active = 0;
  std::vector<PlacedEntry> placements;

  uint64_t entry_addr(uint32_t tid) const;  // Error("randomize") if unknown
  // Security parameter: distinct placements for a 5-byte entry across both
  // areas combined.
  uint64_t k() const { return location_count(2 * uint64_t(area_size)); }
};

struct RandomizeEvent {
  uint64_t entry_count = 0;
  uint64_t seed = 0;
  int to_area = 0;
  struct Move {
    uint32_t tid = 0;
    uint64_t from = 0;
    uint64_t to = 0;
  };
  std::vector<Move> moves;
};

std::string event_log_json(const std::vector<RandomizeEvent>& log);

// Moves every entry into the inactive area (uniform offsets, no overlap),
// updates jump-table slots, trap-fills the vacated area, flips active.
// Deterministic in the seed.
RandomizeEvent randomize(MemoryImage& img, TrampolineAreaState& st,
                         uint64_t seed);

struct RandomizationPolicy {
  // Randomize when the number of entries since the last randomization reaches
  // this threshold. 1 = every entry; kNever = static template (baseline).
  static constexpr uint64_t kNever = ~0ull;
  uint64_t reentry_threshold = 1;
  uint64_t seed = 0;
};

struct EntryCounters {
  uint64_t total_entries = 0;
  uint64_t entries_since_randomize = 0;
  uint64_t randomizations = 0;
};

// Enclave-entry hook: bumps counters and randomizes when the policy says so.
std::optional<RandomizeEvent> on_enclave_enter(const RandomizationPolicy& pol,
                                               EntryCounters& ctr,
                                               MemoryImage& img,
                                               TrampolineAreaState& st);

}  // namespace cfrand::rnd
