#include "cfrand/randomize.hpp"

#include <algorithm>
#include <random>

#include "cfrand/rng.hpp"
#include "json.hpp"

namespace cfrand::rnd {

uint64_t location_count(uint64_t area_size) {
  if (area_size < 15)
    throw Error("randomize", "area too small for a maximum-size trampoline");
  return area_size - 5;
}

uint64_t TrampolineAreaState::entry_addr(uint32_t tid) const {
  for (const auto& p : placements)
    if (p.tid == tid) return area_base[active] + p.offset;
  throw Error("randomize", "unknown trampoline id");
}

std::string event_log_json(const std::vector<RandomizeEvent>& log) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& ev : log) {
    nlohmann::json moves = nlohmann::json::array();
    for (const auto& m : ev.moves)
      moves.push_back({{"tid", m.tid}, {"from", m.from}, {"to", m.to}});
    j.push_back({{"entry_count", ev.entry_count},
                 {"seed", ev.seed},
                 {"to_area", ev.to_area},
                 {"moves", std::move(moves)}});
  }
  return j.dump(2);
}

RandomizeEvent randomize(MemoryImage& img, TrampolineAreaState& st,
                         uint64_t seed) {
  if (st.placements.empty())
    throw Error("randomize", "no trampoline entries to randomize");
  const int from_area = st.active;
  const int to_area = 1 - st.active;
  const uint64_t from_base = st.area_base[from_area];
  const uint64_t to_base = st.area_base[to_area];

  // consistency check: jump table must point at current placements
  for (const auto& p : st.placements) {
    if (img.read64(st.jt_base + 8ull * p.tid) != from_base + p.offset)
      throw Error("randomize", "jump table inconsistent with placements");
  }

  std::mt19937_64 rng(seed);
  std::vector<size_t> order(st.placements.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_indices(order, rng);

  std::vector<bool> used(st.area_size, false);
  std::vector<PlacedEntry> next = st.placements;
  RandomizeEvent ev;
  ev.seed = seed;
  ev.to_area = to_area;

  for (size_t oi : order) {
    const PlacedEntry& cur = st.placements[oi];
    const uint64_t span = st.area_size - cur.size;  // feasible starts [0, span)
    uint32_t off = 0;
    bool placed = false;
    for (int tries = 0; tries < 100000; ++tries) {
      off = static_cast<uint32_t>(bounded(rng, span));
      bool free = true;
      for (uint32_t i = 0; i < cur.size && free; ++i)
        if (used[off + i]) free = false;
      if (free) {
        placed = true;
        break;
      }
    }
    if (!placed) throw Error("randomize", "could not place trampoline entry");
    for (uint32_t i = 0; i < cur.size; ++i) used[off + i] = true;
    for (uint32_t i = 0; i < cur.size; ++i)
      img.write8(to_base + off + i, img.read8(from_base + cur.offset + i));
    next[oi].offset = off;
    ev.moves.push_back({cur.tid, from_base + cur.offset, to_base + off});
  }

  Region& old_area = *img.find(from_base);
  std::fill(old_area.bytes.begin(), old_area.bytes.end(), isa::kTrapByte);

  for (const auto& p : next) img.write64(st.jt_base + 8ull * p.tid, to_base + p.offset);
  st.placements = std::move(next);
  st.active = to_area;
  return ev;
}

std::optional<RandomizeEvent> on_enclave_enter(const RandomizationPolicy& pol,
                                               EntryCounters& ctr,
                                               MemoryImage& img,
                                               TrampolineAreaState& st) {
  ++ctr.total_entries;
  if (pol.reentry_threshold == RandomizationPolicy::kNever) return std::nullopt;
  if (pol.reentry_threshold == 0)
    throw Error("randomize", "re-entry threshold must be at least 1");
  if (++ctr.entries_since_randomize < pol.reentry_threshold) return std::nullopt;
  ctr.entries_since_randomize = 0;
  ++ctr.randomizations;
  RandomizeEvent ev =
      randomize(img, st, mix_seed(pol.seed, ctr.total_entries));
  ev.entry_count = ctr.total_entries;
  return ev;
}

}  // namespace cfrand::rnd
