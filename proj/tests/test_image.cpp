// Memory image, layout and JSON serialization.

#include <algorithm>
#include <cstdint>

#include "cfrand/harness.hpp"
#include "cfrand/image.hpp"
#include "cfrand/isa.hpp"
#include "doctest.h"

using namespace cfrand;

namespace {

const char* kDiamond =
    "CMP r0, r1\nJCC EQ, e\nCONST r2, 1\nJMP x\ne: CONST r2, 2\nx: OUT "
    "r2\nHALT\n";

}  // namespace

TEST_CASE("layout produces the five standard regions") {
  MemoryImage img = layout(isa::parse_program(kDiamond), LayoutConfig{});
  REQUIRE(img.regions.size() == 5);

  const Region& st = img.region("static");
  CHECK(st.enclave);
  CHECK(st.perm == PermX);
  CHECK(st.base == LayoutConfig{}.static_base);

  for (const char* name : {"trampoline_a", "trampoline_b"}) {
    const Region& t = img.region(name);
    CHECK(t.enclave);
    CHECK(t.perm == (PermW | PermX));
    CHECK(t.bytes.size() == LayoutConfig{}.area_size);
    CHECK(std::all_of(t.bytes.begin(), t.bytes.end(),
                      [](uint8_t b) { return b == isa::kTrapByte; }));
  }

  const Region& data = img.region("data");
  CHECK(data.enclave);
  CHECK(data.perm == (PermR | PermW));

  const Region& un = img.region("untrusted");
  CHECK_FALSE(un.enclave);
  CHECK(un.perm == (PermR | PermW | PermX));
  // The untrusted window aliases all enclave code at +2^31 so shadow branches
  // can collide in the BTB. It must cover both trampoline areas.
  CHECK(un.base == st.base + kAliasOffset);
  CHECK(un.end() >= img.region("trampoline_b").end() + kAliasOffset);

  CHECK(img.symbol("__entry") == st.base);
}

TEST_CASE("region lookup and bounds") {
  MemoryImage img = layout(isa::parse_program(kDiamond), LayoutConfig{});
  const Region& st = img.region("static");
  CHECK(img.find(st.base) == &st);
  CHECK(img.find(st.end() - 1) == &st);
  CHECK(img.find(st.end()) == nullptr);  // gap between static and trampolines
  CHECK_THROWS_AS(img.region("bogus"), Error);
  CHECK_THROWS_AS(img.read8(0x10), Error);  // unmapped
}

TEST_CASE("read64/write64 are little endian") {
  MemoryImage img = layout(isa::parse_program(kDiamond), LayoutConfig{});
  const uint64_t a = img.region("data").base;
  img.write64(a, 0x1122334455667788ull);
  CHECK(img.read8(a) == 0x88);
  CHECK(img.read8(a + 7) == 0x11);
  CHECK(img.read64(a) == 0x1122334455667788ull);
}

TEST_CASE("image JSON round-trips and is deterministic") {
  MemoryImage img = layout(isa::parse_program(kDiamond), LayoutConfig{});
  const std::string j = img.to_json();
  MemoryImage back = MemoryImage::from_json(j);

  REQUIRE(back.regions.size() == img.regions.size());
  for (size_t i = 0; i < img.regions.size(); ++i) {
    CHECK(back.regions[i].name == img.regions[i].name);
    CHECK(back.regions[i].base == img.regions[i].base);
    CHECK(back.regions[i].perm == img.regions[i].perm);
    CHECK(back.regions[i].enclave == img.regions[i].enclave);
    CHECK(back.regions[i].bytes == img.regions[i].bytes);
  }
  CHECK(back.symbols == img.symbols);
  CHECK(back.to_json() == j);

  CHECK_THROWS_AS(MemoryImage::from_json("{"), Error);
  CHECK_THROWS_AS(MemoryImage::from_json("{\"regions\":[]}"), Error);
}

TEST_CASE("layout config sanity checks") {
  LayoutConfig cfg;
  cfg.trampoline_b_base = cfg.trampoline_a_base;  // overlapping areas
  CHECK_THROWS_AS(layout(isa::parse_program(kDiamond), cfg), Error);

  cfg = LayoutConfig{};
  cfg.area_size = 10;  // too small for a single trampoline
  CHECK_THROWS_AS(layout(isa::parse_program(kDiamond), cfg), Error);

  cfg = LayoutConfig{};
  cfg.static_capacity = 8;  // program does not fit
  CHECK_THROWS_AS(layout(isa::parse_program(kDiamond), cfg), Error);
}

TEST_CASE("disassembly inverts encoding for generated programs") {
  harness::CorpusSpec spec;
  spec.programs = 25;
  spec.seed = 23;
  for (const auto& p : harness::generate_corpus(spec)) {
    MemoryImage img = layout(p, LayoutConfig{});
    isa::Program back = disassemble_program(img);
    back.name = p.name;  // identity is up to naming metadata
    CHECK(isa::canonical(back) == isa::canonical(p));
  }
}
