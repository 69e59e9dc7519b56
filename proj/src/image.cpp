#include "cfrand/image.hpp"

#include <algorithm>

#include "json.hpp"

namespace cfrand {

std::string perm_name(uint8_t perm) {
  std::string s;
  if (perm & PermR) s += 'r';
  if (perm & PermW) s += 'w';
  if (perm & PermX) s += 'x';
  return s.empty() ? "-" : s;
}

uint8_t perm_from_name(const std::string& name) {
  uint8_t p = 0;
  for (char c : name) {
    if (c == 'r') p |= PermR;
    else if (c == 'w') p |= PermW;
    else if (c == 'x') p |= PermX;
    else if (c != '-') throw Error("image", "bad permission string '" + name + "'");
  }
  return p;
}

Region* MemoryImage::find(uint64_t addr) {
  for (auto& r : regions)
    if (r.contains(addr)) return &r;
  return nullptr;
}

const Region* MemoryImage::find(uint64_t addr) const {
  for (const auto& r : regions)
    if (r.contains(addr)) return &r;
  return nullptr;
}

Region& MemoryImage::region(const std::string& name) {
  for (auto& r : regions)
    if (r.name == name) return r;
  throw Error("image", "no region named '" + name + "'");
}

const Region& MemoryImage::region(const std::string& name) const {
  for (const auto& r : regions)
    if (r.name == name) return r;
  throw Error("image", "no region named '" + name + "'");
}

uint64_t MemoryImage::symbol(const std::string& name) const {
  auto it = symbols.find(name);
  if (it == symbols.end()) throw Error("image", "no symbol named '" + name + "'");
  return it->second;
}

uint8_t MemoryImage::read8(uint64_t addr) const {
  const Region* r = find(addr);
  if (!r) throw Error("image", "read from unmapped address");
  return r->bytes[addr - r->base];
}

void MemoryImage::write8(uint64_t addr, uint8_t v) {
  Region* r = find(addr);
  if (!r) throw Error("image", "write to unmapped address");
  r->bytes[addr - r->base] = v;
}

uint64_t MemoryImage::read64(uint64_t addr) const {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(read8(addr + i)) << (8 * i);
  return v;
}

void MemoryImage::write64(uint64_t addr, uint64_t v) {
  for (int i = 0; i < 8; ++i) write8(addr + i, (v >> (8 * i)) & 0xFF);
}

namespace {

std::string hex_encode(const std::vector<uint8_t>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) {
    out += digits[b >> 4];
    out += digits[b & 0xF];
  }
  return out;
}

std::vector<uint8_t> hex_decode(const std::string& s) {
  if (s.size() % 2) throw Error("image", "odd hex string length");
  auto nib = [](char c) -> uint8_t {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error("image", "bad hex digit");
  };
  std::vector<uint8_t> out(s.size() / 2);
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = (nib(s[2 * i]) << 4) | nib(s[2 * i + 1]);
  return out;
}

}  // namespace

std::string MemoryImage::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["regions"] = nlohmann::json::array();
  for (const auto& r : regions) {
    j["regions"].push_back({{"name", r.name},
                            {"base", r.base},
                            {"perm", perm_name(r.perm)},
                            {"enclave", r.enclave},
                            {"bytes", hex_encode(r.bytes)}});
  }
  j["symbols"] = symbols;
  return j.dump(2);
}

MemoryImage MemoryImage::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("image", std::string("bad image json: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != 1)
      throw Error("image", "unsupported image version");
    MemoryImage img;
    for (const auto& rj : j.at("regions")) {
      Region r;
      r.name = rj.at("name").get<std::string>();
      r.base = rj.at("base").get<uint64_t>();
      r.perm = perm_from_name(rj.at("perm").get<std::string>());
      r.enclave = rj.at("enclave").get<bool>();
      r.bytes = hex_decode(rj.at("bytes").get<std::string>());
      img.regions.push_back(std::move(r));
    }
    img.symbols = j.at("symbols").get<std::map<std::string, uint64_t>>();
    return img;
  } catch (const nlohmann::json::exception& e) {
    throw Error("image", std::string("bad image json: ") + e.what());
  }
}

void LayoutConfig::check() const {
  if (area_size < 64) throw Error("layout", "trampoline area below minimum size");
  if (data_size < 0x10000)
    throw Error("layout", "data region must cover the 16-bit displacement window");
  struct Span { uint64_t lo, hi; };
  const Span spans[] = {
      {static_base, static_base + static_capacity},
      {trampoline_a_base, trampoline_a_base + area_size},
      {trampoline_b_base, trampoline_b_base + area_size},
      {data_base, data_base + data_size},
  };
  for (size_t i = 0; i < 4; ++i) {
    if (spans[i].hi <= spans[i].lo) throw Error("layout", "empty region span");
    if (spans[i].hi > kAliasOffset)
      throw Error("layout", "enclave regions must sit below the alias offset");
    for (size_t k = i + 1; k < 4; ++k)
      if (spans[i].lo < spans[k].hi && spans[k].lo < spans[i].hi)
        throw Error("layout", "region overlap in layout");
  }
}

EncodedProgram encode_program_at(const isa::Program& p, uint64_t base) {
  std::vector<uint64_t> addr_of(p.code.size() + 1, base);
  for (size_t i = 0; i < p.code.size(); ++i)
    addr_of[i + 1] = addr_of[i] + p.code[i].length();

  EncodedProgram enc;
  for (const auto& in : p.code) {
    isa::Instruction copy = in;
    if (!copy.label.empty()) {
      auto it = p.labels.find(copy.label);
      if (it == p.labels.end())
        throw Error("layout", "undefined label '" + copy.label + "'");
      copy.imm = static_cast<int64_t>(addr_of[it->second]);
      copy.label.clear();
    }
    isa::encode_instruction(copy, enc.bytes);
  }
  for (const auto& [name, idx] : p.labels) enc.symbols[name] = addr_of[idx];
  enc.symbols["__entry"] = base;
  return enc;
}

MemoryImage assemble_image(EncodedProgram enc, const LayoutConfig& cfg) {
  cfg.check();
  if (enc.bytes.size() > cfg.static_capacity)
    throw Error("layout", "static region overflow");

  Region stat{"static", cfg.static_base, std::move(enc.bytes), PermX, true};
  Region ta{"trampoline_a", cfg.trampoline_a_base,
            std::vector<uint8_t>(cfg.area_size, isa::kTrapByte), PermW | PermX,
            true};
  Region tb{"trampoline_b", cfg.trampoline_b_base,
            std::vector<uint8_t>(cfg.area_size, isa::kTrapByte), PermW | PermX,
            true};
  Region data{"data", cfg.data_base, std::vector<uint8_t>(cfg.data_size, 0),
              PermR | PermW, true};

  const uint64_t code_lo = std::min({stat.base, ta.base, tb.base});
  // The apron past the last code byte keeps shadow branches (and their
  // slot-cleansing companions at +0x1000) inside untrusted memory even when
  // they alias the final bytes of an area.
  const uint64_t code_hi =
      std::max({stat.base + std::max<uint64_t>(stat.bytes.size(), 1), ta.end(),
                tb.end()}) +
      0x1040;
  Region untrusted{"untrusted", code_lo + kAliasOffset,
                   std::vector<uint8_t>(code_hi - code_lo, 0),
                   PermR | PermW | PermX, false};

  MemoryImage img;
  img.regions = {std::move(stat), std::move(ta), std::move(tb),
                 std::move(data), std::move(untrusted)};
  img.symbols = std::move(enc.symbols);
  return img;
}

MemoryImage layout(const isa::Program& p, const LayoutConfig& cfg) {
  cfg.check();
  auto rep = isa::validate(p);
  if (!rep.ok())
    throw Error("layout", "invalid program: " + rep.violations.front().message);
  return assemble_image(encode_program_at(p, cfg.static_base), cfg);
}

std::vector<std::pair<uint64_t, isa::Instruction>> disassemble_region(
    const Region& r) {
  std::vector<std::pair<uint64_t, isa::Instruction>> out;
  size_t off = 0;
  while (off < r.bytes.size()) {
    auto d = isa::decode_instruction(
        std::span<const uint8_t>(r.bytes).subspan(off));
    out.emplace_back(r.base + off, std::move(d.instr));
    off += d.length;
  }
  return out;
}

isa::Program disassemble_program(const MemoryImage& img) {
  const Region& stat = img.region("static");
  auto listing = disassemble_region(stat);
  std::map<uint64_t, size_t> index_of;
  for (size_t i = 0; i < listing.size(); ++i) index_of[listing[i].first] = i;

  isa::Program p;
  std::map<uint64_t, std::string> label_at;
  auto label_for = [&](uint64_t addr) -> std::string {
    auto it = label_at.find(addr);
    if (it != label_at.end()) return it->second;
    std::string l = "L" + std::to_string(label_at.size());
    label_at[addr] = l;
    return l;
  };
  for (auto& [addr, in] : listing) {
    if (in.op == isa::Op::Jmp || isa::is_jcc(in.op)) {
      const uint64_t t = static_cast<uint64_t>(in.imm);
      if (!index_of.count(t))
        throw Error("image", "branch target outside the static region");
      in.label = label_for(t);
      in.imm = 0;
    }
  }
  for (auto& [addr, in] : listing) p.code.push_back(std::move(in));
  for (const auto& [addr, name] : label_at) p.labels[name] = index_of.at(addr);
  return p;
}

}  // namespace cfrand
