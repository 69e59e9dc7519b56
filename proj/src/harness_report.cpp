#include <cmath>
#include <iomanip>
#include <sstream>

#include "cfrand/harness.hpp"
#include "cfrand/rng.hpp"
#include "json.hpp"

namespace cfrand::harness {

double binomial_sigma(double p, uint64_t n) {
  if (n == 0) throw Error("stats", "binomial sigma needs n > 0");
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

double chi_square_p(double stat, unsigned df) {
  if (df == 0) throw Error("stats", "chi-square needs df > 0");
  if (stat <= 0) return 1.0;
  // Wilson-Hilferty: (X/df)^(1/3) is approximately normal
  double d = static_cast<double>(df);
  double z = (std::cbrt(stat / d) - (1.0 - 2.0 / (9.0 * d))) /
             std::sqrt(2.0 / (9.0 * d));
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

void Report::add(CheckRow row) {
  if (!row.pass) pass = false;
  rows.push_back(std::move(row));
}

std::string Report::to_json() const {
  nlohmann::json j;
  j["suite"] = suite;
  j["seed"] = seed;
  j["pass"] = pass;
  j["config"] = nlohmann::json::parse(config_json);
  j["checks"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["checks"].push_back({{"id", r.id},
                           {"value", r.value},
                           {"expected", r.expected},
                           {"tolerance", r.tolerance},
                           {"pass", r.pass},
                           {"note", r.note}});
  }
  return j.dump(2);
}

namespace {

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string Report::to_csv() const {
  std::ostringstream os;
  os << "suite,seed,id,value,expected,tolerance,pass,note\n";
  for (const auto& r : rows) {
    os << csv_quote(suite) << ',' << seed << ',' << csv_quote(r.id) << ','
       << num(r.value) << ',' << num(r.expected) << ',' << num(r.tolerance)
       << ',' << (r.pass ? "1" : "0") << ',' << csv_quote(r.note) << '\n';
  }
  return os.str();
}

std::string format_report_text(const std::string& report_json) {
  auto j = nlohmann::json::parse(report_json);
  std::ostringstream os;
  os << "suite: " << j.at("suite").get<std::string>()
     << "  seed: " << j.at("seed").get<uint64_t>()
     << "  result: " << (j.at("pass").get<bool>() ? "PASS" : "FAIL") << "\n";
  for (const auto& c : j.at("checks")) {
    os << "  [" << (c.at("pass").get<bool>() ? "ok" : "FAIL") << "] "
       << std::left << std::setw(34) << c.at("id").get<std::string>()
       << " value=" << c.at("value").get<double>()
       << " expected=" << c.at("expected").get<double>();
    double tol = c.at("tolerance").get<double>();
    if (tol > 0) os << " tol=" << tol;
    auto note = c.at("note").get<std::string>();
    if (!note.empty()) os << "  (" << note << ")";
    os << "\n";
  }
  return os.str();
}

UniformityResult placement_uniformity(uint64_t area_size, uint64_t seeds,
                                      uint64_t base_seed) {
  if (seeds < 100) throw Error("stats", "too few seeds for chi-square");
  uint64_t locations = rnd::location_count(area_size);

  LayoutConfig cfg;
  cfg.area_size = area_size;
  MemoryImage img;
  img.regions.push_back({"trampoline_a", cfg.trampoline_a_base,
                         std::vector<uint8_t>(area_size, isa::kTrapByte),
                         PermW | PermX, true});
  img.regions.push_back({"trampoline_b", cfg.trampoline_b_base,
                         std::vector<uint8_t>(area_size, isa::kTrapByte),
                         PermW | PermX, true});
  img.regions.push_back({"data", cfg.data_base,
                         std::vector<uint8_t>(cfg.data_size, 0),
                         PermR | PermW, true});
  rnd::TrampolineAreaState st;
  st.area_base[0] = cfg.trampoline_a_base;
  st.area_base[1] = cfg.trampoline_b_base;
  st.area_size = area_size;
  st.jt_base = cfg.data_base + isa::kJumpTableOffset;
  st.active = 0;
  st.placements.push_back({0, 0, 5});
  for (uint64_t b = 0; b < 5; ++b)
    img.regions[0].bytes[b] = 0x01;  // NOP body, content is irrelevant
  img.write64(st.jt_base, st.entry_addr(0));

  unsigned bins = 64;
  std::vector<uint64_t> observed(bins, 0);
  std::vector<uint64_t> bin_width(bins, 0);
  for (uint64_t off = 0; off < locations; ++off)
    ++bin_width[off * bins / locations];

  for (uint64_t s = 0; s < seeds; ++s) {
    auto img_copy = img;
    auto st_copy = st;
    rnd::randomize(img_copy, st_copy, mix_seed(base_seed, s));
    uint64_t off = st_copy.placements[0].offset;
    if (off >= locations) throw Error("stats", "offset out of range");
    ++observed[off * bins / locations];
  }

  double stat = 0;
  for (unsigned b = 0; b < bins; ++b) {
    double e = static_cast<double>(seeds) * static_cast<double>(bin_width[b]) /
               static_cast<double>(locations);
    double d = static_cast<double>(observed[b]) - e;
    stat += d * d / e;
  }
  UniformityResult r;
  r.seeds = seeds;
  r.chi_square = stat;
  r.bins = bins;
  r.p_value = chi_square_p(stat, bins - 1);
  return r;
}

}  // namespace cfrand::harness
