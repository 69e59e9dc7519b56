// Command-line front end: obfuscate programs, run images, mount attacks,
// and drive the acceptance suites.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cfrand/harness.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace cfrand;

namespace {

std::string slurp(const std::string& path) {
  if (path == "-") {
    std::ostringstream os;
    os << std::cin.rdbuf();
    return os.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path);
  out << content;
}

std::vector<int64_t> parse_inputs(const std::string& csv) {
  std::vector<int64_t> out;
  if (csv.empty()) return out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t pos = 0;
    try {
      out.push_back(std::stoll(item, &pos));
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size())
      throw Error("usage", "bad input value: " + item);
  }
  return out;
}

std::string stem_of(const std::string& path) {
  if (path == "-") return "program";
  return fs::path(path).stem().string();
}

int cmd_obfuscate(const std::string& in, const std::string& out_dir,
                  uint64_t area_size) {
  auto program = isa::parse_program(slurp(in), stem_of(in));
  auto op = obf::obfuscate(program);
  op = obf::pad_trampolines(op);
  LayoutConfig cfg;
  cfg.area_size = area_size;
  auto built = obf::materialize(op, cfg);

  std::string stem = stem_of(in);
  fs::path dir(out_dir.empty() ? "." : out_dir);
  spit((dir / (stem + ".image.json")).string(), built.image.to_json());
  spit((dir / (stem + ".manifest.json")).string(),
       built.manifest.to_json());
  spit((dir / (stem + ".asm")).string(),
       isa::format_program(op.static_program));

  nlohmann::json summary = {
      {"program", stem},
      {"blocks", op.blocks.size()},
      {"trampolines", op.entries.size()},
      {"k", built.manifest.k},
      {"entry_stub_instrs", op.entry_stub_instrs},
      {"image", (dir / (stem + ".image.json")).string()},
      {"manifest", (dir / (stem + ".manifest.json")).string()}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_run(const std::string& image_path, const std::string& manifest_path,
            const std::string& inputs_csv, uint64_t threshold, uint64_t seed,
            uint64_t steps, const std::string& trace_path) {
  auto img = MemoryImage::from_json(slurp(image_path));
  std::unique_ptr<mach::Machine> m;
  if (!manifest_path.empty()) {
    auto manifest = obf::Manifest::from_json(slurp(manifest_path));
    auto tstate = obf::area_state_from(manifest, img);
    rnd::RandomizationPolicy pol;
    pol.reentry_threshold =
        threshold == 0 ? rnd::RandomizationPolicy::kNever : threshold;
    pol.seed = seed;
    m = std::make_unique<mach::Machine>(img, tstate, pol);
  } else {
    m = std::make_unique<mach::Machine>(img);
  }
  if (!trace_path.empty()) m->set_trace(true);
  m->enter_enclave(parse_inputs(inputs_csv));
  auto res = m->run_to_halt(steps);
  if (!trace_path.empty()) spit(trace_path, mach::trace_jsonl(m->trace()));

  nlohmann::json out = {{"halted", res.halted},
                        {"fault", res.fault},
                        {"steps", res.steps},
                        {"enclave_steps", m->enclave_steps()},
                        {"outputs", m->output()}};
  if (res.fault) out["fault_reason"] = res.fault_reason;
  std::cout << out.dump(2) << "\n";
  if (res.fault) {
    std::cerr << "error: machine: " << res.fault_reason << "\n";
    return 1;
  }
  if (!res.halted) {
    std::cerr << "error: machine: step budget exhausted\n";
    return 1;
  }
  return 0;
}

int cmd_attack(const std::string& in, const std::string& mode_name,
               uint64_t guesses, uint64_t trials, uint64_t seed,
               uint64_t threshold, uint64_t area_size,
               const std::string& out_dir, const std::string& format) {
  std::string text = in.empty()
                         ? "  CMP r0, r1\n  JCC EQ else_branch\n"
                           "  CONST r8, 1\n  OUT r8\n  JMP end\n"
                           "else_branch:\n  CONST r8, 2\n  OUT r8\n"
                           "end:\n  CONST r9, 7\n  OUT r9\n  HALT\n"
                         : slurp(in);
  auto program = isa::parse_program(text, in.empty() ? "listing" : stem_of(in));
  LayoutConfig cfg;
  cfg.area_size = area_size;
  auto victim = atk::prepare_victim(program, cfg);

  atk::CampaignConfig ccfg;
  ccfg.mode = atk::mode_from_name(mode_name);
  ccfg.G = guesses;
  ccfg.trials = trials;
  ccfg.seed = seed;
  ccfg.reentry_threshold = threshold;
  ccfg.keep_records = true;
  auto cr = atk::run_single_step_campaign(
      victim, ccfg,
      [](std::mt19937_64& rng) { return harness::random_inputs(rng); });

  if (!out_dir.empty()) {
    fs::path dir(out_dir);
    spit((dir / "campaign.json").string(), cr.to_json());
    spit((dir / "campaign.records.jsonl").string(), cr.records_jsonl());
  }
  if (format == "csv") {
    std::cout << "mode,G,k,trials,success_rate,lbr_rate,decision_accuracy\n"
              << cr.mode << ',' << cr.G << ',' << cr.k
              << ',' << cr.trials << ',' << cr.success_rate << ','
              << cr.lbr_rate << ',' << cr.decision_accuracy << "\n";
  } else {
    std::cout << cr.to_json() << "\n";
  }
  return 0;
}

int cmd_suite(const std::string& name, harness::SuiteConfig cfg,
              const std::string& out_dir, const std::string& format) {
  auto rep = harness::run_suite(name, cfg);
  if (!out_dir.empty()) {
    fs::path dir(out_dir);
    spit((dir / (name + ".report.json")).string(), rep.to_json());
    spit((dir / (name + ".report.csv")).string(), rep.to_csv());
    spit((dir / (name + ".records.jsonl")).string(), rep.records_jsonl);
    for (const auto& [fname, content] : rep.artifacts)
      spit((dir / (name + "." + fname)).string(), content);
  }
  std::cout << (format == "csv" ? rep.to_csv() : rep.to_json()) << "\n";
  std::cerr << "suite " << name << ": " << (rep.pass ? "PASS" : "FAIL")
            << "\n";
  return rep.pass ? 0 : 1;
}

int cmd_report(const std::string& in, const std::string& format) {
  auto text = slurp(in);
  if (format == "csv") {
    auto j = nlohmann::json::parse(text);
    std::cout << "suite,seed,id,value,expected,tolerance,pass,note\n";
    for (const auto& c : j.at("checks")) {
      std::cout << j.at("suite").get<std::string>() << ','
                << j.at("seed").get<uint64_t>() << ','
                << c.at("id").get<std::string>() << ','
                << c.at("value").get<double>() << ','
                << c.at("expected").get<double>() << ','
                << c.at("tolerance").get<double>() << ','
                << (c.at("pass").get<bool>() ? 1 : 0) << ','
                << c.at("note").get<std::string>() << "\n";
    }
  } else {
    std::cout << harness::format_report_text(text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"control-flow obfuscation and branch-shadowing testbed"};
  app.require_subcommand(1);

  std::string in_path, out_dir, format = "json", mode = "randomized";
  std::string image_path, manifest_path, inputs_csv, trace_path;
  uint64_t seed = 7, area_size = 4096, threshold = 1;
  uint64_t guesses = 1024, trials = 1000, steps = 2'000'000;

  auto* ob = app.add_subcommand("obfuscate", "transform a program");
  ob->add_option("--in", in_path, "assembly source (- for stdin)")
      ->required();
  ob->add_option("--out", out_dir, "output directory");
  ob->add_option("--area-size", area_size, "trampoline area bytes");

  auto* run = app.add_subcommand("run", "execute an image");
  run->add_option("--image", image_path, "image json")->required();
  run->add_option("--manifest", manifest_path, "manifest json");
  run->add_option("--inputs", inputs_csv, "comma-separated r0..r7");
  run->add_option("--threshold", threshold,
                  "re-randomize every N entries (0 = never)");
  run->add_option("--seed", seed, "randomization seed");
  run->add_option("--steps", steps, "step budget");
  run->add_option("--trace", trace_path, "write step trace jsonl");

  auto* at = app.add_subcommand("attack", "run an attack campaign");
  at->add_option("--in", in_path, "victim assembly (default: demo victim)");
  at->add_option("--mode", mode, "unprotected|baseline|randomized");
  at->add_option("--G", guesses, "guesses per trial");
  at->add_option("--trials", trials, "trial count");
  at->add_option("--seed", seed, "campaign seed");
  at->add_option("--threshold", threshold, "re-randomization threshold");
  at->add_option("--area-size", area_size, "trampoline area bytes");
  at->add_option("--out", out_dir, "write campaign artifacts here");
  at->add_option("--format", format, "json|csv");

  harness::SuiteConfig scfg;
  std::string suite_name;
  auto* su = app.add_subcommand("suite", "run an acceptance suite");
  su->add_option("name", suite_name, "suite name")
      ->required()
      ->check(CLI::IsMember(harness::kSuiteNames));
  su->add_option("--seed", scfg.seed, "suite seed");
  su->add_option("--out", out_dir, "write report artifacts here");
  su->add_option("--format", format, "json|csv");
  su->add_option("--programs", scfg.corpus_programs, "corpus size");
  su->add_option("--inputs", scfg.equiv_inputs, "inputs per program");
  su->add_option("--invariance-inputs", scfg.invariance_inputs,
                 "inputs per program for trace suites");
  su->add_option("--trials", scfg.sweep_trials, "trials per sweep point");
  su->add_option("--decay-trials", scfg.decay_trials,
                 "trials per multi-branch point");
  su->add_option("--campaign-programs", scfg.campaign_programs,
                 "programs in the attack corpus");
  su->add_option("--campaign-trials", scfg.campaign_trials,
                 "randomized trials per corpus program");
  su->add_option("--area-size", scfg.area_size, "trampoline area bytes");

  auto* re = app.add_subcommand("report", "render a report");
  re->add_option("--in", in_path, "report json path")->required();
  re->add_option("--format", format, "text|csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (ob->parsed()) return cmd_obfuscate(in_path, out_dir, area_size);
    if (run->parsed())
      return cmd_run(image_path, manifest_path, inputs_csv, threshold, seed,
                     steps, trace_path);
    if (at->parsed())
      return cmd_attack(in_path, mode, guesses, trials, seed, threshold,
                        area_size, out_dir, format);
    if (su->parsed()) return cmd_suite(suite_name, scfg, out_dir, format);
    if (re->parsed()) return cmd_report(in_path, format);
  } catch (const Error& e) {
    std::cerr << "error: " << e.category << ": " << e.what() << "\n";
    return e.category == "usage" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
