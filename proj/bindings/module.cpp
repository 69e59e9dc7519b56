// Python bindings for the obfuscation pipeline and the attack harness.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cfrand/harness.hpp"

namespace py = pybind11;
using namespace cfrand;

namespace {

struct BuildArtifacts {
  std::string image_json;
  std::string manifest_json;
  std::string static_asm;
  uint64_t k = 0;
  size_t blocks = 0;
  size_t trampolines = 0;
};

BuildArtifacts build(const std::string& asm_text, uint64_t area_size) {
  auto program = isa::parse_program(asm_text, "program");
  auto op = obf::obfuscate(program);
  op = obf::pad_trampolines(op);
  LayoutConfig cfg;
  cfg.area_size = area_size;
  auto built = obf::materialize(op, cfg);
  BuildArtifacts out;
  out.image_json = built.image.to_json();
  out.manifest_json = built.manifest.to_json();
  out.static_asm = isa::format_program(op.static_program);
  out.k = built.manifest.k;
  out.blocks = op.blocks.size();
  out.trampolines = op.entries.size();
  return out;
}

py::dict run_image(const std::string& image_json,
                   const std::string& manifest_json,
                   const std::vector<int64_t>& inputs, uint64_t threshold,
                   uint64_t seed, uint64_t steps) {
  auto img = MemoryImage::from_json(image_json);
  std::unique_ptr<mach::Machine> m;
  if (!manifest_json.empty()) {
    auto manifest = obf::Manifest::from_json(manifest_json);
    auto tstate = obf::area_state_from(manifest, img);
    rnd::RandomizationPolicy pol;
    pol.reentry_threshold =
        threshold == 0 ? rnd::RandomizationPolicy::kNever : threshold;
    pol.seed = seed;
    m = std::make_unique<mach::Machine>(img, tstate, pol);
  } else {
    m = std::make_unique<mach::Machine>(img);
  }
  m->enter_enclave(inputs);
  auto res = m->run_to_halt(steps);
  py::dict d;
  d["halted"] = res.halted;
  d["fault"] = res.fault;
  d["steps"] = res.steps;
  d["enclave_steps"] = m->enclave_steps();
  d["outputs"] = m->output();
  return d;
}

std::string run_campaign(const std::string& asm_text, const std::string& mode,
                         uint64_t guesses, uint64_t trials, uint64_t seed,
                         uint64_t area_size) {
  auto program = isa::parse_program(asm_text, "victim");
  LayoutConfig cfg;
  cfg.area_size = area_size;
  auto victim = atk::prepare_victim(program, cfg);
  atk::CampaignConfig ccfg;
  ccfg.mode = atk::mode_from_name(mode);
  ccfg.G = guesses;
  ccfg.trials = trials;
  ccfg.seed = seed;
  auto cr = atk::run_single_step_campaign(
      victim, ccfg,
      [](std::mt19937_64& rng) { return harness::random_inputs(rng); });
  return cr.to_json();
}

std::string run_suite_json(const std::string& name, uint64_t seed,
                           const py::dict& overrides) {
  harness::SuiteConfig cfg;
  cfg.seed = seed;
  if (overrides.contains("corpus_programs"))
    cfg.corpus_programs = overrides["corpus_programs"].cast<uint32_t>();
  if (overrides.contains("equiv_inputs"))
    cfg.equiv_inputs = overrides["equiv_inputs"].cast<uint32_t>();
  if (overrides.contains("invariance_inputs"))
    cfg.invariance_inputs = overrides["invariance_inputs"].cast<uint32_t>();
  if (overrides.contains("sweep_trials"))
    cfg.sweep_trials = overrides["sweep_trials"].cast<uint64_t>();
  if (overrides.contains("decay_trials"))
    cfg.decay_trials = overrides["decay_trials"].cast<uint64_t>();
  if (overrides.contains("reentry_trials"))
    cfg.reentry_trials = overrides["reentry_trials"].cast<uint64_t>();
  if (overrides.contains("reentry_entries"))
    cfg.reentry_entries = overrides["reentry_entries"].cast<uint64_t>();
  if (overrides.contains("campaign_programs"))
    cfg.campaign_programs = overrides["campaign_programs"].cast<uint32_t>();
  if (overrides.contains("campaign_trials"))
    cfg.campaign_trials = overrides["campaign_trials"].cast<uint64_t>();
  return harness::run_suite(name, cfg).to_json();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "control-flow obfuscation and branch-shadowing testbed";

  py::class_<BuildArtifacts>(m, "BuildArtifacts")
      .def_readonly("image_json", &BuildArtifacts::image_json)
      .def_readonly("manifest_json", &BuildArtifacts::manifest_json)
      .def_readonly("static_asm", &BuildArtifacts::static_asm)
      .def_readonly("k", &BuildArtifacts::k)
      .def_readonly("blocks", &BuildArtifacts::blocks)
      .def_readonly("trampolines", &BuildArtifacts::trampolines);

  m.def("obfuscate", &build, py::arg("asm_text"),
        py::arg("area_size") = 4096,
        "obfuscate an assembly program; returns build artifacts");
  m.def("run", &run_image, py::arg("image_json"),
        py::arg("manifest_json") = std::string(),
        py::arg("inputs") = std::vector<int64_t>{},
        py::arg("threshold") = uint64_t{1}, py::arg("seed") = uint64_t{7},
        py::arg("steps") = uint64_t{2'000'000},
        "execute an image and return outputs");
  m.def("attack", &run_campaign, py::arg("asm_text"),
        py::arg("mode") = "randomized", py::arg("guesses") = uint64_t{1024},
        py::arg("trials") = uint64_t{1000}, py::arg("seed") = uint64_t{7},
        py::arg("area_size") = uint64_t{4096},
        "run an attack campaign; returns the result as json");
  m.def("suite", &run_suite_json, py::arg("name"), py::arg("seed") = 7,
        py::arg("overrides") = py::dict(),
        "run a named suite; returns the report as json");
  m.def("location_count", &rnd::location_count, py::arg("area_size"));
  m.def("attack_probability", &atk::attack_probability, py::arg("guesses"),
        py::arg("k"));
  m.def("multi_branch_success", &atk::multi_branch_success,
        py::arg("guesses"), py::arg("k"), py::arg("branches"));
  m.def(
      "generate_corpus",
      [](uint32_t programs, uint64_t seed, bool loops) {
        harness::CorpusSpec spec;
        spec.programs = programs;
        spec.seed = seed;
        spec.loops = loops;
        return harness::generate_corpus_asm(spec);
      },
      py::arg("programs") = 5, py::arg("seed") = uint64_t{0},
      py::arg("loops") = true);

  py::register_exception<Error>(m, "ToolError");
}
