import json

import pytest

import cfrand

VICTIM = """\
CMP r0, r1
JCC EQ, equal
CONST r2, 1
JMP done
equal: CONST r2, 2
done: OUT r2
HALT
"""


def test_obfuscate_shape():
    art = cfrand.obfuscate(VICTIM)
    assert art.k == 8187
    assert art.blocks == 4
    assert art.trampolines >= 7
    man = json.loads(art.manifest_json)
    assert man["k"] == 8187
    # conditional branches are gone from the static listing
    assert "JCC" not in art.static_asm
    assert "JMPR" in art.static_asm


def test_run_both_arms():
    art = cfrand.obfuscate(VICTIM)
    eq = cfrand.run(art.image_json, art.manifest_json, [5, 5], seed=1)
    ne = cfrand.run(art.image_json, art.manifest_json, [5, 6], seed=1)
    assert eq["halted"] and not eq["fault"]
    assert eq["outputs"] == [2]
    assert ne["outputs"] == [1]
    assert eq["enclave_steps"] == ne["enclave_steps"]  # constant-time walk


def test_run_without_manifest_is_static():
    art = cfrand.obfuscate(VICTIM)
    out = cfrand.run(art.image_json, "", [1, 2])
    assert out["outputs"] == [1]


def test_formulas():
    assert cfrand.location_count(4096) == 4091
    assert abs(cfrand.attack_probability(4096, 8187) - 4096 / 8187) < 1e-12
    assert cfrand.attack_probability(4091, 4091) == 1.0
    p = cfrand.attack_probability(1024, 8187)
    assert cfrand.multi_branch_success(1024, 8187, 3) == pytest.approx(p**3)


def test_attack_modes():
    flat = cfrand.attack(VICTIM, "unprotected", guesses=1024, trials=20, seed=5)
    r = json.loads(flat)
    assert r["decision_accuracy"] == 1.0

    rand = cfrand.attack(VICTIM, "randomized", guesses=1024, trials=200, seed=5)
    r = json.loads(rand)
    p = 1024 / 8187
    sigma = (p * (1 - p) / 200) ** 0.5
    assert abs(r["success_rate"] - p) < 5 * sigma


def test_suite_small():
    rep = json.loads(
        cfrand.suite(
            "equivalence",
            seed=7,
            overrides={"corpus_programs": 3, "equiv_inputs": 2},
        )
    )
    assert rep["pass"] is True
    assert rep["suite"] == "equivalence"


def test_corpus():
    programs = cfrand.generate_corpus(5, seed=3)
    assert len(programs) == 5
    assert all("HALT" in p for p in programs)


def test_errors_are_typed():
    with pytest.raises(cfrand.ToolError):
        cfrand.obfuscate("JMP nowhere\nHALT\n")
    with pytest.raises(cfrand.ToolError):
        cfrand.location_count(3)
