import json

import pytest

from coplan.harness import (
    ScenarioProfile,
    generate_scenario,
    ground_truth_plan,
    ground_truth_surroundings,
    run_pipeline,
)
from coplan.planner import BackendConfig, geometric_avoidance
from coplan.sft import (
    DEFAULT_REASONING_TEMPLATE,
    SftRecord,
    TargetLengthError,
    build_sft_record,
    export_jsonl,
    gt_residuals,
    load_jsonl,
)


def test_gt_residuals_examples():
    assert gt_residuals([(10.0, 0.0)], [(10.0, 2.0)]) == [(0.0, 2.0)]
    assert gt_residuals([(1.0, 2.0), (3.0, 4.0)], [(1.0, 2.0), (3.0, 4.0)]) == [(0.0, 0.0)] * 2
    with pytest.raises(TargetLengthError):
        gt_residuals([(0.0, 0.0)], [])


def test_gt_residuals_exact_where_plain_subtraction_is_not():
    g, s = 0.1, 0.30000000000000004 + 1e-17
    d = gt_residuals([(g, 0.0)], [(s, 0.0)])[0][0]
    assert g + d == s


def record_for(profile):
    sc = generate_scenario(profile)
    result = run_pipeline(sc, BackendConfig())
    safe = ground_truth_plan(sc)
    return sc, result, safe, build_sft_record(result.ctx, (result.text_prompt, result.visual), safe)


def test_hazard_free_record():
    _, result, safe, rec = record_for(ScenarioProfile("rural", "clear", "noon", density=2, seed=1, hazard_prob=0.0))
    assert all(t == (0.0, 0.0) for t in rec.targets)
    assert "no hazard or vehicle comes within" in rec.reasoning
    assert len(rec.targets) == len(result.ctx.nav_eff)


def test_offset_record_names_offset_and_matches_oracle():
    for seed in range(40):
        sc, result, safe, rec = record_for(ScenarioProfile("highway", "clear", "noon", density=3, seed=seed))
        decision = safe.residuals_applied.meta["decision"]
        if decision["maneuver"] != "offset":
            continue
        oracle = geometric_avoidance(result.ctx, result.nominal, ground_truth_surroundings(sc, result.nominal.times), BackendConfig(kind="geometric"))
        assert rec.targets == oracle.deltas
        assert f"{abs(decision['offset']):.1f} m to the" in rec.reasoning
        return
    pytest.fail("no offset manoeuvre in 40 seeds")


def test_record_text_fields():
    _, result, _, rec = record_for(ScenarioProfile("downtown", "rainy", "night", density=3, seed=5))
    assert rec.instruction == result.text_prompt.instruction
    assert rec.text_prompt.startswith("HAZARD")
    assert rec.reasoning.count("Step") == 3
    assert rec.text_prompt.count("\nWP ") == len(rec.targets)


def test_jsonl_round_trip(tmp_path):
    recs = [record_for(ScenarioProfile("intersection", "clear", "sunset", density=2, seed=s))[3] for s in range(3)]
    path = tmp_path / "out.jsonl"
    assert export_jsonl(recs, path) == 3
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3
    assert list(json.loads(lines[0])) == ["instruction", "text_prompt", "images", "reasoning", "targets"]
    assert load_jsonl(path) == recs


def test_empty_export(tmp_path):
    path = tmp_path / "empty.jsonl"
    assert export_jsonl([], path) == 0
    assert path.read_text() == ""


def test_record_requires_two_images():
    with pytest.raises(ValueError):
        SftRecord("i", "p", ("a",), "r", ())


def test_template_placeholders():
    for tok in ("{trigger}", "{decision}", "{clearance}"):
        assert tok in DEFAULT_REASONING_TEMPLATE
