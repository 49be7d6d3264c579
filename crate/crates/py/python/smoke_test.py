"""Smoke test for the halo extension module.

Build first with `cargo build -p halo-py`, then run `python3 crates/py/python/smoke_test.py`.
"""

import glob
import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def load_module():
    candidates = sorted(
        glob.glob(os.path.join(ROOT, "target", "*", "libhalo.so")),
        key=os.path.getmtime,
        reverse=True,
    )
    if not candidates:
        sys.exit("libhalo.so not found; run `cargo build -p halo-py` first")
    tmp = tempfile.mkdtemp()
    shutil.copy(candidates[0], os.path.join(tmp, "halo.so"))
    sys.path.insert(0, tmp)
    import halo

    return halo


def main():
    halo = load_module()

    assert halo.normalize_answer("so \\boxed{7}", "math") == "7"
    assert halo.normalize_answer("FINAL ANSWER: (B)", "choice") == "b"
    assert halo.make_quality_score(0.5) == 0.5
    try:
        halo.make_quality_score(1.5)
        raise AssertionError("out-of-range score accepted")
    except ValueError:
        pass

    assert halo.uct_score(0.0, 0, 3, 1.4) == math.inf
    assert abs(halo.uct_score(1.0, 2, 4, 1.0) - (0.5 + math.sqrt(math.log(4) / 2))) < 1e-12
    assert halo.updated_mean(0.0, 0, 1.0, [0.8]) == (1.8, 1)
    assert halo.updated_mean(0.0, 0, 1.0, []) is None

    assert halo.should_stop_early(["x=2", "FINAL ANSWER: x=2"], "math")
    assert not halo.should_stop_early(["4"], "math")
    assert halo.aggregate_final([("B", 0.5), ("C", 0.9), ("B", 0.1)], "choice") == "B"

    assert json.loads(halo.extract_json_block('text {"a": 1} tail')) == {"a": 1}

    strata = ["x"] * 60 + ["y"] * 40
    picked = halo.stratified_sample(strata, fraction=0.1, seed=7)
    assert len(picked) == 10
    assert sum(1 for i in picked if strata[i] == "x") == 6
    assert picked == halo.stratified_sample(strata, fraction=0.1, seed=7)

    assert halo.grade_choice("(B) because", "b")
    assert halo.grade_math("\\boxed{7}", "7")
    assert not halo.grade_math("8", "7")
    report = json.loads(halo.compute_metric([("a", "s", True), ("b", "s", False), ("c", "t", True)]))
    assert report["metric_value"] == 66.7, report

    fixture_path = os.path.join(ROOT, "crates", "core", "tests", "fixtures", "planner_stop.json")
    with open(fixture_path) as f:
        fixture = json.load(f)
    config = halo.Config(json.dumps(fixture["config"]))
    config.set("seed", "3")
    assert json.loads(config.to_json())["seed"] == 3
    try:
        config.set("budgets.no_such_key", "1")
        raise AssertionError("unknown key accepted")
    except ValueError:
        pass

    result = halo.run_scripted(fixture["query"], fixture["script"], config)
    assert result.stop_reason == "PlannerStop", result
    assert halo.normalize_answer(result.final_answer, "math") == "7"
    assert len(result.history) == 1
    assert "HALO_API_KEY" not in result.trace_json

    replayed = halo.replay(result.trace_json)
    assert replayed.final_answer == result.final_answer
    assert replayed.history == result.history

    print("python smoke test: OK")


if __name__ == "__main__":
    main()
