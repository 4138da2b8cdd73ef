import json
from dataclasses import replace

import numpy as np
import pytest

from flairkit import cli
from flairkit.cohort import CaseRecord, FoldPlan, read_manifest, write_manifest
from flairkit.phantom import Ellipsoid, make_phantom, perturb_prediction
from flairkit.pipeline import crop_to_roi, run_evaluation
from flairkit.config import Config
from flairkit.postprocess import SweepCase, evaluate_thresholds
from flairkit.volume import BinaryMask, ProbabilityMap, load_mask, load_probability, load_volume, save_volume

DIMS = (28, 28, 20)


def write_case(root, name, centers, mode="identity"):
    if centers:
        gt = make_phantom([Ellipsoid.sphere(c, 4.0) for c in centers], DIMS)[1]
    else:
        gt = BinaryMask(np.zeros(DIMS, bool))
    save_volume(gt, root / f"{name}_gt.nii.gz")
    save_volume(perturb_prediction(gt, mode), root / f"{name}_prob.nii.gz")
    return f"{name}_gt.nii.gz", f"{name}_prob.nii.gz"


@pytest.fixture
def small_cohort(tmp_path):
    rows = []
    specs = [
        ("c1", "p1", [(10.0, 10.0, 10.0)], "identity"),
        ("c2", "p2", [(14.0, 14.0, 9.0)], "dilate:1"),
        ("c3", "p3", [(8.0, 8.0, 8.0), (20.0, 20.0, 12.0)], "drop:0"),
        ("c4", "p4", [], "identity"),
        ("c5", "p5", [(12.0, 12.0, 10.0)], "empty"),
        ("c6", "p6", [(12.0, 12.0, 10.0)], "shift:3,0,0"),
    ]
    for case_id, pid, centers, mode in specs:
        gt, prob = write_case(tmp_path, case_id, centers, mode)
        rows.append(CaseRecord(case_id, pid, "B", "Gli", "pre", "FH", gt, prob))
    (tmp_path / "manifest.csv").write_text(write_manifest(rows))
    return tmp_path


def folds(n=6, k=3):
    return FoldPlan(k, 0, {f"p{i}": (i - 1) % k for i in range(1, n + 1)})


def test_run_evaluation_outcomes(small_cohort):
    records = read_manifest(small_cohort / "manifest.csv")
    res = run_evaluation(records, folds())
    assert res.ok and res.excluded == []
    outcomes = {m.case_id: m.outcome for m in res.cases}
    assert outcomes == {"c1": "TP", "c2": "TP", "c3": "TP", "c4": "TN", "c5": "FN", "c6": "TP"}
    by_id = {m.case_id: m for m in res.cases}
    assert by_id["c3"].dice == 0.5 and by_id["c3"].direction == "under"
    assert by_id["c6"].hd95_mm == 3.0
    assert set(res.best_thresholds) == {0, 1, 2}
    (row,) = res.rows
    assert row.n_positive == 5 and row.n_tp == 4 and row.detection_rate == 80.0


def test_jobs_do_not_change_results(small_cohort):
    records = read_manifest(small_cohort / "manifest.csv")
    assert run_evaluation(records, folds(), jobs=3).case_csv() == run_evaluation(records, folds()).case_csv()


def test_failures_are_per_case(small_cohort):
    records = read_manifest(small_cohort / "manifest.csv")
    (small_cohort / "c2_prob.nii.gz").write_bytes(b"not a nifti")
    broken = CaseRecord("c7", "p7", "B", "Gli", "pre", "FH", str(small_cohort / "missing.nii.gz"), "")
    res = run_evaluation(records + [broken], folds())
    failed = dict(res.failures)
    assert set(failed) == {"c2", "c7"}
    assert "MissingFileError" in failed["c7"]
    assert len(res.cases) == 5 and not res.ok


def test_exclusion_and_unknown_patients(small_cohort):
    tiny = np.zeros(DIMS, bool)
    tiny[5:9, 5:9, 5:10] = True  # 80 voxels, 0.08 mL
    save_volume(BinaryMask(tiny), small_cohort / "tiny.nii.gz")
    records = read_manifest(small_cohort / "manifest.csv")
    records.append(CaseRecord("c8", "p1", "B", "Gli", "post1", "FH", str(small_cohort / "tiny.nii.gz"), str(small_cohort / "c1_prob.nii.gz")))
    records.append(CaseRecord("c9", "p99", "B", "Gli", "pre", "FH", str(small_cohort / "c1_gt.nii.gz"), str(small_cohort / "c1_prob.nii.gz")))
    res = run_evaluation(records, folds())
    assert res.excluded == ["c8"]
    assert dict(res.failures)["c9"].startswith("patient p99")


def test_roi_crop_does_not_change_scores():
    _, gt = make_phantom([Ellipsoid.sphere((9.0, 9.0, 9.0), 4.0), Ellipsoid.sphere((20.0, 19.0, 12.0), 3.5)], DIMS)
    rng = np.random.default_rng(2)
    prob = np.clip(gt.data * 0.7 + rng.random(DIMS) * 0.2 * (rng.random(DIMS) < 0.05), 0, 1)
    case = SweepCase(gt.with_data(prob, ProbabilityMap), gt)
    thresholds = Config().thresholds
    full = evaluate_thresholds(case, thresholds, Config())
    cropped = evaluate_thresholds(crop_to_roi(case, thresholds[0]), thresholds, Config())
    assert full == cropped


def test_result_files(small_cohort):
    res = run_evaluation(read_manifest(small_cohort / "manifest.csv"), folds())
    res.write(small_cohort / "out")
    names = sorted(p.name for p in (small_cohort / "out").iterdir())
    assert names == ["cases.csv", "metadata.json", "scatter.csv", "table.csv", "table.json", "table.md"]
    meta = json.loads((small_cohort / "out" / "metadata.json").read_text())
    assert meta["n_cases"] == 6 and meta["config"]["positive_threshold_ml"] == 0.1


# ---- command line --------------------------------------------------------------


def test_cli_split_evaluate_report(small_cohort, capsys):
    m = str(small_cohort / "manifest.csv")
    plan = small_cohort / "folds.json"
    # split needs gt_ml in the manifest
    recs = read_manifest(small_cohort / "manifest.csv")
    filled = [replace(r, gt_ml=load_mask(r.gt_path).count / 1000) for r in recs]
    (small_cohort / "manifest.csv").write_text(write_manifest(filled))
    assert cli.main(["split", "--manifest", m, "--k", "3", "--out", str(plan)]) == 0
    assert FoldPlan.from_json(plan.read_text()).k == 3

    out = small_cohort / "eval"
    assert cli.main(["evaluate", "--manifest", m, "--folds", str(plan), "--out-dir", str(out)]) == 0
    md = (out / "table.md").read_text()
    assert md.startswith("| Test set | Target |")

    assert cli.main(["report", "--cases", str(out / "cases.csv"), "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)[0]["test_set"] == "Gli_B_pre"


def test_cli_evaluate_exit_code_on_failure(small_cohort):
    (small_cohort / "c1_gt.nii.gz").write_bytes(b"")
    plan = small_cohort / "folds.json"
    plan.write_text(folds().to_json())
    code = cli.main(["evaluate", "--manifest", str(small_cohort / "manifest.csv"), "--folds", str(plan), "--out-dir", str(small_cohort / "o")])
    assert code == 1
    assert (small_cohort / "o" / "cases.csv").exists()


def test_cli_phantom_preprocess_infer_postprocess(tmp_path):
    spec = {"dims": [40, 40, 16], "spacing": [1.0, 1.0, 2.5], "noise_sigma": 0.01, "seed": 1,
            "ellipsoids": [{"center": [20, 20, 20], "radii": [16, 16, 15], "intensity": 0.5},
                           {"center": [18, 22, 20], "radius": 5, "intensity": 1.0}]}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    vol, mask = tmp_path / "vol.nii.gz", tmp_path / "mask.nii.gz"
    assert cli.main(["phantom", "--spec", str(tmp_path / "spec.json"), "--out-vol", str(vol), "--out-mask", str(mask)]) == 0

    pre = tmp_path / "pre.nii.gz"
    assert cli.main(["preprocess", "--in", str(vol), "--out", str(pre), "--mask", str(mask)]) == 0
    assert load_volume(pre).spacing == (1.0, 1.0, 1.0)
    assert (tmp_path / "pre.json").exists() and (tmp_path / "pre_mask.nii.gz").exists()

    prob = tmp_path / "prob.nii.gz"
    args = ["infer", "--in", str(pre), "--out", str(prob), "--predictor", "sphere:18,22,20,5", "--patch", "16"]
    assert cli.main(args) == 0
    assert load_probability(prob).dims == load_volume(pre).dims

    seg = tmp_path / "seg.nii.gz"
    assert cli.main(["postprocess", "--prob", str(prob), "--threshold", "0.5", "--out", str(seg)]) == 0
    assert load_mask(seg).count > 0


def test_cli_errors_return_2(tmp_path, caplog):
    assert cli.main(["postprocess", "--prob", str(tmp_path / "nope.nii"), "--threshold", "0.5", "--out", str(tmp_path / "x.nii")]) == 2
    assert "MissingFileError" in caplog.text
    with pytest.raises(SystemExit):
        cli.main(["bogus"])


def test_cli_config_and_seed(tmp_path, small_cohort):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k_folds": 2}))
    recs = read_manifest(small_cohort / "manifest.csv")
    filled = [replace(r, gt_ml=1.0) for r in recs]
    (small_cohort / "manifest.csv").write_text(write_manifest(filled))
    out = tmp_path / "f.json"
    assert cli.main(["--config", str(cfg), "--seed", "5", "split", "--manifest", str(small_cohort / "manifest.csv"), "--out", str(out)]) == 0
    plan = json.loads(out.read_text())
    assert plan["k"] == 2 and plan["seed"] == 5
    sub = tmp_path / "g.json"
    assert cli.main(["split", "--manifest", str(small_cohort / "manifest.csv"), "--seed", "7", "--out", str(sub)]) == 0
    assert json.loads(sub.read_text())["seed"] == 7
