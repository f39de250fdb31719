"""PSNR/SSIM metrics and the evaluation report harnesses."""

import json
import math

import numpy as np
import pytest

from oracles import psnr_reference, ssim_reference
from restora.degrade import DegradationSpec, apply_gaussian_noise, build_dataset
from restora.evalkit import (
    evaluate_checkpoint,
    psnr,
    render_table,
    report_to_json,
    run_ablation,
    run_text_impact,
    save_report,
    ssim,
)
from restora.pipeline import config_for_mode, toy_config
from restora.train import Checkpoint, toy_train_config, train_stage


@pytest.fixture(scope="module")
def tiny_sets(tmp_path_factory):
    root = tmp_path_factory.mktemp("evalsets")
    build_dataset(root / "train", n=6, mix={"noise": 0.5, "low": 0.5}, seed=21, size=40)
    build_dataset(root / "test", n=4, mix={"noise": 0.5, "low": 0.5}, seed=22, size=40)
    return root / "train" / "manifest.json", root / "test" / "manifest.json"


@pytest.fixture(scope="module")
def restore_ckpt(tiny_sets):
    train_manifest, _ = tiny_sets
    cfg = toy_train_config(patch=16, batch=2, iters=2, seed=5, log_every=1)
    refine = train_stage("refine", train_manifest, cfg, model_config=toy_config(),
                         meta={"mode": "full"})
    return train_stage("restore", train_manifest, cfg, init=refine)


def mid_gray(h=64, w=64):
    return np.full((3, h, w), 0.5)


class TestPSNR:
    def test_identical_images_give_infinity(self):
        img = mid_gray()
        assert psnr(img, img.copy()) == math.inf

    def test_uniform_offset_exact(self):
        a = mid_gray()
        val = psnr(a, a + 0.1)
        assert abs(val - 20.0) < 1e-9

    def test_sigma25_noise_matches_analytic_value(self):
        clean = mid_gray(128, 128)
        noisy = apply_gaussian_noise(clean, 25.0, seed=0)
        expected = 10 * math.log10(1.0 / (25.0 / 255.0) ** 2)
        assert abs(psnr(noisy, clean) - expected) < 0.3

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 8, 8)), np.zeros((3, 8, 9)))

    def test_monotone_in_noise_level(self):
        clean = mid_gray(96, 96)
        values = [psnr(apply_gaussian_noise(clean, s, seed=1), clean)
                  for s in (5.0, 15.0, 25.0, 50.0)]
        assert values == sorted(values, reverse=True)

    def test_matches_scalar_reference_on_20_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.random((3, 6, 6))
            b = rng.random((3, 6, 6))
            assert abs(psnr(a, b) - psnr_reference(a, b)) < 1e-9


class TestSSIM:
    def test_identical_images_give_one(self):
        rng = np.random.default_rng(0)
        img = rng.random((3, 16, 16))
        assert ssim(img, img.copy()) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_inverted_checkerboard_strongly_dissimilar(self):
        ys, xs = np.mgrid[0:16, 0:16]
        board = ((ys + xs) % 2).astype(np.float64)
        a = np.stack([board] * 3)
        assert ssim(a, 1.0 - a) < 0.0

    def test_noise_lowers_similarity(self):
        rng = np.random.default_rng(2)
        img = np.clip(rng.random((3, 24, 24)), 0.0, 1.0)
        noisy = apply_gaussian_noise(img, 50.0, seed=3)
        assert ssim(img, noisy) < 0.95

    def test_image_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((3, 10, 16)), np.zeros((3, 10, 16)))

    def test_non_rgb_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((1, 16, 16)), np.zeros((1, 16, 16)))

    def test_matches_scalar_reference_on_20_instances(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            a = rng.random((3, 16, 16))
            b = np.clip(a + rng.normal(0, 0.1, a.shape), 0.0, 1.0)
            assert abs(ssim(a, b) - ssim_reference(a, b)) < 1e-6


class TestEvaluateCheckpoint:
    def test_report_structure(self, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        report = evaluate_checkpoint(restore_ckpt, test_manifest, text_mode="gt")
        assert report["kind"] == "eval"
        assert report["checkpoint_id"] == restore_ckpt.checkpoint_id
        splits = {(r["mode"], r["split"]) for r in report["rows"]}
        assert ("restored", "overall") in splits
        assert ("restored", "noise") in splits
        assert ("restored", "low") in splits
        for row in report["rows"]:
            assert row["n"] >= 1
            assert isinstance(row["psnr_mean"], float)
            assert 0.0 <= row["ssim_mean"] <= 1.0

    def test_include_input_adds_baseline_rows(self, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        report = evaluate_checkpoint(restore_ckpt, test_manifest, include_input=True)
        modes = {r["mode"] for r in report["rows"]}
        assert modes == {"restored", "input"}

    def test_deterministic(self, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        a = evaluate_checkpoint(restore_ckpt, test_manifest, text_mode="noisy")
        b = evaluate_checkpoint(restore_ckpt, test_manifest, text_mode="noisy")
        assert a == b


class TestRunTextImpact:
    def test_requires_restore_stage(self, tiny_sets):
        train_manifest, test_manifest = tiny_sets
        cfg = toy_train_config(patch=16, batch=2, iters=1, seed=5)
        refine_only = train_stage("refine", train_manifest, cfg, model_config=toy_config())
        with pytest.raises(ValueError):
            run_text_impact(refine_only, test_manifest)

    def test_report_has_both_text_columns(self, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        report = run_text_impact(restore_ckpt, test_manifest)
        modes = {r["mode"] for r in report["rows"]}
        assert modes == {"gt_text", "gf_text"}
        assert report["kind"] == "text_impact"
        ref = report["reference_full_scale"]
        assert "not reproducible" in ref["note"]
        assert any(r["dataset"] == "BSD68-sigma50" for r in ref["rows"])

    def test_deterministic(self, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        assert run_text_impact(restore_ckpt, test_manifest) == \
            run_text_impact(restore_ckpt, test_manifest)


class TestRunAblation:
    def test_mode_checkpoint_mismatch_rejected(self, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        with pytest.raises(ValueError):
            run_ablation("no_dmm", restore_ckpt, test_manifest)

    def test_unknown_mode_rejected(self, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        with pytest.raises(ValueError):
            run_ablation("no_text", restore_ckpt, test_manifest)

    def test_full_mode_report(self, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        report = run_ablation("full", restore_ckpt, test_manifest)
        assert report["mode"] == "full"
        assert {r["mode"] for r in report["rows"]} == {"full"}

    def test_no_dmm_checkpoint_round_trip(self, tiny_sets):
        train_manifest, test_manifest = tiny_sets
        cfg = toy_train_config(patch=16, batch=2, iters=1, seed=6)
        variant = config_for_mode(toy_config(), "no_dmm")
        refine = train_stage("refine", train_manifest, cfg, model_config=variant,
                             meta={"mode": "no_dmm"})
        restore = train_stage("restore", train_manifest, cfg, init=refine)
        report = run_ablation("no_dmm", restore, test_manifest)
        assert report["mode"] == "no_dmm"
        assert "reference_full_scale" in report

    def test_fusion_flag_mismatch_rejected(self, tiny_sets):
        train_manifest, test_manifest = tiny_sets
        cfg = toy_train_config(patch=16, batch=2, iters=1, seed=7)
        # claims no_dmm in meta but keeps the fused architecture
        refine = train_stage("refine", train_manifest, cfg, model_config=toy_config(),
                             meta={"mode": "no_dmm"})
        restore = train_stage("restore", train_manifest, cfg, init=refine)
        with pytest.raises(ValueError):
            run_ablation("no_dmm", restore, test_manifest)


class TestReportSerialization:
    def test_infinity_serialized_as_string(self):
        report = {"rows": [{"psnr_mean": math.inf, "ssim_mean": 1.0}]}
        text = report_to_json(report)
        assert '"inf"' in text
        json.loads(text)

    def test_save_report_round_trip(self, tmp_path, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        report = evaluate_checkpoint(restore_ckpt, test_manifest)
        out = tmp_path / "report.json"
        save_report(report, out)
        back = json.loads(out.read_text())
        assert back["checkpoint_id"] == report["checkpoint_id"]

    def test_render_table_lists_every_row(self, restore_ckpt, tiny_sets):
        _, test_manifest = tiny_sets
        report = evaluate_checkpoint(restore_ckpt, test_manifest)
        table = render_table(report)
        for row in report["rows"]:
            assert row["split"] in table
        assert "psnr_mean" in table
