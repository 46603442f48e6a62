"""The release gate must be able to fail: each suite catches a planted bug."""

import numpy as np
import pytest

from guidedflow import flow_ops, ops, verify
from guidedflow.verify import GRADIENT_CASES, INVARIANT_CASES, ORACLE_CASES


def test_case_tables_cover_required_operations():
    for name in ("conv2d", "leaky_relu", "sigmoid", "bilinear_sample_source", "bilinear_sample_coords",
                 "warp_backward", "correlation_volume", "feature_normalize", "census_distance",
                 "photometric_loss", "census_loss", "smooth_loss", "boundary_dilated_photometric",
                 "pyramid_distillation_loss", "sgu_upsample", "decode_level", "end_to_end"):
        assert name in GRADIENT_CASES
    assert {"conv2d", "correlation_volume", "downsample", "photometric_loss",
            "pyramid_distillation_loss"} <= set(ORACLE_CASES)
    assert ORACLE_CASES["conv2d"][1] == 100


def test_broken_conv_backward_is_caught(monkeypatch):
    original = ops.Conv2d.backward

    def wrong(self, grad):
        gx, gw, gb = original(self, grad)
        return gx, gw * 1.01, gb

    monkeypatch.setattr(ops.Conv2d, "backward", wrong)
    report = verify.run_gradient_case("conv2d", 0)
    assert not report
    results = verify.run_all(oracle_trials=1)
    failed = {r.name for r in results if not r.passed}
    assert "conv2d" in failed


def test_broken_sampler_coords_gradient_is_caught(monkeypatch):
    original = flow_ops.BilinearSample.backward

    def wrong(self, grad):
        gs, gc = original(self, grad)
        return gs, (None if gc is None else -gc)

    monkeypatch.setattr(flow_ops.BilinearSample, "backward", wrong)
    assert not verify.run_gradient_case("bilinear_sample_coords", 1)


def test_broken_correlation_forward_is_caught_by_oracle(monkeypatch):
    original = flow_ops.Correlation.forward

    def shifted(self, f1, f2, max_disp=4):
        return original(self, f1, f2, max_disp) * 1.001

    monkeypatch.setattr(flow_ops.Correlation, "forward", shifted)
    worst, _ = verify.run_oracle_case("correlation_volume", trials=3)
    assert worst > 1e-6


def test_crashing_check_is_reported_not_raised(monkeypatch):
    def boom():
        raise RuntimeError("planted")

    monkeypatch.setitem(INVARIANT_CASES, "flo_roundtrip", boom)
    monkeypatch.setattr(verify, "GRADIENT_CASES", {})
    monkeypatch.setattr(verify, "ORACLE_CASES", {})
    results = verify.run_all()
    bad = [r for r in results if r.name == "flo_roundtrip"]
    assert bad and not bad[0].passed and "planted" in bad[0].detail


@pytest.mark.parametrize("name", list(ORACLE_CASES))
def test_oracles_small(name):
    worst, _ = verify.run_oracle_case(name, trials=5)
    assert worst <= 1e-6


@pytest.mark.parametrize("name", list(INVARIANT_CASES))
def test_invariants(name):
    ok, detail = verify.run_invariant(name)
    assert ok, detail
