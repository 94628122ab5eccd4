import numpy as np
import pytest

import gait.autodiff as ad
from conftest import tiny_config
from gait import gradcheck, training
from gait.autodiff import Tensor

PRIMITIVES = {"add", "add_scalar", "sub", "mul", "scale", "square", "abs", "relu", "leaky_relu", "tanh",
              "reshape", "add_channel_bias", "sum", "mean", "conv2d", "conv2d_transpose", "instance_norm",
              "sobel_response"}
COMPOSITES = {"adv_loss_generator", "adv_loss_discriminator", "cycle_consistency_loss",
              "gradient_adjustment_loss", "generator_forward", "discriminator_forward"}


def test_registry_lists_each_op_once():
    assert set(gradcheck.REGISTRY) == PRIMITIVES | COMPOSITES
    assert len(gradcheck.REGISTRY) == len(PRIMITIVES | COMPOSITES)


def test_duplicate_registration_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        gradcheck.register("add")(lambda rng: None)


def test_every_recorded_training_op_is_checked(tiny_data, monkeypatch):
    seen = set()
    real_record = ad._record

    def spy(op, *a, **kw):
        seen.add(op)
        return real_record(op, *a, **kw)

    monkeypatch.setattr(ad, "_record", spy)
    cfg = tiny_config()
    training.train_step(tiny_data[0][:2], tiny_data[1][:2], training.TrainState.initial(cfg), cfg.weights, cfg)
    assert seen and seen <= set(gradcheck.REGISTRY)


def test_check_instance_detects_wrong_gradient():
    def bad_square(a):
        return ad._record("bad", a.data ** 2, (a,), lambda g: (g * a.data,))  # missing factor 2

    x = np.array([0.5, -1.5, 2.0])
    assert gradcheck.check_instance(bad_square, [x], np.random.default_rng(0)) > 1e-2
    assert gradcheck.check_instance(ad.square, [x], np.random.default_rng(0)) < 1e-8


def test_injected_conv_weight_gradient_fault_is_named(monkeypatch):
    real = ad._conv_weight_grad
    monkeypatch.setattr(ad, "_conv_weight_grad", lambda *a: 1.01 * real(*a))
    result = gradcheck.run_check("conv2d", instances=3)
    assert not result.passed
    assert result.line().startswith("[FAIL] conv2d ")


def test_result_line_format():
    r = gradcheck.CheckResult("tanh", 20, 3.2e-9, True)
    assert r.line().startswith("[PASS] tanh") and "instances=20" in r.line() and "3.20e-09" in r.line()


def test_fast_sweep_passes():
    assert all(r.passed for r in gradcheck.run_all(instances=2, seed=1))


def test_scalar_output_without_weight():
    out = gradcheck._scalarize(Tensor([[2.0]]), None)
    assert out.shape == () and out.item() == 2.0


def test_directional_probe_straddling_a_kink_is_redrawn():
    # relu of a sum sitting exactly at zero: every direction crosses the kink
    fn = lambda a: ad.relu(ad.sum(a))  # noqa: E731
    with pytest.raises(gradcheck.AtKink):
        gradcheck.check_instance(fn, [np.array([1.0, -1.0])], np.random.default_rng(0), directional=True)
    assert gradcheck.check_instance(fn, [np.array([1.0, 0.5])], np.random.default_rng(0), directional=True) < 1e-8


def test_kink_signs_restore_record():
    real = ad._record
    signs = gradcheck._kink_signs(lambda a: ad.relu(a), [np.array([-1.0, 2.0])])
    assert ad._record is real
    assert [s.tolist() for s in signs] == [[False, True]]


def test_network_checks_pass_for_both_upsampling_kernels(monkeypatch):
    from dataclasses import replace
    for k in (3, 4):
        monkeypatch.setattr(gradcheck, "GRADCHECK_GENERATOR", replace(gradcheck.GRADCHECK_GENERATOR, up_kernel=k))
        assert gradcheck.run_check("generator_forward", instances=10, seed=2).passed
