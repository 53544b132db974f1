import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agflab.exceptions import ConfigError, ShapeError
from agflab.numerics import finite_diff_gradcheck
from agflab.poscoeff import (
    POSITIONAL_MODES,
    AgfHeadParams,
    AlibiHeadParams,
    KerpleLogParams,
    Lc2Amplitudes,
    Lc3Weights,
    PositionalField,
    agf_coeff,
    alibi_bias,
    alibi_slope_schedule,
    build_coeff_matrix,
    coeff_param_grads,
    kerple_agf_params,
    kerple_to_agf,
    lc2_amplitude,
    lc3_weights,
    positional_param_count,
)
from agflab.attention import AttentionOptions, single_pair_score


def test_agf_coeff_values():
    p = AgfHeadParams.from_field(1.0, 24.0)
    assert agf_coeff(p, 0) == 1.0
    assert agf_coeff(p, 24) == pytest.approx(0.25, abs=1e-15)
    q = AgfHeadParams.from_field(1.0, 24.0, G_bwd=2.0, r_bwd=12.0)
    assert agf_coeff(q, -24) == pytest.approx(2 / 9, abs=1e-15)


def test_agf_params_validated():
    with pytest.raises(ConfigError):
        AgfHeadParams.from_field(G_fwd=-1.0)
    with pytest.raises(ConfigError):
        AgfHeadParams(k_exp=0.0)


@given(
    g=st.floats(-2, 2),
    rho=st.floats(-1, 5),
    k=st.floats(0.1, 4),
    d=st.integers(0, 500),
)
def test_agf_coeff_monotone_in_distance(g, rho, k, d):
    p = AgfHeadParams(g, g, rho, rho, k)
    assert agf_coeff(p, d + 1) < agf_coeff(p, d)
    assert agf_coeff(p, -(d + 1)) < agf_coeff(p, -d)


def test_lc2_lookup_and_clamp():
    assert lc2_amplitude(Lc2Amplitudes.initial(8), 5) == 1.0
    a = Lc2Amplitudes.initial(8)
    a.amp[0, 3] = 1.5
    a.amp[0, 7] = 0.3
    assert lc2_amplitude(a, 3) == 1.5
    assert lc2_amplitude(a, 100) == 0.3
    assert lc2_amplitude(a, -3) == 1.0


def test_lc3_weights_and_scores():
    w = Lc3Weights.initial(4, 3)
    assert np.array_equal(lc3_weights(w, 2), np.ones(3))
    q = np.array([0.3, -1.2, 2.0])
    k = np.array([1.0, 0.5, -0.25])
    assert single_pair_score(q, k, 0.7, lc3_weights(w, 2)) == single_pair_score(q, k, 0.7)
    w.w[0, 1] = [2.0, 0.0, 0.0]
    e1 = np.array([1.0, 0.0, 0.0])
    opts = AttentionOptions("agf_full", scale=1.0)
    assert single_pair_score(e1, e1, 1.0, lc3_weights(w, 1), opts) == 2.0


def test_alibi_bias_values():
    p = AlibiHeadParams(0.5, 1.0)
    assert alibi_bias(p, 0) == 0.0
    assert alibi_bias(p, 4) == -2.0
    assert alibi_bias(p, -3) == -3.0


def test_alibi_slope_schedule():
    s = alibi_slope_schedule(8)
    assert s[0] == 0.5 and s[-1] == 2.0**-8
    assert np.all(np.diff(s) < 0)


def test_kerple_mapping_examples():
    assert kerple_to_agf(KerpleLogParams(0.0, 2.0, 1 / 24))(24) == pytest.approx(0.25, abs=1e-15)
    assert kerple_to_agf(KerpleLogParams(math.log(3), 1.0, 1.0))(2) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ConfigError):
        KerpleLogParams(0.0, -1.0, 1.0)


def test_kerple_dual_form_random_grid():
    rng = np.random.default_rng(0)
    n = 10_000
    c, r1, r2 = rng.uniform(-2, 2, n), rng.uniform(0.05, 4, n), rng.uniform(1e-3, 2, n)
    d = rng.integers(0, 512, n).astype(float)
    exp_form = np.exp(c - r1 * np.log1p(r2 * d))
    pow_form = np.array([kerple_to_agf(KerpleLogParams(*t))(x) for t, x in zip(zip(c, r1, r2), d)])
    assert np.max(np.abs(exp_form - pow_form)) < 1e-12


def test_agf_matrix_closed_form():
    cm = build_coeff_matrix("agf", [AgfHeadParams()], 3, 3)
    ref = np.array(
        [[1, (24 / 25) ** 2, (12 / 13) ** 2], [(24 / 25) ** 2, 1, (24 / 25) ** 2], [(12 / 13) ** 2, (24 / 25) ** 2, 1]]
    )
    assert np.allclose(cm.values[0], ref, rtol=0, atol=1e-15)
    assert cm.is_toeplitz()


def test_agf_m_with_unit_amplitudes_equals_agf():
    heads = [AgfHeadParams.from_field(1.3, 7.0, 0.8, 3.0)]
    a = build_coeff_matrix("agf", heads, 5, 5).values
    m = build_coeff_matrix("agf_m", [(heads[0], Lc2Amplitudes.initial(5))], 5, 5).values
    assert np.array_equal(a, m)


def test_alibi_mul_log_kernel_equals_agf_matrix():
    rng = np.random.default_rng(1)
    # the field exponent is shared by all heads, so r1 is too
    r1 = rng.uniform(0.5, 3)
    kp = [KerpleLogParams(rng.uniform(-1, 1), r1, rng.uniform(0.01, 1)) for _ in range(4)]
    alibi = [
        AlibiHeadParams(p.r1, p.r1, "multiplicative", "log", p.c, p.c, p.r2, p.r2) for p in kp
    ]
    agf = [kerple_agf_params(p) for p in kp]
    L = 32
    a = build_coeff_matrix("alibi_mul", alibi, L, L).values
    b = build_coeff_matrix("agf", agf, L, L).values
    assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize("mode", POSITIONAL_MODES)
def test_all_modes_toeplitz_after_perturbation(mode):
    rng = np.random.default_rng(2)
    f = PositionalField(mode, 3, 12, 4)
    for arr in f.params.values():
        arr += rng.uniform(-0.3, 0.3, arr.shape)
    cm = f.coeff_matrix(9, 9)
    assert cm.is_toeplitz()
    if cm.lc3 is not None:
        for j in range(cm.lc3.shape[-1]):
            assert np.all(cm.lc3[:, 1:, 1:, j] == cm.lc3[:, :-1, :-1, j])


def test_lc_tables_clamp_in_matrix():
    f = PositionalField("agf_m", 1, 4, 2)
    f.params["amp"][0, 0, 3] = 0.5
    vals = f.coeff_matrix(1, 10).values[0, 0]
    base = PositionalField("agf", 1, 4, 2).coeff_matrix(1, 10).values[0, 0]
    assert np.allclose(vals[3:] / base[3:], 0.5)


@pytest.mark.parametrize(
    "mode,n",
    [("none", 0), ("agf", 16), ("agf_m", 16 + 256), ("agf_full", 16 + 256 + 4096), ("alibi_add", 8), ("alibi_mul", 8)],
)
def test_param_counts(mode, n):
    assert positional_param_count(mode, 4, 32, 16) == n
    assert PositionalField(mode, 4, 32, 16).n_params == n


def test_zero_offset_gradients():
    g = coeff_param_grads("agf", AgfHeadParams.from_field(2.5, 5.0), 0, 1.0)
    assert g["rho"][0, 0] == 0.0
    assert g["gamma"][0, 0] == pytest.approx(2.5, abs=1e-15)
    assert np.all(g["gamma"][0, 1] == 0.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), mode=st.sampled_from(["agf", "agf_m", "agf_full", "alibi_add", "alibi_mul"]))
def test_field_backward_gradcheck(seed, mode):
    rng = np.random.default_rng(seed)
    f = PositionalField(mode, 2, 5, 3)
    for arr in f.params.values():
        arr += rng.uniform(-0.5, 0.5, arr.shape)
    L_q, L_k = 4, 6
    up = rng.normal(size=(2, L_q, L_k))
    up3 = rng.normal(size=(2, L_q, L_k, 3)) if mode == "agf_full" else None

    def loss():
        cm = f.coeff_matrix(L_q, L_k, q_start=1)
        out = np.sum(up * cm.values)
        if up3 is not None:
            out += np.sum(up3 * cm.lc3)
        return out

    grads = f.backward(L_q, L_k, up, up3, q_start=1)
    for name, value in f.params.items():
        saved = value.copy()

        def fn(t, name=name):
            f.params[name] = t
            try:
                return loss()
            finally:
                f.params[name] = saved

        assert finite_diff_gradcheck(fn, saved, grads[name]).max_rel_err < 1e-6, name


def test_field_roundtrip_and_head_records():
    f = PositionalField("agf_full", 2, 4, 3)
    f.params["gamma"][1, 1] = 0.4
    g = PositionalField.from_dict(f.to_dict())
    assert np.array_equal(g.coeff_matrix(4, 4).values, f.coeff_matrix(4, 4).values)
    h = f.head(1)
    assert h.agf.gamma_bwd == 0.4 and h.lc3.w.shape == (2, 4, 3)


def test_field_rejects_mixed_exponents():
    with pytest.raises(ConfigError):
        PositionalField.from_heads("agf", [AgfHeadParams(k_exp=2.0), AgfHeadParams(k_exp=1.5)])


def test_field_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        PositionalField("rope", 2, 4, 3)
    with pytest.raises(ShapeError):
        PositionalField("agf", 2, 4, 3).coeff_matrix(0, 3)
    with pytest.raises(ConfigError):
        build_coeff_matrix("agf", PositionalField("agf_m", 1, 4, 2), 2, 2)
