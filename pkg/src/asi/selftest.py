"""In-binary invariant suites, runnable without pytest via `asi selftest`.

Each check exercises one documented invariant with seeded data and returns
silently on success. Failures are collected, not raised, so one broken
invariant does not hide the others.
"""

from __future__ import annotations

import dataclasses
import filecmp
import tempfile
from pathlib import Path

import numpy as np

from .adablending import (
    BlendConfig,
    adain,
    asi_layer,
    blend,
    covariance,
    extract_head_mask,
    extract_spatial_mask,
    fuse_masks,
    head_distance,
    head_distances,
)
from .ddim import OracleDenoiser, ddim_generate, ddim_invert, forward_noise, make_schedule, predict_x0
from .harness import ExperimentConfig, run_pipeline, synth_inputs
from .numeric import Matrix, Rng, matmul, randn_matrix, softmax_rows
from .sica import FeatureMap, project_kv, project_q, siamese_attend


class CheckFailure(AssertionError):
    pass


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise CheckFailure(message)


def _check_matmul_associative() -> None:
    rng = Rng(101)
    for _ in range(5):
        a = randn_matrix(rng, 5, 7)
        b = randn_matrix(rng, 7, 3)
        c = randn_matrix(rng, 3, 6)
        left = matmul(matmul(a, b), c).a
        right = matmul(a, matmul(b, c)).a
        rel = np.abs(left - right).max() / max(np.abs(left).max(), 1e-300)
        _require(rel < 1e-9, f"matmul associativity violated: rel error {rel}")


def _check_softmax_rows() -> None:
    rng = Rng(102)
    big = Matrix(randn_matrix(rng, 6, 9).a * 1e4)
    for mat in (randn_matrix(rng, 4, 5), big):
        sums = softmax_rows(mat).a.sum(axis=1)
        _require(np.abs(sums - 1.0).max() < 1e-9, "softmax rows do not sum to 1")
    base = randn_matrix(rng, 5, 5)
    shifted = Matrix(base.a + 123.456)
    delta = np.abs(softmax_rows(base).a - softmax_rows(shifted).a).max()
    _require(delta < 1e-12, f"softmax shift invariance violated: {delta}")


def _check_rng_reproducible() -> None:
    a = Rng(7).normals(10_000)
    b = Rng(7).normals(10_000)
    _require(np.array_equal(a, b), "identical seeds produced different streams")
    c = Rng(8).normals(10_000)
    _require(not np.array_equal(a, c), "different seeds produced identical streams")


def _random_tracks(seed: int, heads: int = 3, m: int = 6, d: int = 4, tokens: int = 5):
    rng = Rng(seed)
    q = FeatureMap(rng.normals(heads * m * d).reshape(heads, m, d))
    k_s = FeatureMap(rng.normals(heads * tokens * d).reshape(heads, tokens, d))
    v_s = FeatureMap(rng.normals(heads * tokens * d).reshape(heads, tokens, d))
    k_c = FeatureMap(rng.normals(heads * tokens * d).reshape(heads, tokens, d))
    v_c = FeatureMap(rng.normals(heads * tokens * d).reshape(heads, tokens, d))
    return q, k_s, v_s, k_c, v_c


def _check_attention_rows() -> None:
    q, k_s, v_s, k_c, v_c = _random_tracks(103)
    scale = 1.0 / np.sqrt(q.head_dim)
    for k in (k_s, k_c):
        for i in range(q.heads):
            weights = softmax_rows(Matrix(matmul(q.head(i), k.head(i).transpose()).a * scale))
            _require(
                np.abs(weights.a.sum(axis=1) - 1.0).max() < 1e-9,
                "attention weights do not sum to 1",
            )


def _check_track_isolation() -> None:
    q, k_s, v_s, k_c, v_c = _random_tracks(104)
    f_s, f_c = siamese_attend(q, k_s, v_s, k_c, v_c)
    f_s3, f_c3 = siamese_attend(q, k_s, FeatureMap(3.0 * v_s.a), k_c, v_c)
    _require(np.abs(f_s3.a - 3.0 * f_s.a).max() < 1e-12, "style track not linear in values")
    _require(np.array_equal(f_c3.a, f_c.a), "content track changed when style values scaled")
    g_s, g_c = siamese_attend(q, k_c, v_c, k_s, v_s)
    _require(
        np.array_equal(g_s.a, f_c.a) and np.array_equal(g_c.a, f_s.a),
        "swapping the K/V pairs did not swap the outputs",
    )


def _check_token_permutation() -> None:
    q, k_s, v_s, k_c, v_c = _random_tracks(105)
    perm = [3, 0, 4, 1, 2]
    f_s, _ = siamese_attend(q, k_s, v_s, k_c, v_c)
    g_s, _ = siamese_attend(
        q, FeatureMap(k_s.a[:, perm, :]), FeatureMap(v_s.a[:, perm, :]), k_c, v_c
    )
    _require(
        np.abs(f_s.a - g_s.a).max() < 1e-12, "style output changed under token permutation"
    )


def _check_covariance() -> None:
    rng = Rng(106)
    for _ in range(5):
        f = randn_matrix(rng, 9, 4)
        cov = covariance(f).a
        _require(np.array_equal(cov, cov.T), "covariance not symmetric")
        eigs = np.linalg.eigvalsh(cov)
        _require(eigs.min() >= -1e-9, f"covariance not PSD: min eigenvalue {eigs.min()}")


def _check_head_distance() -> None:
    rng = Rng(107)
    a = randn_matrix(rng, 8, 5)
    b = randn_matrix(rng, 8, 5)
    _require(head_distance(a, a) == 0.0, "self-distance nonzero")
    _require(head_distance(a, b) == head_distance(b, a), "distance not symmetric")
    shifted = Matrix(a.a + np.full((1, 5), 3.25))
    _require(
        abs(head_distance(shifted, b) - head_distance(a, b)) < 1e-9,
        "distance not translation-invariant",
    )


def _check_head_selection() -> None:
    rng = Rng(108)
    f_s = FeatureMap(rng.normals(5 * 8 * 3).reshape(5, 8, 3))
    f_c = FeatureMap(rng.normals(5 * 8 * 3).reshape(5, 8, 3))
    cfg = BlendConfig(n=2)
    mask = extract_head_mask(f_s, f_c, cfg)
    _require(mask.selected_count == 2, "selected head count differs from n")
    ell = head_distances(f_s, f_c)
    expected = set(sorted(range(5), key=lambda i: (-ell[i], i))[:2])
    _require(set(np.flatnonzero(mask.selected)) == expected, "selection differs from sort oracle")


def _check_spatial_argmax() -> None:
    rng = Rng(109)
    f_c = FeatureMap(np.abs(rng.normals(3 * 7 * 4)).reshape(3, 7, 4) + 0.1)
    mask = extract_spatial_mask(f_c, BlendConfig(alpha=0.7))
    for i in range(3):
        for c in range(4):
            argmax = int(f_c.a[i, :, c].argmax())
            _require(
                mask.data[i, argmax, c] == 0.0,
                "argmax position not preserved for a positive channel",
            )


def _check_blend_interpolates() -> None:
    rng = Rng(110)
    f_c = FeatureMap(rng.normals(4 * 6 * 3).reshape(4, 6, 3))
    f_s = FeatureMap(rng.normals(4 * 6 * 3).reshape(4, 6, 3))
    cfg = BlendConfig(n=2)
    head = extract_head_mask(f_s, f_c, cfg)
    fused = fuse_masks(head, extract_spatial_mask(f_c, cfg))
    out = blend(f_c, f_s, fused, cfg)
    for i in range(4):
        styled = adain(f_c.head(i), f_s.head(i), cfg.eps).a
        matches = (out.a[i] == f_c.a[i]) | (out.a[i] == styled)
        _require(matches.all(), "blend produced a value that is neither source")
    _require(fused.blended_fraction >= 2 / 4, "OR fusion lost a selected head")


def _check_adain_moments() -> None:
    rng = Rng(111)
    f_c = randn_matrix(rng, 32, 6)
    f_s = Matrix(randn_matrix(rng, 32, 6).a * 1.7 + 0.4)
    out = adain(f_c, f_s, 1e-5).a
    _require(np.abs(out.mean(axis=0) - f_s.a.mean(axis=0)).max() < 1e-6, "mean not transferred")
    _require(np.abs(out.std(axis=0) - f_s.a.std(axis=0)).max() < 1e-4, "std not transferred")


def _check_ddim_roundtrip() -> None:
    rng = Rng(112)
    x0 = randn_matrix(rng, 6, 5)
    noise = randn_matrix(rng, 6, 5)
    sched = make_schedule(50)
    denoiser = OracleDenoiser(true_noise=noise, true_x0=x0)
    up = ddim_invert(x0, denoiser, sched, 50)
    down = ddim_generate(up[-1].x, denoiser, sched, 50)
    by_t = {state.t: state.x.a for state in up}
    for state in down:
        err = np.abs(state.x.a - by_t[state.t]).max()
        _require(err < 1e-8, f"inversion not inverted at t={state.t}: {err}")
    _require(np.abs(down[-1].x.a - x0.a).max() < 1e-6, "roundtrip did not recover the input")


def _check_forward_identity() -> None:
    rng = Rng(113)
    x0 = randn_matrix(rng, 5, 4)
    eps = randn_matrix(rng, 5, 4)
    sched = make_schedule(20)
    for t in range(1, 21):
        x_t = forward_noise(x0, t, eps, sched)
        back = predict_x0(x_t, eps, t, sched)
        _require(np.abs(back.a - x0.a).max() < 1e-10, f"clean estimate drifted at t={t}")


def _check_variance_preservation() -> None:
    rng = Rng(114)
    n = 10_000
    x0 = Matrix(rng.normals(n).reshape(n, 1))
    eps = Matrix(rng.normals(n).reshape(n, 1))
    sched = make_schedule(10, 0.05, 0.3)
    for t in (3, 10):
        ab = sched.bar(t)
        x_t = forward_noise(x0, t, eps, sched)
        expected = ab * x0.a.var() + (1 - ab)
        _require(
            abs(x_t.a.var() - expected) / expected < 0.05,
            f"variance not preserved at t={t}",
        )


def _check_pipeline_determinism() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        base = ExperimentConfig(timesteps=4, dump_dir=Path(tmp) / "a")
        report_a = run_pipeline(base)
        report_b = run_pipeline(dataclasses.replace(base, dump_dir=Path(tmp) / "b"))
        _require(report_a.per_step_ell == report_b.per_step_ell, "reports differ across runs")
        _require(
            filecmp.cmp(Path(tmp) / "a" / "report.csv", Path(tmp) / "b" / "report.csv", shallow=False),
            "report.csv bytes differ across runs",
        )
        _require(report_a.preserved_mse == 0.0, "preserved coordinates were modified")
        cfg = ExperimentConfig(timesteps=2, dump_dir=Path(tmp) / "c")
        report = run_pipeline(cfg)
        _require(
            report.blended_fraction >= cfg.blend.n / cfg.heads,
            "blended fraction fell below n/h under OR fusion",
        )


def _check_degenerate_style() -> None:
    cfg = ExperimentConfig(perturbation=0.0, blend=BlendConfig(eps=1e-9))
    inputs = synth_inputs(cfg)
    q = project_q(inputs.spatial, inputs.params)
    k_s, v_s = project_kv(inputs.style_prompt, inputs.params)
    k_c, v_c = project_kv(inputs.content_prompt, inputs.params)
    result = asi_layer(q, k_s, v_s, k_c, v_c, cfg.blend)
    _require(np.array_equal(result.f_s.a, result.f_c.a), "identical prompts split the tracks")
    err = np.abs(result.f_out.a - result.f_c.a).max()
    _require(err < 1e-6, f"degenerate style altered content features: {err}")


_SUITES: dict[str, list] = {
    "numeric": [_check_matmul_associative, _check_softmax_rows, _check_rng_reproducible],
    "sica": [_check_attention_rows, _check_track_isolation, _check_token_permutation],
    "adablending": [
        _check_covariance,
        _check_head_distance,
        _check_head_selection,
        _check_spatial_argmax,
        _check_blend_interpolates,
        _check_adain_moments,
        _check_degenerate_style,
    ],
    "ddim": [_check_ddim_roundtrip, _check_forward_identity, _check_variance_preservation],
    "harness": [_check_pipeline_determinism],
}


def run_selftest(verbose: bool = False) -> list[str]:
    """Run every suite; returns failure descriptions (empty means all passed)."""
    failures: list[str] = []
    for module, checks in _SUITES.items():
        passed = 0
        for check in checks:
            try:
                check()
                passed += 1
            except CheckFailure as exc:
                failures.append(f"{module}.{check.__name__}: {exc}")
        if verbose:
            print(f"{module}: {passed}/{len(checks)} invariants passed")
    if verbose:
        for failure in failures:
            print(f"FAIL {failure}")
        if not failures:
            print("all invariant suites passed")
    return failures
