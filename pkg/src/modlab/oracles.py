"""Independent verification oracles.

Every nontrivial computation in the package is checked against a second
route that shares none of its code:

    closed-form policy   vs  projected gradient ascent on the simplex,
                             and (for 3 responses) an exhaustive grid
    analytic gradients   vs  central finite differences
    stop-gradient step   vs  finite differences of a frozen surrogate in
                             which all detached/reference log-probs are
                             held constant
    dataset generator    vs  record-by-record re-derivation, plus fault
                             injection
    pass accounting      vs  the fixed per-variant tables

The ``run_all`` entry point executes the whole battery and is what the
command-line ``verify`` command wraps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import core, synth
from . import train as training
from .core import Hyperparams
from .policy import (
    ModalityContext,
    backward,
    forward_logprobs,
    init_params,
)
from .train import PassCounter, TrainConfig, pair_loss_terms, train_step


# ---------------------------------------------------------------------------
# Simplex optimization oracles


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1} (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    cumsum = np.cumsum(u)
    rho = np.nonzero(u + (1.0 - cumsum) / np.arange(1, v.size + 1) > 0)[0][-1]
    theta = (1.0 - cumsum[rho]) / (rho + 1.0)
    return np.maximum(v + theta, 0.0)


def _objective_gradient(p, r, p_ref, q_inv, q_sens, hp: Hyperparams):
    # d/dp of E_p[r] - beta KL(p||ref) - beta_inv KL(p||q_inv)
    #         + beta_sens KL(p||q_sens), including the additive -tau from
    # the three (log + 1) terms so preconditioned directions stay exact.
    logp = np.log(p)
    return (
        r
        - hp.beta * (logp - np.log(p_ref))
        - hp.beta_inv * (logp - np.log(q_inv))
        + hp.beta_sens * (logp - np.log(q_sens))
        - hp.tau
    )


def pga_argmax(r, p_ref, q_inv, q_sens, hp: Hyperparams, max_iter: int = 20000,
               tol: float = 1e-11, delta: float = 1e-12) -> np.ndarray:
    """Projected gradient ascent on the decoupled objective.

    Ascent runs on the floored simplex {p >= delta, sum p = 1} (an affine
    reparameterization of the standard projection), which keeps every log
    finite and bounded; components whose true optimum lies below the floor
    sit on it, costing at most V*delta in L1.  The Armijo-style line search
    restarts each iteration from an enlarged step so one bad iteration
    cannot poison the rest.  Strict concavity (tau > 0) guarantees the
    maximizer is unique.
    """
    r = np.asarray(r, dtype=np.float64)
    p_ref = np.asarray(p_ref, dtype=np.float64)
    q_inv = np.asarray(q_inv, dtype=np.float64)
    q_sens = np.asarray(q_sens, dtype=np.float64)
    n = r.size
    scale = 1.0 - n * delta

    def project(v):
        return delta + scale * project_to_simplex((v - delta) / scale)

    def value(p):
        val = float(p @ r)
        val -= hp.beta * float(np.sum(p * np.log(p / p_ref)))
        val -= hp.beta_inv * float(np.sum(p * np.log(p / q_inv)))
        val += hp.beta_sens * float(np.sum(p * np.log(p / q_sens)))
        return val

    p = np.full(n, 1.0 / n)
    best = value(p)
    step = 1.0
    for _ in range(max_iter):
        grad = _objective_gradient(p, r, p_ref, q_inv, q_sens, hp)
        # Coordinate curvature is tau/p_i, so the natural (replicator)
        # direction p * (g - <p, g>) equalizes progress across twelve
        # orders of magnitude of p while staying tangent to the simplex;
        # the raw gradient is kept as a fallback direction.  Both are
        # ascent directions and every move is value-checked.
        directions = (p * (grad - float(p @ grad)) / hp.tau, grad)
        step = min(step * 4.0, 1.0)
        moved = False
        for direction in directions:
            trial = step
            while trial >= 1e-18:
                cand = project(p + trial * direction)
                cand_val = value(cand)
                if cand_val > best:
                    move = float(np.abs(cand - p).sum())
                    p, best, moved = cand, cand_val, True
                    step = trial
                    if move < tol:
                        return p
                    break
                trial *= 0.5
            if moved:
                break
        if not moved:
            return p
    return p


def grid_argmax_3(r, p_ref, q_inv, q_sens, hp: Hyperparams, grid_step: float = 1e-3):
    """Exhaustive argmax of the objective over the 3-simplex grid.

    Evaluates every lattice point (i, j, n-i-j)/n with n = 1/grid_step,
    vectorized; p log p terms use the p -> 0 limit of zero.  Returns
    (argmax point, objective value there).
    """
    n = int(round(1.0 / grid_step))
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = (i + j) <= n
    i, j = i[keep], j[keep]
    p = np.stack([i, j, n - i - j], axis=1).astype(np.float64) / n

    r = np.asarray(r, dtype=np.float64)
    refs = [np.asarray(x, dtype=np.float64) for x in (p_ref, q_inv, q_sens)]
    signs = (-hp.beta, -hp.beta_inv, +hp.beta_sens)

    values = p @ r
    logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    for q, coeff in zip(refs, signs):
        kl = np.sum(np.where(p > 0, p * (logp - np.log(q)), 0.0), axis=1)
        values += coeff * kl
    best = int(np.argmax(values))
    return p[best], float(values[best])


def random_instance(v: int, rng: np.random.Generator):
    """One random, well-conditioned closed-form test instance.

    Distributions are Dirichlet draws mixed with 5% uniform mass so every
    entry is safely positive; the temperature is kept away from zero so
    the strictly concave regime is well inside floating-point resolution.
    """

    def dist():
        raw = rng.dirichlet(np.full(v, rng.uniform(0.5, 4.0)))
        mixed = 0.95 * raw + 0.05 / v
        return mixed / mixed.sum()

    r = rng.uniform(-0.5, 0.5, size=v)
    while True:
        beta = rng.uniform(0.02, 0.4)
        beta_inv = rng.uniform(0.0, 0.15)
        beta_sens = rng.uniform(0.0, 0.15)
        if beta + beta_inv - beta_sens >= 0.05:
            break
    hp = Hyperparams(beta=beta, beta_inv=beta_inv, beta_sens=beta_sens,
                     gamma_lpd=0.0, tau_mode="appendix")
    return r, dist(), dist(), dist(), hp


# ---------------------------------------------------------------------------
# Finite differences


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every i."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


def policy_gradient_rel_error(params, ctx: ModalityContext, upstream: np.ndarray,
                              h: float = 1e-5) -> float:
    """Max-norm relative error of backward() vs central differences."""
    analytic = backward(params, ctx, upstream).to_vector()

    def f(vec):
        return float(upstream @ forward_logprobs(params.from_vector(vec), ctx))

    numeric = finite_difference_gradient(f, params.to_vector(), h)
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def frozen_surrogate_rel_error(params, ref_params, batch, cfg: TrainConfig, step: int,
                               pools=None, h: float = 1e-6) -> float:
    """Stop-gradient audit for one batch.

    The trainer's analytic step direction is compared against central
    finite differences of the surrogate loss in which every detached
    (corrupted-pass) and reference log-probability is frozen at its value
    for the current parameters; only the clean policy passes respond to
    the perturbation.  Relative error in L2.
    """
    frozen = [training.evaluate_pair(params, ref_params, pair, cfg, step, idx, pools)[0]
              for idx, pair in enumerate(batch)]

    def surrogate(vec):
        theta = params.from_vector(vec)
        total = 0.0
        for pair, pl in zip(batch, frozen):
            clean = forward_logprobs(theta, pair.context)
            live = replace(pl, policy_w=clean[pair.y_w], policy_l=clean[pair.y_l])
            loss, _, _ = pair_loss_terms(live, cfg, pair.context.modality_tag)
            total += loss
        return total / len(batch)

    updated, _, _ = train_step(params, ref_params, batch, cfg, step, pools)
    analytic = (params.to_vector() - updated.to_vector()) / cfg.lr
    numeric = finite_difference_gradient(surrogate, params.to_vector(), h)
    denom = max(float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom


# ---------------------------------------------------------------------------
# Suite battery (shared by the CLI verify command and the test suite)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def closed_form_suite(n_instances: int = 200, grid_instances: int = None,
                      l1_tol: float = 1e-4, seed: int = 0) -> SuiteResult:
    """Closed form vs projected gradient ascent (and V=3 grid search)."""
    start = time.time()
    rng = np.random.default_rng(seed)
    sizes = [2, 3, 5, 8]
    if grid_instances is None:
        grid_instances = n_instances  # grid-check every V=3 instance
    worst_pga = 0.0
    worst_grid = 0.0
    grid_done = 0
    for idx in range(n_instances):
        v = sizes[idx % len(sizes)]
        r, p_ref, q_inv, q_sens, hp = random_instance(v, rng)
        closed = core.closed_form_policy(r, p_ref, q_inv, q_sens, hp)
        numeric = pga_argmax(r, p_ref, q_inv, q_sens, hp)
        worst_pga = max(worst_pga, float(np.abs(closed - numeric).sum()))
        if v == 3 and grid_done < grid_instances:
            grid_point, grid_val = grid_argmax_3(r, p_ref, q_inv, q_sens, hp)
            worst_grid = max(worst_grid, float(np.abs(closed - grid_point).sum()))
            if core.mod_objective_value(closed, r, p_ref, q_inv, q_sens, hp) < grid_val - 1e-9:
                return SuiteResult("closed_form", False,
                                   "a grid point beat the closed form", time.time() - start)
            grid_done += 1
    # The grid can only localize the argmax to its own resolution.
    passed = worst_pga <= l1_tol and worst_grid <= 2e-3
    detail = f"worst L1 vs ascent {worst_pga:.2e} (tol {l1_tol}), vs grid {worst_grid:.2e} (tol 2e-3)"
    return SuiteResult("closed_form", passed, detail, time.time() - start)


def gradient_suite(n_triples: int = 100, tol: float = 1e-5, seed: int = 0) -> SuiteResult:
    start = time.time()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_triples):
        params = init_params(d_a=5, d_v=4, d_h=6, vocab_size=5, n_prompts=3,
                             seed=int(rng.integers(2 ** 31)))
        ctx = ModalityContext(
            audio=rng.normal(size=5), visual=rng.normal(size=4),
            prompt_id=int(rng.integers(3)),
            modality_tag="visual_related" if i % 2 == 0 else "audio_related",
        )
        upstream = rng.normal(size=5)
        worst = max(worst, policy_gradient_rel_error(params, ctx, upstream))
    return SuiteResult("gradients", worst < tol,
                       f"max relative error {worst:.2e} (tol {tol})", time.time() - start)


def stop_gradient_suite(n_steps: int = 20, tol: float = 1e-4, seed: int = 0,
                        variant: str = "modpp") -> SuiteResult:
    """Audit the analytic step against the frozen surrogate while training."""
    start = time.time()
    cfg_data = synth.SynthConfig(n_pairs=64, n_scenes=24, seed=seed, world_seed=seed + 1)
    dataset = synth.generate_pairs(cfg_data)
    cfg = TrainConfig(loss_variant=variant, lr=0.1, epochs=max(1, n_steps), batch_size=4,
                      seed=seed, warmup_steps=30)
    ref = training.warmup_reference(dataset, cfg.warmup_steps, cfg.seed,
                                 lr=cfg.warmup_lr, batch_size=cfg.batch_size)
    params = ref.copy()
    pools = training.feature_pools(dataset)
    groups: dict = {}
    for pair in dataset:
        groups.setdefault(pair.context.modality_tag, []).append(pair)
    worst = 0.0
    step = 0
    for epoch in range(cfg.epochs):
        for batch in training._epoch_schedule(groups, cfg, epoch):
            worst = max(worst, frozen_surrogate_rel_error(params, ref, batch, cfg, step, pools))
            params, _, _ = train_step(params, ref, batch, cfg, step, pools)
            step += 1
            if step >= n_steps:
                return SuiteResult("stop_gradient", worst < tol,
                                   f"max relative error {worst:.2e} over {step} steps (tol {tol})",
                                   time.time() - start)
    return SuiteResult("stop_gradient", worst < tol,
                       f"max relative error {worst:.2e} over {step} steps (tol {tol})",
                       time.time() - start)


def dataset_suite(n_pairs: int = 500, n_seeds: int = 2, tmp_dir=None) -> SuiteResult:
    """Round-trip (assemble then verify: zero violations) plus fault injection."""
    import json
    import os
    import tempfile

    start = time.time()
    tmp_dir = tmp_dir or tempfile.mkdtemp(prefix="modlab-verify-")
    for seed in range(n_seeds):
        path = os.path.join(tmp_dir, f"roundtrip-{seed}.jsonl")
        synth.assemble_dataset(synth.SynthConfig(n_pairs=n_pairs, n_scenes=100, seed=seed), path)
        report = synth.verify_dataset(path)
        if not report.ok or report.n_records != n_pairs:
            return SuiteResult("dataset_roundtrip", False,
                               f"seed {seed}: {report.n_violations} violations, "
                               f"{len(report.parse_errors)} parse errors",
                               time.time() - start)
        # Fault injection: swap y_w / y_l on one line, expect exactly one bad line.
        with open(path) as fh:
            lines = fh.read().splitlines()
        rec = json.loads(lines[7])
        rec["y_w"], rec["y_l"] = rec["y_l"], rec["y_w"]
        lines[7] = json.dumps(rec)
        broken = os.path.join(tmp_dir, f"broken-{seed}.jsonl")
        with open(broken, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(synth.stats_path(path)) as fh:
            sidecar = fh.read()
        with open(synth.stats_path(broken), "w") as fh:
            fh.write(sidecar)
        injected = synth.verify_dataset(broken)
        bad_lines = {line for line, _ in injected.violations}
        if bad_lines != {8}:
            return SuiteResult("dataset_roundtrip", False,
                               f"fault injection flagged lines {sorted(bad_lines)}, expected [8]",
                               time.time() - start)
    return SuiteResult("dataset_roundtrip", True,
                       f"{n_seeds} seeds x {n_pairs} records clean; fault injection localized",
                       time.time() - start)


_EXPECTED_COUNTERS = {
    "dpo": PassCounter(2, 2, 2, 0),
    "mod": PassCounter(6, 2, 2, 0),
    "modpp": PassCounter(6, 4, 2, 0),
}


def pass_count_suite(n_steps: int = 100, seed: int = 0) -> SuiteResult:
    start = time.time()
    dataset = synth.generate_pairs(synth.SynthConfig(n_pairs=2 * n_steps, n_scenes=60, seed=seed))
    for variant, expected in _EXPECTED_COUNTERS.items():
        cfg = TrainConfig(loss_variant=variant, lr=0.05, epochs=1, batch_size=2,
                          seed=seed, warmup_steps=0)
        result = training.train(dataset, cfg)
        if len(result.counters) < n_steps:
            return SuiteResult("pass_counts", False,
                               f"{variant}: only {len(result.counters)} steps", time.time() - start)
        for step, counter in enumerate(result.counters):
            if counter != expected:
                return SuiteResult("pass_counts", False,
                                   f"{variant} step {step}: {counter} != {expected}",
                                   time.time() - start)
    return SuiteResult("pass_counts", True,
                       f"all three variants exact over >= {n_steps} steps", time.time() - start)


def metrics_suite(seed: int = 0) -> SuiteResult:
    from . import eval as eval_mod

    start = time.time()
    rng = np.random.default_rng(seed)
    # Frozen hand tally: 4 yes with 3 correct, 6 no with 5 correct.
    report = eval_mod.MetricsReport(yes_total=4, yes_correct=3, no_total=6, no_correct=5)
    expected = (80.0, 75.0, 250.0 / 3.0, 2 * 75.0 * (250.0 / 3.0) / (75.0 + 250.0 / 3.0))
    got = (report.accuracy, report.precision, report.recall, report.f1)
    if not np.allclose(got, expected, atol=1e-9):
        return SuiteResult("metrics", False, f"hand tally mismatch: {got}", time.time() - start)
    for _ in range(200):
        yt, nt = int(rng.integers(0, 50)), int(rng.integers(0, 50))
        report = eval_mod.MetricsReport(
            yes_total=yt, yes_correct=int(rng.integers(0, yt + 1)),
            no_total=nt, no_correct=int(rng.integers(0, nt + 1)))
        pre, rec, f1 = report.precision, report.recall, report.f1
        if yt == 0 and pre is not None:
            return SuiteResult("metrics", False, "precision defined on empty stratum",
                               time.time() - start)
        if pre is not None and rec is not None and pre + rec > 0:
            if abs(f1 - 2 * pre * rec / (pre + rec)) > 1e-9:
                return SuiteResult("metrics", False, "harmonic identity violated",
                                   time.time() - start)
        if report.total:
            acc = 100.0 * (report.yes_correct + report.no_correct) / report.total
            if abs(report.accuracy - acc) > 1e-9:
                return SuiteResult("metrics", False, "accuracy identity violated",
                                   time.time() - start)
    return SuiteResult("metrics", True, "hand tally and identities hold", time.time() - start)


def run_all(fast: bool = True, seed: int = 0):
    """The full oracle battery; fast mode shrinks instance counts."""
    if fast:
        return [
            closed_form_suite(n_instances=40, grid_instances=8, seed=seed),
            gradient_suite(n_triples=30, seed=seed),
            stop_gradient_suite(n_steps=5, seed=seed),
            dataset_suite(n_pairs=300, n_seeds=1),
            pass_count_suite(n_steps=20, seed=seed),
            metrics_suite(seed=seed),
        ]
    return [
        closed_form_suite(seed=seed),
        gradient_suite(seed=seed),
        stop_gradient_suite(seed=seed),
        dataset_suite(n_pairs=2000, n_seeds=2),
        pass_count_suite(seed=seed),
        metrics_suite(seed=seed),
    ]
