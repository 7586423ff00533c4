"""Seeded generators for the benchmark simulation scenarios.

Every scenario draws x with i.i.d. uniform(0,1) entries and normalizes
each column to z-scores (mean zero, unit variance; the convention of
standard numerical software, and the only scaling under which a unit
effect is recoverable at these dimensions), picks the relevant set
uniformly without replacement, gives every relevant variable the same
effect, samples u ~ N(0, D) and noise ~ N(0, noise_variance * I), and
builds z from a per-scenario recipe:

* ``uniform_blocks``: observations fall into row groups; each variance
  component contributes a fixed number of columns per row group, filled
  with uniform(0,1) values on that group's rows (block-diagonal up to
  column ordering).
* ``membership``: one 0/1 column per row group (z[i, g] = 1 iff
  observation i belongs to group g), split into components by the group
  structure.
* ``type_library``: each observation is assigned one "type" per component
  from a small library of type vectors (rows of z repeat library
  entries).  This is the q > n design; its unprojected random-effect
  noise drowns methods that ignore z.

Streams are counter-based (Philox) and keyed by (master_seed, replicate,
stream tag), so replicates are reproducible under any parallel schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from .exceptions import UnknownScenario
from .model import GroupStructure, LmmProblem

RNG_ALGORITHM = "philox4x64/numpy-seedsequence(master_seed,replicate,stream)"

STREAM_X = 0
STREAM_SUPPORT = 1
STREAM_Z = 2
STREAM_U = 3
STREAM_EPS = 4

PSD_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class ScenarioSpec:
    """Fully parameterized description of one simulation scenario."""

    name: str
    n: int
    p: int
    q: int
    group_sizes: tuple[int, ...]
    s0: int
    noise_variance: float
    master_seed: int
    z_builder: str
    d_builder: str
    obs_groups: int = 0
    effect: float = 1.0

    def __post_init__(self) -> None:
        if self.s0 > self.p or self.s0 < 0:
            raise ValueError(f"s0={self.s0} must lie in [0, p={self.p}]")
        if sum(self.group_sizes) != self.q:
            raise ValueError("group_sizes must sum to q")


@dataclass(frozen=True, eq=False)
class GeneratedInstance:
    """One generated problem plus the ground truth used to score it."""

    problem: LmmProblem
    true_beta: NDArray
    true_support: tuple[int, ...]
    true_u: NDArray
    noise: NDArray
    d_matrix: NDArray
    d_adjusted: bool
    spec: ScenarioSpec
    replicate: int

    @property
    def true_support_set(self) -> frozenset[int]:
        return frozenset(self.true_support)


_REGISTRY: dict[str, dict] = {
    # 20 row groups of 6, two uniform variables per group, u ~ N(0, 2I).
    "fig1": dict(
        n=120, p=150, q=40, group_sizes=(20, 20), obs_groups=20,
        z_builder="uniform_blocks", d_builder="scaled_identity:2",
        noise_variance=1.0,
    ),
    # 20 row groups of 10, 0/1 membership design, one variance component.
    "fig2": dict(
        n=200, p=5000, q=20, group_sizes=(20,), obs_groups=20,
        z_builder="membership", d_builder="scaled_identity:1",
        noise_variance=0.2,
    ),
    # Membership design with 40 groups; D grows in complexity by case.
    "figD2_case1": dict(
        n=200, p=5000, q=40, group_sizes=(20, 20), obs_groups=40,
        z_builder="membership", d_builder="scaled_identity:1",
        noise_variance=0.2, s0=10,
    ),
    "figD2_case2": dict(
        n=200, p=5000, q=40, group_sizes=(20, 20), obs_groups=40,
        z_builder="membership", d_builder="halves_diag:2,0.8",
        noise_variance=0.2, s0=10,
    ),
    "figD2_case3": dict(
        n=200, p=5000, q=40, group_sizes=(20, 20), obs_groups=40,
        z_builder="membership", d_builder="banded:2,0.8;0.9",
        noise_variance=0.2, s0=10,
    ),
    "figD2_case4": dict(
        n=200, p=5000, q=40, group_sizes=(20, 20), obs_groups=40,
        z_builder="membership", d_builder="banded:2,0.8;0.9,0.8,0.7",
        noise_variance=0.2, s0=10,
    ),
    "figD2_case5": dict(
        n=200, p=5000, q=40, group_sizes=(20, 20), obs_groups=40,
        z_builder="membership", d_builder="block_filled:2,0.8;0.8",
        noise_variance=0.2, s0=10,
    ),
    # 20 row groups of 10, three uniform variables per group.
    "fig3": dict(
        n=200, p=10_000, q=60, group_sizes=(20, 20, 20), obs_groups=20,
        z_builder="uniform_blocks", d_builder="per_group:1,1.2,0.8",
        noise_variance=0.1,
    ),
    "fig4": dict(
        n=200, p=10_000, q=60, group_sizes=(20, 20, 20), obs_groups=20,
        z_builder="uniform_blocks", d_builder="per_group:2,4,0.5",
        noise_variance=0.1,
    ),
    # q > n: 50 soil types over 200 substances, 20 weather types over a
    # 200-day series (mildly smoothed), one type of each per observation.
    "fig5": dict(
        n=200, p=2000, q=400, group_sizes=(200, 200), obs_groups=0,
        z_builder="type_library:50/0,20/5;1.5", d_builder="scaled_identity:1",
        noise_variance=0.2,
    ),
}

SCENARIO_NAMES = tuple(_REGISTRY)


def scenario(name: str, *, s0: int | None = None, master_seed: int = 0, **overrides) -> ScenarioSpec:
    """Build a ScenarioSpec from registry defaults plus overrides.

    ``s0`` is required unless the scenario fixes a default.  Overridable
    fields: n, p, noise_variance, effect (q and the z/D recipes are part
    of the scenario's identity).
    """
    if name not in _REGISTRY:
        raise UnknownScenario(
            f"unknown scenario {name!r}; expected one of {sorted(_REGISTRY)}"
        )
    params = dict(_REGISTRY[name])
    if s0 is not None:
        params["s0"] = s0
    if "s0" not in params:
        raise ValueError(f"scenario {name!r} needs an explicit s0")
    allowed = {"n", "p", "noise_variance", "effect", "s0"}
    bad = set(overrides) - allowed
    if bad:
        raise ValueError(f"cannot override {sorted(bad)}")
    params.update(overrides)
    return ScenarioSpec(name=name, master_seed=int(master_seed), **params)


def with_n(spec: ScenarioSpec, n: int) -> ScenarioSpec:
    """Same scenario at a different number of observations."""
    return replace(spec, n=int(n))


def _stream(spec: ScenarioSpec, replicate: int, stream: int) -> np.random.Generator:
    seq = np.random.SeedSequence((spec.master_seed & 0xFFFFFFFFFFFFFFFF, replicate, stream))
    return np.random.Generator(np.random.Philox(seq))


def observation_groups(n: int, k: int) -> list[NDArray]:
    """Split row indices 0..n-1 into k contiguous groups, near-equal sizes."""
    bounds = np.linspace(0, n, k + 1).round().astype(int)
    return [np.arange(bounds[i], bounds[i + 1]) for i in range(k)]


def _build_z(spec: ScenarioSpec, rng: np.random.Generator) -> NDArray:
    kind, _, arg = spec.z_builder.partition(":")
    n = spec.n
    if kind == "uniform_blocks":
        if any(s % spec.obs_groups for s in spec.group_sizes):
            raise ValueError(
                "uniform_blocks needs a whole number of columns per row group "
                "per component"
            )
        rows = observation_groups(n, spec.obs_groups)
        z = np.zeros((n, spec.q))
        offset = 0
        for size in spec.group_sizes:
            per_group = size // spec.obs_groups
            for g, idx in enumerate(rows):
                start = offset + g * per_group
                z[idx, start : start + per_group] = rng.random((idx.size, per_group))
            offset += size
        return z
    if kind == "membership":
        if spec.obs_groups != spec.q:
            raise ValueError("membership needs exactly one column per row group")
        rows = observation_groups(n, spec.q)
        z = np.zeros((n, spec.q))
        for g, idx in enumerate(rows):
            z[idx, g] = 1.0
        return z
    if kind == "type_library":
        arg, _, scale_part = arg.partition(";")
        scale = float(scale_part) if scale_part else 1.0
        pairs = [tuple(int(v) for v in part.split("/")) for part in arg.split(",")]
        if len(pairs) != len(spec.group_sizes):
            raise ValueError("one count/smoothing pair per component required")
        blocks = []
        for (count, smooth), size in zip(pairs, spec.group_sizes):
            if smooth > 1:
                raw = rng.random((count, size + smooth - 1))
                kernel = np.full(smooth, 1.0 / smooth)
                types = np.apply_along_axis(
                    lambda r: np.convolve(r, kernel, mode="valid"), 1, raw
                )
            else:
                types = rng.random((count, size))
            assignment = rng.integers(0, count, n)
            blocks.append(types[assignment])
        return scale * np.hstack(blocks)
    raise UnknownScenario(f"unknown z builder {spec.z_builder!r}")


def build_d_matrix(spec: ScenarioSpec) -> tuple[NDArray, bool]:
    """Materialize the random-effect covariance; clamp to PSD if needed.

    Returns (d, adjusted).  ``adjusted`` is True when the recipe produced
    an indefinite matrix whose negative eigenvalues were clamped to zero
    (the banded recipes can be indefinite); the returned matrix is then
    the clamped PSD version actually used for sampling.
    """
    kind, _, arg = spec.d_builder.partition(":")
    q = spec.q
    if kind == "scaled_identity":
        return float(arg) * np.eye(q), False
    if kind == "per_group":
        variances = [float(v) for v in arg.split(",")]
        if len(variances) != len(spec.group_sizes):
            raise ValueError("per_group needs one variance per component")
        diag = np.concatenate(
            [np.full(s, v) for v, s in zip(variances, spec.group_sizes)]
        )
        return np.diag(diag), False
    if kind == "halves_diag":
        hi, lo = (float(v) for v in arg.split(","))
        return np.diag(_halves(q, hi, lo)), False
    if kind == "banded":
        diag_part, _, band_part = arg.partition(";")
        hi, lo = (float(v) for v in diag_part.split(","))
        d = np.diag(_halves(q, hi, lo))
        for offset, value in enumerate(float(v) for v in band_part.split(",")):
            idx = np.arange(q - offset - 1)
            d[idx, idx + offset + 1] = value
            d[idx + offset + 1, idx] = value
        return _clamp_psd(d)
    if kind == "block_filled":
        diag_part, _, fill_part = arg.partition(";")
        hi, lo = (float(v) for v in diag_part.split(","))
        fill = float(fill_part)
        d = np.zeros((q, q))
        half = q // 2
        d[:half, :half] = fill
        d[half:, half:] = fill
        np.fill_diagonal(d, _halves(q, hi, lo))
        return _clamp_psd(d)
    raise UnknownScenario(f"unknown D builder {spec.d_builder!r}")


def _halves(q: int, hi: float, lo: float) -> NDArray:
    out = np.full(q, lo)
    out[: q // 2] = hi
    return out


def _clamp_psd(d: NDArray) -> tuple[NDArray, bool]:
    vals, vecs = np.linalg.eigh(d)
    norm = float(np.abs(vals).max()) if vals.size else 0.0
    if vals.size == 0 or vals.min() >= -PSD_CLAMP_TOL * max(norm, 1.0):
        return d, False
    clamped = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return 0.5 * (clamped + clamped.T), True


def generate(spec: ScenarioSpec, replicate: int = 0) -> GeneratedInstance:
    """Draw one instance; bit-identical for identical (spec, replicate)."""
    n, p, q = spec.n, spec.p, spec.q

    x = _stream(spec, replicate, STREAM_X).random((n, p))
    x -= x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0.0] = 1.0
    x /= sd

    support = _stream(spec, replicate, STREAM_SUPPORT).choice(p, size=spec.s0, replace=False)
    support = np.sort(support)
    true_beta = np.zeros(p)
    true_beta[support] = spec.effect

    z = _build_z(spec, _stream(spec, replicate, STREAM_Z))

    d_matrix, adjusted = build_d_matrix(spec)
    vals, vecs = np.linalg.eigh(d_matrix)
    vals = np.maximum(vals, 0.0)
    true_u = vecs @ (np.sqrt(vals) * _stream(spec, replicate, STREAM_U).standard_normal(q))

    eps = _stream(spec, replicate, STREAM_EPS).standard_normal(n) * np.sqrt(
        spec.noise_variance
    )
    y = x @ true_beta + z @ true_u + eps

    problem = LmmProblem(y=y, x=x, z=z, groups=GroupStructure(spec.group_sizes))
    return GeneratedInstance(
        problem=problem,
        true_beta=true_beta,
        true_support=tuple(int(j) for j in support),
        true_u=true_u,
        noise=eps,
        d_matrix=d_matrix,
        d_adjusted=adjusted,
        spec=spec,
        replicate=replicate,
    )


def exact_recovery(path, true_support) -> bool:
    """True iff some grid point's support equals the true set exactly."""
    target = frozenset(int(j) for j in true_support)
    return any(fit.support_set == target for fit in path.fits)
