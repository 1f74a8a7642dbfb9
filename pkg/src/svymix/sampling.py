"""Informative and control survey designs over a generated population.

Two informative designs are provided: single-stage probability-proportional-
to-size (PPS) sampling of units, under which groups enter the sample only
through their members (indirect), and two-stage sampling that first takes a
PPS sample of groups and then a PPS subsample of units within each selected
group (direct).  Equal-probability analogs of both serve as non-informative
controls.  All PPS draws use randomized-order systematic sampling, which
realizes the target size exactly and has exact first-order inclusion
probabilities.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ConfigError, DesignError
from .population import Population
from .rng import substream

__all__ = [
    "DesignSpec",
    "SurveySample",
    "unit_inclusion_probs",
    "draw_single_stage_pps",
    "draw_two_stage_pps",
    "draw_srs",
    "draw_sample",
]

_KINDS = ("pps_single", "pps_two_stage", "srs_single", "srs_two_stage")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class DesignSpec:
    """A sampling design: kind, target size n, within-group fraction f.

    ``f`` applies to the two-stage kinds only.  For those, the number of
    first-stage groups is G_S = round(n / (N f) * G_U), rounding half up.
    """

    kind: str
    n: int
    f: float | None = None
    seed: int = 0

    def validate(self, N: int, G_U: int | None = None) -> None:
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown design kind {self.kind!r}; expected one of {_KINDS}")
        if not 0 < self.n <= N:
            raise ConfigError(f"need 0 < n <= N, got n={self.n}, N={N}")
        if self.is_two_stage:
            if self.f is None or not 0 < self.f <= 1:
                raise ConfigError(f"two-stage designs need 0 < f <= 1, got f={self.f}")
            if G_U is not None and self.n_groups(N, G_U) < 1:
                raise ConfigError(
                    f"G_S = round(n/(N f) G_U) = {self.n_groups(N, G_U)} must be >= 1"
                )

    @property
    def is_two_stage(self) -> bool:
        return self.kind in ("pps_two_stage", "srs_two_stage")

    def n_groups(self, N: int, G_U: int) -> int:
        return _round_half_up(self.n / (N * self.f) * G_U)

    def srs_analog(self) -> "DesignSpec":
        """The equal-probability control with the same size parameters."""
        kind = "srs_two_stage" if self.is_two_stage else "srs_single"
        return replace(self, kind=kind)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "f": self.f, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DesignSpec":
        return cls(**d)


@dataclass(frozen=True)
class SurveySample:
    """Observed units grouped by observed group, with inclusion probabilities.

    Unit-level arrays are aligned with each other; ``group`` holds 0-based
    indices into the group-level arrays.  ``pi_g`` is present only for direct
    (two-stage) designs; ``pi_cond`` is NaN-free exactly when ``pi_g`` is
    present, and then pi_marg = pi_g * pi_cond holds unit by unit.  ``N_g``
    is copied from the population; mask it with :meth:`without_group_sizes`
    to mimic designs where population group sizes are unknown.
    """

    # unit level
    y: np.ndarray
    x1: np.ndarray
    group: np.ndarray
    pi_cond: np.ndarray
    pi_marg: np.ndarray
    w_marg: np.ndarray
    # group level
    h: np.ndarray
    N_g: np.ndarray | None
    pi_g: np.ndarray | None
    design: DesignSpec

    def __post_init__(self):
        if np.any(self.pi_marg <= 0) or np.any(self.pi_marg > 1):
            raise DesignError("pi_marg must lie in (0, 1]")
        if np.any(self.w_marg <= 0):
            raise DesignError("w_marg must be positive")
        if np.any(np.bincount(self.group, minlength=self.n_groups) < 1):
            raise DesignError("every observed group must contain at least one unit")

    @property
    def n_total(self) -> int:
        return self.y.shape[0]

    @property
    def n_groups(self) -> int:
        return self.h.shape[0]

    @property
    def is_direct(self) -> bool:
        return self.pi_g is not None

    @property
    def group_counts(self) -> np.ndarray:
        return np.bincount(self.group, minlength=self.n_groups)

    def without_group_sizes(self) -> "SurveySample":
        return replace(self, N_g=None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["g", "h", "y", "x1", "pi_g", "pi_cond", "pi_marg", "w_marg"])
        for i in range(self.n_total):
            gi = int(self.group[i])
            pig = "" if self.pi_g is None else repr(float(self.pi_g[gi]))
            pic = "" if np.isnan(self.pi_cond[i]) else repr(float(self.pi_cond[i]))
            w.writerow(
                [gi + 1, int(self.h[gi]), repr(float(self.y[i])), repr(float(self.x1[i])),
                 pig, pic, repr(float(self.pi_marg[i])), repr(float(self.w_marg[i]))]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, design: DesignSpec | None = None) -> "SurveySample":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise DesignError("empty sample CSV")
        g = np.array([int(r["g"]) for r in rows]) - 1
        n_groups = g.max() + 1
        h = np.zeros(n_groups, dtype=int)
        pi_g = np.full(n_groups, np.nan)
        for r, gi in zip(rows, g):
            h[gi] = int(r["h"])
            if r.get("pi_g"):
                pi_g[gi] = float(r["pi_g"])
        has_pig = not np.all(np.isnan(pi_g))
        return cls(
            y=np.array([float(r["y"]) for r in rows]),
            x1=np.array([float(r["x1"]) for r in rows]),
            group=g,
            pi_cond=np.array([float(r["pi_cond"]) if r.get("pi_cond") else np.nan for r in rows]),
            pi_marg=np.array([float(r["pi_marg"]) for r in rows]),
            w_marg=np.array([float(r["w_marg"]) for r in rows]),
            h=h,
            N_g=None,
            pi_g=pi_g if has_pig else None,
            design=design if design is not None else DesignSpec("pps_single", n=len(rows)),
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "design": self.design.to_dict(),
                "y": self.y.tolist(),
                "x1": self.x1.tolist(),
                "group": self.group.tolist(),
                "pi_cond": [None if np.isnan(v) else v for v in self.pi_cond],
                "pi_marg": self.pi_marg.tolist(),
                "w_marg": self.w_marg.tolist(),
                "h": self.h.tolist(),
                "N_g": None if self.N_g is None else self.N_g.tolist(),
                "pi_g": None if self.pi_g is None else self.pi_g.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SurveySample":
        d = json.loads(text)
        return cls(
            y=np.array(d["y"], dtype=float),
            x1=np.array(d["x1"], dtype=float),
            group=np.array(d["group"], dtype=int),
            pi_cond=np.array([np.nan if v is None else v for v in d["pi_cond"]], dtype=float),
            pi_marg=np.array(d["pi_marg"], dtype=float),
            w_marg=np.array(d["w_marg"], dtype=float),
            h=np.array(d["h"], dtype=int),
            N_g=None if d["N_g"] is None else np.array(d["N_g"], dtype=float),
            pi_g=None if d["pi_g"] is None else np.array(d["pi_g"], dtype=float),
            design=DesignSpec.from_dict(d["design"]),
        )


def unit_inclusion_probs(size: np.ndarray, n: int) -> np.ndarray:
    """Size-proportional inclusion probabilities summing to n, capped at 1.

    pi_i = n * size_i / sum(size), with certainty units (pi >= 1) fixed at 1
    and the excess redistributed proportionally over the remaining units
    until all probabilities lie in (0, 1] and they sum to n.
    """
    size = np.asarray(size, dtype=float)
    N = size.shape[0]
    if n > N:
        raise DesignError(f"cannot sample n={n} from {N} units")
    if np.any(size <= 0):
        raise DesignError("size variable must be positive")
    pi = np.zeros(N)
    capped = np.zeros(N, dtype=bool)
    while True:
        free = ~capped
        remaining = n - capped.sum()
        if remaining <= 0:
            break
        pi[free] = remaining * size[free] / size[free].sum()
        over = free & (pi >= 1.0)
        if not over.any():
            break
        capped |= over
    pi[capped] = 1.0
    return pi


def _systematic_pps(rng, pi: np.ndarray) -> np.ndarray:
    """Randomized-order systematic sampling; returns selected indices.

    Realized size equals round(sum(pi)) for every random start, and the
    first-order inclusion probability of unit i is exactly pi_i.
    """
    n = _round_half_up(float(pi.sum()))
    perm = rng.permutation(pi.shape[0])
    cum = np.cumsum(pi[perm])
    points = rng.uniform() + np.arange(n)
    idx = np.searchsorted(cum, points, side="left")
    idx = np.minimum(idx, pi.shape[0] - 1)
    return np.sort(perm[idx])


def _observed_groups(pop: Population, unit_idx: np.ndarray):
    h_units = pop.h[unit_idx]
    h_obs, group = np.unique(h_units, return_inverse=True)
    return h_obs, group


def draw_single_stage_pps(pop: Population, spec: DesignSpec) -> SurveySample:
    """Single-stage PPS of units with pi_i proportional to x2 (indirect)."""
    if spec.kind != "pps_single":
        raise ConfigError(f"expected kind 'pps_single', got {spec.kind!r}")
    spec.validate(pop.N)
    pi = unit_inclusion_probs(pop.x2, spec.n)
    rng = substream(spec.seed, "design", spec.kind)
    idx = _systematic_pps(rng, pi)
    h_obs, group = _observed_groups(pop, idx)
    pim = pi[idx]
    return SurveySample(
        y=pop.y[idx],
        x1=pop.x1[idx],
        group=group,
        pi_cond=np.full(idx.shape[0], np.nan),
        pi_marg=pim,
        w_marg=1.0 / pim,
        h=h_obs,
        N_g=pop.group_sizes[h_obs - 1].astype(float),
        pi_g=None,
        design=spec,
    )


def draw_two_stage_pps(pop: Population, spec: DesignSpec) -> SurveySample:
    """Two-stage design: PPS of groups by mean x2, then PPS of units within.

    Requires fixed group sizes.  Emits group inclusion probabilities pi_g,
    conditional unit probabilities pi_cond, and their product pi_marg.
    """
    if spec.kind != "pps_two_stage":
        raise ConfigError(f"expected kind 'pps_two_stage', got {spec.kind!r}")
    if pop.config.group_size_mode != "fixed":
        raise ConfigError("two-stage group sampling requires fixed group sizes")
    spec.validate(pop.N, pop.G_U)
    G_S = spec.n_groups(pop.N, pop.G_U)
    if G_S > pop.G_U:
        raise ConfigError(f"G_S={G_S} exceeds G_U={pop.G_U}")
    starts = pop.group_slices()
    mean_x2 = np.add.reduceat(pop.x2, starts[:-1]) / pop.group_sizes
    pi_h = unit_inclusion_probs(mean_x2, G_S)

    rng = substream(spec.seed, "design", spec.kind)
    g_idx = _systematic_pps(rng, pi_h)

    takes = np.array([_round_half_up(spec.f * pop.group_sizes[g]) for g in g_idx])
    if np.any(takes < 1):
        raise DesignError(
            f"within-group take f*N_g rounds to zero for some group (f={spec.f}); use a larger f"
        )

    unit_rows, pi_cond_rows, group_rows = [], [], []
    for k, g in enumerate(g_idx):
        lo, hi = starts[g], starts[g + 1]
        x2_g = pop.x2[lo:hi]
        pic = unit_inclusion_probs(x2_g, takes[k])
        sel = _systematic_pps(rng, pic)
        unit_rows.append(lo + sel)
        pi_cond_rows.append(pic[sel])
        group_rows.append(np.full(sel.shape[0], k))

    idx = np.concatenate(unit_rows)
    pic = np.concatenate(pi_cond_rows)
    group = np.concatenate(group_rows)
    pig_units = pi_h[g_idx][group]
    pim = pig_units * pic
    return SurveySample(
        y=pop.y[idx],
        x1=pop.x1[idx],
        group=group,
        pi_cond=pic,
        pi_marg=pim,
        w_marg=1.0 / pim,
        h=g_idx + 1,
        N_g=pop.group_sizes[g_idx].astype(float),
        pi_g=pi_h[g_idx],
        design=spec,
    )


def draw_srs(pop: Population, spec: DesignSpec) -> SurveySample:
    """Equal-probability analogs: SRS of units, or SRS of groups then units."""
    rng = substream(spec.seed, "design", spec.kind)
    if spec.kind == "srs_single":
        spec.validate(pop.N)
        idx = np.sort(rng.choice(pop.N, size=spec.n, replace=False))
        h_obs, group = _observed_groups(pop, idx)
        pim = np.full(idx.shape[0], spec.n / pop.N)
        return SurveySample(
            y=pop.y[idx],
            x1=pop.x1[idx],
            group=group,
            pi_cond=np.full(idx.shape[0], np.nan),
            pi_marg=pim,
            w_marg=1.0 / pim,
            h=h_obs,
            N_g=pop.group_sizes[h_obs - 1].astype(float),
            pi_g=None,
            design=spec,
        )
    if spec.kind != "srs_two_stage":
        raise ConfigError(f"draw_srs expects an SRS design, got {spec.kind!r}")
    if pop.config.group_size_mode != "fixed":
        raise ConfigError("two-stage group sampling requires fixed group sizes")
    spec.validate(pop.N, pop.G_U)
    G_S = spec.n_groups(pop.N, pop.G_U)
    g_idx = np.sort(rng.choice(pop.G_U, size=G_S, replace=False))
    starts = pop.group_slices()
    unit_rows, pi_cond_rows, group_rows = [], [], []
    for k, g in enumerate(g_idx):
        lo, hi = starts[g], starts[g + 1]
        take = _round_half_up(spec.f * (hi - lo))
        if take < 1:
            raise DesignError(f"within-group take f*N_g rounds to zero (f={spec.f})")
        sel = np.sort(rng.choice(hi - lo, size=take, replace=False))
        unit_rows.append(lo + sel)
        pi_cond_rows.append(np.full(take, take / (hi - lo)))
        group_rows.append(np.full(take, k))
    idx = np.concatenate(unit_rows)
    pic = np.concatenate(pi_cond_rows)
    group = np.concatenate(group_rows)
    pig = np.full(G_S, G_S / pop.G_U)
    pim = pig[group] * pic
    return SurveySample(
        y=pop.y[idx],
        x1=pop.x1[idx],
        group=group,
        pi_cond=pic,
        pi_marg=pim,
        w_marg=1.0 / pim,
        h=g_idx + 1,
        N_g=pop.group_sizes[g_idx].astype(float),
        pi_g=pig,
        design=spec,
    )


def draw_sample(pop: Population, spec: DesignSpec) -> SurveySample:
    """Dispatch on the design kind."""
    if spec.kind == "pps_single":
        return draw_single_stage_pps(pop, spec)
    if spec.kind == "pps_two_stage":
        return draw_two_stage_pps(pop, spec)
    return draw_srs(pop, spec)
