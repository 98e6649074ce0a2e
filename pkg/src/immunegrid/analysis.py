"""Multiscale correlation analysis over event logs.

Pairs of event labels (``TK.kill``, ``IC.die``, ...) are tested for
spatiotemporal association: the statistic counts ordered event pairs within
a spatial radius and a forward time window, and is compared against a
permutation null that shuffles event times within each label class while
keeping positions fixed.  Significant pairs link events into composite
objects; composites become the events of the next, coarser scale with the
radius and window dilated by the scale factor.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .events import ActionEvent


@dataclass(frozen=True)
class AnalysisParams:
    r0: float = 3.0
    t0: float = 10.0
    alpha: float = 2.0
    permutations: int = 200
    significance: float = 0.05
    max_levels: int = 3
    min_label_count: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.r0 < 1 or self.t0 < 1 or self.permutations < 1:
            raise ValueError("r0, t0 and permutations must be >= 1")
        if self.alpha <= 1:
            raise ValueError("scale factor alpha must be > 1")
        if not (0 < self.significance < 1):
            raise ValueError("significance must be in (0,1)")
        if self.max_levels < 1:
            raise ValueError("max_levels must be >= 1")


@dataclass(frozen=True)
class PairResult:
    label_a: str
    label_b: str
    observed: int
    null_mean: float
    null_max: int
    p_value: float
    mean_lag: float

    @property
    def lag_sign(self) -> str:
        return "+" if self.mean_lag > 0 else "0"


@dataclass
class CompositeObject:
    level: int
    member_ids: tuple[int, ...]
    label: str
    x: float
    y: float
    z: float
    t_min: int
    t_max: int
    compartment: str

    @property
    def mid_time(self) -> float:
        return 0.5 * (self.t_min + self.t_max)


@dataclass
class ContextSignature:
    """Per-level sets of significant (label_a, label_b, lag sign) pairs."""

    levels: dict[int, list[PairResult]] = field(default_factory=dict)

    def pair_set(self, level: int) -> set[tuple[str, str, str]]:
        return {(r.label_a, r.label_b, r.lag_sign)
                for r in self.levels.get(level, [])}

    def all_levels(self) -> list[int]:
        return sorted(self.levels)

    def is_empty(self) -> bool:
        return all(not v for v in self.levels.values())

    def to_doc(self) -> dict:
        return {
            "levels": {
                str(k): [
                    {"a": r.label_a, "b": r.label_b, "lag": r.lag_sign,
                     "observed": r.observed, "null_mean": round(r.null_mean, 3),
                     "p": r.p_value}
                    for r in v
                ]
                for k, v in sorted(self.levels.items())
            }
        }


@dataclass
class _EventSet:
    """Events of one label at one level, as arrays."""
    ids: np.ndarray       # indices into the level's event list
    pos: np.ndarray       # (n, 3) float
    times: np.ndarray     # (n,) float
    tree: cKDTree


@dataclass
class _LevelEvent:
    event_id: int
    label: str
    compartment: str
    x: float
    y: float
    z: float
    t: float


def _group(events: Sequence[_LevelEvent]) -> dict[tuple[str, str], _EventSet]:
    """Group by (compartment, label); correlations stay within a compartment."""
    buckets: dict[tuple[str, str], list[_LevelEvent]] = defaultdict(list)
    for e in events:
        buckets[(e.compartment, e.label)].append(e)
    out = {}
    for key, evs in buckets.items():
        pos = np.array([[e.x, e.y, e.z] for e in evs], dtype=float)
        out[key] = _EventSet(
            ids=np.array([e.event_id for e in evs]),
            pos=pos,
            times=np.array([e.t for e in evs], dtype=float),
            tree=cKDTree(pos),
        )
    return out


def _spatial_pairs(a: _EventSet, b: _EventSet, radius: float,
                   same: bool) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (into a and b) within the radius; position-only, so the
    set is invariant under time permutation."""
    neighbor_lists = a.tree.query_ball_tree(b.tree, radius)
    ai, bj = [], []
    for i, lst in enumerate(neighbor_lists):
        for j in lst:
            if same and i == j:
                continue
            ai.append(i)
            bj.append(j)
    return np.array(ai, dtype=np.int64), np.array(bj, dtype=np.int64)


def pair_correlation(events: Sequence[ActionEvent] | Sequence[_LevelEvent],
                     label_a: str, label_b: str, radius: float, window: float,
                     permutations: int = 200, rng=None) -> PairResult:
    """Permutation test for one ordered label pair.

    observed = #{(a, b): same compartment, |pos_a - pos_b| <= radius,
    0 <= t_b - t_a <= window}; the null re-draws event times within each
    label class (positions fixed); p = (1 + #{null >= obs}) / (P + 1).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    level_events = _as_level_events(events)
    groups = _group(level_events)
    sets_a = {c: s for (c, l), s in groups.items() if l == label_a}
    sets_b = {c: s for (c, l), s in groups.items() if l == label_b}
    if not sets_a or not sets_b:
        return PairResult(label_a, label_b, 0, 0.0, 0, 1.0, 0.0)
    return _pair_test(sets_a, sets_b, label_a, label_b, radius, window,
                      permutations, rng)


def _pair_test(sets_a: dict, sets_b: dict, label_a: str, label_b: str,
               radius: float, window: float, permutations: int,
               rng) -> PairResult:
    same = label_a == label_b
    per_comp = []
    for comp in sorted(set(sets_a) & set(sets_b)):
        a, b = sets_a[comp], sets_b[comp]
        ai, bj = _spatial_pairs(a, b, radius, same)
        if ai.size:
            per_comp.append((a, b, ai, bj))
    if not per_comp:
        return PairResult(label_a, label_b, 0, 0.0, 0, 1.0, 0.0)

    def count(times_a_by_comp, times_b_by_comp) -> tuple[int, float]:
        total = 0
        lag_sum = 0.0
        for k, (a, b, ai, bj) in enumerate(per_comp):
            lags = times_b_by_comp[k][bj] - times_a_by_comp[k][ai]
            mask = (lags >= 0) & (lags <= window)
            total += int(mask.sum())
            lag_sum += float(lags[mask].sum())
        return total, lag_sum

    obs_a = [a.times for (a, b, ai, bj) in per_comp]
    obs_b = [b.times for (a, b, ai, bj) in per_comp]
    observed, lag_sum = count(obs_a, obs_b)
    null_ge = 0
    null_sum = 0.0
    null_max = 0
    for _ in range(permutations):
        perm_a = [rng.permutation(t) for t in obs_a]
        if same:
            perm_b = perm_a
        else:
            perm_b = [rng.permutation(t) for t in obs_b]
        n, _ = count(perm_a, perm_b)
        null_sum += n
        null_max = max(null_max, n)
        if n >= observed:
            null_ge += 1
    p = (1 + null_ge) / (permutations + 1)
    mean_lag = lag_sum / observed if observed else 0.0
    return PairResult(label_a, label_b, observed, null_sum / permutations,
                      null_max, p, mean_lag)


def significant_pairs(events: Sequence, params: AnalysisParams,
                      radius: Optional[float] = None,
                      window: Optional[float] = None,
                      rng=None) -> list[PairResult]:
    """All ordered label pairs whose Bonferroni-corrected p-value clears the
    significance level.  Same-label pairs are skipped: persistence of one
    activity is autocorrelation, not cooperation, and it would chain
    composition without bound."""
    if rng is None:
        rng = np.random.default_rng(params.seed)
    radius = params.r0 if radius is None else radius
    window = params.t0 if window is None else window
    level_events = _as_level_events(events)
    counts = Counter(e.label for e in level_events)
    labels = sorted(l for l, n in counts.items() if n >= params.min_label_count)
    groups = _group(level_events)
    by_label: dict[str, dict[str, _EventSet]] = defaultdict(dict)
    for (comp, label), s in groups.items():
        by_label[label][comp] = s
    tested = [(a, b) for a in labels for b in labels if a != b]
    m = len(tested)
    results = []
    for a, b in tested:
        r = _pair_test(by_label[a], by_label[b], a, b, radius, window,
                       params.permutations, rng)
        corrected = min(1.0, r.p_value * m)
        if corrected < params.significance and r.observed > 0:
            results.append(r)
    results.sort(key=lambda r: (r.p_value, r.label_a, r.label_b))
    return results


def compose_objects(events: Sequence, sig_pairs: Sequence[PairResult],
                    radius: float, window: float, level: int
                    ) -> list[CompositeObject]:
    """Connected components (size >= 2) of the event graph whose edges are
    significant label pairs within the distance/lag bounds."""
    level_events = _as_level_events(events)
    pair_keys = {(r.label_a, r.label_b) for r in sig_pairs}
    if not pair_keys:
        return []
    parent = list(range(len(level_events)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    groups = _group(level_events)
    by_label: dict[str, dict[str, _EventSet]] = defaultdict(dict)
    for (comp, label), s in groups.items():
        by_label[label][comp] = s
    for (la, lb) in sorted(pair_keys):
        for comp in sorted(set(by_label.get(la, {})) & set(by_label.get(lb, {}))):
            a, b = by_label[la][comp], by_label[lb][comp]
            ai, bj = _spatial_pairs(a, b, radius, la == lb)
            if not ai.size:
                continue
            lags = b.times[bj] - a.times[ai]
            mask = (lags >= 0) & (lags <= window)
            for i, j in zip(ai[mask], bj[mask]):
                union(int(a.ids[i]), int(b.ids[j]))

    components: dict[int, list[int]] = defaultdict(list)
    for i in range(len(level_events)):
        components[find(i)].append(i)
    out = []
    for members in components.values():
        if len(members) < 2:
            continue
        evs = [level_events[i] for i in members]
        label = "+".join(
            f"{l}x{n}" for l, n in sorted(Counter(e.label for e in evs).items())
        )
        out.append(CompositeObject(
            level=level,
            member_ids=tuple(sorted(e.event_id for e in evs)),
            label=label,
            x=float(np.mean([e.x for e in evs])),
            y=float(np.mean([e.y for e in evs])),
            z=float(np.mean([e.z for e in evs])),
            t_min=int(min(e.t for e in evs)),
            t_max=int(max(e.t for e in evs)),
            compartment=evs[0].compartment,
        ))
    out.sort(key=lambda c: (c.t_min, c.x, c.y, c.z, c.label))
    return out


def _as_level_events(events: Sequence) -> list[_LevelEvent]:
    out = []
    for i, e in enumerate(events):
        if isinstance(e, _LevelEvent):
            out.append(e)
        elif isinstance(e, CompositeObject):
            out.append(_LevelEvent(i, e.label, e.compartment,
                                   e.x, e.y, e.z, e.mid_time))
        else:
            out.append(_LevelEvent(i, e.analysis_label, e.compartment,
                                   float(e.x), float(e.y), float(e.z),
                                   float(e.tick)))
    return out


def multiscale_analyze(events: Sequence[ActionEvent],
                       params: AnalysisParams) -> ContextSignature:
    """Iterate pair testing and composition across scales.

    Level k+1 pairs are found among level-k events with radius r0*alpha^k
    and window t0*alpha^k; composites become the next level's events
    (position = centroid, time = interval midpoint, label = member label
    multiset).  Stops when nothing is significant or max_levels is reached.
    """
    rng = np.random.default_rng(params.seed)
    signature = ContextSignature()
    current: Sequence = list(events)
    for k in range(params.max_levels):
        radius = params.r0 * params.alpha ** k
        window = params.t0 * params.alpha ** k
        sig = significant_pairs(current, params, radius, window, rng=rng)
        signature.levels[k + 1] = sig
        if not sig:
            break
        composites = compose_objects(current, sig, radius, window, level=k + 1)
        if len(composites) < 2:
            break
        current = composites
    return signature


def compare_signatures(a: ContextSignature, b: ContextSignature) -> float:
    """Jaccard distance of pair sets averaged over levels present in either."""
    levels = sorted(set(k for k, v in a.levels.items() if v)
                    | set(k for k, v in b.levels.items() if v))
    if not levels:
        return 0.0
    total = 0.0
    for k in levels:
        pa, pb = a.pair_set(k), b.pair_set(k)
        union = pa | pb
        total += 1.0 - (len(pa & pb) / len(union)) if union else 0.0
    return total / len(levels)


def shuffle_events(events: Sequence[ActionEvent], seed: int) -> list[ActionEvent]:
    """Null-model log: permute event times within each label class."""
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = defaultdict(list)
    for i, e in enumerate(events):
        by_label[e.analysis_label].append(i)
    new_ticks: dict[int, int] = {}
    for label in sorted(by_label):
        idx = by_label[label]
        ticks = [events[i].tick for i in idx]
        perm = rng.permutation(len(idx))
        for slot, i in enumerate(idx):
            new_ticks[i] = ticks[perm[slot]]
    out = []
    for i, e in enumerate(events):
        out.append(ActionEvent(new_ticks[i], e.compartment, e.x, e.y, e.z,
                               e.cell_id, e.clone_id, e.label, e.kind,
                               e.target, e.level))
    out.sort(key=lambda e: e.tick)
    return out
