"""Seeded synthetic cohort generator and corpus splitting.

Cohort construction
-------------------
Records live in latent clusters. Each cluster owns a diagnosis label set
and a volumetric profile (the "locator" features: eTIV, nWBV, regional
volumes, cortical thickness), so nearest neighbours in feature space are
overwhelmingly cluster mates. Label-bearing "signal" features (age, APOE
count, WMH load, GDS, MoCA dissociation) are drawn from per-label
signatures — except that a configurable fraction of records draws its
signal features from a decoy label set. Those records are recognizable
only through their neighbours, which makes retrieval informative by
construction.

Severity is label-independent: a CDR level is drawn per record and MMSE /
MoCA decline with it, so cognitive scores correlate with CDR across the
whole corpus.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .cases import CDR_LEVELS, CaseRecord, SubtypeLabel, make_record, validate_case
from .errors import BadConfig, BadRatios

_E, _L, _F, _S, _A = SubtypeLabel


def _label_pools() -> dict[int, list[frozenset]]:
    """All candidate label sets per cardinality.

    Early-onset and late-onset never co-occur (mutually exclusive onset
    descriptors), which keeps per-set feature signatures coherent.
    """
    def ok(combo):
        return not ({_E, _L} <= set(combo))

    return {
        1: [frozenset({lab}) for lab in SubtypeLabel],
        2: [frozenset(c) for c in combinations(SubtypeLabel, 2) if ok(c)],
        3: [frozenset(c) for c in combinations(SubtypeLabel, 3) if ok(c)],
    }


LABEL_POOLS = _label_pools()
ALL_LABEL_SETS = LABEL_POOLS[1] + LABEL_POOLS[2] + LABEL_POOLS[3]

# Locator features: (name, center_lo, center_hi, value_lo, value_hi, digits)
_LOCATORS = (
    ("etiv", 1150.0, 1850.0, 1000.0, 2000.0, 1),
    ("nwbv", 0.62, 0.86, 0.05, 0.99, 4),
    ("hippocampal_volume", 2.2, 4.6, 0.5, 6.0, 2),
    ("amygdala_volume", 1.0, 2.2, 0.2, 3.0, 2),
    ("ventricular_volume", 15.0, 55.0, 2.0, 90.0, 1),
    ("temporal_thickness", 2.0, 3.6, 1.0, 4.5, 2),
)

_CDR_PROBS = (0.25, 0.30, 0.25, 0.12, 0.08)
_MMSE_DROP = (0.0, 3.0, 8.0, 14.0, 20.0)


@dataclass(frozen=True)
class GeneratorConfig:
    n: int
    mix: tuple[float, float, float] = (0.6, 0.3, 0.1)  # single / double / triple
    noise: float = 1.0
    neighbor_only_fraction: float = 0.5
    cluster_size: int = 64
    cluster_spread: float = 0.05   # within-cluster locator sd, fraction of center range
    signal_jitter: float = 0.3     # within-cluster signal sd, fraction of signature sd
    optional_dropout: float = 0.03


# Cluster sites are even-parity corners of the locator hypercube: any two
# sites differ in at least two locator dimensions, which keeps volumetric
# profiles of different cohorts well separated even after z-scoring.
_CORNER_CODES = tuple(c for c in range(64) if bin(c).count("1") % 2 == 0)
_CORNER_LO, _CORNER_HI = 0.12, 0.88
MAX_CLUSTERS = len(_CORNER_CODES)


def _check_config(cfg: GeneratorConfig) -> None:
    if cfg.n <= 0:
        raise BadConfig(f"record count must be positive, got {cfg.n}")
    if len(cfg.mix) != 3 or any(m < 0 for m in cfg.mix):
        raise BadConfig(f"mix must be three non-negative shares, got {cfg.mix}")
    if abs(sum(cfg.mix) - 1.0) > 1e-9:
        raise BadConfig(f"mix must sum to 1, got sum {sum(cfg.mix)}")
    if cfg.noise <= 0:
        raise BadConfig("noise level must be positive")
    if not 0.0 <= cfg.neighbor_only_fraction <= 1.0:
        raise BadConfig("neighbor_only_fraction must be in [0, 1]")
    if cfg.cluster_size < 1:
        raise BadConfig("cluster_size must be >= 1")


def _quota(n: int, shares: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n items over shares (deterministic)."""
    raw = [n * s for s in shares]
    counts = [int(x) for x in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(shares)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def _signature(labels: frozenset) -> dict:
    """Distribution parameters of the label-bearing signal features."""
    if _E in labels:
        age = (54.0, 4.0, 45.0, 64.0)
    elif _L in labels:
        age = (80.0, 5.0, 65.0, 95.0)
    else:
        age = (66.0, 7.0, 40.0, 95.0)
    return {
        "age": age,
        "apoe_probs": (0.05, 0.25, 0.70) if _F in labels else (0.60, 0.35, 0.05),
        "wmh": (6.0, 1.2, 0.0, 12.0) if _S in labels else (2.0, 1.0, 0.0, 12.0),
        "gds": (11.0, 2.0, 0.0, 15.0) if _A in labels else (3.0, 2.0, 0.0, 15.0),
        "moca_shift": -4.0 if _A in labels else 0.0,
    }


def _draw_anchors(rng: np.random.Generator, labels: frozenset, noise: float) -> dict:
    """Cluster-level anchor values for the signal features."""
    sig = _signature(labels)
    anchors = {"apoe_probs": sig["apoe_probs"], "moca_shift": sig["moca_shift"]}
    for name in ("age", "wmh", "gds"):
        mean, sd, lo, hi = sig[name]
        anchors[name] = float(np.clip(rng.normal(mean, sd * noise), lo, hi))
    return anchors


def _draw_signal(
    rng: np.random.Generator, labels: frozenset, anchors: dict,
    noise: float, jitter: float,
) -> dict:
    """Record-level signal values: small jitter around the cluster anchor
    so the label signature is shared by feature-space neighbours."""
    sig = _signature(labels)
    out = {}
    for name in ("age", "wmh", "gds"):
        mean, sd, lo, hi = sig[name]
        value = float(np.clip(rng.normal(anchors[name], sd * jitter * noise), lo, hi))
        out[name] = value
    return {
        "age": round(out["age"], 1),
        "wmh_load": round(out["wmh"], 1),
        "gds": int(round(out["gds"])),
        "moca_shift": anchors["moca_shift"],
    }


def _draw_center(rng: np.random.Generator, corner_code: int) -> dict:
    center = {}
    for dim, (name, lo, hi, _, _, _) in enumerate(_LOCATORS):
        u = _CORNER_HI if corner_code & (1 << dim) else _CORNER_LO
        u += rng.uniform(-0.04, 0.04)
        center[name] = lo + u * (hi - lo)
    return center


def _draw_locators(
    rng: np.random.Generator, center: dict, spread: float, noise: float
) -> dict:
    out = {}
    for name, c_lo, c_hi, v_lo, v_hi, digits in _LOCATORS:
        sd = (c_hi - c_lo) * spread * noise
        value = float(np.clip(center[name] + rng.normal(0.0, sd), v_lo, v_hi))
        out[name] = round(value, digits)
    return out


def _allocate_clusters(cfg: GeneratorConfig, counts: list[int]) -> list[int]:
    """Clusters per cardinality class: proportional to record counts,
    capped by the number of distinct corner sites, at least one per
    non-empty class."""
    total = min(MAX_CLUSTERS, max(3, round(cfg.n / cfg.cluster_size)))
    shares = [c / cfg.n for c in counts]
    alloc = _quota(total, shares)
    for i, count in enumerate(counts):
        if count > 0 and alloc[i] == 0:
            alloc[i] = 1
            alloc[alloc.index(max(alloc))] -= 1
    return alloc


def generate_synthetic(cfg: GeneratorConfig, seed: int) -> list[CaseRecord]:
    """Generate a labelled cohort, deterministic given (cfg, seed)."""
    _check_config(cfg)
    rng = np.random.default_rng(seed)
    counts = _quota(cfg.n, cfg.mix)
    cluster_alloc = _allocate_clusters(cfg, counts)
    site_order = [int(i) for i in rng.permutation(MAX_CLUSTERS)]
    next_site = 0

    drafts = []  # (raw field map, gold label set)
    for class_index, count in enumerate(counts):
        if count == 0:
            continue
        pool = LABEL_POOLS[class_index + 1]
        n_clusters = max(1, cluster_alloc[class_index])
        clusters = []
        for _ in range(n_clusters):
            label_set = pool[int(rng.integers(len(pool)))]
            corner = _CORNER_CODES[site_order[next_site % MAX_CLUSTERS]]
            next_site += 1
            clusters.append({
                "labels": label_set,
                "center": _draw_center(rng, corner),
                "anchors": _draw_anchors(rng, label_set, cfg.noise),
                "cdr_idx": int(rng.choice(5, p=_CDR_PROBS)),
                "education": float(np.clip(rng.normal(13.0, 3.0), 2.0, 28.0)),
                "ses": int(rng.integers(5)),
                "apoe": None,  # filled below, depends on anchors
            })
            clusters[-1]["apoe"] = int(
                rng.choice(3, p=clusters[-1]["anchors"]["apoe_probs"])
            )

        for _ in range(count):
            cluster = clusters[int(rng.integers(n_clusters))]
            gold = cluster["labels"]

            scrambled = rng.random() < cfg.neighbor_only_fraction
            if scrambled:
                decoy = ALL_LABEL_SETS[int(rng.integers(len(ALL_LABEL_SETS)))]
                anchors = _draw_anchors(rng, decoy, cfg.noise)
                signal = _draw_signal(
                    rng, decoy, anchors, cfg.noise, cfg.signal_jitter
                )
                apoe = int(rng.choice(3, p=anchors["apoe_probs"]))
            else:
                signal = _draw_signal(
                    rng, gold, cluster["anchors"], cfg.noise, cfg.signal_jitter
                )
                apoe = cluster["apoe"]
                if rng.random() < 0.15:
                    apoe = int(rng.choice(3, p=cluster["anchors"]["apoe_probs"]))
            signal["apoe_e4_count"] = apoe
            moca_shift = signal.pop("moca_shift")

            wobble = int(rng.choice((-1, 0, 1), p=(0.10, 0.80, 0.10)))
            cdr_idx = int(np.clip(cluster["cdr_idx"] + wobble, 0, 4))
            mmse = int(np.clip(
                round(29.0 - _MMSE_DROP[cdr_idx] + rng.normal(0.0, 1.3 * cfg.noise)),
                0, 30,
            ))
            moca = int(np.clip(
                round(mmse - 1.5 + moca_shift + rng.normal(0.0, 1.2 * cfg.noise)),
                0, 30,
            ))

            ses = cluster["ses"]
            if rng.random() < 0.1:
                ses = int(np.clip(ses + rng.choice((-1, 1)), 0, 4))
            raw = {
                "mmse": mmse,
                "cdr": CDR_LEVELS[cdr_idx],
                "moca": moca,
                "gender": ["female", "male", "other"][
                    int(rng.choice(3, p=(0.49, 0.49, 0.02)))
                ],
                "handedness": ["left", "right", "ambi"][
                    int(rng.choice(3, p=(0.10, 0.88, 0.02)))
                ],
                "ses": str(1 + ses),
                "education": round(
                    float(np.clip(
                        rng.normal(cluster["education"], 1.0), 0.0, 30.0
                    )), 1,
                ),
            }
            raw.update(signal)
            raw.update(
                _draw_locators(rng, cluster["center"], cfg.cluster_spread, cfg.noise)
            )

            for name in ("gender", "handedness", "ses", "education", "moca", "gds"):
                if rng.random() < cfg.optional_dropout:
                    raw[name] = None

            drafts.append((raw, gold))

    order = rng.permutation(len(drafts))
    records = []
    for pos, idx in enumerate(order):
        raw, gold = drafts[int(idx)]
        raw["id"] = f"syn-{pos:05d}"
        records.append(make_record(validate_case(raw), gold))
    return records


def split_corpus(
    corpus: Sequence[CaseRecord],
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[list[CaseRecord], list[CaseRecord], list[CaseRecord]]:
    """Disjoint, exhaustive train/val/test split, stratified by the gold
    label-set cardinality class, deterministic given seed."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise BadRatios(f"ratios must be three positive shares, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must sum to 1, got sum {sum(ratios)}")

    rng = np.random.default_rng(seed)
    strata: dict[object, list[int]] = {}
    for i, record in enumerate(corpus):
        card = len(record.labels)
        key = card if 1 <= card <= 3 else "other"
        strata.setdefault(key, []).append(i)

    splits: tuple[list[int], ...] = ([], [], [])
    for key in sorted(strata, key=str):
        indices = strata[key]
        perm = rng.permutation(len(indices))
        shuffled = [indices[int(j)] for j in perm]
        counts = _quota(len(shuffled), ratios)
        start = 0
        for bucket, count in zip(splits, counts):
            bucket.extend(shuffled[start:start + count])
            start += count

    return tuple([corpus[i] for i in sorted(bucket)] for bucket in splits)
