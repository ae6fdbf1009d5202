"""Synthetic dataset factory.

A full-resolution reference cube is unmixed into endmember spectra and
per-pixel abundances, a change is injected on the abundances under one of
three rules (material removal, substitution or relocation), latent image
pairs are re-mixed, and heterogeneous observations are simulated through
the degradation operators.  Reference cubes are generated procedurally
(smooth simplex abundance fields over smooth nonnegative spectra, with a
few pure patches planted per material) so everything runs without
external data; real cubes can be supplied through the HSC1 format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import BinaryMap, HyperImage, make_rng, derive_seed
from .io import read_cube, read_map, write_cube, write_map
from .operators import DegradationPair

CHANGE_RULES = ("zero", "same", "block")


# ---------------------------------------------------------------------------
# Procedural reference cubes
# ---------------------------------------------------------------------------


def _smooth_spectra(bands: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k smooth nonnegative spectra (bands, k): random Gaussian bumps on a floor."""
    t = np.linspace(0.0, 1.0, bands)
    m = np.empty((bands, k))
    for j in range(k):
        curve = np.full(bands, 0.08)
        for _ in range(rng.integers(2, 5)):
            center = rng.uniform(0.0, 1.0)
            widthb = rng.uniform(0.08, 0.35)
            amp = rng.uniform(0.3, 1.0)
            curve = curve + amp * np.exp(-0.5 * ((t - center) / widthb) ** 2)
        m[:, j] = curve
    return m / m.max()


def _smooth_fields(k: int, rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """k smooth positive fields (k, rows*cols) via bilinear upsampling of a
    coarse random grid."""
    gr = max(rows // 8, 2)
    gc = max(cols // 8, 2)
    fields = np.empty((k, rows, cols))
    rr = np.linspace(0, gr - 1, rows)
    cc = np.linspace(0, gc - 1, cols)
    r0 = np.minimum(rr.astype(int), gr - 2)
    c0 = np.minimum(cc.astype(int), gc - 2)
    fr = (rr - r0)[:, None]
    fc = (cc - c0)[None, :]
    for j in range(k):
        grid = rng.uniform(0.05, 1.0, size=(gr, gc)) ** 2
        a = grid[np.ix_(r0, c0)]
        b = grid[np.ix_(r0, c0 + 1)]
        c = grid[np.ix_(r0 + 1, c0)]
        d = grid[np.ix_(r0 + 1, c0 + 1)]
        fields[j] = (a * (1 - fr) * (1 - fc) + b * (1 - fr) * fc
                     + c * fr * (1 - fc) + d * fr * fc)
    return fields.reshape(k, -1)


REF_AMPLITUDE = 100.0  # radiance-count scale of the procedural cubes


def make_reference(bands: int, rows: int, cols: int, k: int, seed,
                   amplitude: float = REF_AMPLITUDE) -> HyperImage:
    """Procedural reference cube: simplex abundance mixture of k smooth
    spectra, with one small pure patch planted per material so pure-pixel
    endmember selection has support.

    The amplitude puts values on a sensor-count scale comparable to real
    radiance cubes; the loss-term balance of downstream training assumes
    data on roughly this scale.
    """
    rng = make_rng(seed)
    m = amplitude * _smooth_spectra(bands, k, rng)
    a = _smooth_fields(k, rows, cols, rng)
    a /= a.sum(axis=0, keepdims=True)
    a = a.reshape(k, rows, cols)
    patch = 2
    for j in range(k):
        r = int(rng.integers(0, rows - patch + 1))
        c = int(rng.integers(0, cols - patch + 1))
        a[:, r : r + patch, c : c + patch] = 0.0
        a[j, r : r + patch, c : c + patch] = 1.0
    cube = (m @ a.reshape(k, -1)).reshape(bands, rows, cols)
    return HyperImage(cube)


# ---------------------------------------------------------------------------
# Unmixing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnmixModel:
    """Endmember spectra (m, k) and simplex abundances (k, n)."""

    endmembers: np.ndarray
    abundances: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.endmembers, dtype=np.float64)
        a = np.asarray(self.abundances, dtype=np.float64)
        if m.ndim != 2 or a.ndim != 2 or m.shape[1] != a.shape[0]:
            raise ValueError("endmembers (m,k) and abundances (k,n) must be conformable")
        if m.min() < 0:
            raise ValueError("endmembers must be nonnegative")
        if a.min() < -1e-12:
            raise ValueError("abundances must be nonnegative")
        s = a.sum(axis=0)
        if np.abs(s - 1.0).max() > 1e-6:
            raise ValueError("abundance columns must sum to 1 within 1e-6")
        object.__setattr__(self, "endmembers", m)
        object.__setattr__(self, "abundances", a)

    @property
    def k(self) -> int:
        return self.endmembers.shape[1]

    def reconstruct(self) -> np.ndarray:
        return self.endmembers @ self.abundances

    def residual(self, x_ref: HyperImage) -> float:
        x = x_ref.columns()
        return float(np.linalg.norm(x - self.reconstruct()) / max(np.linalg.norm(x), 1e-300))


def _select_endmembers(x: np.ndarray, k: int) -> np.ndarray:
    """Greedy pure-pixel selection: max-norm pixel first, then repeatedly
    the pixel with largest residual after projection on the selected span."""
    norms = np.linalg.norm(x, axis=0)
    picks = [int(np.argmax(norms))]
    scale = norms.max()
    for _ in range(1, k):
        q, _ = np.linalg.qr(x[:, picks])
        resid = x - q @ (q.T @ x)
        rn = np.linalg.norm(resid, axis=0)
        best = int(np.argmax(rn))
        if rn[best] <= 1e-9 * max(scale, 1e-300):
            raise ValueError(
                f"pixel spectra span fewer than {k} directions; try a smaller k")
        picks.append(best)
    return x[:, picks].copy()


def _nnls_simplex(m: np.ndarray, x: np.ndarray, iters: int = 400) -> np.ndarray:
    """Projected-gradient nonnegative least squares with per-pixel
    sum-to-one renormalization."""
    k = m.shape[1]
    n = x.shape[1]
    mtm = m.T @ m
    mtx = m.T @ x
    lip = np.linalg.norm(mtm, 2)
    a = np.full((k, n), 1.0 / k)
    for _ in range(iters):
        grad = mtm @ a - mtx
        a = np.maximum(a - grad / lip, 0.0)
        s = a.sum(axis=0)
        dead = s <= 1e-12
        if dead.any():
            a[:, dead] = 1.0 / k
            s = a.sum(axis=0)
        a /= s
    return a


def unmix(x_ref: HyperImage, k: int) -> UnmixModel:
    """Simplified unmixing: greedy pure-pixel endmember selection plus
    simplex-constrained projected-gradient abundances."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = x_ref.columns()
    if k > min(x.shape):
        raise ValueError(f"k={k} exceeds min(bands, pixels)={min(x.shape)}")
    if k == 1:
        mean = x.mean(axis=1, keepdims=True)
        return UnmixModel(np.maximum(mean, 0.0), np.ones((1, x.shape[1])))
    m = _select_endmembers(x, k)
    a = _nnls_simplex(m, x)
    return UnmixModel(m, a)


# ---------------------------------------------------------------------------
# Change injection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChangeSpec:
    """One change-injection request.

    rule: 'zero' removes one material inside the region and renormalizes;
    'same' overwrites the region with a single abundance vector copied
    from an outside pixel; 'block' copies the abundance block of an
    equally-shaped donor rectangle elsewhere in the image.
    region is an axis-aligned rectangle (row0, col0, height, width).
    """

    rule: str
    region: tuple[int, int, int, int]
    endmember: int | None = None        # zero rule; default: strongest in region
    donor: tuple[int, int] | None = None  # block rule donor corner; default: random

    def __post_init__(self):
        if self.rule not in CHANGE_RULES:
            raise ValueError(f"unknown change rule {self.rule!r}")
        r0, c0, h, w = self.region
        if h < 1 or w < 1:
            raise ValueError("change region must be nonempty")


def _region_mask(region, rows, cols) -> np.ndarray:
    r0, c0, h, w = region
    if r0 < 0 or c0 < 0 or r0 + h > rows or c0 + w > cols:
        raise ValueError(f"region {region} outside image {rows}x{cols}")
    mask = np.zeros((rows, cols), dtype=bool)
    mask[r0 : r0 + h, c0 : c0 + w] = True
    if mask.all():
        raise ValueError("change region must be strictly smaller than the image")
    return mask


def apply_change_rule(model: UnmixModel, spec: ChangeSpec, rows: int, cols: int,
                      rng: np.random.Generator) -> tuple[np.ndarray, BinaryMap]:
    """Inject a change on the abundances; returns (modified abundances,
    reference change map marking exactly the modified pixels)."""
    a = model.abundances
    k, n = a.shape
    if n != rows * cols:
        raise ValueError("abundance pixel count does not match rows*cols")
    mask = _region_mask(spec.region, rows, cols).reshape(-1)
    chg = a.copy()

    if spec.rule == "zero":
        if k < 2:
            raise ValueError("zero-abundance rule needs at least 2 endmembers")
        inside = a[:, mask]
        j = spec.endmember if spec.endmember is not None else int(np.argmax(inside.mean(axis=1)))
        if inside[j].max() <= 1e-3:
            raise ValueError(f"endmember {j} absent from the change region")
        block = inside.copy()
        block[j, :] = 0.0
        s = block.sum(axis=0)
        dead = s <= 1e-12
        if dead.any():
            # pixel was pure in the removed material: spread uniformly
            block[:, dead] = 1.0 / (k - 1)
            block[j, dead] = 0.0
            s = block.sum(axis=0)
        chg[:, mask] = block / s
    elif spec.rule == "same":
        outside = np.flatnonzero(~mask)
        donor = int(outside[rng.integers(0, outside.size)])
        chg[:, mask] = a[:, [donor]]
    else:  # block
        r0, c0, h, w = spec.region
        if spec.donor is not None:
            dr, dc = spec.donor
            if _rects_overlap((dr, dc, h, w), spec.region):
                raise ValueError("donor block overlaps the change region")
        else:
            dr, dc = _pick_donor_corner(spec.region, rows, cols, rng)
        if dr < 0 or dc < 0 or dr + h > rows or dc + w > cols:
            raise ValueError("donor block outside image")
        a3 = a.reshape(k, rows, cols)
        chg3 = chg.reshape(k, rows, cols)
        chg3[:, r0 : r0 + h, c0 : c0 + w] = a3[:, dr : dr + h, dc : dc + w]
        chg = chg3.reshape(k, n)

    dref = BinaryMap(mask.reshape(rows, cols).astype(np.uint8))
    return chg, dref


def _rects_overlap(a, b) -> bool:
    ar, ac, ah, aw = a
    br, bc, bh, bw = b
    return not (ar + ah <= br or br + bh <= ar or ac + aw <= bc or bc + bw <= ac)


def _pick_donor_corner(region, rows, cols, rng) -> tuple[int, int]:
    r0, c0, h, w = region
    candidates = [(r, c) for r in range(rows - h + 1) for c in range(cols - w + 1)
                  if not _rects_overlap((r, c, h, w), region)]
    if not candidates:
        raise ValueError("no donor position available without overlapping the region")
    return candidates[int(rng.integers(0, len(candidates)))]


def random_region(rows: int, cols: int, min_frac: float, max_frac: float,
                  rng: np.random.Generator) -> tuple[int, int, int, int]:
    """Random axis-aligned rectangle covering a pixel fraction in
    [min_frac, max_frac]."""
    n = rows * cols
    for _ in range(200):
        h = int(rng.integers(2, rows // 2 + 1))
        w = int(rng.integers(2, cols // 2 + 1))
        frac = h * w / n
        if min_frac <= frac <= max_frac:
            r0 = int(rng.integers(0, rows - h + 1))
            c0 = int(rng.integers(0, cols - w + 1))
            return (r0, c0, h, w)
    # deterministic fallback: target the midpoint fraction with a square
    side = max(2, int(round(np.sqrt(0.5 * (min_frac + max_frac) * n))))
    side = min(side, rows - 1, cols - 1)
    return (0, 0, side, side)


# ---------------------------------------------------------------------------
# Upmixing and observation
# ---------------------------------------------------------------------------


def upmix(model: UnmixModel, a_chg: np.ndarray, rows: int, cols: int,
          direction: str = "forward") -> tuple[HyperImage, HyperImage]:
    """Latent pair from reference/changed abundances; 'reverse' swaps the
    roles so the change appears at the first acquisition time instead."""
    if direction not in ("forward", "reverse"):
        raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    m = model.endmembers
    shape = (m.shape[0], rows, cols)
    x_ref = HyperImage((m @ model.abundances).reshape(shape))
    x_alt = HyperImage((m @ a_chg).reshape(shape))
    return (x_ref, x_alt) if direction == "forward" else (x_alt, x_ref)


def observe(x1: HyperImage, x2: HyperImage, ops: DegradationPair,
            noise_sigma: float = 0.0, rng: np.random.Generator | None = None
            ) -> tuple[HyperImage, HyperImage]:
    """Forward-model observations: Y1 spatially degrades X1, Y2 spectrally
    degrades X2.  Observations are noiseless by default; optional additive
    Gaussian noise models measurement error."""
    y1 = ops.spatial.apply(x1.data)
    y2 = ops.spectral.apply(x2.data)
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        y1 = y1 + rng.normal(0.0, noise_sigma, size=y1.shape)
        y2 = y2 + rng.normal(0.0, noise_sigma, size=y2.shape)
    return HyperImage(y1), HyperImage(y2)


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetPair:
    """One observation pair with its evaluation-only ground truth."""

    y1: HyperImage
    y2: HyperImage
    x1: HyperImage
    x2: HyperImage
    d_ref: BinaryMap
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.y1.bands >= self.y2.bands and self.y2.n_pixels >= self.y1.n_pixels):
            raise ValueError("observation pair violates the complementary-resolution relation")
        if (self.d_ref.rows, self.d_ref.cols) != (self.x1.rows, self.x1.cols):
            raise ValueError("reference map must be at latent resolution")

    @property
    def rule(self) -> str:
        return self.meta.get("rule", "?")


@dataclass(frozen=True)
class GenerationSpec:
    """Everything needed to produce one dataset deterministically."""

    n_refs: int
    bands: int
    rows: int
    cols: int
    k: int
    seed: int
    rules: tuple[str, ...] = CHANGE_RULES
    both_directions: bool = True
    region_min_frac: float = 0.02
    region_max_frac: float = 0.15
    test_count: int = 4
    noise_sigma: float = 0.0
    ref_paths: tuple[str, ...] = ()

    def pair_count(self) -> int:
        per_ref = len(self.rules) * (2 if self.both_directions else 1)
        return self.n_refs * per_ref


def _load_refs(spec: GenerationSpec) -> list[HyperImage]:
    if spec.ref_paths:
        refs = [read_cube(p) for p in spec.ref_paths]
        for i, r in enumerate(refs):
            if r.shape != (spec.bands, spec.rows, spec.cols):
                raise ValueError(f"reference {spec.ref_paths[i]} has shape {r.shape}, "
                                 f"expected {(spec.bands, spec.rows, spec.cols)}")
        if len(refs) != spec.n_refs:
            raise ValueError(f"expected {spec.n_refs} reference paths, got {len(refs)}")
        return refs
    return [make_reference(spec.bands, spec.rows, spec.cols, spec.k, derive_seed(spec.seed, 0, i))
            for i in range(spec.n_refs)]


def build_dataset(spec: GenerationSpec, ops: DegradationPair
                  ) -> tuple[list[DatasetPair], list[DatasetPair]]:
    """Generate all pairs and split them deterministically.

    Every (reference, rule, direction) combination yields one pair; the
    test split is stratified by rule so per-rule metrics exist even for
    small test counts.  The special rule name 'none' produces no-change
    pairs for fusion pretraining (d_ref all zero).
    """
    for rule in spec.rules:
        if rule not in CHANGE_RULES + ("none",):
            raise ValueError(f"unknown change rule {rule!r}")
    refs = _load_refs(spec)
    directions = ("forward", "reverse") if spec.both_directions else ("forward",)
    pairs: list[DatasetPair] = []
    idx = 0
    for ri, ref in enumerate(refs):
        model = unmix(ref, spec.k)
        for rule in spec.rules:
            for direction in directions:
                rng = make_rng(spec.seed, 1, idx)
                if rule == "none":
                    a_chg = model.abundances.copy()
                    dref = BinaryMap(np.zeros((spec.rows, spec.cols), dtype=np.uint8))
                    region = None
                else:
                    region = random_region(spec.rows, spec.cols, spec.region_min_frac,
                                           spec.region_max_frac, rng)
                    a_chg, dref = apply_change_rule(model, ChangeSpec(rule, region),
                                                    spec.rows, spec.cols, rng)
                x1, x2 = upmix(model, a_chg, spec.rows, spec.cols, direction)
                y1, y2 = observe(x1, x2, ops, spec.noise_sigma, rng)
                meta = {"index": idx, "ref": ri, "rule": rule, "direction": direction,
                        "region": list(region) if region else None}
                pairs.append(DatasetPair(y1, y2, x1, x2, dref, meta))
                idx += 1
    return _split(pairs, spec.test_count, spec.seed)


def _split(pairs: list[DatasetPair], test_count: int, seed: int
           ) -> tuple[list[DatasetPair], list[DatasetPair]]:
    if not 0 <= test_count < len(pairs):
        raise ValueError(f"test_count {test_count} incompatible with {len(pairs)} pairs")
    rng = make_rng(seed, 2)
    by_rule: dict[str, list[int]] = {}
    for i, p in enumerate(pairs):
        by_rule.setdefault(p.rule, []).append(i)
    for idxs in by_rule.values():
        rng.shuffle(idxs)
    test_idx: list[int] = []
    rules = sorted(by_rule)
    cursor = {r: 0 for r in rules}
    while len(test_idx) < test_count:
        progressed = False
        for r in rules:
            if len(test_idx) >= test_count:
                break
            if cursor[r] < len(by_rule[r]) - 1:  # keep at least one train pair per rule
                test_idx.append(by_rule[r][cursor[r]])
                cursor[r] += 1
                progressed = True
        if not progressed:
            raise ValueError("cannot satisfy test_count without emptying a rule's train split")
    test_set = set(test_idx)
    train = [p for i, p in enumerate(pairs) if i not in test_set]
    test = [p for i, p in enumerate(pairs) if i in test_set]
    return train, test


# ---------------------------------------------------------------------------
# On-disk layout: pair_<idx>/{Y1.hsc, Y2.hsc, X1.hsc, X2.hsc, dref.cm}
# ---------------------------------------------------------------------------


def save_dataset(root, train: list[DatasetPair], test: list[DatasetPair], manifest_extra: dict | None = None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for split, pairs in (("train", train), ("test", test)):
        for p in pairs:
            d = root / f"pair_{p.meta['index']:04d}"
            d.mkdir(exist_ok=True)
            write_cube(d / "Y1.hsc", p.y1)
            write_cube(d / "Y2.hsc", p.y2)
            write_cube(d / "X1.hsc", p.x1)
            write_cube(d / "X2.hsc", p.x2)
            write_map(d / "dref.cm", p.d_ref)
            entries.append({**p.meta, "split": split, "dir": d.name})
    manifest = {"pairs": sorted(entries, key=lambda e: e["index"])}
    if manifest_extra:
        manifest.update(manifest_extra)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset(root) -> tuple[list[DatasetPair], list[DatasetPair]]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    train, test = [], []
    for e in manifest["pairs"]:
        d = root / e["dir"]
        pair = DatasetPair(
            y1=read_cube(d / "Y1.hsc"), y2=read_cube(d / "Y2.hsc"),
            x1=read_cube(d / "X1.hsc"), x2=read_cube(d / "X2.hsc"),
            d_ref=read_map(d / "dref.cm"),
            meta={k: v for k, v in e.items() if k not in ("split", "dir")},
        )
        (train if e["split"] == "train" else test).append(pair)
    return train, test
