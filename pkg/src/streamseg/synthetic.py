"""Deterministic synthetic bundle generator for desk-scale experiments.

Bundles are built from parametric centerline families (arc, helix, C, S)
plus a smooth per-streamline random offset bounded by the bundle spread.
Mirrored specs exercise the left/right-hemisphere symmetry challenge.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tractogram import Tractogram

FAMILIES = ("arc", "helix", "c_shape", "s_shape")

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class BundleSpec:
    name: str
    family: str
    radius_mm: float = 20.0
    height_mm: float = 40.0
    span_rad: float = np.pi
    center: tuple = (0.0, 0.0, 0.0)
    spread_mm: float = 2.0
    n_streamlines: int = 100
    points_range: tuple = (48, 96)
    flip: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown curve family {self.family!r}")
        if self.spread_mm <= 0:
            raise ValueError("spread_mm must be positive")
        if self.n_streamlines < 1:
            raise ValueError("n_streamlines must be >= 1")


def centerline(spec: BundleSpec, t: np.ndarray) -> np.ndarray:
    """Evaluate the spec's centerline at parameters t in [0, 1]."""
    r, h, span = spec.radius_mm, spec.height_mm, spec.span_rad
    if spec.family == "arc":
        ang = span * (t - 0.5)
        local = np.stack([r * np.cos(ang), r * np.sin(ang), np.zeros_like(t)], axis=1)
    elif spec.family == "helix":
        ang = span * t
        local = np.stack([r * np.cos(ang), r * np.sin(ang), h * (t - 0.5)], axis=1)
    elif spec.family == "c_shape":
        ang = span * t
        local = np.stack([r * np.cos(ang), np.zeros_like(t), r * np.sin(ang)], axis=1)
    else:  # s_shape
        local = np.stack(
            [r * np.sin(2.0 * np.pi * t), h * (t - 0.5), np.zeros_like(t)], axis=1
        )
    return np.asarray(spec.flip) * (local + np.asarray(spec.center))


def mirror(spec: BundleSpec, axis: str = "x") -> BundleSpec:
    """Reflect a spec's geometry across the given coordinate plane.

    The name gets a hemisphere-style suffix; mirroring twice restores the
    original geometry.
    """
    k = _AXIS_INDEX[axis]
    flip = list(spec.flip)
    flip[k] = -flip[k]
    if spec.name.endswith("_L"):
        name = spec.name[:-2] + "_R"
    elif spec.name.endswith("_R"):
        name = spec.name[:-2] + "_L"
    else:
        name = spec.name + "_R"
    return replace(spec, name=name, flip=tuple(flip))


def _smooth_offset(rng: np.random.Generator, t: np.ndarray, spread: float) -> np.ndarray:
    """Low-order random polynomial of t per coordinate, clamped to spread."""
    coeffs = rng.normal(0.0, spread / 2.0, size=(4, 3))
    off = np.polynomial.polynomial.polyval(t, coeffs)  # (3, n)
    off = off.T
    norms = np.linalg.norm(off, axis=1)
    peak = norms.max()
    if peak > spread:
        off *= spread / peak
    return off


def generate(specs, seed: int) -> Tractogram:
    """Generate a labeled tractogram from bundle specs, deterministically."""
    specs = list(specs)
    if not specs:
        raise ValueError("no bundle specs given")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("duplicate class names in bundle specs")
    children = np.random.SeedSequence(seed).spawn(len(specs))
    streamlines, labels = [], []
    for spec, child in zip(specs, children):
        rng = np.random.default_rng(child)
        lo, hi = spec.points_range
        for _ in range(spec.n_streamlines):
            n = int(rng.integers(lo, hi + 1))
            t = np.linspace(0.0, 1.0, n)
            pts = centerline(spec, t) + _smooth_offset(rng, t, spec.spread_mm)
            streamlines.append(pts)
            labels.append(spec.name)
    return Tractogram(streamlines=streamlines, labels=labels, class_names=names)


def default_corpus_specs(n_streamlines: int = 500, spread_mm: float = 2.0):
    """8-class desk-scale corpus: 4 shape families x 2 mirrored hemispheres."""
    base = [
        BundleSpec("arc_L", "arc", radius_mm=40.0, span_rad=1.2,
                   center=(25.0, 0.0, 0.0), spread_mm=spread_mm,
                   n_streamlines=n_streamlines),
        BundleSpec("helix_L", "helix", radius_mm=12.0, height_mm=50.0,
                   span_rad=3.0 * np.pi, center=(30.0, 40.0, 0.0),
                   spread_mm=spread_mm, n_streamlines=n_streamlines),
        # span < pi keeps the C asymmetric under x-negation; a half circle's
        # point set equals its own mirror image, which would make the L/R
        # pair indistinguishable to a point-cloud model.
        BundleSpec("cshape_L", "c_shape", radius_mm=25.0, span_rad=2.4,
                   center=(28.0, -40.0, 10.0), spread_mm=spread_mm,
                   n_streamlines=n_streamlines),
        BundleSpec("sshape_L", "s_shape", radius_mm=15.0, height_mm=60.0,
                   center=(35.0, 80.0, -20.0), spread_mm=spread_mm,
                   n_streamlines=n_streamlines),
    ]
    return base + [mirror(s, "x") for s in base]
