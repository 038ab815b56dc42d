"""Preprocess a density field into a simulatable body model.

The offline pass samples the field uniformly over its bounding box,
estimates mass, center of mass, and inertia from density-weighted Monte
Carlo sums, keeps the sample points whose density falls inside a
configurable band as surface candidates, and attaches outward normals from
the negated field gradient. The result carries everything contact
resolution needs at simulation time except cross-body density queries,
which stay online.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from danosim.errors import DomainError, ParseError
from danosim.fields import DensityField, density_gradients

logger = logging.getLogger(__name__)

GENERATOR_ID = "numpy-pcg64"

GRADIENT_EPS = 1e-12


@dataclass
class SampleSet:
    """Uniform samples of a field over its bounding box.

    cell_volume is box_volume / n_samples, the weight that turns
    density sums into volume-integral estimates.
    """

    points: np.ndarray
    densities: np.ndarray
    cell_volume: float
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class DanoBuildConfig:
    """Knobs for the offline preprocessing pass.

    samples: surface-phase sample count (5000 default).
    mass_samples: optional independent, typically larger, sample count for
        the mass-property sums; None reuses the surface samples.
    band: density band for surface candidates; interpreted as fractions of
        the maximum observed density unless band_absolute is set.
    gradient_step: finite-difference step for normals; None takes the
        field's suggested step.
    alpha: mass scale (kg per unit density per m^3).
    """

    samples: int = 5000
    seed: int = 0
    band: tuple[float, float] = (0.05, 0.95)
    band_absolute: bool = False
    gradient_step: float | None = None
    alpha: float = 1.0
    mass_samples: int | None = None


@dataclass
class DanoModel:
    """A density field preprocessed for dynamics and contact.

    surface_points / surface_densities / surface_normals are the M retained
    samples in the body frame. inertia is taken about the body-frame origin;
    the dynamics module transfers it to the center of mass.
    """

    surface_points: np.ndarray
    surface_densities: np.ndarray
    surface_normals: np.ndarray
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    alpha: float
    cell_volume: float
    n_samples: int
    generator: str = GENERATOR_ID
    config_echo: str = ""

    @property
    def n_points(self) -> int:
        return len(self.surface_points)

    def with_alpha(self, alpha: float) -> "DanoModel":
        """Rescale the mass scale; mass and inertia are linear in alpha."""
        if alpha <= 0.0:
            raise DomainError(f"alpha must be > 0, got {alpha}")
        factor = alpha / self.alpha
        return replace(
            self,
            mass=self.mass * factor,
            inertia=self.inertia * factor,
            alpha=alpha,
        )

    def validate(self) -> None:
        """Check the model invariants; raises DomainError on violation."""
        if self.mass <= 0.0:
            raise DomainError("model mass must be > 0")
        if not np.allclose(self.inertia, self.inertia.T):
            raise DomainError("inertia must be symmetric")
        eigs = np.linalg.eigvalsh(self.inertia)
        if np.any(eigs <= 0.0):
            raise DomainError(f"inertia must be positive definite, eigenvalues {eigs}")
        lam = np.sort(eigs)
        if lam[2] > lam[0] + lam[1] + 1e-12 * lam[2]:
            raise DomainError(f"inertia eigenvalues violate the triangle inequality: {eigs}")
        norms = np.linalg.norm(self.surface_normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise DomainError("surface normals must be unit length")


def sample_uniform(field: DensityField, n: int, seed: int) -> SampleSet:
    """Draw n uniform points over the field bounding box and evaluate them.

    The generator is seeded PCG64 (numpy default_rng), so identical seeds
    give bitwise-identical sample sets.
    """
    if n < 1:
        raise DomainError(f"sample count must be >= 1, got {n}")
    lo, hi = field.bounds()
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()) or np.any(hi <= lo):
        raise DomainError("field bounding box must be finite with positive extent")
    rng = np.random.default_rng(seed)
    points = rng.uniform(lo, hi, size=(n, 3))
    densities = field.evaluate(points)
    volume = float(np.prod(hi - lo))
    return SampleSet(points, densities, volume / n, lo, hi)


def estimate_mass_properties(samples: SampleSet, alpha: float):
    """Monte Carlo mass, center of mass, and origin-frame inertia.

    Sums carry the explicit cell_volume factor so alpha keeps its meaning
    (kg per unit density per m^3) independent of the sample count.
    """
    if len(samples) == 0:
        raise DomainError("sample set is empty")
    if alpha <= 0.0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    w = samples.densities
    total = float(w.sum())
    if total <= 0.0:
        raise DomainError("empty object: total sampled density is zero")
    scale = alpha * samples.cell_volume
    mass = scale * total
    x = samples.points
    com = scale * (w @ x) / mass
    weighted = x * w[:, None]
    second = weighted.T @ x
    inertia = scale * (np.eye(3) * float(np.sum(w * np.einsum("ij,ij->i", x, x))) - second)
    inertia = 0.5 * (inertia + inertia.T)
    return mass, com, inertia


def select_surface_candidates(samples: SampleSet, band_lo: float, band_hi: float) -> np.ndarray:
    """Indices of samples whose density lies inside [band_lo, band_hi]."""
    if not (0.0 <= band_lo < band_hi):
        raise DomainError(f"band must satisfy 0 <= lo < hi, got [{band_lo}, {band_hi}]")
    d = samples.densities
    idx = np.nonzero((d >= band_lo) & (d <= band_hi))[0]
    if len(idx) == 0:
        raise DomainError(
            "no surface candidates: band "
            f"[{band_lo:.6g}, {band_hi:.6g}] is empty over observed densities "
            f"[{d.min():.6g}, {d.max():.6g}]"
        )
    return idx


def compute_normals(field: DensityField, points: np.ndarray, h: float | None = None):
    """Outward normals from the negated field gradient.

    Returns (normals, kept_indices). Points whose gradient norm falls below
    1e-12 have no usable direction and are dropped; the caller decides how
    to report them.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if h is None:
        h = field.suggested_gradient_step()
    if h <= 0.0:
        raise DomainError(f"gradient step must be > 0, got {h}")
    grads = density_gradients(field, points, h)
    norms = np.linalg.norm(grads, axis=1)
    kept = np.nonzero(norms >= GRADIENT_EPS)[0]
    normals = -grads[kept] / norms[kept, None]
    return normals, kept


def build_dano(field: DensityField, config: DanoBuildConfig | None = None) -> DanoModel:
    """Run the full preprocessing pass; deterministic given the config."""
    cfg = config or DanoBuildConfig()
    surface = sample_uniform(field, cfg.samples, cfg.seed)
    if cfg.mass_samples is None:
        mass_set = surface
    else:
        mass_set = sample_uniform(field, cfg.mass_samples, cfg.seed + 1)
    mass, com, inertia = estimate_mass_properties(mass_set, cfg.alpha)

    if cfg.band_absolute:
        band_lo, band_hi = cfg.band
    else:
        dmax = float(surface.densities.max())
        if dmax <= 0.0:
            raise DomainError("empty object: no nonzero density among surface samples")
        band_lo, band_hi = cfg.band[0] * dmax, cfg.band[1] * dmax
    candidates = select_surface_candidates(surface, band_lo, band_hi)

    h = cfg.gradient_step if cfg.gradient_step is not None else field.suggested_gradient_step()
    normals, kept = compute_normals(field, surface.points[candidates], h)
    dropped = len(candidates) - len(kept)
    if dropped:
        logger.info("dropped %d of %d surface candidates with vanishing gradient", dropped, len(candidates))
    if len(kept) == 0:
        raise DomainError("no surface candidates with a usable density gradient")
    sel = candidates[kept]

    echo = (
        f"samples={cfg.samples} seed={cfg.seed} band_lo={band_lo:.17g} band_hi={band_hi:.17g} "
        f"gradient_step={h:.17g} alpha={cfg.alpha:.17g} mass_samples={cfg.mass_samples}"
    )
    return DanoModel(
        surface_points=surface.points[sel],
        surface_densities=surface.densities[sel],
        surface_normals=normals,
        mass=mass,
        com=com,
        inertia=inertia,
        alpha=cfg.alpha,
        cell_volume=surface.cell_volume,
        n_samples=cfg.samples,
        config_echo=echo,
    )


def save_dano(model: DanoModel, path) -> None:
    """Write a model file: header then one `px py pz density nx ny nz` per point."""
    with open(path, "w") as fh:
        fh.write(f"mass: {model.mass:.17g}\n")
        fh.write("com: " + " ".join(f"{v:.17g}" for v in model.com) + "\n")
        fh.write("inertia: " + " ".join(f"{v:.17g}" for v in model.inertia.reshape(-1)) + "\n")
        fh.write(f"alpha: {model.alpha:.17g}\n")
        fh.write(f"cell_volume: {model.cell_volume:.17g}\n")
        fh.write(f"n_samples: {model.n_samples}\n")
        fh.write(f"n_points: {model.n_points}\n")
        fh.write(f"generator: {model.generator}\n")
        fh.write(f"config: {model.config_echo}\n")
        for p, d, n in zip(model.surface_points, model.surface_densities, model.surface_normals):
            fh.write(
                f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {d:.17g} {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}\n"
            )


def load_dano(path) -> DanoModel:
    """Read a model file written by save_dano."""
    header: dict[str, str] = {}
    rows: list[list[float]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if ":" in text and not rows:
                key, _, rest = text.partition(":")
                header[key.strip()] = rest.strip()
            else:
                try:
                    vals = [float(tok) for tok in text.split()]
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: malformed point row") from None
                if len(vals) != 7:
                    raise ParseError(f"{path}:{lineno}: point rows need 7 values, got {len(vals)}")
                rows.append(vals)
    required = ("mass", "com", "inertia", "alpha", "cell_volume", "n_samples", "n_points")
    for key in required:
        if key not in header:
            raise ParseError(f"{path}: missing header '{key}'")
    n_points = int(header["n_points"])
    if n_points != len(rows):
        raise ParseError(f"{path}: n_points declares {n_points} rows, found {len(rows)}")
    data = np.asarray(rows)
    inertia = np.asarray([float(v) for v in header["inertia"].split()]).reshape(3, 3)
    model = DanoModel(
        surface_points=data[:, 0:3],
        surface_densities=data[:, 3],
        surface_normals=data[:, 4:7],
        mass=float(header["mass"]),
        com=np.asarray([float(v) for v in header["com"].split()]),
        inertia=inertia,
        alpha=float(header["alpha"]),
        cell_volume=float(header["cell_volume"]),
        n_samples=int(header["n_samples"]),
        generator=header.get("generator", GENERATOR_ID),
        config_echo=header.get("config", ""),
    )
    model.validate()
    return model
