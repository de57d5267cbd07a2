"""H&E stain estimation and normalization.

The normalizer estimates a per-image 2-stain basis from the SVD of
tissue-pixel optical densities, rescales per-stain concentrations to a
reference, and re-renders the image under the reference basis. Optical
density is log10-based: ``od = -log10(intensity / white_reference)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStains, InsufficientTissue


@dataclass(frozen=True)
class StainParams:
    """Tunables for stain estimation.

    Attributes:
        od_floor: OD threshold below which a pixel counts as background;
            a pixel is tissue only if every channel exceeds it.
        angle_percentiles: (low, high) percentiles of the projected-angle
            distribution that define the two stain directions.
        conc_percentile: percentile of per-stain concentrations used as
            the robust concentration maximum.
        white_reference: incident light intensity (I0).
        min_tissue_pixels: minimum tissue pixels required for estimation.
        degeneracy_tol: relative second-singular-value floor below which
            the OD cloud is considered collinear.
    """

    od_floor: float = 0.15
    angle_percentiles: tuple[float, float] = (1.0, 99.0)
    conc_percentile: float = 99.0
    white_reference: float = 255.0
    min_tissue_pixels: int = 100
    degeneracy_tol: float = 1e-6

    def __post_init__(self) -> None:
        lo, hi = self.angle_percentiles
        if not (self.od_floor > 0 and 0 <= lo < hi <= 100):
            raise ValueError(f"invalid stain params: {self}")
        if not (0 < self.conc_percentile <= 100 and self.white_reference > 0):
            raise ValueError(f"invalid stain params: {self}")


@dataclass(frozen=True)
class StainModel:
    """Estimated stain basis and robust concentration maxima.

    ``basis`` is 3x2 (rows = RGB optical densities, column 0 = hematoxylin,
    column 1 = eosin), each column unit-norm and non-negative.
    """

    basis: np.ndarray
    max_concentration: np.ndarray

    def __post_init__(self) -> None:
        basis = np.asarray(self.basis, dtype=np.float64)
        max_c = np.asarray(self.max_concentration, dtype=np.float64)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "max_concentration", max_c)
        if basis.shape != (3, 2) or max_c.shape != (2,):
            raise ValueError("basis must be 3x2 and max_concentration length 2")
        if np.any(basis < 0) or np.any(max_c <= 0):
            raise ValueError("basis entries must be >= 0 and maxima > 0")
        norms = np.linalg.norm(basis, axis=0)
        if not np.allclose(norms, 1.0, atol=0.1):
            raise ValueError("basis columns must be (approximately) unit norm")
        # Published constants carry 4 decimals; snap columns to exact unit norm.
        object.__setattr__(self, "basis", basis / norms)

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.tolist(),
            "max_concentration": self.max_concentration.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StainModel":
        return cls(np.asarray(d["basis"]), np.asarray(d["max_concentration"]))


#: Widely used default H&E basis and concentration maxima for the SVD
#: normalization method; used when no reference image is fitted.
DEFAULT_REFERENCE = StainModel(
    basis=np.array(
        [
            [0.5626, 0.2159],
            [0.7201, 0.8012],
            [0.4062, 0.5581],
        ]
    ),
    max_concentration=np.array([1.9705, 1.0308]),
)


def _check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 RGB image, got shape {img.shape}")
    return img


def rgb_to_od(img: np.ndarray, params: StainParams = StainParams()) -> np.ndarray:
    """Convert an RGB image to optical density (log10 units).

    Zero intensities are clamped to 1 so the OD stays finite.
    """
    img = _check_rgb(img)
    intensity = np.maximum(img.astype(np.float64), 1.0)
    return -np.log10(intensity / params.white_reference)


def od_to_rgb(od: np.ndarray, params: StainParams = StainParams()) -> np.ndarray:
    """Convert optical density back to an 8-bit RGB image.

    Intensities are rounded half-up and clamped to [0, 255].
    """
    od = np.asarray(od, dtype=np.float64)
    intensity = params.white_reference * np.power(10.0, -od)
    return np.clip(np.floor(intensity + 0.5), 0, 255).astype(np.uint8)


def _tissue_pixels(od: np.ndarray, params: StainParams) -> np.ndarray:
    flat = od.reshape(-1, 3)
    keep = np.all(flat > params.od_floor, axis=1)
    return flat[keep]


def estimate_stain_model(od: np.ndarray, params: StainParams = StainParams()) -> StainModel:
    """Estimate the 2-stain OD basis and concentration maxima of one image.

    Tissue pixels (every OD channel above the floor) are projected onto the
    plane of their two leading singular directions; the extreme-percentile
    angles within that plane give the stain directions. Column 0 is
    hematoxylin, identified as the direction absorbing more red light.

    Raises:
        InsufficientTissue: fewer than ``min_tissue_pixels`` tissue pixels.
        DegenerateStains: the tissue OD cloud is numerically collinear.
    """
    tissue = _tissue_pixels(od, params)
    if tissue.shape[0] < params.min_tissue_pixels:
        raise InsufficientTissue(
            f"only {tissue.shape[0]} tissue pixels exceed OD floor "
            f"{params.od_floor} (minimum {params.min_tissue_pixels})"
        )

    _, svals, vt = np.linalg.svd(tissue, full_matrices=False)
    if svals[1] < params.degeneracy_tol * svals[0]:
        raise DegenerateStains(
            f"second singular value {svals[1]:.3e} below tolerance "
            f"({params.degeneracy_tol:.0e} x {svals[0]:.3e})"
        )
    plane = vt[:2].T  # 3x2

    # Orient the leading direction along the data so projected angles stay
    # within (-pi/2, pi/2) and percentiles see no wraparound.
    if plane[:, 0] @ tissue.mean(axis=0) < 0:
        plane[:, 0] = -plane[:, 0]

    proj = tissue @ plane
    angles = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(angles, params.angle_percentiles)
    edges = plane @ np.array([[np.cos(lo), np.cos(hi)], [np.sin(lo), np.sin(hi)]])

    # Resolve the SVD sign ambiguity, then force non-negative stain ODs.
    for col in range(2):
        if edges[:, col].sum() < 0:
            edges[:, col] = -edges[:, col]
    edges = np.maximum(edges, 0.0)
    norms = np.linalg.norm(edges, axis=0)
    if np.any(norms <= 0):
        raise DegenerateStains("a stain direction collapsed to zero")
    edges /= norms

    # Hematoxylin absorbs more red light than eosin: larger row-0 OD first.
    if edges[0, 0] < edges[0, 1]:
        edges = edges[:, ::-1]

    conc = _solve_concentrations(tissue, edges)
    max_c = np.percentile(np.maximum(conc, 0.0), params.conc_percentile, axis=0)
    if np.any(max_c <= 0):
        raise DegenerateStains("a stain has no positive concentration mass")
    return StainModel(basis=edges, max_concentration=max_c)


def _solve_concentrations(od_flat: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Least-squares concentrations (Nx2, unclamped) via the pseudo-inverse."""
    svals = np.linalg.svd(basis, compute_uv=False)
    if svals[1] < 1e-6 * svals[0]:
        raise DegenerateStains("stain basis columns are numerically dependent")
    return od_flat @ np.linalg.pinv(basis).T


def compute_concentrations(od: np.ndarray, model: StainModel) -> np.ndarray:
    """Per-pixel stain concentrations (HxWx2), clamped at zero.

    Raises:
        DegenerateStains: the basis columns are numerically dependent.
    """
    od = np.asarray(od, dtype=np.float64)
    conc = _solve_concentrations(od.reshape(-1, 3), model.basis)
    return np.maximum(conc, 0.0).reshape(od.shape[0], od.shape[1], 2)


def normalize_macenko(
    img: np.ndarray,
    reference: StainModel = DEFAULT_REFERENCE,
    params: StainParams = StainParams(),
) -> np.ndarray:
    """Re-render an H&E image under a reference stain basis.

    The source basis is estimated from the image itself; each stain's
    concentrations are rescaled by the ratio of reference to source maxima
    and reconstructed through the reference basis. Output dimensions equal
    input dimensions.

    Raises:
        InsufficientTissue, DegenerateStains: propagated from estimation;
        callers that need a fallback keep the unnormalized image and flag it.
    """
    img = _check_rgb(img)
    od = rgb_to_od(img, params)
    source = estimate_stain_model(od, params)
    conc = compute_concentrations(od, source)
    conc *= reference.max_concentration / source.max_concentration
    od_norm = conc @ reference.basis.T
    return od_to_rgb(od_norm, params)


def fit_reference(img: np.ndarray, params: StainParams = StainParams()) -> StainModel:
    """Fit a reference stain model from a user-designated image."""
    return estimate_stain_model(rgb_to_od(_check_rgb(img), params), params)
