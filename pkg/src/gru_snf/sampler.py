"""Refined inference: Metropolis-Hastings steps interleaved with inverse flow layers.

After the k-th inverse layer the chain targets exp(-u) with the interpolated potential

    u(y) = (1 - lambda) * |y|^2 / 2 + lambda * |anchor - y|,    lambda = k / n,

which starts at the standard normal prior on the latent side and ends pulling the
sample toward the GRU's point prediction on the data side.
"""
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import flow as fl
from . import numeric as nm
from .config import SamplerConfig
from .errors import ContractError, ShapeError
from .metrics import SampleSet
from .model import GruNfModel, rollout, window_id_of
from .recurrent import readout
from .utils.seeding import substream

PathLike = Union[str, os.PathLike]

logger = logging.getLogger(__name__)

ACCEPTANCE_WARN_LOW = 0.05
ACCEPTANCE_WARN_HIGH = 0.95


@dataclass(frozen=True)
class EnergyContext:
    lam: float
    anchor: np.ndarray
    k: int
    n: int
    kind: str = "l2"

    def __post_init__(self) -> None:
        anchor = np.asarray(self.anchor, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(anchor)):
            raise ContractError("Anchor must be finite")
        if not 0.0 <= self.lam <= 1.0:
            raise ContractError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0 <= self.k <= self.n:
            raise ContractError(f"Layer position k={self.k} outside 0..{self.n}")
        object.__setattr__(self, "anchor", anchor)

    @classmethod
    def at_position(
        cls, k: int, n: int, anchor: np.ndarray, kind: str = "l2"
    ) -> "EnergyContext":
        return cls(lam=k / n, anchor=anchor, k=k, n=n, kind=kind)


@dataclass(frozen=True)
class LayerStats:
    # forward index of the inverted layer
    layer: int
    lam: float
    proposals: int
    accepts: int
    energy_before: float
    energy_after: float

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / self.proposals if self.proposals else 0.0


@dataclass(frozen=True)
class ChainDiagnostics:
    layers: Tuple[LayerStats, ...]

    @property
    def proposals(self) -> int:
        return sum(stats.proposals for stats in self.layers)

    @property
    def accepts(self) -> int:
        return sum(stats.accepts for stats in self.layers)

    @property
    def lambdas(self) -> Tuple[float, ...]:
        return tuple(stats.lam for stats in self.layers)


def _vector(y: Any) -> np.ndarray:
    return np.asarray(y, dtype=np.float64).reshape(-1)


def prior_energy(y: Any) -> float:
    v = _vector(y)
    return 0.5 * float(v @ v)


def target_energy(y: Any, anchor: Any, kind: str = "l2") -> float:
    v, a = _vector(y), _vector(anchor)
    if v.shape != a.shape:
        raise ShapeError(f"Sample width {v.size} != anchor width {a.size}")
    diff = a - v
    squared = float(diff @ diff)
    if kind == "l2":
        return math.sqrt(squared)
    if kind == "l2sq":
        return squared
    raise ContractError(f"Unknown target energy: {kind}")


def potential(y: Any, ctx: EnergyContext) -> float:
    return (1.0 - ctx.lam) * prior_energy(y) + ctx.lam * target_energy(
        y, ctx.anchor, ctx.kind
    )


def acceptance_probability(delta_u: float) -> float:
    """min(1, exp(-delta_u)) for delta_u = u(proposal) - u(current)."""
    return 1.0 if delta_u <= 0 else math.exp(-delta_u)


def metropolis_accept(
    u_current: float, u_proposed: float, rng: np.random.Generator
) -> bool:
    # U < min(1, exp(u(y) - u(y'))); a non-finite proposal energy never accepts
    return rng.random() < acceptance_probability(u_proposed - u_current)


def _mh_step(
    y: np.ndarray,
    u: float,
    ctx: EnergyContext,
    proposal_std: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, float, bool]:
    proposal = y + proposal_std * rng.standard_normal(y.shape)
    u_proposed = potential(proposal, ctx)
    if metropolis_accept(u, u_proposed, rng):
        return proposal, u_proposed, True
    return y, u, False


def mh_step(
    y: Any, ctx: EnergyContext, cfg: SamplerConfig, rng: np.random.Generator
) -> Tuple[np.ndarray, bool]:
    """One random-walk Metropolis step with an isotropic Gaussian proposal."""
    state = np.asarray(y, dtype=np.float64)
    new_state, _, accepted = _mh_step(
        state, potential(state, ctx), ctx, cfg.proposal_std, rng
    )
    return new_state, accepted


def compute_anchor(
    h: np.ndarray, model: GruNfModel, mode: str = "readout"
) -> np.ndarray:
    if mode == "readout":
        return np.asarray(readout(h, model.gru))
    if mode == "flow_at_prior_mean":
        return np.asarray(fl.inverse(np.zeros((1, model.dims.d)), h, model.flow))
    raise ContractError(f"Unknown anchor mode: {mode}")


def refine_sample(
    z: np.ndarray,
    h: np.ndarray,
    model: GruNfModel,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, ChainDiagnostics]:
    """Invert the flow layer by layer (latent side first), running cfg.m MH steps after
    each layer. With m = 0 this is exactly the plain flow inverse."""
    z = np.asarray(z, dtype=np.float64)
    anchor = compute_anchor(h, model, cfg.anchor)
    layers = model.flow.layers
    n = len(layers)
    y = z
    stats = []
    for k in range(1, n + 1):
        j = n - k
        y = np.asarray(fl.layer_inverse(y, h, layers[j]))
        position = k if cfg.lambda_order == "traversal" else j + 1
        ctx = EnergyContext.at_position(position, n, anchor, cfg.target_energy)
        u = potential(y, ctx)
        energy_before, accepts = u, 0
        for _ in range(cfg.m):
            y, u, accepted = _mh_step(y, u, ctx, cfg.proposal_std, rng)
            accepts += accepted
        nm.check_finite(y, "refined sample")
        stats.append(
            LayerStats(
                layer=j,
                lam=ctx.lam,
                proposals=cfg.m,
                accepts=accepts,
                energy_before=energy_before,
                energy_after=u,
            )
        )
    return y, ChainDiagnostics(layers=tuple(stats))


def sample_refined_with_diagnostics(
    model: GruNfModel,
    window: Any,
    horizon: int,
    count: int,
    cfg: SamplerConfig,
    seed: Optional[int] = None,
    scheduler: str = "synchronous",
) -> Tuple[SampleSet, List[ChainDiagnostics]]:
    seed = cfg.seed if seed is None else seed
    seed = 0 if seed is None else seed
    logger.debug(
        f"window={window_id_of(window)}, N={horizon}, D={count}, m={cfg.m}, seed={seed}"
    )

    def draw(
        z: np.ndarray, h: np.ndarray, index: int, step: int
    ) -> Tuple[np.ndarray, ChainDiagnostics]:
        rng = substream(seed, "mcmc", index * horizon + step)
        return refine_sample(z, h, model, cfg, rng)

    samples, records = rollout(model, window, horizon, count, seed, draw, scheduler)
    diagnostics = [chain for trajectory in records for chain in trajectory]
    sample_set = SampleSet(
        samples=samples, window_id=window_id_of(window), model_tag="refined"
    )
    return sample_set, diagnostics


def sample_refined(
    model: GruNfModel,
    window: Any,
    horizon: int,
    count: int,
    cfg: SamplerConfig,
    seed: Optional[int] = None,
    scheduler: str = "synchronous",
) -> SampleSet:
    sample_set, _ = sample_refined_with_diagnostics(
        model, window, horizon, count, cfg, seed=seed, scheduler=scheduler
    )
    return sample_set


def summarize_diagnostics(
    chains: Sequence[ChainDiagnostics], window_id: str = ""
) -> List[Dict[str, Any]]:
    """Per-layer totals over many chains; warns about acceptance rates near 0 or 1."""
    per_layer: Dict[int, List[LayerStats]] = {}
    for chain in chains:
        for stats in chain.layers:
            per_layer.setdefault(stats.layer, []).append(stats)
    records = []
    for layer, entries in per_layer.items():
        proposals = sum(s.proposals for s in entries)
        accepts = sum(s.accepts for s in entries)
        rate = accepts / proposals if proposals else None
        records.append(
            {
                "window_id": window_id,
                "layer": layer,
                "lambda": entries[0].lam,
                "proposals": proposals,
                "accepts": accepts,
                "acceptance_rate": rate,
                "mean_energy_before": float(
                    np.mean([s.energy_before for s in entries])
                ),
                "mean_energy_after": float(np.mean([s.energy_after for s in entries])),
            }
        )
        if rate is not None and not ACCEPTANCE_WARN_LOW <= rate <= ACCEPTANCE_WARN_HIGH:
            logger.warning(
                f"Acceptance rate {rate:.3f} at layer {layer} (window {window_id}); "
                f"consider retuning sampler.proposal_std"
            )
    return records


def write_diagnostics_jsonl(path: PathLike, records: Sequence[Dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    logger.debug(f"path={path}, records={len(records)}")
