"""End-to-end optimization of the mass matrix and spectral operator.

Every random draw is derived from ``(seed, stream, step, example)`` so a run
is reproducible bit for bit and can resume from any checkpoint.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from .autodiff import Tensor
from .config import TrainConfig
from .data import (
    SPHERE,
    Observation,
    decode_images,
    sphere_rotation_pair,
    spherical_texture,
    synthetic_texture,
    toric_shift_pair,
)
from .errors import ConfigError, InputError, NumericalError, UsageError
from .losses import (
    LossReport,
    LossWeights,
    dropout_keep,
    equivariance_loss,
    identity_codec,
    multiplicity_loss,
    reconstruction_loss,
    triplet_losses,
)
from .optim import OptimizerState, lr_at, optimizer_step
from .solver import (
    FUZZY,
    commutator_residual,
    count_distinct,
    eigenvalue_mask,
    estimate_map,
    off_block_fraction,
    offdiag_fraction,
    orthogonality_residual,
)
from .spectral import SpectralOperatorParams, project, realize

log = logging.getLogger(__name__)

INIT_STREAM, TRAIN_STREAM, EVAL_STREAM, DROPOUT_STREAM = 0, 1, 2, 3
METRIC_FIELDS = ("step", "lr", "total", "recon", "equiv", "mult", "commutator", "orth")
DECAY_EXEMPT = frozenset({"raw_eigvals"})


class TrainingAborted(NumericalError):
    pass


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


class PairSource:
    """Deterministic generator of observation pairs (or triples) for a config."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.triple = config.data.mode == "triple"
        self._images = None
        if config.data.source == "image_dir":
            if config.channels % 3:
                raise ConfigError("channels: must be a multiple of 3 for image stacks")
            arrays, _, _ = decode_images(config.data.image_dir, config.height, config.width)
            if len(arrays) < config.channels // 3:
                raise InputError(
                    f"{config.data.image_dir}: need {config.channels // 3} decodable images, found {len(arrays)}"
                )
            self._images = arrays

    def observation(self, rng: np.random.Generator) -> Observation:
        c = self.config
        if self._images is not None:
            idx = rng.choice(len(self._images), size=c.channels // 3, replace=False)
            vals = np.concatenate([self._images[i] for i in idx], axis=2)
            return Observation(vals, c.data.domain)
        if c.data.domain == SPHERE:
            return spherical_texture(c.height, c.width, c.channels, c.data.degree, rng)
        return synthetic_texture(c.height, c.width, c.channels, c.data.cutoff, rng)

    def sample(self, rng: np.random.Generator) -> tuple[Observation, ...]:
        obs = self.observation(rng)
        if self.config.data.domain == SPHERE:
            return sphere_rotation_pair(obs, rng, triple=self.triple)
        return toric_shift_pair(obs, rng, triple=self.triple)

    def train_sample(self, step: int, example: int) -> tuple[Observation, ...]:
        return self.sample(_rng(self.config.seed, TRAIN_STREAM, step, example))

    def eval_samples(self, count: int | None = None) -> list[tuple[Observation, ...]]:
        count = self.config.data.eval_pairs if count is None else count
        return [self.sample(_rng(self.config.seed, EVAL_STREAM, i)) for i in range(count)]


def init_params(config: TrainConfig) -> SpectralOperatorParams:
    rng = _rng(config.seed, INIT_STREAM)
    return SpectralOperatorParams.initialize(config.n, config.k, rng, config.init, config.eig_init_scale)


def frozen(params: SpectralOperatorParams) -> SpectralOperatorParams:
    """Same values as plain constants, so realizing them records no graph."""
    return SpectralOperatorParams(*(Tensor(p.data) for p in params.parameters()))


def step_loss(
    params: SpectralOperatorParams, samples, config: TrainConfig, step: int
) -> tuple[Tensor, LossReport]:
    """Combined objective over a batch of samples, averaged over examples."""
    op = realize(params)
    mask = eigenvalue_mask(op.eigvals, FUZZY)
    weights = LossWeights(config.alpha, config.beta)
    per_example, reports = [], []
    for b, sample in enumerate(samples):
        lat = [Tensor(o.flat()) for o in sample]
        coeffs = [project(z, op) for z in lat]
        keep = None
        if config.spectral_dropout:
            keep = dropout_keep(config.k, config.channels, _rng(config.seed, DROPOUT_STREAM, step, b))
        tau = estimate_map(coeffs[0], coeffs[1], mask)
        if config.regime == "triplet":
            sigma = estimate_map(coeffs[1], coeffs[2], mask)
            l_e, l_r = triplet_losses(tau, sigma, coeffs, lat, lat, op, keep=keep, norm=config.norm)
        else:
            l_e = equivariance_loss(tau, coeffs[0], coeffs[1], config.norm)
            l_r = reconstruction_loss(identity_codec, tau, lat[:2], lat[:2], op, keep, config.norm)
        per_example.append(l_r + weights.alpha * l_e)
        reports.append(
            LossReport(
                total=0.0,
                equivariance=l_e.item(),
                reconstruction=l_r.item(),
                multiplicity=0.0,
                commutator_residual=commutator_residual(tau, op.eigvals),
                orthogonality_residual=orthogonality_residual(tau),
            )
        )
    l_m = multiplicity_loss(mask)
    data_term = per_example[0]
    for extra in per_example[1:]:
        data_term = data_term + extra
    total = data_term / float(len(per_example)) + weights.beta * l_m
    report = LossReport.average(reports)
    report.multiplicity = l_m.item()
    report.total = total.item()
    return total, report


@dataclass
class TrainResult:
    params: SpectralOperatorParams
    state: OptimizerState
    metrics: list[dict] = field(default_factory=list)
    step: int = 0


def make_checkpoint(params, state: OptimizerState, step: int, config: TrainConfig) -> ckpt_io.Checkpoint:
    return ckpt_io.Checkpoint(
        step=step,
        params={p.name: p.data.copy() for p in params.parameters()},
        adam_m={k: v.copy() for k, v in state.m.items()},
        adam_v={k: v.copy() for k, v in state.v.items()},
        opt_step=state.step,
        meta={"config": config.to_dict(), "format": "isocore"},
    )


def params_from_checkpoint(ck: ckpt_io.Checkpoint) -> SpectralOperatorParams:
    try:
        return SpectralOperatorParams.from_arrays(ck.params["raw_mass"], ck.params["raw_basis"], ck.params["raw_eigvals"])
    except KeyError as exc:
        raise ckpt_io.CheckpointError(f"checkpoint lacks parameter {exc}") from None


def config_from_checkpoint(ck: ckpt_io.Checkpoint) -> TrainConfig:
    if "config" not in ck.meta:
        raise ckpt_io.CheckpointError("checkpoint carries no config snapshot")
    return TrainConfig.from_dict(ck.meta["config"])


def _fmt(x) -> str:
    return repr(float(x)) if not isinstance(x, int) else str(x)


def train(
    config: TrainConfig,
    out_dir=None,
    resume: ckpt_io.Checkpoint | None = None,
    max_steps: int | None = None,
    log_every: int = 500,
) -> TrainResult:
    """Run the optimization loop.

    With ``out_dir`` set, metrics are appended to ``metrics.csv`` and
    checkpoints ``ckpt-<step>.bin`` are written at step 0, every
    ``checkpoint_every`` steps and at the end. ``max_steps`` stops early
    (the schedule still spans ``config.steps``).
    """
    config.validate()
    source = PairSource(config)
    if resume is not None:
        params = params_from_checkpoint(resume)
        state = OptimizerState(
            {k: v.copy() for k, v in resume.adam_m.items()},
            {k: v.copy() for k, v in resume.adam_v.items()},
            resume.opt_step,
        )
        start = resume.step
    else:
        params = init_params(config)
        state = OptimizerState.for_params(params.parameters())
        start = 0
    stop = config.steps if max_steps is None else min(config.steps, start + max_steps)

    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        fresh = resume is None or not metrics_path.exists()
        fh = open(metrics_path, "w" if resume is None else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(METRIC_FIELDS)
        if resume is None and config.checkpoint_every:
            ckpt_io.save(out / "ckpt-000000.bin", make_checkpoint(params, state, 0, config))

    result = TrainResult(params, state, [], start)
    try:
        for step in range(start, stop):
            lr = lr_at(step, config.steps, config.lr_peak, config.lr_final, config.warmup_steps)
            samples = [source.train_sample(step, b) for b in range(config.batch_size)]
            params.zero_grad()
            total, report = step_loss(params, samples, config, step)
            if not math.isfinite(report.total):
                raise TrainingAborted(f"non-finite loss at step {step}")
            ad.backward(total)
            optimizer_step(params.parameters(), state, lr, config.weight_decay, DECAY_EXEMPT)
            row = {
                "step": step,
                "lr": lr,
                "total": report.total,
                "recon": report.reconstruction,
                "equiv": report.equivariance,
                "mult": report.multiplicity,
                "commutator": report.commutator_residual,
                "orth": report.orthogonality_residual,
            }
            result.metrics.append(row)
            result.step = step + 1
            if writer is not None:
                writer.writerow([_fmt(row[f]) for f in METRIC_FIELDS])
            done = step + 1
            if out is not None and config.checkpoint_every and (done % config.checkpoint_every == 0 or done == stop):
                fh.flush()
                ckpt_io.save(out / f"ckpt-{done:06d}.bin", make_checkpoint(params, state, done, config))
            if log_every and done % log_every == 0:
                log.info("step %d lr %.3g total %.5g recon %.5g mult %.4g", done, lr, report.total,
                         report.reconstruction, report.multiplicity)
    finally:
        if fh is not None:
            fh.close()
    return result


# -- evaluation ----------------------------------------------------------------------
def _pairs_as_arrays(dataset) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for item in dataset:
        a, b = item[0], item[1]
        pairs.append(tuple(x.flat() if isinstance(x, Observation) else np.asarray(x, dtype=np.float64) for x in (a, b)))
    return pairs


def evaluate(params: SpectralOperatorParams, dataset, tol: float = 1e-2, block_eigvals=None) -> dict:
    """Held-out diagnostics of a parameter set.

    ``equivariance_error`` is the mean of |tau c_a - c_b|^2 / |c_b|^2 in
    percent, with tau solved exactly as during training (fuzzy mask).
    ``off_block_fraction`` groups coefficients by the model's own eigenvalues
    unless ``block_eigvals`` supplies another grouping, e.g. a trained
    model's spectrum when scoring its initialization.
    """
    pairs = _pairs_as_arrays(dataset)
    if not pairs:
        raise UsageError("evaluation needs at least one pair")
    op = realize(frozen(params))
    mask = eigenvalue_mask(op.eigvals, FUZZY)
    groups_by = op.eigvals if block_eigvals is None else np.asarray(block_eigvals, dtype=np.float64)
    if groups_by.shape != op.eigvals.shape:
        raise UsageError(f"block_eigvals has shape {groups_by.shape}, expected {op.eigvals.shape}")
    errs, comm, orth, offd, offb = [], [], [], [], []
    for za, zb in pairs:
        ca, cb = project(Tensor(za), op), project(Tensor(zb), op)
        tau = estimate_map(ca, cb, mask)
        t = tau.tau_basis.data
        resid = t @ ca.data - cb.data
        denom = float(np.sum(cb.data**2))
        errs.append(float(np.sum(resid**2)) / denom if denom > 0 else 0.0)
        comm.append(commutator_residual(t, op.eigvals))
        orth.append(orthogonality_residual(t))
        offd.append(offdiag_fraction(t))
        offb.append(off_block_fraction(t, groups_by, tol))
    return {
        "equivariance_error_pct": 100.0 * float(np.mean(errs)),
        "commutator_residual": float(np.mean(comm)),
        "orthogonality_residual": float(np.max(orth)),
        "distinct_eigenvalues": count_distinct(op.eigvals, tol),
        "tolerance": tol,
        "offdiag_fraction": float(np.mean(offd)),
        "off_block_fraction": float(np.mean(offb)),
        "pairs": len(pairs),
        "k": op.k,
        "n": op.n,
    }


def evaluate_equivariance(params: SpectralOperatorParams, dataset) -> float:
    return evaluate(params, dataset)["equivariance_error_pct"]
