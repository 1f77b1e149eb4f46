"""Reverberation-conditioned model banks: training, selection, fusion.

A bank holds one frame classifier per RT60 grid point. At test time the
blind decay estimator produces an aggregated log-likelihood curve; the
two grid points with the largest likelihoods pick the two member models
("top-2"), their posteriors are fused with likelihood-derived weights,
and frames are classified by the fused arg max. Members optionally embed
a jointly trained dereverberation front end (kind "ejam" vs plain "eam").

Weight modes
------------
softmax (default): w_i proportional to exp(L_i - L_max). Larger
    likelihood always gets the larger weight.
literal: w_1 = L_1 / (L_1 + L_2) on the raw log-likelihoods. Kept for
    fidelity experiments; with negative log-likelihoods this inverts the
    ordering and can leave [0, 1].
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .audio import AudioSignal
from .errors import DataError, NumericError, UndecidableError
from .features import NormStats
from .network import (
    LINEAR,
    DenseBatches,
    Network,
    NetworkSpec,
    TrainConfig,
    deserialize,
    init_network,
    predict,
    serialize,
    stack,
    train,
)
from .rt60 import EstimatorConfig, LikelihoodCurve, RtEstimate, estimate_utterance, rt60_to_rho

BANK_MANIFEST_VERSION = 1

WEIGHT_MODE_SOFTMAX = "softmax"
WEIGHT_MODE_LITERAL = "literal"


@dataclass
class ModelBank:
    """One trained member per RT60 grid point plus shared feature stats."""

    grid_rt60_s: tuple
    members: List[Network]
    kind: str
    stats: Optional[NormStats] = None

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid_rt60_s)
        if len(grid) != len(self.members) or not grid:
            raise ValueError("need exactly one member per grid point")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be strictly increasing")
        if self.kind not in ("eam", "ejam"):
            raise ValueError(f"bank kind must be 'eam' or 'ejam', got {self.kind!r}")
        out_dims = {m.output_dim for m in self.members}
        if len(out_dims) != 1:
            raise ValueError(f"members disagree on output dim: {sorted(out_dims)}")
        object.__setattr__(self, "grid_rt60_s", grid)

    @property
    def num_classes(self) -> int:
        return self.members[0].output_dim


@dataclass(frozen=True)
class FusionWeights:
    """Normalized weights for the two selected members.

    In softmax mode the weights are a convex pair ordered like the
    likelihoods; literal mode reproduces the raw likelihood ratio and may
    leave [0, 1] when log-likelihoods are negative.
    """

    m1: int
    m2: int
    w_m1: float
    w_m2: float

    def __post_init__(self):
        if self.m1 == self.m2:
            raise ValueError("m1 and m2 must differ")
        if not (np.isfinite(self.w_m1) and np.isfinite(self.w_m2)):
            raise ValueError("weights must be finite")
        if abs(self.w_m1 + self.w_m2 - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")


def member_logliks(curve: LikelihoodCurve, grid_rt60_s) -> np.ndarray:
    """Aggregated log-likelihood at each grid point's decay rate.

    Grid points are matched to the nearest curve sample; the curve must
    cover every point to within half its own spacing.
    """
    out = np.empty(len(grid_rt60_s))
    spacing = np.min(np.diff(curve.rho)) if curve.rho.size > 1 else np.inf
    for i, rt60 in enumerate(grid_rt60_s):
        rho = rt60_to_rho(rt60)
        j = int(np.argmin(np.abs(curve.rho - rho)))
        if abs(curve.rho[j] - rho) > 0.5 * spacing + 1e-9:
            raise ValueError(f"likelihood curve does not cover RT60={rt60} s")
        out[i] = curve.loglik[j]
    return out


def select_top2(curve: LikelihoodCurve, grid_rt60_s) -> tuple:
    """Indices of the two most likely grid points, most likely first.

    Ties break toward the smaller RT60.
    """
    if len(grid_rt60_s) < 2:
        raise ValueError("need at least two grid points to select two members")
    values = member_logliks(curve, grid_rt60_s)
    m1 = int(np.argmax(values))  # first max = smaller RT60 on ties
    rest = values.copy()
    rest[m1] = -np.inf
    m2 = int(np.argmax(rest))
    return m1, m2


def compute_weights(
    curve: LikelihoodCurve,
    m1: int,
    m2: int,
    grid_rt60_s,
    mode: str = WEIGHT_MODE_SOFTMAX,
) -> FusionWeights:
    """Fusion weights from the aggregated likelihoods of the two members."""
    values = member_logliks(curve, grid_rt60_s)
    l1, l2 = float(values[m1]), float(values[m2])
    if not (np.isfinite(l1) and np.isfinite(l2)):
        raise NumericError("non-finite member likelihoods")
    if mode == WEIGHT_MODE_SOFTMAX:
        top = max(l1, l2)
        e1, e2 = np.exp(l1 - top), np.exp(l2 - top)
        w1 = float(e1 / (e1 + e2))
        w2 = float(e2 / (e1 + e2))
    elif mode == WEIGHT_MODE_LITERAL:
        denom = l1 + l2
        if denom == 0.0:
            raise NumericError("degenerate likelihood pair: L1 + L2 = 0")
        w1, w2 = l1 / denom, l2 / denom
    else:
        raise ValueError(f"unknown weight mode {mode!r}")
    total = w1 + w2
    return FusionWeights(m1=m1, m2=m2, w_m1=w1 / total, w_m2=w2 / total)


def fuse_two(p1, p2, weights: FusionWeights) -> np.ndarray:
    """Weighted combination of two posterior arrays of equal shape."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise ValueError(f"posterior shape mismatch: {p1.shape} vs {p2.shape}")
    return weights.w_m1 * p1 + weights.w_m2 * p2


def fuse_average(posteriors) -> np.ndarray:
    """Unweighted mean of posterior arrays of equal shape."""
    if len(posteriors) == 0:
        raise ValueError("cannot average an empty posterior list")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in posteriors])
    return stacked.mean(axis=0)


@dataclass
class ClassificationDiagnostics:
    """What the selector decided for one utterance."""

    mode: str
    estimate: Optional[RtEstimate] = None
    weights: Optional[FusionWeights] = None
    fallback_to_average: bool = False

    def to_dict(self):
        out = {"mode": self.mode, "fallback_to_average": self.fallback_to_average}
        if self.estimate is not None:
            out["rt60_estimate_s"] = self.estimate.rt60_s
            out["rho_hat"] = self.estimate.rho_hat
            out["num_segments"] = len(self.estimate.per_segment)
        if self.weights is not None:
            out["m1"] = self.weights.m1
            out["m2"] = self.weights.m2
            out["w_m1"] = self.weights.w_m1
            out["w_m2"] = self.weights.w_m2
        return out


def classify_utterance(
    bank: ModelBank,
    spliced_features: np.ndarray,
    mode: str = "top2",
    member: Optional[int] = None,
    audio: Optional[AudioSignal] = None,
    estimate: Optional[RtEstimate] = None,
    estimator_cfg: EstimatorConfig = EstimatorConfig(),
    weight_mode: str = WEIGHT_MODE_SOFTMAX,
) -> tuple:
    """Frame predictions for one utterance; returns ``(labels, diagnostics)``.

    Modes: ``single`` runs one member (``member`` index required),
    ``average`` fuses all members equally, ``top2`` runs blind RT60
    estimation (or reuses a precomputed ``estimate``) to select and weight
    the two most likely members. An undecidable estimate falls back to
    ``average`` with a diagnostic flag.
    """
    x = np.asarray(spliced_features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("spliced_features must be 2-D (frames x dim)")

    if mode == "single":
        if member is None or not 0 <= member < len(bank.members):
            raise ValueError(f"single mode needs a valid member index, got {member}")
        posterior = predict(bank.members[member], x)
        return posterior.argmax(axis=1), ClassificationDiagnostics(mode="single")

    if mode == "average":
        posterior = fuse_average([predict(m, x) for m in bank.members])
        return posterior.argmax(axis=1), ClassificationDiagnostics(mode="average")

    if mode != "top2":
        raise ValueError(f"unknown mode {mode!r}")

    if len(bank.members) == 1:
        posterior = predict(bank.members[0], x)
        return posterior.argmax(axis=1), ClassificationDiagnostics(mode="top2")

    diag = ClassificationDiagnostics(mode="top2")
    if estimate is None:
        if audio is None:
            raise ValueError("top2 mode needs the utterance audio or a precomputed estimate")
        try:
            estimate = estimate_utterance(audio, estimator_cfg)
        except UndecidableError:
            posterior = fuse_average([predict(m, x) for m in bank.members])
            diag.fallback_to_average = True
            return posterior.argmax(axis=1), diag
    diag.estimate = estimate
    m1, m2 = select_top2(estimate.aggregated_curve, bank.grid_rt60_s)
    weights = compute_weights(
        estimate.aggregated_curve, m1, m2, bank.grid_rt60_s, mode=weight_mode
    )
    diag.weights = weights
    posterior = fuse_two(
        predict(bank.members[m1], x), predict(bank.members[m2], x), weights
    )
    return posterior.argmax(axis=1), diag


# ---------------------------------------------------------------------------
# Bank training


@dataclass
class ConditionData:
    """Feature-extracted data for one grid condition.

    ``train_am`` yields (spliced reverberant inputs, integer labels)
    batches; ``train_fm`` (only needed for jointly trained banks) yields
    (spliced reverberant inputs, frame-aligned spliced clean targets).
    Dev data is materialized since dev sets are small.
    """

    rt60_s: float
    train_am: object
    dev_inputs: np.ndarray
    dev_labels: np.ndarray
    train_fm: Optional[object] = None
    dev_clean_targets: Optional[np.ndarray] = None


def frame_error_rate(predictions, labels) -> float:
    """Percentage of frames whose predicted class differs from the label."""
    predictions = np.asarray(predictions).ravel()
    labels = np.asarray(labels).ravel()
    if predictions.size != labels.size:
        raise ValueError(f"length mismatch: {predictions.size} vs {labels.size}")
    if predictions.size == 0:
        raise ValueError("empty prediction array")
    return 100.0 * float(np.mean(predictions != labels))


def _member_seed(base_seed: int, tag: int) -> int:
    # One shared init per bank stage: member differences then come from the
    # training data alone, not initialization luck.
    return (base_seed * 1_000_003 + tag * 101) % (2**31 - 1)


class MappedBatches:
    """Provider view that routes inputs through a frozen front-end net."""

    def __init__(self, base, front: Network):
        self.base = base
        self.front = front
        self.loss_mask = getattr(base, "loss_mask", None)

    def __len__(self):
        return len(self.base)

    def batch(self, rows):
        x, y = self.base.batch(rows)
        return predict(self.front, x), y


def train_bank_eam(
    conditions: List[ConditionData],
    hidden_dims,
    train_cfg: TrainConfig,
    seed: int = 0,
    hidden_activation: str = "sigmoid",
    num_classes: Optional[int] = None,
    stats: Optional[NormStats] = None,
) -> tuple:
    """Train one acoustic model per condition; returns ``(bank, histories)``.

    Every member must beat chance on its matched dev set, otherwise the
    whole bank build aborts with the failing condition named.
    """
    if not conditions:
        raise ValueError("no conditions to train on")
    histories = {}
    members = []
    for cond in conditions:
        input_dim = cond.dev_inputs.shape[1]
        k = num_classes or int(cond.dev_labels.max()) + 1
        spec = NetworkSpec(
            layer_dims=(input_dim, *hidden_dims, k),
            hidden_activation=hidden_activation,
            output_head="softmax",
            seed=_member_seed(seed, 1),
        )
        net = init_network(spec)
        rng = np.random.default_rng([seed, 1])
        dev = DenseBatches(cond.dev_inputs, cond.dev_labels)
        histories[cond.rt60_s] = train(net, cond.train_am, dev, train_cfg, rng)
        fer = frame_error_rate(predict(net, cond.dev_inputs).argmax(axis=1), cond.dev_labels)
        chance = 100.0 * (1.0 - 1.0 / k)
        if fer >= chance:
            raise NumericError(
                f"member for RT60={cond.rt60_s} s failed to beat chance on matched dev "
                f"data ({fer:.1f}% >= {chance:.1f}%)"
            )
        members.append(net)
    bank = ModelBank(
        grid_rt60_s=tuple(c.rt60_s for c in conditions),
        members=members,
        kind="eam",
        stats=stats,
    )
    return bank, histories


def train_feature_mapping(
    cond: ConditionData,
    hidden_dims,
    train_cfg: TrainConfig,
    seed: int,
    l2_weight: float = 0.0,
    hidden_activation: str = "sigmoid",
    center_frame_only: bool = False,
    center_dim: Optional[int] = None,
) -> tuple:
    """Stage 1: regress reverberant spliced features onto clean ones."""
    if cond.train_fm is None or cond.dev_clean_targets is None:
        raise DataError(f"condition RT60={cond.rt60_s} s lacks clean feature targets")
    dim = cond.dev_inputs.shape[1]
    if cond.dev_clean_targets.shape != cond.dev_inputs.shape:
        raise DataError("clean targets misaligned with reverberant inputs")
    mask = None
    if center_frame_only:
        # Score only the center frame block of the spliced target vector.
        if center_dim is None or dim % center_dim != 0:
            raise ValueError("center_frame_only needs a center_dim dividing the input dim")
        n_blocks = dim // center_dim
        lo = (n_blocks // 2) * center_dim
        mask = np.zeros(dim)
        mask[lo : lo + center_dim] = 1.0
        cond.train_fm.loss_mask = mask
    spec = NetworkSpec(
        layer_dims=(dim, *hidden_dims, dim),
        hidden_activation=hidden_activation,
        output_head=LINEAR,
        l2_weight=l2_weight,
        seed=_member_seed(seed, 2),
    )
    net = init_network(spec)
    if not hidden_dims:
        # square linear mapping: start at the identity ("no mapping") so
        # training walks the convex objective toward the least-squares
        # dereverberator without ever losing the input's information
        net.weights[0][:] = np.eye(dim)
        net.biases[0][:] = 0.0
    rng = np.random.default_rng([seed, 2])
    history = train(
        net,
        cond.train_fm,
        DenseBatches(cond.dev_inputs, cond.dev_clean_targets, loss_mask=mask),
        train_cfg,
        rng,
    )
    return net, history


def train_bank_ejam(
    conditions: List[ConditionData],
    fm_hidden_dims,
    am_hidden_dims,
    fm_train_cfg: TrainConfig,
    am_train_cfg: TrainConfig,
    joint_train_cfg: TrainConfig,
    seed: int = 0,
    fm_l2_weight: float = 0.0,
    hidden_activation: str = "sigmoid",
    num_classes: Optional[int] = None,
    stats: Optional[NormStats] = None,
    center_frame_only: bool = False,
    center_dim: Optional[int] = None,
) -> tuple:
    """Per condition: train the mapping, train the classifier on mapped
    features, stack, and jointly fine-tune with cross entropy.

    Returns ``(bank, histories)`` where histories maps each condition to
    the three stage histories.
    """
    if not conditions:
        raise ValueError("no conditions to train on")
    members = []
    histories = {}
    for cond in conditions:
        fm, fm_hist = train_feature_mapping(
            cond, fm_hidden_dims, fm_train_cfg, seed,
            l2_weight=fm_l2_weight, hidden_activation=hidden_activation,
            center_frame_only=center_frame_only, center_dim=center_dim,
        )
        mapped_dev = predict(fm, cond.dev_inputs)
        k = num_classes or int(cond.dev_labels.max()) + 1
        am_spec = NetworkSpec(
            layer_dims=(mapped_dev.shape[1], *am_hidden_dims, k),
            hidden_activation=hidden_activation,
            output_head="softmax",
            seed=_member_seed(seed, 3),
        )
        am = init_network(am_spec)
        am_rng = np.random.default_rng([seed, 3])
        am_hist = train(
            am,
            MappedBatches(cond.train_am, fm),
            DenseBatches(mapped_dev, cond.dev_labels),
            am_train_cfg,
            am_rng,
        )
        if not np.isfinite(am_hist.dev_loss[-1]):
            raise NumericError(f"classifier training diverged at RT60={cond.rt60_s} s")
        joint = stack(fm, am)
        joint_rng = np.random.default_rng([seed, 4])
        joint_hist = train(
            joint,
            cond.train_am,
            DenseBatches(cond.dev_inputs, cond.dev_labels),
            joint_train_cfg,
            joint_rng,
        )
        histories[cond.rt60_s] = {"fm": fm_hist, "am": am_hist, "joint": joint_hist}
        members.append(joint)
    bank = ModelBank(
        grid_rt60_s=tuple(c.rt60_s for c in conditions),
        members=members,
        kind="ejam",
        stats=stats,
    )
    return bank, histories


# ---------------------------------------------------------------------------
# Bank persistence


def save_bank(bank: ModelBank, directory, stats_path=None) -> Path:
    """Serialize members plus a JSON manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for rt60, member in zip(bank.grid_rt60_s, bank.members):
        name = f"member_rt{int(round(rt60 * 1000)):04d}ms.ejam"
        path = directory / name
        serialize(member, path)
        entries.append({
            "rt60_s": rt60,
            "model_file": name,
            "crc32": zlib.crc32(path.read_bytes()),
        })
    if bank.stats is not None and stats_path is None:
        stats_path = directory / "norm_stats.ejmx"
        bank.stats.save(stats_path)
    stats_rel = None
    if stats_path is not None:
        stats_rel = os.path.relpath(Path(stats_path), directory)
    manifest = {
        "format_version": BANK_MANIFEST_VERSION,
        "kind": bank.kind,
        "grid_rt60_s": list(bank.grid_rt60_s),
        "members": entries,
        "norm_stats": stats_rel,
    }
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_bank(manifest_path) -> ModelBank:
    """Load a bank from its manifest, verifying member checksums."""
    manifest_path = Path(manifest_path)
    directory = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != BANK_MANIFEST_VERSION:
        raise DataError(f"{manifest_path}: unsupported manifest version")
    members = []
    for entry in manifest["members"]:
        path = directory / entry["model_file"]
        if not path.exists():
            raise DataError(f"{manifest_path}: missing model file {entry['model_file']}")
        if zlib.crc32(path.read_bytes()) != entry["crc32"]:
            raise DataError(f"{manifest_path}: checksum mismatch for {entry['model_file']}")
        members.append(deserialize(path))
    stats = None
    if manifest.get("norm_stats"):
        stats = NormStats.load(directory / manifest["norm_stats"])
    return ModelBank(
        grid_rt60_s=tuple(manifest["grid_rt60_s"]),
        members=members,
        kind=manifest["kind"],
        stats=stats,
    )
