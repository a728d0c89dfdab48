"""Autoencoder representation learning and feature-based distillation.

The pipeline has four stages: each party fits a local autoencoder and
encodes its aligned rows; the label holder concatenates both latent
blocks and fits a joint ("teacher") autoencoder on them; a final
("student") autoencoder is then trained on the label holder's full
table with a composed loss that adds a latent-matching term for rows
whose teacher representation is known; finally the whole table is
re-expressed through the student encoder for downstream classification.

Latent widths are fixed so the pieces plug together: local encoders end
at 128 (label holder) and 256 (feature-only party), the teacher maps
the 384-dim concatenation to 256, and the student ends at 256 so its
output is directly comparable to the teacher's.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import FeatureMatrix
from .errors import AlignmentError, ConfigError, DataError, DimensionError
from .nn.layers import (
    ACT_IDENTITY,
    ACT_SELU,
    Mlp,
    backward,
    build_mlp,
    forward,
    repack_into_flat,
)
from .nn.losses import LOSS_MAE, LOSS_MSE
from .nn.optim import FlatAdam
from .nn.train import TrainConfig, TrainTrace, run_epoch, train
from .validation import as_matrix

# Encoder widths by role; `dim` is the party's feature count where needed.
ROLE_LOCAL_ACTIVE = "local_active"
ROLE_LOCAL_PASSIVE = "local_passive"
ROLE_JOINT = "joint"
ROLE_FINAL = "final"

LOCAL_ACTIVE_LATENT = 128
LOCAL_PASSIVE_LATENT = 256
JOINT_INPUT = LOCAL_ACTIVE_LATENT + LOCAL_PASSIVE_LATENT
JOINT_LATENT = 256
FINAL_LATENT = JOINT_LATENT  # dimensional consistency: student output == teacher output


def encoder_widths(role: str, dim: int | None = None) -> list[int]:
    if role == ROLE_LOCAL_ACTIVE:
        return [_need_dim(role, dim), 64, LOCAL_ACTIVE_LATENT]
    if role == ROLE_LOCAL_PASSIVE:
        return [_need_dim(role, dim), 128, LOCAL_PASSIVE_LATENT]
    if role == ROLE_JOINT:
        return [JOINT_INPUT, 256, JOINT_LATENT]
    if role == ROLE_FINAL:
        return [_need_dim(role, dim), 256, FINAL_LATENT]
    raise ConfigError(f"unknown encoder role {role!r}")


def _need_dim(role, dim):
    if dim is None or dim < 1:
        raise ConfigError(f"role {role!r} needs a positive feature count, got {dim}")
    return int(dim)


@dataclass
class AlignedRepresentations:
    """Latent vectors for the shared rows, keyed by sample ID."""

    ids: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=str)
        if len(set(self.ids.tolist())) != len(self.ids):
            raise AlignmentError("duplicate ids in representations")
        if self.z.shape[0] != len(self.ids):
            raise DimensionError(
                f"{self.z.shape[0]} latent rows for {len(self.ids)} ids"
            )


def row_norm_loss(kind: str, pred: np.ndarray, target: np.ndarray):
    """Mean over rows of the per-sample norm: squared L2 for "mse",
    L1 for "mae". The per-sample terms are unnormalized sums over
    dimensions, so a latent-matching term over 256 dimensions carries
    its full weight relative to a narrow reconstruction term.
    """
    diff = pred - target
    n = diff.shape[0]
    if kind == LOSS_MSE:
        value = float(np.sum(diff * diff, dtype=np.float64)) / n
        grad = diff * (2.0 / n)
    elif kind == LOSS_MAE:
        value = float(np.sum(np.abs(diff), dtype=np.float64)) / n
        grad = np.sign(diff) * (1.0 / n)
    else:
        raise ConfigError(f"unknown loss kind {kind!r}")
    return value, grad


def composed_batch_loss(
    encoder: Mlp,
    decoder: Mlp,
    xb: np.ndarray,
    teacher_zb: np.ndarray | None = None,
    maskb: np.ndarray | None = None,
    lam: float = 0.0,
    distill_loss: str = LOSS_MSE,
    recon_loss: str = LOSS_MSE,
    want_grads: bool = True,
):
    """One batch of the composed objective.

    Every row contributes its reconstruction norm; rows flagged in
    `maskb` (whose teacher vector sits in the same row of `teacher_zb`)
    additionally contribute `lam` times the latent-matching norm,
    averaged over the flagged rows only so sparse batches keep the full
    distillation pressure. With lam == 0 or no flagged rows this is
    exactly the reconstruction objective, gradients included.

    Returns (loss, [encoder grads..., decoder grads...]) or (loss, None).
    """
    acts_e = forward(encoder, xb)
    z = acts_e[-1]
    acts_d = forward(decoder, z)
    loss, g_out = row_norm_loss(recon_loss, acts_d[-1], xb)
    gz_extra = None
    if lam > 0 and maskb is not None and maskb.any():
        dval, dgrad = row_norm_loss(distill_loss, z[maskb], teacher_zb[maskb])
        loss = loss + lam * dval
        gz_extra = np.zeros_like(z)
        gz_extra[maskb] = lam * dgrad
    if not want_grads:
        return loss, None
    g_dec, gz = backward(decoder, z, acts_d, g_out)
    if gz_extra is not None:
        gz = gz + gz_extra
    g_enc, _ = backward(encoder, xb, acts_e, gz)
    return loss, g_enc + g_dec


class Autoencoder:
    """Symmetric autoencoder: decoder widths are the encoder's reversed.

    Every layer uses SELU except the decoder output, which is linear so
    standardized features of any sign can be reconstructed. fit()
    re-initializes the weights from `seed` before training, so two fits
    with identical inputs produce identical weights.
    """

    def __init__(
        self,
        widths,
        *,
        batch_size: int = 32,
        max_epochs: int = 200,
        patience: int = 10,
        seed: int = 0,
        lr: float = 1e-3,
        recon_loss: str = LOSS_MSE,
    ):
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise ConfigError("autoencoder needs at least [in, latent] widths")
        if any(w <= 0 for w in widths):
            raise ConfigError(f"widths must be positive, got {widths}")
        self.widths = widths
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.lr = lr
        self.recon_loss = recon_loss
        self._build()

    def get_params(self, deep=True):
        return {
            "widths": list(self.widths),
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "lr": self.lr,
            "recon_loss": self.recon_loss,
        }

    def set_params(self, **kw):
        for k, v in kw.items():
            if k not in self.get_params():
                raise ConfigError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        self._build()
        return self

    def _build(self) -> None:
        rng = np.random.default_rng(self.seed)
        n_enc = len(self.widths) - 1
        self.encoder_ = build_mlp(self.widths, [ACT_SELU] * n_enc, rng=rng)
        dec_widths = list(reversed(self.widths))
        dec_acts = [ACT_SELU] * (n_enc - 1) + [ACT_IDENTITY]
        self.decoder_ = build_mlp(dec_widths, dec_acts, rng=rng)
        self.trace_: Optional[TrainTrace] = None

    @property
    def input_dim(self) -> int:
        return self.encoder_.input_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder_.output_dim

    # -- inference ---------------------------------------------------------

    def transform(self, x) -> np.ndarray:
        x = as_matrix(x, "x", n_cols=self.input_dim, dtype=np.float32)
        return forward(self.encoder_, x)[-1]

    encode = transform

    def inverse_transform(self, z) -> np.ndarray:
        z = as_matrix(z, "z", n_cols=self.latent_dim, dtype=np.float32)
        return forward(self.decoder_, z)[-1]

    decode = inverse_transform

    def reconstruct(self, x) -> np.ndarray:
        return self.inverse_transform(self.transform(x))

    # -- training ----------------------------------------------------------

    def fit(self, x, x_val=None):
        """Minimize the reconstruction loss; early-stop on x_val when given."""
        return self.fit_distilled(x, None, None, 0.0, LOSS_MSE, x_val, None, None)

    def fit_distilled(
        self,
        x,
        teacher_z: np.ndarray | None,
        teacher_mask: np.ndarray | None,
        lam: float,
        distill_loss: str,
        x_val=None,
        val_teacher_z: np.ndarray | None = None,
        val_teacher_mask: np.ndarray | None = None,
    ):
        """Train with the composed loss (see composed_batch_loss).

        `teacher_mask` flags the rows of `x` whose teacher vector is
        known; the i-th row of `teacher_z` is that row's target. Batches
        without any flagged row, or lam == 0, reduce exactly to
        reconstruction.
        """
        if lam < 0:
            raise ConfigError(f"lam must be >= 0, got {lam}")
        if distill_loss not in (LOSS_MSE, LOSS_MAE):
            raise ConfigError(f"unknown distill loss {distill_loss!r}")
        x = as_matrix(x, "x", n_cols=self.widths[0], dtype=np.float32)
        use_distill = lam > 0 and teacher_mask is not None and bool(np.any(teacher_mask))
        if use_distill:
            teacher_z = as_matrix(teacher_z, "teacher_z", n_cols=self.widths[-1], dtype=np.float32)
            teacher_mask = np.asarray(teacher_mask, dtype=bool)
            if teacher_z.shape[0] != x.shape[0] or teacher_mask.shape[0] != x.shape[0]:
                raise DimensionError("teacher arrays must align row-wise with x")
        self._build()
        enc, dec = self.encoder_, self.decoder_
        flat = repack_into_flat([enc, dec])
        params = enc.params() + dec.params()

        def objective(idx, want_grads):
            return composed_batch_loss(
                enc,
                dec,
                x[idx],
                teacher_z[idx] if use_distill else None,
                teacher_mask[idx] if use_distill else None,
                lam if use_distill else 0.0,
                distill_loss,
                self.recon_loss,
                want_grads,
            )

        val_cb = None
        if x_val is not None:
            xv = as_matrix(x_val, "x_val", n_cols=self.widths[0], dtype=np.float32)
            v_use = (
                lam > 0
                and val_teacher_mask is not None
                and bool(np.any(val_teacher_mask))
            )
            vz = vm = None
            if v_use:
                vz = as_matrix(val_teacher_z, "val_teacher_z", n_cols=self.widths[-1], dtype=np.float32)
                vm = np.asarray(val_teacher_mask, dtype=bool)

            def val_cb():
                loss, _ = composed_batch_loss(
                    enc,
                    dec,
                    xv,
                    vz,
                    vm,
                    lam if v_use else 0.0,
                    distill_loss,
                    self.recon_loss,
                    want_grads=False,
                )
                return loss

        cfg = TrainConfig(
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            seed=self.seed,
            lr=self.lr,
        )
        self.trace_ = train(
            params, objective, x.shape[0], cfg, val_cb, optimizer=FlatAdam(flat, lr=self.lr)
        )
        return self

    def reconstruction_stepper(self, x, *, batch_size=32, seed=0, lr=1e-3):
        """Single-epoch driver over the current weights (used by the
        representation-quality probe, which interleaves training with
        evaluation). Does not re-initialize.
        """
        x = as_matrix(x, "x", n_cols=self.widths[0], dtype=np.float32)
        return _ReconStepper(self, x, batch_size, seed, lr)


class _ReconStepper:
    def __init__(self, ae: Autoencoder, x, batch_size, seed, lr):
        self.ae = ae
        self.x = x
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        flat = repack_into_flat([ae.encoder_, ae.decoder_])
        self.optimizer = FlatAdam(flat, lr=lr)
        self.epoch = 0

    def run_epoch(self) -> float:
        self.epoch += 1
        enc, dec = self.ae.encoder_, self.ae.decoder_
        x = self.x

        def objective(idx, want_grads):
            return composed_batch_loss(
                enc, dec, x[idx], recon_loss=self.ae.recon_loss, want_grads=want_grads
            )

        perm = self.rng.permutation(x.shape[0])
        return run_epoch(
            objective, perm, self.batch_size, self.optimizer, epoch=self.epoch
        )


def build_autoencoder(role: str, dim: int | None = None, seed: int = 0, **kw) -> Autoencoder:
    """Construct the architecture for a pipeline role (see encoder_widths)."""
    return Autoencoder(encoder_widths(role, dim), seed=seed, **kw)


def train_reconstruction(ae: Autoencoder, x, x_val=None) -> TrainTrace:
    ae.fit(x, x_val)
    return ae.trace_


def _split_by_ids(ids: np.ndarray, val_ids) -> tuple[np.ndarray, np.ndarray]:
    if not val_ids:
        return np.ones(len(ids), dtype=bool), np.zeros(len(ids), dtype=bool)
    val = np.isin(ids, np.asarray(sorted(val_ids), dtype=str))
    return ~val, val


def join_aligned(
    local_active: AlignedRepresentations, local_passive: AlignedRepresentations
) -> tuple[np.ndarray, np.ndarray]:
    """Join the two latent blocks row-wise by sample ID.

    The label holder's order is canonical, so the result does not depend
    on the other party's row order. Returns (ids, concatenated latents).
    """
    a_ids = set(local_active.ids.tolist())
    p_ids = set(local_passive.ids.tolist())
    if a_ids != p_ids:
        missing_p = sorted(a_ids - p_ids)[:20]
        missing_a = sorted(p_ids - a_ids)[:20]
        raise AlignmentError(
            f"representation id sets differ; missing from passive side: {missing_p}; "
            f"missing from active side: {missing_a}"
        )
    order = {i: r for r, i in enumerate(local_passive.ids.tolist())}
    p_rows = np.array([order[i] for i in local_active.ids.tolist()])
    concat = np.concatenate(
        [local_active.z, local_passive.z[p_rows]], axis=1
    ).astype(np.float32)
    return local_active.ids.copy(), concat


def learn_joint_representation(
    local_active: AlignedRepresentations,
    local_passive: AlignedRepresentations,
    *,
    val_ids=None,
    widths=None,
    batch_size: int = 32,
    max_epochs: int = 200,
    patience: int = 10,
    seed: int = 0,
) -> tuple[Autoencoder, AlignedRepresentations]:
    """Fit the teacher on the concatenated local latents of the shared
    rows (joined by ID) and return it with its latent output for every
    joined row.
    """
    ids, concat = join_aligned(local_active, local_passive)
    if widths is None:
        widths = encoder_widths(ROLE_JOINT)
    if concat.shape[1] != widths[0]:
        raise DimensionError(
            f"concatenated latents have {concat.shape[1]} columns, "
            f"teacher expects {widths[0]}"
        )
    ae = Autoencoder(
        widths, batch_size=batch_size, max_epochs=max_epochs, patience=patience, seed=seed
    )
    train_mask, val_mask = _split_by_ids(ids, val_ids)
    ae.fit(concat[train_mask], concat[val_mask] if val_mask.any() else None)
    joint = AlignedRepresentations(ids, ae.transform(concat))
    return ae, joint


def distill_final_encoder(
    active_data: FeatureMatrix,
    joint: AlignedRepresentations | None,
    *,
    lam: float = 0.01,
    distill_loss: str = LOSS_MSE,
    val_ids=None,
    widths=None,
    batch_size: int = 32,
    max_epochs: int = 200,
    patience: int = 10,
    seed: int = 0,
) -> Autoencoder:
    """Train the student on the label holder's full table (shared rows and
    private rows together); only rows present in `joint` contribute the
    latent-matching term. Passing joint=None or lam=0 is the ablation:
    plain reconstruction over the same data.
    """
    x = active_data.features
    if widths is None:
        widths = encoder_widths(ROLE_FINAL, x.shape[1])
    teacher_z = None
    teacher_mask = None
    if joint is not None and lam > 0:
        row_of = {i: r for r, i in enumerate(active_data.ids.tolist())}
        missing = [i for i in joint.ids.tolist() if i not in row_of]
        if missing:
            raise AlignmentError(
                f"joint ids not found in the active table: {missing[:20]}"
            )
        if joint.z.shape[1] != widths[-1]:
            raise DimensionError(
                f"teacher latents have {joint.z.shape[1]} columns, "
                f"student ends at {widths[-1]}"
            )
        teacher_mask = np.zeros(active_data.n_rows, dtype=bool)
        teacher_z = np.zeros((active_data.n_rows, widths[-1]), dtype=np.float32)
        for i, zrow in zip(joint.ids.tolist(), joint.z):
            r = row_of[i]
            teacher_mask[r] = True
            teacher_z[r] = zrow
    ae = Autoencoder(
        widths, batch_size=batch_size, max_epochs=max_epochs, patience=patience, seed=seed
    )
    train_mask, val_mask = _split_by_ids(active_data.ids, val_ids)
    ae.fit_distilled(
        x[train_mask],
        teacher_z[train_mask] if teacher_z is not None else None,
        teacher_mask[train_mask] if teacher_mask is not None else None,
        lam,
        distill_loss,
        x[val_mask] if val_mask.any() else None,
        teacher_z[val_mask] if teacher_z is not None else None,
        teacher_mask[val_mask] if teacher_mask is not None else None,
    )
    return ae


def build_enhanced_dataset(ae: Autoencoder, active_data: FeatureMatrix) -> FeatureMatrix:
    """Re-express every row of the label holder's table through the
    student encoder; IDs and labels pass through untouched.
    """
    if active_data.labels is None:
        raise DataError("enhanced dataset needs labels for supervised training")
    z = ae.transform(active_data.features)
    names = [f"z{i}" for i in range(z.shape[1])]
    return FeatureMatrix(active_data.ids.copy(), z, names, active_data.labels.copy())
