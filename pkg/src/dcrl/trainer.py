"""Alternating fine-tuning of the encoder and the learnable centres.

Each epoch works on a snapshot taken from the full dataset (Q, P,
assignments, manifold centres in X and Z, latent kNN graph) and then:

1. sweeps shuffled mini-batches minimising
   L1 = L_AE + alpha * L_cluster + L_rank;
2. takes ``inner_l2_steps`` full-batch steps on L2 = beta * L_LIS + L_align.

Network gradients come from the tape. Centre gradients are closed-form:
the KL term, the rank term and the alignment term each have their own
routine in :mod:`dcrl.clusterhead` / :mod:`dcrl.losses`. So L_rank and
L_align only move the centres, and L_AE only moves the network.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from . import clusterhead as ch
from . import losses
from . import ndtensor as nd
from .autoencoder import EncoderDecoder, pretrain
from .config import TrainConfig, schedule
from .errors import NumericalError
from .geometry import ManifoldCenters, NeighborGraph, knn, manifold_centers, pairwise_dist
from .metrics import acc, nmi
from .ndtensor import AdamState, adam_step, as_matrix

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "alpha", "beta", "l_ae", "l_cluster", "l_rank", "l_lis", "l_align")
LABEL_COLUMNS = ("acc", "nmi")


@dataclass
class Snapshot:
    """Per-epoch quantities; immutable while the epoch runs."""

    z: np.ndarray
    state: ch.ClusterState
    vx: ManifoldCenters
    vz: ManifoldCenters
    graph: NeighborGraph
    same: np.ndarray  # (N, k) bool: neighbour in the same manifold
    dx: np.ndarray  # (N, k) input-space distances along graph edges

    @property
    def frozen(self) -> np.ndarray:
        return np.flatnonzero(~self.vz.valid)


@dataclass
class History:
    rows: list = field(default_factory=list)
    with_labels: bool = False

    @property
    def columns(self):
        return HISTORY_COLUMNS + (LABEL_COLUMNS if self.with_labels else ())

    def append(self, row: dict):
        self.rows.append(tuple(float(row[c]) for c in self.columns))

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=np.float64).reshape(len(self.rows), len(self.columns))

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for r in self.rows:
            cells = [str(int(r[0]))] + [repr(v) for v in r[1:]]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


class DCRL:
    """Autoencoder, learnable centres and a shared Adam state."""

    def __init__(self, config: TrainConfig, model: EncoderDecoder, centers):
        self.config = config
        self.model = model
        self.centers = as_matrix(centers).copy()
        self.opt = AdamState.for_params(self.params)
        self.epoch = 0
        self.history = History()
        self.stable_epochs = 0
        self.pretrain_losses: list = []

    @property
    def params(self):
        # order fixes the Adam moment layout and the checkpoint layout
        return self.model.params + [self.centers]

    @classmethod
    def initialise(cls, x, config: TrainConfig, model: EncoderDecoder | None = None) -> "DCRL":
        """Pretrain (unless ``model`` is given) and seed centres by k-means."""
        x = as_matrix(getattr(x, "x", x))
        pre_losses = []
        if model is None:
            model, pre_losses = pretrain(
                x,
                epochs=config.pretrain_epochs,
                sigma=config.pretrain_sigma,
                batch=config.pretrain_batch,
                lr=config.pretrain_lr,
                seed=config.seed,
                hidden=config.hidden,
                latent_dim=config.latent_dim,
            )
        init = ch.init_centers(model.encode(x), config.n_clusters, seed=config.seed)
        self = cls(config, model, init.centers)
        self.pretrain_losses = list(pre_losses)
        return self

    # -- snapshot ----------------------------------------------------------

    def epoch_refresh(self, x) -> Snapshot:
        x = as_matrix(x)
        cfg = self.config
        z = self.model.encode(x)
        q = ch.soft_assign(z, self.centers)
        p = ch.target_distribution(q)
        state = ch.ClusterState(self.centers.copy(), q, p, ch.hard_assign(p))
        s = state.s
        vx = manifold_centers(x, s, cfg.n_clusters)
        vz = manifold_centers(z, s, cfg.n_clusters)
        if not vz.all_valid:
            logger.info("epoch %d: empty clusters %s, centres frozen", self.epoch, np.flatnonzero(~vz.valid).tolist())
        graph = knn(pairwise_dist(z), min(cfg.k, x.shape[0] - 1))
        same = losses.same_cluster_mask(graph, s)
        dx = losses.graph_pair_distances(x, graph)
        return Snapshot(z, state, vx, vz, graph, same, dx)

    def predict(self, x) -> ch.ClusterState:
        z = self.model.encode(x)
        return ch.state_from_centers(z, self.centers)

    def embed(self, x) -> np.ndarray:
        return self.model.encode(x)

    # -- steps -------------------------------------------------------------

    def _step(self, grads_net, grad_mu, frozen):
        if grad_mu is not None and frozen.size:
            grad_mu = grad_mu.copy()
            grad_mu[frozen] = 0.0
        keep = self.centers[frozen].copy()
        adam_step(self.params, list(grads_net) + [grad_mu], self.opt, self.config.lr)
        self.centers[frozen] = keep

    def _kl_scale(self, n):
        return 1.0 / n if self.config.per_sample else 1.0

    def _lis_scale(self, n):
        return 1.0 / n if self.config.per_sample else 1.0

    @staticmethod
    def _finite(parts, where):
        for name, v in parts.items():
            if not np.isfinite(v):
                raise NumericalError(f"{where}: {name} = {v}")

    def phase1_step(self, xb, pb, alpha, snap: Snapshot, sb=None):
        """One mini-batch step on L_AE + alpha L_cluster + L_rank.

        ``pb`` are the batch rows of the snapshot target distribution.
        Returns the loss parts and their sum ``l1``.
        """
        cfg = self.config
        model = self.model
        model.zero_grad()
        z = model.encode_t(xb)
        total = nd.mse(model.decode_t(z), xb)
        parts = {"l_ae": total.item(), "l_cluster": 0.0, "l_rank": 0.0, "l_sep": 0.0}
        grad_mu = np.zeros_like(self.centers)
        if cfg.use_cluster:
            q = ch.soft_assign_t(z, nd.Tensor(self.centers))
            kl = ch.kl_cluster_loss_t(pb, q)
            parts["l_cluster"] = kl.item()
            if alpha > 0:
                w = alpha * self._kl_scale(len(xb))
                total = total + nd.scale(kl, w)
                grad_mu += w * ch.grad_centers_cluster(z.data, self.centers, pb, q.data)
        if cfg.use_rank:
            parts["l_rank"] = losses.rank_loss(self.centers, snap.vx, cfg.kappa)
            grad_mu += losses.grad_centers_rank(self.centers, snap.vx, cfg.kappa)
        if cfg.use_sep and sb is not None:
            sep = losses.sep_loss_t(z, sb)
            parts["l_sep"] = sep.item()
            total = total + sep
        parts["l1"] = parts["l_ae"] + alpha * parts["l_cluster"] + parts["l_rank"] + parts["l_sep"]
        self._finite(parts, f"epoch {self.epoch} phase 1")
        nd.backward(total)
        self._step([p.grad for p in model.params], grad_mu, snap.frozen)
        return parts

    def phase2_step(self, x, beta, snap: Snapshot):
        """One full-batch step on beta L_LIS + L_align (encoder and centres only)."""
        cfg = self.config
        model = self.model
        model.zero_grad()
        parts = {"l_lis": 0.0, "l_align": 0.0}
        grads_enc = [None] * len(model.encoder_params)
        if cfg.use_lis:
            z = model.encode_t(x)
            lis = losses.lis_loss_t(z, snap.graph, snap.same, snap.dx)
            parts["l_lis"] = lis.item()
            if beta > 0:
                nd.backward(nd.scale(lis, beta * self._lis_scale(x.shape[0])))
                grads_enc = [p.grad for p in model.encoder_params]
        grad_mu = None
        if cfg.use_align:
            parts["l_align"] = losses.align_loss(self.centers, snap.vz)
            grad_mu = losses.grad_centers_align(self.centers, snap.vz)
        parts["l2"] = beta * parts["l_lis"] + parts["l_align"]
        self._finite(parts, f"epoch {self.epoch} phase 2")
        grads = grads_enc + [None] * len(model.decoder_params)
        self._step(grads, grad_mu, snap.frozen)
        return parts

    def joint_step(self, xb, pb, alpha, beta, snap: Snapshot, idx):
        """Single-objective step on L1 + L2 over one mini-batch.

        Used when alternation is switched off; the isometry term runs on a
        kNN graph built from the snapshot embeddings of the batch.
        """
        cfg = self.config
        model = self.model
        model.zero_grad()
        z = model.encode_t(xb)
        total = nd.mse(model.decode_t(z), xb)
        parts = {"l_ae": total.item(), "l_cluster": 0.0, "l_rank": 0.0, "l_lis": 0.0, "l_align": 0.0}
        grad_mu = np.zeros_like(self.centers)
        if cfg.use_cluster:
            q = ch.soft_assign_t(z, nd.Tensor(self.centers))
            kl = ch.kl_cluster_loss_t(pb, q)
            parts["l_cluster"] = kl.item()
            if alpha > 0:
                total = total + nd.scale(kl, alpha)
                grad_mu += alpha * ch.grad_centers_cluster(z.data, self.centers, pb, q.data)
        if cfg.use_rank:
            parts["l_rank"] = losses.rank_loss(self.centers, snap.vx, cfg.kappa)
            grad_mu += losses.grad_centers_rank(self.centers, snap.vx, cfg.kappa)
        sb = snap.state.s[idx]
        if cfg.use_lis and len(idx) > 1:
            graph = knn(pairwise_dist(snap.z[idx]), min(cfg.k, len(idx) - 1))
            lis = losses.lis_loss_t(z, graph, losses.same_cluster_mask(graph, sb), losses.graph_pair_distances(xb, graph))
            parts["l_lis"] = lis.item()
            if beta > 0:
                total = total + nd.scale(lis, beta)
        if cfg.use_sep:
            total = total + losses.sep_loss_t(z, sb)
        if cfg.use_align:
            parts["l_align"] = losses.align_loss(self.centers, snap.vz)
            grad_mu += losses.grad_centers_align(self.centers, snap.vz)
        self._finite(parts, f"epoch {self.epoch} joint")
        nd.backward(total)
        self._step([p.grad for p in model.params], grad_mu, snap.frozen)
        return parts

    # -- epochs ------------------------------------------------------------

    def run_epoch(self, x, snap: Snapshot) -> dict:
        cfg = self.config
        alpha, beta = schedule(self.epoch, cfg)
        n = x.shape[0]
        rng = np.random.default_rng([cfg.seed, 2, self.epoch])
        order = rng.permutation(n)
        sums = {"l_ae": 0.0, "l_cluster": 0.0, "l_rank": 0.0, "l_lis": 0.0, "l_align": 0.0}
        n_batches = 0
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            pb = snap.state.p[idx]
            if cfg.alternating:
                parts = self.phase1_step(x[idx], pb, alpha, snap, sb=snap.state.s[idx])
            else:
                parts = self.joint_step(x[idx], pb, alpha, beta, snap, idx)
                sums["l_lis"] += parts["l_lis"]
                sums["l_align"] += parts["l_align"]
            sums["l_ae"] += parts["l_ae"] * len(idx) / n
            sums["l_cluster"] += parts["l_cluster"]
            sums["l_rank"] += parts["l_rank"]
            n_batches += 1
        sums["l_rank"] /= n_batches
        if cfg.alternating:
            for step in range(cfg.inner_l2_steps):
                parts = self.phase2_step(x, beta, snap)
                if step == 0:
                    sums["l_lis"], sums["l_align"] = parts["l_lis"], parts["l_align"]
        else:
            sums["l_lis"] /= n_batches
            sums["l_align"] /= n_batches
        return {"epoch": self.epoch, "alpha": alpha, "beta": beta, **sums}

    def fit(self, dataset, epochs=None, on_epoch_end=None, checkpoint_path=None) -> "DCRL":
        """Train until ``epochs`` (default ``config.epochs``) have completed.

        Continues from ``self.epoch``, so a model restored from a
        checkpoint resumes where it stopped. ``on_epoch_end(self)`` runs
        after every epoch. With ``checkpoint_path`` the state is saved
        after every completed epoch, so an aborted run leaves its last
        good epoch on disk.
        """
        x = as_matrix(getattr(dataset, "x", dataset))
        labels = getattr(dataset, "labels", None)
        self.history.with_labels = labels is not None
        stop = self.config.epochs if epochs is None else epochs
        snap = self.epoch_refresh(x)
        while self.epoch < stop:
            if self.config.early_stop and self.stable_epochs >= self.config.early_stop_patience:
                logger.info("early stop at epoch %d", self.epoch)
                break
            row = self.run_epoch(x, snap)
            prev_s = snap.state.s
            snap = self.epoch_refresh(x)
            pred = snap.state.predictions(self.config.assign_by)
            if labels is not None:
                row["acc"] = acc(labels, pred)
                row["nmi"] = nmi(labels, pred)
            changed = float(np.mean(prev_s != snap.state.s))
            self.stable_epochs = self.stable_epochs + 1 if changed < self.config.early_stop_tol else 0
            self.history.append(row)
            logger.debug("epoch %d %s", self.epoch, row)
            self.epoch += 1
            if checkpoint_path is not None:
                checkpoint.save(self, checkpoint_path)
            if on_epoch_end is not None:
                on_epoch_end(self)
        return self


def fit(dataset, config: TrainConfig, model: EncoderDecoder | None = None, on_epoch_end=None, checkpoint_path=None) -> DCRL:
    """Pretrain if needed, initialise centres and run the full schedule."""
    runner = DCRL.initialise(dataset, config, model)
    return runner.fit(dataset, on_epoch_end=on_epoch_end, checkpoint_path=checkpoint_path)
