"""Rollout-noise training: a few gradient-free self-predicted steps, then one supervised step."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..geometry import patch_means
from ..model import ModelParams, Simulator
from ..model.params import save_checkpoint
from ..model.tokens import SceneStatic
from .losses import LossConfig, loss_collision, loss_mse, loss_normal, patch_centers_t, total_loss, \
    vertex_normals_t

log = logging.getLogger(__name__)

# the reference models are all trained for ten epochs
DEFAULT_EPOCHS = 10
LOG_COLUMNS = ["step", "total", "mse", "normal", "coll_body", "coll_garment", "noise_steps",
               "wall_time"]


@dataclass
class TrainConfig:
    noise_steps: int = 3
    lr: float = 1e-4
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = 1
    seed: int = 0
    max_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.noise_steps < 0:
            raise ValueError("noise_steps must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


class Adam:
    def __init__(self, params: ModelParams, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}

    def step(self):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in self.params.tensors.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class Sample:
    seq: object
    static: SceneStatic
    garment_radius: float


def rest_edge_length(static: SceneStatic, positions, layer: int = 0) -> float:
    sl = static.layer_slice(layer)
    e = static.topology.edges
    e = e[(e[:, 0] >= sl.start) & (e[:, 0] < sl.stop)]
    x = np.asarray(positions)
    return float(np.mean(np.linalg.norm(x[e[:, 0]] - x[e[:, 1]], axis=1)))


def one_step_loss(sim: Simulator, sample: Sample, inp, t: int, loss_cfg: LossConfig,
                  rng: np.random.Generator):
    """Predict frame t+1 from ``inp`` and score it against the sequence's frame t+1."""
    seq, static = sample.seq, sample.static
    res = sim.step(static, inp, rng)
    pred = res.positions
    truth = seq.positions[t + 1]
    comps = {
        "mse": loss_mse(pred, truth, patch_centers_t(pred, static.patch_map),
                        patch_means(truth, static.patch_map)),
        "normal": loss_normal(pred, truth, static.topology),
    }
    if seq.body.shape[1]:
        comps["coll_body"] = loss_collision(pred, seq.body[t + 1], seq.body_normals[t + 1],
                                            loss_cfg.d_eps)
    if static.n_layers > 1:
        inner, outer = static.layer_slice(0), static.layer_slice(1)
        inner_pred = pred[inner]
        inner_n = vertex_normals_t(static.layer_topologies[0], inner_pred)
        radius = loss_cfg.garment_anchor_radius or sample.garment_radius
        comps["coll_garment"] = loss_collision(pred[outer], inner_pred, inner_n, loss_cfg.d_eps,
                                               radius)
    return total_loss(comps, loss_cfg), comps


class Trainer:
    def __init__(self, params: ModelParams, sequences: list, train_cfg: TrainConfig,
                 loss_cfg: LossConfig | None = None):
        if not sequences:
            raise ValueError("training needs at least one sequence")
        self.params = params
        self.sim = Simulator(params)
        self.cfg = train_cfg
        self.loss_cfg = loss_cfg or LossConfig()
        self.rng = np.random.default_rng(train_cfg.seed)
        self.opt = Adam(params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2)
        self.samples = []
        for seq in sequences:
            static = self.sim.prepare(seq)
            self.samples.append(Sample(seq, static, rest_edge_length(static, seq.positions[0])))
        h = params.config.history
        for s in self.samples:
            if s.seq.n_frames < h + 2:
                raise ValueError(f"sequence with {s.seq.n_frames} frames is too short to train on")
        self.step_count = 0
        self.log_rows: list[dict] = []

    def steps_per_epoch(self) -> int:
        h = self.params.config.history
        targets = sum(s.seq.n_frames - 1 - h for s in self.samples)
        return max(1, math.ceil(targets / self.cfg.batch_size))

    def total_steps(self) -> int:
        if self.cfg.max_steps is not None:
            return self.cfg.max_steps
        return self.cfg.epochs * self.steps_per_epoch()

    def _draw(self):
        h = self.params.config.history
        k = int(self.rng.integers(len(self.samples)))
        sample = self.samples[k]
        last_t = sample.seq.n_frames - 2
        noise = int(self.rng.integers(0, self.cfg.noise_steps + 1))
        noise = min(noise, last_t - h)
        t = int(self.rng.integers(h + noise, last_t + 1))
        return sample, t, noise

    def noisy_inputs(self, sample: Sample, t: int, noise: int):
        """Inputs at frame t after ``noise`` gradient-free model steps from frame t - noise."""
        cur = self.sim.inputs(sample.seq, t - noise)
        for k in range(noise):
            x, v = self.sim.predict(sample.static, cur, self.rng)
            cur = cur.advanced(x, v, self.sim.inputs(sample.seq, t - noise + k + 1))
        return cur

    def train_step(self) -> dict:
        self.params.zero_grad()
        total = None
        parts = {c: 0.0 for c in ("mse", "normal", "coll_body", "coll_garment")}
        noise_used = []
        for _ in range(self.cfg.batch_size):
            sample, t, noise = self._draw()
            inp = self.noisy_inputs(sample, t, noise)
            loss, comps = one_step_loss(self.sim, sample, inp, t, self.loss_cfg, self.rng)
            total = loss if total is None else total + loss
            for name, c in comps.items():
                parts[name] += float(c.data) / self.cfg.batch_size
            noise_used.append(noise)
        total = total * (1.0 / self.cfg.batch_size)
        ad.backward(total)
        self.opt.step()
        self.step_count += 1
        row = {"step": self.step_count, "total": float(total.data), **parts,
               "noise_steps": int(np.mean(noise_used))}
        return row

    def fit(self, steps: int | None = None, log_path=None, callback=None) -> list[dict]:
        steps = self.total_steps() if steps is None else steps
        start = time.perf_counter()
        writer = fh = None
        if log_path is not None:
            fh = open(log_path, "w", newline="")
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            writer.writeheader()
        try:
            for _ in range(steps):
                row = self.train_step()
                row["wall_time"] = round(time.perf_counter() - start, 4)
                self.log_rows.append(row)
                if writer:
                    writer.writerow(row)
                if callback:
                    callback(row)
                if self.step_count % 100 == 0:
                    log.info("step %d loss %.4e", self.step_count, row["total"])
        finally:
            if fh:
                fh.close()
        return self.log_rows

    def save(self, path) -> Path:
        return save_checkpoint(path, self.params, {"steps": self.step_count})

    def evaluate_one_step(self, sample_points: list[tuple[int, int]], seed: int = 0) -> float:
        """Mean teacher-forced total loss at the given (sequence index, frame) points."""
        rng = np.random.default_rng(seed)
        vals = []
        with ad.no_grad():
            for k, t in sample_points:
                s = self.samples[k]
                loss, _ = one_step_loss(self.sim, s, self.sim.inputs(s.seq, t), t,
                                        self.loss_cfg, rng)
                vals.append(float(loss.data))
        return float(np.mean(vals))
