"""Semi-supervised training loop: supervised branch on labeled scenes,
unlabeled branch through teacher prediction, CutMix composition and both
consistency losses, SGD with polynomial LR decay, and EMA teacher updates.

One step consumes one labeled scene and one unlabeled image pair; epochs
are counted over the labeled split. All randomness flows from independent
per-purpose generators spawned off the run seed, so disabling a branch
never perturbs the others.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .cutmix import compose_image, compose_predictions, drop_pairs, generate_boxes
from .ema import EmaState, ema_init, ema_update
from .losses import (LossBreakdown, PredictionMap, consistency_loss,
                     relaxed_cross_entropy, structured_consistency_box,
                     total_loss)
from .metrics import ConfusionMatrix, miou
from .model import SegNet, SegNetDescriptor, init_segnet
from .optim import make_velocity, poly_lr, sgd_step
from .synthdata import SceneDataset, augment_pair
from .tensor import NonFiniteError, backward, no_grad, parameters_finite, tape


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


@dataclass
class TrainConfig:
    """Every knob of a run; serializes to a flat JSON object."""
    # optimization
    lr0: float = 0.002
    power: float = 1.0
    weight_decay: float = 0.001
    momentum: float = 0.9
    epochs: int = 175
    # cutmix geometry and structured-loss budget
    num_boxes: int = 32
    num_active_boxes: int = 16
    pair_budget: int = 9000
    pair_mode: str = "ordered"
    # loss weights and toggles
    consistency_weight: float = 20.0
    structured_weight: float = 3.0
    use_consistency: bool = True
    use_structured: bool = True
    relax_window: int = 3
    # teacher
    ema_decay: float = 0.999
    ema_teacher: bool = True
    ema_eval: bool = True
    # data
    seed: int = 0
    data_seed: int = 100
    height: int = 64
    width: int = 64
    num_classes: int = 4
    n_labeled: int = 20
    n_unlabeled: int = 200
    n_validation: int = 50
    texture_sigma: float = 0.08
    # model
    model_widths: tuple = (32, 32, 32)
    kernel_size: int = 3
    in_channels: int = 3
    # io cadence (0 = final only)
    checkpoint_every: int = 0
    eval_every: int = 0

    def validate(self) -> None:
        if self.num_active_boxes > self.num_boxes or self.num_active_boxes < 1:
            raise ConfigError(
                f"num_active_boxes {self.num_active_boxes} outside [1, num_boxes={self.num_boxes}]")
        if self.pair_budget < 1:
            raise ConfigError(f"pair_budget must be >= 1, got {self.pair_budget}")
        if self.consistency_weight < 0 or self.structured_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.relax_window < 1 or self.relax_window % 2 == 0:
            raise ConfigError(f"relax_window must be odd, got {self.relax_window}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.n_labeled < 1 or self.n_validation < 1:
            raise ConfigError("need at least one labeled and one validation scene")
        if self.unlabeled_branch_active() and self.n_unlabeled < 2:
            raise ConfigError("unlabeled branch needs at least two unlabeled scenes")

    def unlabeled_branch_active(self) -> bool:
        """A zero weight is equivalent to switching the loss off entirely."""
        return ((self.use_consistency and self.consistency_weight > 0)
                or (self.use_structured and self.structured_weight > 0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model_widths"] = list(self.model_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key: {key}")
        d = dict(d)
        if "model_widths" in d:
            d["model_widths"] = tuple(d["model_widths"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @classmethod
    def ablation_preset(cls) -> "TrainConfig":
        """Desk-scale recipe for the three-variant loss ablation: the default
        corpus, a narrower net, fewer epochs, a shorter EMA horizon and
        smaller loss weights than the production-scale defaults (which
        assume a pretrained backbone and overwhelm training from random
        init at this scale)."""
        return cls(model_widths=(16, 16, 16), epochs=40, ema_decay=0.99,
                   pair_budget=1024, texture_sigma=0.15,
                   consistency_weight=1.0, structured_weight=0.75,
                   data_seed=100)

    def model_descriptor(self) -> SegNetDescriptor:
        return SegNetDescriptor(
            in_channels=self.in_channels,
            widths=tuple(self.model_widths) + (self.num_classes,),
            kernel_size=self.kernel_size)

    def make_dataset(self) -> SceneDataset:
        return SceneDataset(
            self.data_seed, height=self.height, width=self.width,
            num_classes=self.num_classes, n_labeled=self.n_labeled,
            n_unlabeled=self.n_unlabeled, n_validation=self.n_validation,
            texture_sigma=self.texture_sigma)


# Loss-toggle ablation rows and the EMA teacher/validation grid.
LOSS_VARIANTS: Dict[str, dict] = {
    "sup": {"use_consistency": False, "use_structured": False},
    "sup+c": {"use_consistency": True, "use_structured": False},
    "sup+c+sc": {"use_consistency": True, "use_structured": True},
}
EMA_VARIANTS: Dict[str, dict] = {
    "X/X": {"ema_teacher": False, "ema_eval": False},
    "X/O": {"ema_teacher": False, "ema_eval": True},
    "O/X": {"ema_teacher": True, "ema_eval": False},
    "O/O": {"ema_teacher": True, "ema_eval": True},
}


@dataclass
class StepRecord:
    step: int
    lr: float
    losses: LossBreakdown
    pair_counts: List[int] = field(default_factory=list)
    wall_time: float = 0.0


class Trainer:
    def __init__(self, config: TrainConfig):
        config.validate()
        self.config = config
        self.dataset = config.make_dataset()
        streams = np.random.SeedSequence(config.seed).spawn(6)
        self.rng_model = np.random.default_rng(streams[0])
        self.rng_labeled = np.random.default_rng(streams[1])
        self.rng_unlabeled = np.random.default_rng(streams[2])
        self.rng_augment = np.random.default_rng(streams[3])
        self.rng_boxes = np.random.default_rng(streams[4])
        self.rng_pairs = np.random.default_rng(streams[5])
        self.student = init_segnet(self.rng_model, config.model_descriptor())
        self.velocity = make_velocity(self.student.params)
        self.ema = ema_init(self.student.params, config.ema_decay)
        self.step_index = 0
        self.max_steps = config.epochs * config.n_labeled
        self._labeled_queue: List[int] = []
        self._unlabeled_queue: List[int] = []

    # -- sampling order ----------------------------------------------------
    def _next_labeled_index(self) -> int:
        if not self._labeled_queue:
            self._labeled_queue = list(self.rng_labeled.permutation(self.config.n_labeled))
        return int(self._labeled_queue.pop(0))

    def _next_unlabeled_pair(self) -> Tuple[int, int]:
        def take() -> int:
            if not self._unlabeled_queue:
                self._unlabeled_queue = list(
                    self.rng_unlabeled.permutation(self.config.n_unlabeled))
            return int(self._unlabeled_queue.pop(0))

        a = take()
        b = take()
        while b == a:  # only possible across a reshuffle boundary
            b = take()
        return a, b

    def _teacher_params(self):
        if self.config.ema_teacher:
            return self.ema.teacher_params
        return [p.detach() for p in self.student.params]

    # -- one optimization step ---------------------------------------------
    def train_step(self) -> StepRecord:
        cfg = self.config
        t0 = time.perf_counter()

        sample = self.dataset.labeled(self._next_labeled_index())
        student_logits = self.student.forward(sample.image)
        l_x_t = relaxed_cross_entropy(
            PredictionMap.from_logits(student_logits), sample.labels, cfg.relax_window)
        loss_t = l_x_t
        l_c = 0.0
        l_sc = 0.0
        pair_counts: List[int] = []

        if cfg.unlabeled_branch_active():
            ia, ib = self._next_unlabeled_pair()
            pair = augment_pair(self.rng_augment,
                                self.dataset.unlabeled_image(ia),
                                self.dataset.unlabeled_image(ib))
            teacher_params = self._teacher_params()
            with no_grad():
                pred_a = PredictionMap.from_logits(
                    self.student.forward(pair.ua, params=teacher_params))
                pred_b = PredictionMap.from_logits(
                    self.student.forward(pair.ub, params=teacher_params))
            boxset = generate_boxes(self.rng_boxes, cfg.height, cfg.width,
                                    cfg.num_boxes, n_box=cfg.num_active_boxes)
            guessed = compose_predictions(pred_a, pred_b, boxset)
            mixed = compose_image(pair.ua, pair.ub, boxset)
            student_probs = PredictionMap.from_logits(self.student.forward(mixed))
            if cfg.use_consistency and cfg.consistency_weight > 0:
                l_c_t = consistency_loss(student_probs, guessed)
                loss_t = loss_t + cfg.consistency_weight * l_c_t
                l_c = l_c_t.item()
            if cfg.use_structured and cfg.structured_weight > 0:
                pairs = drop_pairs(boxset, cfg.pair_budget, self.rng_pairs, cfg.pair_mode)
                pair_counts = pairs.counts()
                l_sc_t = structured_consistency_box(student_probs, guessed, boxset, pairs)
                loss_t = loss_t + cfg.structured_weight * l_sc_t
                l_sc = l_sc_t.item()

        l_x = l_x_t.item()
        for name, v in (("l_x", l_x), ("l_c", l_c), ("l_sc", l_sc)):
            if not math.isfinite(v):
                tape().clear()  # drop the recorded step so a caller can recover
                raise NonFiniteError(f"step {self.step_index}: non-finite loss {name}={v}")
        breakdown = total_loss(l_x, l_c, l_sc,
                               cfg.consistency_weight, cfg.structured_weight)
        lr = poly_lr(self.step_index, self.max_steps, cfg.lr0, cfg.power)
        backward(loss_t)
        sgd_step(self.student.params, lr, cfg.momentum, cfg.weight_decay, self.velocity)
        if not parameters_finite(self.student.params):
            raise NonFiniteError(f"step {self.step_index}: non-finite parameter after update")
        # EMA weights are maintained whenever either consumer (teacher or
        # validation) is switched on.
        if cfg.ema_teacher or cfg.ema_eval:
            ema_update(self.ema, self.student.params)
        assert all(t.grad is None for t in self.ema.teacher_params), \
            "teacher parameters must never accumulate gradients"

        rec = StepRecord(step=self.step_index, lr=lr, losses=breakdown,
                         pair_counts=pair_counts, wall_time=time.perf_counter() - t0)
        self.step_index += 1
        return rec

    # -- evaluation ----------------------------------------------------------
    def evaluate(self, use_ema: Optional[bool] = None) -> Tuple[List[float], float]:
        """Per-class IoU and mIoU on the validation split, with either the
        student weights or the EMA weights per the eval switch."""
        if use_ema is None:
            use_ema = self.config.ema_eval
        if self.config.n_validation == 0:
            raise ValueError("evaluate: validation set is empty")
        params = self.ema.teacher_params if use_ema else None
        cm = ConfusionMatrix(self.config.num_classes)
        with no_grad():
            for i in range(self.config.n_validation):
                scene = self.dataset.validation(i)
                logits = self.student.forward(scene.image, params=params)
                cm.accumulate(np.argmax(logits.data, axis=2), scene.labels)
        return miou(cm)

    def run(self, on_step: Optional[Callable[[StepRecord], None]] = None) -> List[StepRecord]:
        records = []
        for _ in range(self.max_steps):
            rec = self.train_step()
            records.append(rec)
            if on_step is not None:
                on_step(rec)
        return records


def run_ablation(config_base: TrainConfig, variants: Dict[str, dict],
                 seeds: Sequence[int]) -> List[Tuple[str, float, List[float]]]:
    """Train variants x seeds and report mean mIoU per variant. Data stays
    fixed across variants (data_seed is shared) so comparisons are paired."""
    if len(seeds) < 3:
        raise ConfigError(f"run_ablation: need at least 3 seeds, got {len(seeds)}")
    rows = []
    for name, overrides in variants.items():
        scores = []
        for seed in seeds:
            cfg = replace(config_base, seed=seed, **overrides)
            tr = Trainer(cfg)
            tr.run()
            _, score = tr.evaluate()
            scores.append(score)
        rows.append((name, float(np.mean(scores)), scores))
    return rows


def ablation_csv_rows(rows: List[Tuple[str, float, List[float]]]) -> List[str]:
    n_seeds = len(rows[0][2]) if rows else 0
    header = "variant,mean_miou," + ",".join(f"miou_seed{i}" for i in range(n_seeds))
    lines = [header]
    for name, mean, scores in rows:
        lines.append(",".join([name, repr(mean)] + [repr(s) for s in scores]))
    return lines


def save_checkpoint(path, trainer: Trainer) -> None:
    """Student and teacher weights in one blob, architecture in the header."""
    arrays = {}
    for name, p in trainer.student.named_params():
        arrays[f"student/{name}"] = p.data
    for (name, _), t in zip(trainer.student.named_params(), trainer.ema.teacher_params):
        arrays[f"teacher/{name}"] = t.data
    meta = {
        "descriptor": trainer.config.model_descriptor().to_dict(),
        "step": trainer.step_index,
        "ema_decay": trainer.config.ema_decay,
        "ema_steps": trainer.ema.step_count,
        "config": trainer.config.to_dict(),
    }
    checkpoint.write_blob(path, arrays, meta=meta)


def load_checkpoint(path) -> Tuple[SegNet, EmaState, dict]:
    from .tensor import Tensor

    arrays, meta = checkpoint.read_blob(path)
    descriptor = SegNetDescriptor.from_dict(meta["descriptor"])
    net = SegNet(descriptor=descriptor)
    n_layers = len(descriptor.widths)
    teacher_params = []
    for i in range(n_layers):
        net.kernels.append(Tensor(arrays[f"student/conv{i}.kernel"], requires_grad=True))
        net.biases.append(Tensor(arrays[f"student/conv{i}.bias"], requires_grad=True))
        teacher_params.append(Tensor(arrays[f"teacher/conv{i}.kernel"]))
        teacher_params.append(Tensor(arrays[f"teacher/conv{i}.bias"]))
    ema_state = EmaState(decay=float(meta["ema_decay"]), teacher_params=teacher_params,
                         step_count=int(meta.get("ema_steps", 0)))
    return net, ema_state, meta
