"""Supernet training with sandwich sampling and in-place distillation."""

import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tape, Tensor
from src.data.synth import Utterance
from src.distillation.kd import kd_loss
from src.optim.adam import OptimizerState, clip_grad_norm, global_norm, optimizer_step
from src.supernet.checkpoint import load_checkpoint, save_checkpoint
from src.supernet.evaluation import decode_utterances
from src.supernet.model import DropoutSpec, SupernetModel
from src.supernet.search_space import SubnetworkConfig, parse_config_key, sample_sandwich
from src.training.metrics_log import MetricsLog, PassMetrics, StepMetrics
from src.transducer.lattice import transducer_loss
from src.utils.config import Config, get_config
from src.utils.errors import CheckpointError, ContractError, NumericError
from src.utils.logger import LoggerMixin, make_progress, print_info, print_success, print_warning
from src.utils.run_manifest import RunManifestStore

_EPOCH_FILE = re.compile(r"^epoch_(\d+)\.npz$")


@dataclass
class SandwichPass:
    """One planned subnetwork pass of a training step."""

    role: str
    config: SubnetworkConfig
    utterances: List[Utterance]
    dropout_seeds: List[Tuple[int, int]]


@dataclass
class TrainResult:
    """Paths and final numbers of a training run."""

    run_dir: Path
    checkpoints: List[Path] = field(default_factory=list)
    metrics_path: Optional[Path] = None
    epochs_path: Optional[Path] = None
    final_dev_wer: Dict[str, float] = field(default_factory=dict)
    aborted_steps: int = 0


def switch_epoch(epochs: int, fraction: float) -> int:
    """First epoch run with ScaledAdam and the late distillation weight."""
    return int(math.floor(fraction * epochs + 1e-9))


def latest_checkpoint(run_dir: Path) -> Optional[Path]:
    """Checkpoint of the highest completed epoch in ``run_dir``, if any."""
    ckpt_dir = Path(run_dir) / "checkpoints"
    if not ckpt_dir.exists():
        return None
    found = [(int(m.group(1)), p) for p in ckpt_dir.iterdir() if (m := _EPOCH_FILE.match(p.name))]
    return max(found)[1] if found else None


def _sum(tensors: Sequence[Tensor]) -> Tensor:
    total = tensors[0]
    for tensor in tensors[1:]:
        total = ops.add(total, tensor)
    return total


class SupernetTrainer(LoggerMixin):
    """Train a Supernet (or one fixed subnetwork) on a corpus.

    Args:
        config: Configuration object (uses global config if None)
        model: Model to train (built from the config if None)
        run_dir: Output directory (defaults to ``paths.runs_dir / train.run_name``)
    """

    def __init__(
        self,
        config: Optional[Config] = None,
        model: Optional[SupernetModel] = None,
        run_dir: Optional[Path] = None,
    ):
        self.config = config or get_config()
        self.train_config = self.config.train
        self.model = model or SupernetModel.from_config(self.config)
        self.space = self.model.space
        self.run_dir = Path(run_dir) if run_dir is not None else self.config.run_dir()
        self.dropout = DropoutSpec(self.train_config.base_dropout, self.train_config.adaptive_dropout)
        self.metrics_log = MetricsLog(self.run_dir / "metrics.jsonl")
        self.epoch_log = MetricsLog(self.run_dir / "epochs.jsonl")
        self.manifest = RunManifestStore(self.run_dir, self.config)

    # Schedule

    @property
    def switch_epoch(self) -> int:
        return switch_epoch(self.train_config.epochs, self.train_config.optimizer_switch_fraction)

    def lr_at(self, epoch: int) -> float:
        """``lr * anneal_factor ** max(0, epoch - anneal_start_epoch)``."""
        tc = self.train_config
        return tc.lr * tc.anneal_factor ** max(0, epoch - tc.anneal_start_epoch)

    def kd_weight_at(self, epoch: int) -> float:
        tc = self.train_config
        return tc.lambda_late if epoch >= self.switch_epoch else tc.lambda_initial

    def optimizer_kind_at(self, epoch: int) -> str:
        return "scaled_adam" if epoch >= self.switch_epoch else "adam"

    def new_optimizer(self, kind: str) -> OptimizerState:
        tc = self.train_config
        return OptimizerState(
            kind=kind,
            lr=tc.lr,
            beta1=tc.beta1,
            beta2=tc.beta2,
            eps=tc.eps,
            weight_decay=tc.weight_decay,
            rms_min=tc.rms_min,
        )

    @property
    def kd_enabled(self) -> bool:
        return self.train_config.mode == "supernet" and self.train_config.kd_mode != "none"

    def individual_config(self) -> SubnetworkConfig:
        return parse_config_key(self.train_config.individual_config, self.space)

    # Steps

    def plan_step(self, batch: Sequence[Utterance], rng: np.random.Generator) -> List[SandwichPass]:
        """Assign subnetworks and utterances for one step.

        Supernet mode: the max network on the whole batch, then the min and
        two random subnetworks each on its own quarter. Individual mode: the
        fixed config on the whole batch.
        """
        batch = list(batch)
        if self.train_config.mode == "individual":
            seeds = int(rng.integers(2**31))
            return [
                SandwichPass(
                    "individual",
                    self.individual_config(),
                    batch,
                    [(seeds, i) for i in range(len(batch))],
                )
            ]
        if len(batch) % 4 != 0 or not batch:
            raise ContractError(f"sandwich steps need a batch divisible by 4, got {len(batch)}")
        quarter = len(batch) // 4
        configs = sample_sandwich(self.space, rng)
        subsets = [batch, batch[:quarter], batch[quarter : 2 * quarter], batch[2 * quarter : 3 * quarter]]
        roles = ["max", "min", "random", "random"]
        base_seeds = rng.integers(2**31, size=4)
        return [
            SandwichPass(role, cfg, subset, [(int(seed), i) for i in range(len(subset))])
            for role, cfg, subset, seed in zip(roles, configs, subsets, base_seeds)
        ]

    def pass_loss(
        self,
        plan: SandwichPass,
        kd_weight: float = 0.0,
        teacher: Optional[Dict[str, np.ndarray]] = None,
        cache_teacher: Optional[Dict[str, np.ndarray]] = None,
    ) -> Tuple[Tensor, float, float]:
        """Loss of one pass on the active tape.

        ``mean(rnnt) + kd_weight * mean(kd)`` over the pass's utterances. When
        ``cache_teacher`` is given the pass's lattices are stored in it as
        plain arrays; when ``teacher`` is given they serve as KD targets.

        Returns:
            (loss tensor, mean rnnt value, mean kd value)
        """
        tc = self.train_config
        rnnt_terms: List[Tensor] = []
        kd_terms: List[Tensor] = []
        for utt, seed in zip(plan.utterances, plan.dropout_seeds):
            lattice = self.model.lattice(
                plan.config, utt.features, utt.tokens, seed, training=True, dropout=self.dropout
            )
            rnnt_terms.append(transducer_loss(lattice, utt.tokens))
            if cache_teacher is not None:
                cache_teacher[utt.id] = lattice.log_probs.data.copy()
            if teacher is not None and self.kd_enabled:
                kd_terms.append(
                    kd_loss(
                        teacher[utt.id],
                        lattice,
                        utt.tokens,
                        tc.kd_j,
                        tc.kd_mode,
                        tc.alpha_minus,
                        tc.alpha_plus,
                        tc.alpha_beta,
                    )
                )
        rnnt = ops.scale(_sum(rnnt_terms), 1.0 / len(rnnt_terms))
        if not kd_terms:
            return rnnt, rnnt.item(), 0.0
        kd = ops.scale(_sum(kd_terms), 1.0 / len(kd_terms))
        return ops.add(rnnt, ops.scale(kd, kd_weight)), rnnt.item(), kd.item()

    def combined_loss(
        self,
        plans: Sequence[SandwichPass],
        kd_weight: float,
        teacher: Optional[Dict[str, np.ndarray]] = None,
    ) -> Tensor:
        """Sum of every pass loss on the active tape.

        The teacher lattices come from the first pass unless ``teacher`` is given.
        """
        fill = None
        if teacher is None:
            teacher = fill = {}
        losses = []
        for k, plan in enumerate(plans):
            if k == 0:
                loss, _, _ = self.pass_loss(plan, cache_teacher=fill)
            else:
                loss, _, _ = self.pass_loss(plan, kd_weight, teacher=teacher)
            losses.append(loss)
        return _sum(losses)

    def accumulate_gradients(
        self, plans: Sequence[SandwichPass], kd_weight: float
    ) -> Tuple[Dict[str, np.ndarray], List[PassMetrics], Optional[str]]:
        """Run every pass on its own tape and sum the gradients per parameter.

        The first pass's lattices become the distillation targets of the
        later passes as plain arrays, so no gradient flows through them.

        Returns:
            (summed gradients by name, per-pass metrics, error message or None)
        """
        names = list(self.model.params)
        tensors = [self.model.params[n] for n in names]
        total = {n: np.zeros_like(t.data) for n, t in zip(names, tensors)}
        teacher: Optional[Dict[str, np.ndarray]] = {} if self.kd_enabled else None
        passes: List[PassMetrics] = []
        for k, plan in enumerate(plans):
            error = None
            with Tape() as tape:
                try:
                    if k == 0:
                        loss, rnnt_value, kd_value = self.pass_loss(plan, cache_teacher=teacher)
                    else:
                        loss, rnnt_value, kd_value = self.pass_loss(plan, kd_weight, teacher=teacher)
                except NumericError as exc:
                    error = f"{plan.role} pass ({plan.config.key()}): {exc}"
                    loss, rnnt_value, kd_value = Tensor(float("nan")), float("nan"), float("nan")
            if error is None and not math.isfinite(loss.item()):
                error = f"non-finite loss in {plan.role} pass ({plan.config.key()})"
            if error is None:
                grads = tape.gradients(loss, tensors)
                pass_norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
            else:
                grads, pass_norm = [], float("nan")
            passes.append(
                PassMetrics(
                    role=plan.role,
                    config=plan.config.key(),
                    n_utterances=len(plan.utterances),
                    rnnt_loss=rnnt_value,
                    kd_loss=kd_value,
                    grad_norm=pass_norm,
                    flops=tape.forward_flops + tape.backward_flops,
                )
            )
            if error is not None:
                return total, passes, error
            for name, grad in zip(names, grads):
                total[name] += grad
        return total, passes, None

    def train_step(
        self,
        batch: Sequence[Utterance],
        optimizer: OptimizerState,
        rng: np.random.Generator,
        kd_weight: float,
        epoch: int = 0,
        step: int = 0,
        global_step: int = 0,
    ) -> StepMetrics:
        """One optimizer step over all planned passes.

        A non-finite loss or gradient aborts the step with the parameters and
        the optimizer state untouched.
        """
        tc = self.train_config
        started = time.perf_counter()
        metrics = StepMetrics(
            run=tc.run_name,
            mode=tc.mode,
            kd_mode=tc.kd_mode if self.kd_enabled else "none",
            epoch=epoch,
            step=step,
            global_step=global_step,
            lr=optimizer.lr,
            kd_weight=kd_weight,
            optimizer=optimizer.kind,
        )

        plans = self.plan_step(batch, rng)
        total, metrics.passes, metrics.error = self.accumulate_gradients(plans, kd_weight)
        metrics.flops = int(sum(p.flops for p in metrics.passes))
        metrics.aborted = metrics.error is not None

        if not metrics.aborted:
            if tc.grad_clip_norm:
                metrics.grad_norm = clip_grad_norm(total, tc.grad_clip_norm)
            else:
                metrics.grad_norm = global_norm(total)
            try:
                optimizer_step(self.model.params, total, optimizer)
            except NumericError as exc:
                metrics.aborted = True
                metrics.error = str(exc)

        metrics.wall_clock = time.perf_counter() - started
        if metrics.aborted:
            self.logger.warning(f"Step {epoch}:{step} aborted: {metrics.error}")
        else:
            self.logger.debug(
                f"epoch {epoch} step {step}: "
                + ", ".join(f"{p.role}={p.rnnt_loss:.4f}/{p.kd_loss:.4f}" for p in metrics.passes)
            )
        return metrics

    # Epoch loop

    def evaluate_dev(self, dev_set: Sequence[Utterance]) -> Dict[str, float]:
        """Greedy dev WER of the max and min subnetworks (or of the individual config)."""
        tc = self.train_config
        subset = list(dev_set)[: tc.eval_max_utterances] if tc.eval_max_utterances else list(dev_set)
        if not subset:
            return {}
        if tc.mode == "individual":
            targets = {"individual": self.individual_config()}
        else:
            targets = {"max": self.space.max_config(), "min": self.space.min_config()}
        return {
            name: decode_utterances(
                self.model,
                subset,
                cfg,
                decoder="greedy",
                max_symbols_per_frame=self.config.search.max_symbols_per_frame,
            ).wer
            for name, cfg in targets.items()
        }

    def checkpoint_path(self, epoch: int) -> Path:
        return self.run_dir / "checkpoints" / f"epoch_{epoch:03d}.npz"

    def train(
        self,
        train_set: Sequence[Utterance],
        dev_set: Optional[Sequence[Utterance]] = None,
        resume_from: Optional[Path] = None,
    ) -> TrainResult:
        """Run the full schedule, writing metrics and one checkpoint per epoch.

        Args:
            train_set: Training utterances
            dev_set: Optional dev utterances for per-epoch WER
            resume_from: Checkpoint to continue from; later log records are dropped

        Returns:
            TrainResult

        Raises:
            ContractError: If the training set cannot fill one batch
            CheckpointError: If the resume checkpoint is unusable
        """
        tc = self.train_config
        train_set = list(train_set)
        if len(train_set) < tc.batch_size:
            raise ContractError(
                f"training set has {len(train_set)} utterances, fewer than one batch of {tc.batch_size}"
            )
        n_batches = len(train_set) // tc.batch_size
        result = TrainResult(
            run_dir=self.run_dir,
            metrics_path=self.metrics_log.path,
            epochs_path=self.epoch_log.path,
        )

        start_epoch = 0
        optimizer = self.new_optimizer(self.optimizer_kind_at(0))
        if resume_from is not None:
            checkpoint = load_checkpoint(resume_from)
            if checkpoint.model.space != self.space:
                raise CheckpointError(f"{resume_from} was trained on a different search space")
            self.model.params = checkpoint.model.params
            optimizer = checkpoint.optimizer or optimizer
            start_epoch = checkpoint.epoch + 1
            self.metrics_log.truncate_to_epoch(start_epoch)
            self.epoch_log.truncate_to_epoch(start_epoch)
            for name, record in self.manifest.artifacts_of_kind("checkpoint").items():
                if record.details.get("epoch", -1) >= start_epoch:
                    self.manifest.drop_artifacts(name)
            self.manifest.record_command("resume", {"checkpoint": str(resume_from), "epoch": start_epoch})
            print_info(f"Resuming {tc.run_name} at epoch {start_epoch} from {resume_from}")
        else:
            self.metrics_log.reset()
            self.epoch_log.reset()
            self.manifest.snapshot_config(self.config)
            self.config.to_yaml(self.run_dir / "config.yaml")

        self.logger.info(
            f"Training {tc.run_name} ({tc.mode}, kd={tc.kd_mode}) for {tc.epochs} epochs, "
            f"{n_batches} steps/epoch, switch at epoch {self.switch_epoch}"
        )

        with make_progress() as progress:
            task = progress.add_task(tc.run_name, total=tc.epochs, completed=start_epoch, status="")
            for epoch in range(start_epoch, tc.epochs):
                kind = self.optimizer_kind_at(epoch)
                if optimizer.kind != kind:
                    optimizer = optimizer.fresh(kind)
                    print_info(f"Epoch {epoch}: switching to {kind} with fresh moments")
                optimizer.lr = self.lr_at(epoch)
                kd_weight = self.kd_weight_at(epoch)

                epoch_started = time.perf_counter()
                order = np.random.default_rng([tc.seed, epoch]).permutation(len(train_set))
                step_records: List[StepMetrics] = []
                for step in range(n_batches):
                    batch = [train_set[i] for i in order[step * tc.batch_size : (step + 1) * tc.batch_size]]
                    metrics = self.train_step(
                        batch,
                        optimizer,
                        np.random.default_rng([tc.seed, epoch, step]),
                        kd_weight,
                        epoch=epoch,
                        step=step,
                        global_step=epoch * n_batches + step,
                    )
                    self.metrics_log.append(metrics.to_record())
                    step_records.append(metrics)
                    if metrics.aborted:
                        result.aborted_steps += 1

                dev_wer = self.evaluate_dev(dev_set) if dev_set and tc.eval_every_epoch else {}
                summary = self._epoch_summary(epoch, optimizer, kd_weight, step_records, dev_wer)
                summary["wall_clock"] = time.perf_counter() - epoch_started
                self.epoch_log.append(summary)

                path = save_checkpoint(
                    self.checkpoint_path(epoch),
                    self.model,
                    optimizer,
                    training={
                        "epoch": epoch,
                        "global_step": (epoch + 1) * n_batches,
                        "lr": optimizer.lr,
                        "kd_weight": kd_weight,
                        "run_name": tc.run_name,
                        "mode": tc.mode,
                        "dev_wer": dev_wer,
                        "config": self.config.to_dict(),
                    },
                )
                result.checkpoints.append(path)
                self.manifest.record_artifact(
                    f"checkpoint/epoch_{epoch:03d}", path, "checkpoint", {"epoch": epoch, "dev_wer": dev_wer}
                )
                status = " ".join(f"{k}={v:.3f}" for k, v in dev_wer.items())
                progress.update(task, advance=1, status=status)
                self.logger.info(f"Epoch {epoch} done in {summary['wall_clock']:.1f}s {status}")
                result.final_dev_wer = dev_wer

        self.manifest.record_artifact("metrics", self.metrics_log.path, "metrics")
        self.manifest.record_artifact("epochs", self.epoch_log.path, "metrics")
        if result.aborted_steps:
            print_warning(f"{result.aborted_steps} step(s) aborted on non-finite values")
        print_success(f"Training {tc.run_name} finished; checkpoints in {self.run_dir / 'checkpoints'}")
        return result

    def _epoch_summary(
        self,
        epoch: int,
        optimizer: OptimizerState,
        kd_weight: float,
        steps: List[StepMetrics],
        dev_wer: Dict[str, float],
    ) -> Dict:
        done = [s for s in steps if not s.aborted]
        by_role: Dict[str, List[PassMetrics]] = {}
        for s in done:
            for p in s.passes:
                by_role.setdefault(p.role, []).append(p)
        return {
            "run": self.train_config.run_name,
            "epoch": epoch,
            "lr": optimizer.lr,
            "kd_weight": kd_weight,
            "optimizer": optimizer.kind,
            "steps": len(steps),
            "aborted_steps": len(steps) - len(done),
            "rnnt_loss": {r: float(np.mean([p.rnnt_loss for p in ps])) for r, ps in by_role.items()},
            "kd_loss": {r: float(np.mean([p.kd_loss for p in ps])) for r, ps in by_role.items()},
            "flops": int(sum(s.flops for s in steps)),
            "dev_wer": dev_wer,
        }
