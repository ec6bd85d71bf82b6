"""Training loop for the duration predictor variants.

The predictor is trained standalone against ground-truth durations: every
record is de-duplicated, its run lengths become log-duration targets, and
the configured duration loss is minimised with Adam. Utterances are batched
with padding and a position mask, so losses average over real positions only.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ConfigMixin
from .corpus import split
from .losses import LossWeights, loss_abs, loss_abs_grad, loss_composite, loss_mse, loss_mse_grad, loss_nll_grad
from .numerics import Tape
from .predictor import DurationModel, ModelConfig, Variant, parse_variant, training_step

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, epoch, step, value):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: loss {value}")
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class TrainConfig(ConfigMixin):
    """Optimisation settings.

    Attributes:
        variant (str): ``mse``, ``l1`` or ``uncert``.
        epochs (int): maximum number of epochs.
        batch_size (int): utterances per batch.
        learning_rate (float): Adam step size.
        beta1, beta2, eps (float): Adam moment decays and epsilon.
        seed (int): seed of weight init and batch order.
        patience (int): epochs without validation improvement before stopping.
        split_ratios (tuple): train/val/test ratios used by :func:`train`.
        split_seed (int): seed of the split.
        loss_weights (LossWeights): composite weights; the duration term uses lambda4.
        dequantize (bool): train on ``log(d + u)`` with ``u ~ Uniform(-0.5, 0.5)`` drawn
            afresh for every batch, so integer frame counts do not pin median
            predictions to whole frames. Validation losses use the exact targets.
    """

    variant: str = Variant.MSE.value
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patience: int = 10
    split_ratios: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    dequantize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", parse_variant(self.variant).value)
        for name in ("epochs", "batch_size", "patience"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f'"{name}" must be a positive integer, got {value!r}')
        for name in ("seed", "split_seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 0:
                raise ValueError(f'"{name}" must be a non-negative integer, got {value!r}')
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("Adam needs 0 <= beta1, beta2 < 1 and eps > 0")
        object.__setattr__(self, "split_ratios", tuple(float(r) for r in self.split_ratios))
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights.from_dict(self.loss_weights))
        elif not isinstance(self.loss_weights, LossWeights):
            raise TypeError("loss_weights must be a LossWeights or a dict")


class Adam:
    """Adaptive-moment gradient descent over a :class:`ParamStore`."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(param.value) for name, param in params.items()}
        self.v = {name: np.zeros_like(param.value) for name, param in params.items()}

    def step(self):
        self.t += 1
        bias1 = 1 - self.beta1**self.t
        bias2 = 1 - self.beta2**self.t
        for name, grad in self.params.grads().items():
            param = self.params[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * grad**2
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            param.value -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Example:
    """One de-duplicated utterance ready for the predictor."""

    record_id: str
    units: np.ndarray
    log_durations: np.ndarray
    speaker: np.ndarray
    arousal: float


@dataclass
class Batch:
    """Utterances padded to the longest one, with a position mask."""

    units_list: list
    speakers: np.ndarray
    arousal: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    @classmethod
    def collate(cls, examples):
        max_len = max(len(example.units) for example in examples)
        targets = np.zeros((len(examples), max_len))
        mask = np.zeros((len(examples), max_len))
        for b, example in enumerate(examples):
            targets[b, : len(example.units)] = example.log_durations
            mask[b, : len(example.units)] = 1.0
        return cls(
            units_list=[example.units for example in examples],
            speakers=np.stack([example.speaker for example in examples]),
            arousal=np.array([example.arousal for example in examples]),
            targets=targets,
            mask=mask,
        )

    def dequantized(self, rng):
        """A copy whose targets are jittered uniformly within their rounding bin."""
        jitter = rng.uniform(-0.5, 0.5, size=self.targets.shape)
        targets = np.log(np.exp(self.targets) + jitter) * self.mask
        return replace(self, targets=targets)


def prepare_examples(corpus):
    """De-duplicate every record into targets; records without units are skipped."""
    examples = []
    for record in corpus:
        rls = record.run_lengths
        if len(rls) == 0:
            logger.warning("record %s has no units, skipped", record.id)
            continue
        examples.append(
            Example(
                record_id=record.id,
                units=rls.units,
                log_durations=np.log(rls.durations.astype(np.float64)),
                speaker=np.asarray(corpus.speaker_vector(record), dtype=np.float64),
                arousal=record.arousal,
            )
        )
    return examples


def iter_batches(examples, batch_size, rng=None):
    order = np.arange(len(examples)) if rng is None else rng.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield Batch.collate([examples[i] for i in order[start : start + batch_size]])


def batch_losses(model, batch, tape=None):
    """Run the predictor on a batch and compute its duration losses.

    Returns:
        tuple: ``(losses, forward_pass, grads)`` where ``losses`` maps
        ``mse``/``abs``/``nll`` and ``loss`` (the variant's own) to values and
        ``grads`` holds the gradients of ``loss`` per head column.
    """
    result = model.forward(tape if tape is not None else Tape(), batch.units_list, batch.speakers, batch.arousal)
    mean = result.padded(0)
    losses = {"mse": loss_mse(mean, batch.targets, batch.mask), "abs": loss_abs(mean, batch.targets, batch.mask)}
    variant = model.variant
    if variant is Variant.UNCERT:
        value, d_mean, d_log_sigma = loss_nll_grad(mean, result.padded(1), batch.targets, batch.mask)
        losses["nll"] = value
        grads = [d_mean, d_log_sigma]
    elif variant is Variant.L1:
        value, d_mean = loss_abs_grad(mean, batch.targets, batch.mask)
        grads = [d_mean]
    else:
        value, d_mean = loss_mse_grad(mean, batch.targets, batch.mask)
        grads = [d_mean]
    losses["loss"] = value
    return losses, result, grads


def evaluate_losses(model, examples, batch_size=64):
    """Position-weighted mean duration losses over ``examples``."""
    totals = {}
    count = 0.0
    for batch in iter_batches(examples, batch_size):
        losses, _, _ = batch_losses(model, batch)
        n = batch.mask.sum()
        for name, value in losses.items():
            totals[name] = totals.get(name, 0.0) + value * n
        count += n
    return {name: total / count for name, total in totals.items()}


@dataclass
class TrainResult:
    """A trained model plus its training log.

    Attributes:
        model (DurationModel): the best-validation model.
        log (list): one dict per epoch and split with the loss values.
        best_epoch (int): epoch of the kept parameters, 0 being the initial model.
        stopped_early (bool): whether patience ran out before ``epochs``.
    """

    model: DurationModel
    log: list
    best_epoch: int
    stopped_early: bool


class Trainer:
    """Trains one :class:`DurationModel` instance.

    Attributes:
        config (TrainConfig): optimisation settings.
        model_config (ModelConfig): architecture; its variant follows ``config``.
        logger (Logger): module logger.
    """

    def __init__(self, config=None, model_config=None):
        self.config = config or TrainConfig()
        model_config = model_config or ModelConfig()
        self.model_config = model_config.replace(variant=self.config.variant)
        self.logger = logging.getLogger(__name__)

    def _log_entry(self, epoch, step, split_name, losses):
        if not np.isfinite(losses["loss"]):
            self.logger.error("non-finite %s loss after epoch %d", split_name, epoch)
            raise DivergenceError(epoch, step, losses["loss"])
        entry = {"epoch": epoch, "split": split_name}
        entry.update({name: float(value) for name, value in losses.items()})
        entry["total"] = loss_composite({"dur": losses["loss"]}, self.config.loss_weights).total
        return entry

    def train(self, train_corpus, val_corpus=None, vocabulary=None):
        """Fit a fresh model.

        Args:
            train_corpus (Corpus): training records.
            val_corpus (Corpus, optional): records for model selection and
                early stopping; the training loss is used when omitted.
            vocabulary (int, optional): overrides the model vocabulary with
                the corpus one when given.

        Returns:
            TrainResult: the best model and the log.
        """
        cfg = self.config
        model_config = self.model_config
        if vocabulary is not None and vocabulary != model_config.vocabulary:
            model_config = model_config.replace(vocabulary=vocabulary)
        train_examples = prepare_examples(train_corpus)
        if not train_examples:
            raise ValueError("cannot train on an empty corpus")
        val_examples = prepare_examples(val_corpus) if val_corpus is not None else []
        selection = "val" if val_examples else "train"

        model = DurationModel.init(model_config, seed=cfg.seed)
        optimizer = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
        rng = np.random.default_rng([cfg.seed, 1])
        weight = cfg.loss_weights.lambda4

        log = [self._log_entry(0, 0, "train", evaluate_losses(model, train_examples))]
        if val_examples:
            log.append(self._log_entry(0, 0, "val", evaluate_losses(model, val_examples)))
        best_loss = log[-1]["loss"]
        best_state = model.params.state_dict()
        best_epoch = 0
        stopped_early = False
        self.logger.info(
            "training %s predictor (%d parameters) on %d utterances (%d for validation), initial %s loss %.4f",
            cfg.variant,
            model.params.num_parameters(),
            len(train_examples),
            len(val_examples),
            selection,
            best_loss,
        )

        for epoch in range(1, cfg.epochs + 1):
            total, count = 0.0, 0.0
            for step, batch in enumerate(iter_batches(train_examples, cfg.batch_size, rng), start=1):
                with training_step():
                    tape = Tape()
                    if cfg.dequantize:
                        batch = batch.dequantized(rng)
                    losses, result, grads = batch_losses(model, batch, tape)
                    if not np.isfinite(losses["loss"]):
                        self.logger.error("non-finite loss at epoch %d, step %d", epoch, step)
                        raise DivergenceError(epoch, step, losses["loss"])
                    model.params.zero_grad()
                    tape.backward(result.output, result.scatter([weight * g for g in grads]))
                    optimizer.step()
                n = batch.mask.sum()
                total += losses["loss"] * n
                count += n
                self.logger.debug("epoch %d step %d loss %.5f", epoch, step, losses["loss"])

            epoch_losses = evaluate_losses(model, train_examples)
            log.append(self._log_entry(epoch, step, "train", epoch_losses))
            if val_examples:
                epoch_losses = evaluate_losses(model, val_examples)
                log.append(self._log_entry(epoch, step, "val", epoch_losses))
            current = epoch_losses["loss"]
            self.logger.info(
                "epoch %d: running train loss %.5f, %s loss %.5f", epoch, total / count, selection, current
            )
            if current < best_loss:
                best_loss, best_epoch = current, epoch
                best_state = model.params.state_dict()
            elif epoch - best_epoch >= cfg.patience:
                self.logger.info("no improvement for %d epochs, stopping at epoch %d", cfg.patience, epoch)
                stopped_early = True
                break

        model.params.load_state_dict(best_state)
        self.logger.info("kept parameters of epoch %d (%s loss %.5f)", best_epoch, selection, best_loss)
        return TrainResult(model=model, log=log, best_epoch=best_epoch, stopped_early=stopped_early)


def train(corpus, cfg=None, model_config=None):
    """Split ``corpus`` with ``cfg.split_ratios`` and train on its train part.

    Returns:
        TrainResult: the best-validation model and the training log.
    """
    cfg = cfg or TrainConfig()
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    train_part, val_part, _ = split(corpus, cfg.split_ratios, cfg.split_seed)
    if len(train_part) == 0:
        raise ValueError("the split leaves no training records")
    return Trainer(cfg, model_config).train(train_part, val_part if len(val_part) else None, corpus.vocabulary)
