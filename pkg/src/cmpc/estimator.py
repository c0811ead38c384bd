"""scikit-learn style front end for the referring segmentation network."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .engine import INIT_SCHEME, AdamState, adam_step, backward, checkpoint, no_grad, scheduled_lr
from .head import predict_mask
from .language import Vocabulary, pad_batch
from .metrics import evaluate, overall_iou
from .model import RefSegNetwork, pad_types
from .synth import default_vocabulary
from .validation import check_inputs, check_masks

CHECKPOINT_FORMAT = "cmpc-checkpoint/1"
_DATA_FIELDS = ("n_train", "n_val", "data_seed", "rel_fraction")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, step, epoch, batch_index, loss):
        super().__init__(message)
        self.step, self.epoch, self.batch_index, self.loss = step, epoch, batch_index, loss


class ReferringSegmenter(BaseEstimator):
    """Segment the entity an expression refers to.

    ``X`` is a sequence of ``(image, expression)`` pairs where ``image`` is an
    (H, W, 3) array in [0, 1] and ``expression`` is a string or a list of
    token ids; ``y`` holds binary (H, W) masks.
    """

    def __init__(self, image_size=32, c_l=64, c_n=32, c_v=64, c_m=64, c_h=64, c_cell=32,
                 backbone_widths=(16, 16, 32, 32, 32, 32), backbone_strides=(2, 2, 1, 1, 1, 1),
                 backbone_residual=True, r=3, n_gc=1, gc_relu=None, share_gc=False, n_rounds=1, normalize_pool=True,
                 tgfe_per_level=False, ep=True, rar=True, tgfe=True, multi_level=True,
                 level_order=(3, 4, 5), lambda_wt=0.0, lr=1e-3, lr_schedule="poly",
                 warmup_steps=500, weight_decay=5e-4, epochs=15, batch_size=8, seed=0, threshold=0.5,
                 vocabulary=None, verbose=0):
        self.image_size = image_size
        self.c_l = c_l
        self.c_n = c_n
        self.c_v = c_v
        self.c_m = c_m
        self.c_h = c_h
        self.c_cell = c_cell
        self.backbone_widths = backbone_widths
        self.backbone_strides = backbone_strides
        self.backbone_residual = backbone_residual
        self.r = r
        self.n_gc = n_gc
        self.gc_relu = gc_relu
        self.share_gc = share_gc
        self.n_rounds = n_rounds
        self.normalize_pool = normalize_pool
        self.tgfe_per_level = tgfe_per_level
        self.ep = ep
        self.rar = rar
        self.tgfe = tgfe
        self.multi_level = multi_level
        self.level_order = level_order
        self.lambda_wt = lambda_wt
        self.lr = lr
        self.lr_schedule = lr_schedule
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.threshold = threshold
        self.vocabulary = vocabulary
        self.verbose = verbose

    # ------------------------------------------------------------ config

    @classmethod
    def from_config(cls, config: RunConfig, **kwargs):
        d = config.to_dict()
        for k in _DATA_FIELDS:
            d.pop(k)
        for k in ("backbone_widths", "backbone_strides", "level_order"):
            d[k] = tuple(d[k])
        return cls(**d, **kwargs)

    def to_config(self, **data) -> RunConfig:
        names = {f.name for f in dataclasses.fields(RunConfig)}
        params = {k: v for k, v in self.get_params().items() if k in names}
        params.update(data)
        return RunConfig(**params)

    def _vocab(self, tokens):
        if self.vocabulary is not None:
            v = self.vocabulary
            return v if isinstance(v, Vocabulary) else Vocabulary.from_tokens(v)
        if all(not isinstance(t, str) for t in tokens):
            return default_vocabulary()
        words = sorted({w for t in tokens if isinstance(t, str) for w in t.lower().split()})
        return Vocabulary(words)

    # ---------------------------------------------------------- training

    def fit(self, X, y, X_val=None, y_val=None, oracle_types=None, log=None):
        """Train with Adam on pixel BCE; keeps the best-val-IoU parameters
        when a validation set is given. ``log`` receives one dict per step
        and per epoch."""
        X = list(X)
        self.vocab_ = self._vocab([t for _, t in X])
        images, tokens = check_inputs(X, self.vocab_)
        masks = check_masks(y, images)
        val = None
        if X_val is not None:
            X_val = list(X_val)
            val = (X_val, np.asarray(y_val))
        config = self.to_config()
        self.config_ = config
        self.network_ = net = RefSegNetwork(config, len(self.vocab_))
        opt = AdamState(list(net.params), lr=self.lr, weight_decay=self.weight_decay)
        order_rng = np.random.Generator(np.random.Philox(key=[int(self.seed), 1]))
        emit = log or (lambda rec: None)
        self.history_ = []

        def record(rec):
            self.history_.append(rec)
            emit(rec)

        n = len(tokens)
        best_iou, best_state, best_epoch = -1.0, None, None
        step = 0
        total = self.epochs * math.ceil(n / self.batch_size)
        for epoch in range(self.epochs):
            perm = order_rng.permutation(n)
            for b, start in enumerate(range(0, n, self.batch_size)):
                idx = perm[start:start + self.batch_size]
                ids, mask = pad_batch([tokens[i] for i in idx])
                types = None
                if oracle_types is not None and self.lambda_wt > 0:
                    types = pad_types([oracle_types[i] for i in idx], ids.shape[1])
                net.params.zero_grad()
                loss, _ = net.loss(images[idx], ids, mask, masks[idx], types)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss {value} at step {step}",
                                           step, epoch, idx.tolist(), value)
                backward(loss)
                opt.lr = scheduled_lr(self.lr, step, total, self.lr_schedule, warmup=self.warmup_steps)
                adam_step(opt)
                step += 1
                record({"epoch": epoch, "step": step, "loss": value})
            if val is not None:
                rep = self._eval(*val)
                record({"epoch": epoch, "step": step, "val_overall_iou": rep.overall_iou,
                        "val_prec50": rep.prec[0.5]})
                if self.verbose:
                    print(f"epoch {epoch + 1}/{self.epochs} loss {value:.4f} "
                          f"val IoU {rep.overall_iou:.4f}", flush=True)
                if rep.overall_iou > best_iou:
                    best_iou, best_state, best_epoch = rep.overall_iou, net.params.state(), epoch
            elif self.verbose:
                print(f"epoch {epoch + 1}/{self.epochs} loss {value:.4f}", flush=True)
        if best_state is not None:
            net.params.load_state(best_state)
        self.best_epoch_ = best_epoch
        self.best_val_iou_ = best_iou if best_state is not None else None
        self.n_steps_ = step
        return self

    # -------------------------------------------------------- inference

    def _prepared(self, X):
        check_is_fitted(self, "network_")
        return check_inputs(X, self.vocab_)

    def decision_function(self, X, batch_size=32):
        """Low-resolution logit maps, shape (n, H, W)."""
        images, tokens = self._prepared(X)
        out = []
        with no_grad():
            for start in range(0, len(tokens), batch_size):
                ids, mask = pad_batch(tokens[start:start + batch_size])
                logits, _ = self.network_.forward(images[start:start + batch_size], ids, mask)
                out.append(logits.data)
        return np.concatenate(out, axis=0)

    def predict(self, X):
        X = list(X)
        size = np.asarray(X[0][0]).shape[:2]
        logits = self.decision_function(X)
        return predict_mask(logits, size, self.threshold)

    def predict_proba(self, X):
        from .engine import Tensor
        from .head import upsample_logits

        X = list(X)
        size = np.asarray(X[0][0]).shape[:2]
        up = upsample_logits(Tensor(self.decision_function(X)), size).data
        return 0.5 * (1.0 + np.tanh(0.5 * up))

    def _eval(self, X, y):
        return evaluate(self.predict(X), np.asarray(y))

    def evaluate(self, X, y):
        return self._eval(list(X), y)

    def score(self, X, y):
        """Overall IoU."""
        preds = self.predict(list(X))
        return overall_iou(zip(preds, np.asarray(y)))

    def affinity_maps(self, image, expression):
        """Word-region affinity B1, adjacency A and pooling weights for one input."""
        images, tokens = self._prepared([(image, expression)])
        ids, mask = pad_batch(tokens)
        with no_grad():
            logits, maps = self.network_.forward(images, ids, mask, return_maps=True)
        ctx = maps["context"]
        out = {"logits": logits.data[0], "P": ctx.P.data[0], "tokens": tokens[0],
               "B1": {}, "A": {}, "pool": []}
        for lv, g in maps["graphs"].items():
            if g is not None:
                out["B1"][lv] = g.B1.data[0]
                out["A"][lv] = g.A.data[0]
        for rnd in maps["pool"]:
            out["pool"].append({lv: lam.data[0] for lv, lam in rnd.items()})
        return out

    # ------------------------------------------------------- checkpoints

    def checkpoint_meta(self):
        check_is_fitted(self, "network_")
        cfg = self.config_
        return {"format": CHECKPOINT_FORMAT, "config": cfg.to_dict(),
                "config_hash": cfg.config_hash(), "seed": cfg.seed, "init": INIT_SCHEME,
                "vocab": list(self.vocab_.itos), "best_epoch": self.best_epoch_,
                "best_val_iou": self.best_val_iou_, "n_steps": self.n_steps_}

    def save(self, path, **extra):
        meta = self.checkpoint_meta()
        meta.update(extra)
        return checkpoint.save(path, self.network_.params.state(), meta)

    @classmethod
    def load(cls, path):
        state, meta = checkpoint.load(path)
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        config = RunConfig.from_dict(meta["config"])
        est = cls.from_config(config, vocabulary=list(meta["vocab"]))
        est.vocab_ = Vocabulary.from_tokens(meta["vocab"])
        est.config_ = config
        est.network_ = RefSegNetwork(config, len(est.vocab_))
        est.network_.params.load_state(state)
        est.best_epoch_ = meta.get("best_epoch")
        est.best_val_iou_ = meta.get("best_val_iou")
        est.n_steps_ = meta.get("n_steps")
        est.checkpoint_meta_ = meta
        return est
