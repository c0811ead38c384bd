"""Full network: visual + language encoders, per-level CMPC, TGFE, ConvLSTM head."""

from __future__ import annotations

import numpy as np

from .comprehension import CmpcBlock, LinguisticContext
from .config import RunConfig
from .engine import ContractError, ParamStore, Tensor, log, mul
from .exchange import TgfeParams, tgfe_forward
from .head import FusionHead, bce_loss, fuse_levels, upsample_logits
from .language import LanguageEncoder, entity_context, necessary_words, relational_features
from .visual import VisualEncoder


class RefSegNetwork:
    """Parameters are registered in a fixed order: vis, lang, cmpc3..5, tgfe, head."""

    def __init__(self, config: RunConfig, vocab_size: int):
        self.config = cfg = config
        self.vocab_size = int(vocab_size)
        self.params = store = ParamStore(cfg.seed)
        self.visual = VisualEncoder(store, cfg.backbone_widths, cfg.backbone_strides, cfg.c_v,
                                    levels=cfg.levels, residual=cfg.backbone_residual)
        self.language = LanguageEncoder(store, vocab_size, cfg.c_l, cfg.c_n)
        self.cmpc = {}
        for lv in sorted(cfg.levels):
            self.cmpc[lv] = CmpcBlock(store, f"cmpc{lv}", cfg.c_v, cfg.c_l, cfg.c_m, cfg.c_h,
                                      r=cfg.r, n_gc=cfg.n_gc, ep=cfg.ep, rar=cfg.rar,
                                      gc_relu=cfg.gc_relu, share_gc=cfg.share_gc)
        self.tgfe = None
        if cfg.uses_tgfe:
            if cfg.tgfe_per_level:
                self.tgfe = {lv: TgfeParams(store, f"tgfe{lv}", cfg.c_l, cfg.c_m, cfg.c_h)
                             for lv in sorted(cfg.levels)}
            else:
                self.tgfe = TgfeParams(store, "tgfe", cfg.c_l, cfg.c_m, cfg.c_h)
        self.head = FusionHead(store, "head", cfg.c_m, cfg.c_cell)

    def linguistic_context(self, ids, mask):
        L = self.language.encode(ids)
        P = self.language.classify_word_types(L)
        return LinguisticContext(q=entity_context(L, P, mask), R=relational_features(L, P, mask),
                                 s=necessary_words(L, P, mask), mask=mask, L=L, P=P)

    def forward(self, images, ids, mask, return_maps=False):
        """images [B, H0, W0, 3], ids/mask [B, T] -> logits [B, H, W]."""
        images = images if isinstance(images, Tensor) else Tensor(images)
        if ids.max() >= self.vocab_size:
            raise ContractError("token index outside vocabulary")
        ctx = self.linguistic_context(ids, mask)
        X = self.visual(images)
        Y, graphs = {}, {}
        for lv in self.config.levels:
            Y[lv], graphs[lv] = self.cmpc[lv](X[lv], ctx)
        lam_maps = []
        if self.tgfe is not None:
            Y, lam_maps = tgfe_forward(Y, ctx.s, self.config.n_rounds, self.tgfe,
                                       self.config.normalize_pool, return_maps=True)
        logits = fuse_levels([Y[lv] for lv in self.config.levels], self.head)
        if return_maps:
            return logits, {"context": ctx, "graphs": graphs, "pool": lam_maps}
        return logits, ctx

    def loss(self, images, ids, mask, gt_masks, oracle_types=None):
        """Pixel-mean BCE at image resolution (+ optional word-type CE)."""
        logits, ctx = self.forward(images, ids, mask)
        up = upsample_logits(logits, gt_masks.shape[-2:])
        total = bce_loss(up, gt_masks)
        if self.config.lambda_wt > 0 and oracle_types is not None:
            total = total + self.config.lambda_wt * word_type_loss(ctx.P, oracle_types, mask)
        return total, logits


def word_type_loss(P, oracle_types, mask):
    """Mean negative log-likelihood of the oracle word types over real tokens."""
    onehot = np.zeros(P.shape)
    types = np.asarray(oracle_types, dtype=np.int64)
    B, T = types.shape
    onehot[np.arange(B)[:, None], np.arange(T)[None, :], types] = 1.0
    onehot *= np.asarray(mask)[..., None]
    nll = -(log(P + 1e-12) * onehot).sum()
    return mul(nll, 1.0 / max(float(np.sum(mask)), 1.0))


def pad_types(types_list, T):
    out = np.full((len(types_list), T), 3, dtype=np.int64)
    for b, t in enumerate(types_list):
        out[b, :len(t)] = t
    return out


__all__ = ["RefSegNetwork", "pad_types", "word_type_loss"]
