"""Encoder + decoder + KG tables bundled as one trainable model."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .embeddings import EmbeddingTables
from .nn import Adam, Decoder, Encoder
from .objective import batch_objective

CHECKPOINT_VERSION = 1


class KGVModel:
    def __init__(self, encoder: Encoder, decoder: Decoder, tables: EmbeddingTables):
        self.encoder = encoder
        self.decoder = decoder
        self.tables = tables

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every parameter (shared storage)."""
        out = {f"enc.{k}": v for k, v in self.encoder.params.items()}
        out.update({f"dec.{k}": v for k, v in self.decoder.params.items()})
        out.update({f"kg.{k}": v for k, v in self.tables.params.items()})
        return out

    def logits(self, x, batch_size: int = 256):
        parts = [self.decoder(self.encoder(x[i:i + batch_size])) for i in range(0, len(x), batch_size)]
        return np.concatenate(parts) if parts else np.zeros((0, self.decoder.num_classes))

    def embed(self, x, batch_size: int = 256):
        return np.concatenate([self.encoder(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def loss_and_grads(self, x, labels, masks, ce_weight, beta, epsilon):
        z, enc_cache = self.encoder.forward(x, return_cache=True)
        logits = self.decoder(z)
        with_reg = beta > 0
        loss, dz, dlogits, table_grads = batch_objective(
            z, logits, labels, masks, ce_weight, self.tables, beta, epsilon, with_reg=with_reg)
        dec_grads, dz_dec = self.decoder.backward(dlogits, z)
        enc_grads = self.encoder.backward(dz + dz_dec, enc_cache)
        grads = {f"enc.{k}": v for k, v in enc_grads.items()}
        grads.update({f"dec.{k}": v for k, v in dec_grads.items()})
        if table_grads is not None:
            self.tables.mask_gradients(table_grads)
            grads.update({f"kg.{k}": v for k, v in table_grads.items()})
        return loss, grads

    def step(self, optimizer: Adam, x, labels, masks, ce_weight, beta, epsilon):
        loss, grads = self.loss_and_grads(x, labels, masks, ce_weight, beta, epsilon)
        optimizer.step(self.parameters(), grads)
        self.tables.project()
        return loss

    def copy(self) -> "KGVModel":
        return KGVModel(self.encoder.copy(), self.decoder.copy(), self.tables.copy())

    # -- persistence ------------------------------------------------------------

    def meta(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "channels": list(self.encoder.channels),
            "input_shape": list(self.encoder.input_shape),
            "d": self.encoder.d,
            "variant": self.tables.variant,
            "frozen": list(self.tables.frozen_relations),
        }

    def save(self, path):
        np.savez(path, __meta__=np.array(json.dumps(self.meta())), **self.parameters())

    @classmethod
    def load(cls, path) -> "KGVModel":
        with np.load(path) as f:
            meta = json.loads(str(f["__meta__"]))
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported model checkpoint version {meta['version']}")
            groups = {"enc": {}, "dec": {}, "kg": {}}
            for name in f.files:
                if name == "__meta__":
                    continue
                prefix, key = name.split(".", 1)
                groups[prefix][key] = f[name].copy()
        encoder = Encoder(groups["enc"], meta["channels"], meta["input_shape"], meta["d"])
        tables = EmbeddingTables(meta["variant"], groups["kg"], tuple(meta["frozen"]))
        return cls(encoder, Decoder(groups["dec"]), tables)

    def digest(self, part: str | None = None) -> str:
        """SHA-256 over parameter names and bytes, optionally for one prefix ("enc", "dec", "kg")."""
        h = hashlib.sha256()
        for k, v in sorted(self.parameters().items()):
            if part is None or k.startswith(part + "."):
                h.update(k.encode())
                h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()
