"""A tiny trainable supernet over operation masks.

Every edge of the cell DAG carries a softmax mixture of small candidate
transforms; masking drops transforms from the mixture before renormalization,
so a masked operation contributes exactly zero to the forward pass.  The task
is synthetic binary classification from a fixed-seed teacher network, split
into a training half (optimized on ``train``) and a validation half (scored on
``evaluate``).  Accuracy numbers are only meaningful relative to each other;
they say nothing about any real dataset.
"""

from __future__ import annotations

import torch
from torch import nn


def _pool_matrix(dim: int, window: int, kind: str) -> torch.Tensor:
    """Banded averaging matrix standing in for a spatial pooling op."""
    weight = torch.zeros(dim, dim)
    for i in range(dim):
        lo = max(0, i - window // 2)
        hi = min(dim, i + window // 2 + 1)
        weight[i, lo:hi] = 1.0 / (hi - lo)
    if kind == "max":
        weight = weight * 1.5  # crude sharpening so avg and max pools differ
    return weight


class _EdgeOp(nn.Module):
    """One candidate transform, shaped by its operation name."""

    def __init__(self, name: str, dim: int):
        super().__init__()
        self.name = name
        base = name.split("_")[0]
        if name == "none":
            self.kind = "zero"
        elif name == "skip_connect":
            self.kind = "identity"
        elif base in ("avg", "max") and "pool" in name:
            self.kind = "pool"
            self.register_buffer("pool", _pool_matrix(dim, 3, base))
        else:
            # conv-like and unknown names: trainable linear with tanh
            self.kind = "linear"
            self.linear = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.kind == "zero":
            return torch.zeros_like(x)
        if self.kind == "identity":
            return x
        if self.kind == "pool":
            return x @ self.pool.T
        return torch.tanh(self.linear(x))


class SurrogateSupernet(nn.Module):
    def __init__(
        self,
        space_doc: dict,
        seed: int = 0,
        feature_dim: int = 16,
        train_size: int = 512,
        val_size: int = 256,
        lr: float = 0.02,
        batch_size: int = 64,
    ):
        super().__init__()
        torch.manual_seed(seed)
        self.nodes = int(space_doc["nodes"])
        self.edges = [(e["from"], e["to"]) for e in space_doc["edges"]]
        self.ops_per_edge = [list(e["ops"]) for e in space_doc["edges"]]
        self.dim = feature_dim
        self.batch_size = batch_size

        offsets = [0]
        for ops in self.ops_per_edge:
            offsets.append(offsets[-1] + len(ops))
        self._offsets = offsets
        self.n_players = offsets[-1]

        self.edge_ops = nn.ModuleList(
            nn.ModuleList(_EdgeOp(name, feature_dim) for name in ops)
            for ops in self.ops_per_edge
        )
        self.mix_logits = nn.ParameterList(
            nn.Parameter(torch.zeros(len(ops))) for ops in self.ops_per_edge
        )
        self.readout = nn.Linear(feature_dim, 2)

        self._in_edges: list[list[int]] = [[] for _ in range(self.nodes)]
        for k, (_, v) in enumerate(self.edges):
            self._in_edges[v].append(k)
        self._input_nodes = [j for j in range(self.nodes) if not self._in_edges[j]]

        gen = torch.Generator().manual_seed(seed + 1)
        total = train_size + val_size
        x = torch.randn(total, feature_dim, generator=gen)
        teacher_a = torch.randn(feature_dim, feature_dim, generator=gen)
        teacher_b = torch.randn(feature_dim, generator=gen)
        y = (torch.tanh(x @ teacher_a) @ teacher_b > 0).long()
        self._train_x, self._val_x = x[:train_size], x[train_size:]
        self._train_y, self._val_y = y[:train_size], y[train_size:]

        self._optimizer = torch.optim.Adam(self.parameters(), lr=lr)
        self._loss = nn.CrossEntropyLoss()

    # -- masking -------------------------------------------------------------

    def active_ops(self, mask_bits: int, edge: int) -> list[int]:
        start = self._offsets[edge]
        return [
            i for i in range(len(self.ops_per_edge[edge]))
            if mask_bits >> (start + i) & 1
        ]

    def full_mask(self) -> int:
        return (1 << self.n_players) - 1

    # -- forward ---------------------------------------------------------------

    def forward(self, x: torch.Tensor, mask_bits: int) -> torch.Tensor:
        states: list[torch.Tensor | None] = [None] * self.nodes
        for j in self._input_nodes:
            states[j] = x
        for j in range(self.nodes):
            if states[j] is not None:
                continue
            acc = torch.zeros(x.shape[0], self.dim)
            for k in self._in_edges[j]:
                active = self.active_ops(mask_bits, k)
                if not active:
                    continue  # fully masked edge: a broken path contributes nothing
                source = states[self.edges[k][0]]
                weights = torch.softmax(self.mix_logits[k][active], dim=0)
                mixed = torch.zeros_like(acc)
                for w, i in zip(weights, active):
                    mixed = mixed + w * self.edge_ops[k][i](source)
                acc = acc + mixed
            states[j] = acc / max(len(self._in_edges[j]), 1)
        return self.readout(states[self.nodes - 1])

    # -- protocol-facing operations ---------------------------------------------

    @torch.no_grad()
    def evaluate(self, mask_bits: int) -> tuple[float, int]:
        """Validation accuracy of the masked supernet and batches used."""
        self.eval()
        correct = 0
        batches = 0
        for lo in range(0, len(self._val_x), 256):
            logits = self.forward(self._val_x[lo:lo + 256], mask_bits)
            correct += int((logits.argmax(dim=1) == self._val_y[lo:lo + 256]).sum())
            batches += 1
        return correct / len(self._val_x), batches

    def train_pass(self, steps: int = 1) -> None:
        """One optimizer pass over the training split per step."""
        self.train()
        full = self.full_mask()
        for _ in range(steps):
            for lo in range(0, len(self._train_x), self.batch_size):
                self._optimizer.zero_grad()
                logits = self.forward(self._train_x[lo:lo + self.batch_size], full)
                loss = self._loss(logits, self._train_y[lo:lo + self.batch_size])
                loss.backward()
                self._optimizer.step()
