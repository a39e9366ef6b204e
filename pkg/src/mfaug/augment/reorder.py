"""Epoch-end reordering: move the most important channels into the target slice."""
from __future__ import annotations

import numpy as np

from ..tensor import SGD, Parameter
from .model import AugModel, ChannelGroup


class AlignmentError(ValueError):
    pass


def channel_importance(group: ChannelGroup) -> np.ndarray:
    """Per-channel L1 norm summed over every layer producing the group."""
    total = np.zeros(group.c_t + group.c_a)
    for layer in group.producers:
        w = layer.weight.data
        total += np.abs(w.reshape(w.shape[0], -1)).sum(axis=1)
    return total


def importance_order(norms: np.ndarray) -> np.ndarray:
    """Descending order; ties keep the original index order."""
    return np.argsort(-np.asarray(norms), kind="stable")


def _permute(p: Parameter, perm: np.ndarray, axis: int, buffers: dict[int, np.ndarray] | None,
             index: dict[int, int]) -> None:
    p.data = np.take(p.data, perm, axis=axis)
    if buffers is not None and id(p) in index and index[id(p)] in buffers:
        i = index[id(p)]
        buffers[i] = np.take(buffers[i], perm, axis=axis)


def _check_alignment(group: ChannelGroup) -> None:
    n = group.c_t + group.c_a
    for layer in group.producers:
        if layer.weight.shape[0] != n:
            raise AlignmentError(f"{layer.layer_id} produces {layer.weight.shape[0]} channels, group {group.name} has {n}")
    for layer in group.consumers:
        if layer.weight.shape[1] != n:
            raise AlignmentError(f"{layer.layer_id} consumes {layer.weight.shape[1]} channels, group {group.name} has {n}")
    for bn in group.norms:
        if bn.gamma.shape[0] != n:
            raise AlignmentError(f"norm in group {group.name} has {bn.gamma.shape[0]} channels, expected {n}")


def apply_permutation(group: ChannelGroup, perm: np.ndarray, optimizer: SGD | None = None) -> None:
    _check_alignment(group)
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(group.c_t + group.c_a)):
        raise AlignmentError(f"not a permutation of group {group.name}")
    buffers = optimizer.state.buffers if optimizer is not None else None
    index = {id(p): i for i, p in enumerate(optimizer.params)} if optimizer is not None else {}
    for layer in group.producers:
        _permute(layer.weight, perm, 0, buffers, index)
    for layer in group.consumers:
        _permute(layer.weight, perm, 1, buffers, index)
    c_t = group.c_t
    for bn in group.norms:
        _permute(bn.gamma, perm, 0, buffers, index)
        _permute(bn.beta, perm, 0, buffers, index)
        # channels entering the target slice inherit the wide statistics as a starting estimate
        src = perm[:c_t]
        from_target = src < c_t
        new_mean = np.where(from_target, bn.target_mean[np.minimum(src, c_t - 1)], bn.running_mean[src])
        new_var = np.where(from_target, bn.target_var[np.minimum(src, c_t - 1)], bn.running_var[src])
        bn.target_mean[...] = new_mean
        bn.target_var[...] = new_var
        bn.running_mean[...] = bn.running_mean[perm]
        bn.running_var[...] = bn.running_var[perm]


def reorder_weights(model: AugModel, optimizer: SGD | None = None) -> dict[str, np.ndarray]:
    """Sort every augmented channel group by descending importance; returns the permutations."""
    perms = {}
    for group in model.groups:
        if group.c_a == 0:
            continue
        perm = importance_order(channel_importance(group))
        apply_permutation(group, perm, optimizer)
        perms[group.name] = perm
    return perms
