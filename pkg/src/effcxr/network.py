"""Executable network: binds an ArchSpec and a ParamStore into a forward pass.

Tensors wrap the store's arrays in place (no copies), so optimizer steps and
running-statistic updates are visible to the store and survive into saved
weight files.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .arch import ArchSpec
from .ops import LayerKind, LayerParams
from .plan import (
    BatchNormL,
    ConvL,
    CustomHeadPlan,
    DenseL,
    DepthwiseL,
    NetworkPlan,
    StandardHeadPlan,
    build_plan,
)
from .tensor import Tensor
from .weights import ParamStore


def _derive_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


class Network:
    """Forward-pass interpreter for one classifier."""

    def __init__(self, spec: ArchSpec, store: ParamStore):
        self.spec = spec
        self.plan: NetworkPlan = build_plan(spec)
        self.store = store
        self._params: dict[str, LayerParams] = {}
        self._trainable_tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        self._bind()

    def _bind(self) -> None:
        from .plan import param_layers

        for layer in param_layers(self.plan):
            name = layer.name
            if name not in self.store.trainable:
                raise ValueError(f"store lacks layer {name!r} required by the architecture")
            trainable = self.store.trainable[name]

            def arr(role: str) -> np.ndarray:
                key = f"{name}.{role}"
                if key not in self.store.arrays:
                    raise ValueError(f"store lacks array {key!r}")
                return self.store.arrays[key]

            if isinstance(layer, ConvL):
                w = Tensor(arr("weight"), requires_grad=trainable)
                b = Tensor(arr("bias"), requires_grad=trainable) if layer.bias else None
                params = LayerParams.for_conv(w, b, trainable=trainable)
                tensors = {"weight": w} | ({"bias": b} if b is not None else {})
            elif isinstance(layer, DepthwiseL):
                w = Tensor(arr("weight"), requires_grad=trainable)
                params = LayerParams.for_depthwise(w, trainable=trainable)
                tensors = {"weight": w}
            elif isinstance(layer, DenseL):
                w = Tensor(arr("weight"), requires_grad=trainable)
                b = Tensor(arr("bias"), requires_grad=trainable) if layer.bias else None
                params = LayerParams.for_dense(w, b, trainable=trainable)
                tensors = {"weight": w} | ({"bias": b} if b is not None else {})
            elif isinstance(layer, BatchNormL):
                scale = Tensor(arr("scale"), requires_grad=trainable)
                shift = Tensor(arr("shift"), requires_grad=trainable)
                params = LayerParams.for_batch_norm(
                    arr("mean"), arr("var"), scale, shift, trainable=trainable
                )
                tensors = {"scale": scale, "shift": shift}
            else:
                raise TypeError(f"unknown layer type {type(layer)!r}")

            self._params[name] = params
            if trainable:
                for role, t in tensors.items():
                    self._trainable_tensors[f"{name}.{role}"] = t

    # -- parameter access ----------------------------------------------------

    def trainable_params(self) -> "OrderedDict[str, Tensor]":
        return self._trainable_tensors

    def zero_grad(self) -> None:
        for t in self._trainable_tensors.values():
            t.zero_grad()

    def layer_params(self, name: str) -> LayerParams:
        return self._params[name]

    def batch_norm_layers(self) -> list[LayerParams]:
        """All batch-norm parameter groups, in network order."""
        return [lp for lp in self._params.values() if lp.kind == LayerKind.BATCH_NORM]

    # -- forward pass ----------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[3] != 3:
            raise ValueError(
                f"input must be (batch, res, res, 3); got shape {tuple(x.shape)}"
            )
        res = self.spec.input_resolution
        if x.shape[1] != res or x.shape[2] != res:
            raise ValueError(
                f"input resolution {x.shape[1]}x{x.shape[2]} does not match "
                f"the architecture's {res}x{res}"
            )
        return x.astype(np.float32, copy=False)

    def forward(
        self,
        x,
        mode: str = "infer",
        rng_seed: int | None = None,
        want_features: bool = False,
        bn_momentum: float | None = None,
    ):
        """Run the network; returns class probabilities (batch, num_classes).

        ``mode='train'`` enables batch statistics and dropout and requires
        ``rng_seed``.  With ``want_features`` the tensor of feature maps that
        feeds global average pooling is returned alongside the probabilities.
        ``bn_momentum`` overrides the running-statistic momentum (used by the
        post-training calibration pass).
        """
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer'; got {mode!r}")
        if mode == "train" and rng_seed is None:
            raise ValueError("train mode requires rng_seed for dropout")

        t = x if isinstance(x, Tensor) else Tensor(self._check_input(x))
        p = self._params
        plan = self.plan
        dropout_index = 0

        def next_seed() -> int | None:
            nonlocal dropout_index
            if mode != "train":
                return None
            seed = _derive_seed(rng_seed, dropout_index)
            dropout_index += 1
            return seed

        def bn(t: Tensor, name: str) -> Tensor:
            if bn_momentum is None:
                return ops.batch_norm(t, p[name], mode=mode)
            return ops.batch_norm(t, p[name], mode=mode, momentum=bn_momentum)

        t = ops.conv2d(t, p[plan.stem.name], stride=plan.stem.stride, padding="same")
        t = ops.swish(bn(t, plan.stem_bn.name))

        for blk in plan.blocks:
            inp = t
            if blk.expand is not None:
                t = ops.conv2d(t, p[blk.expand.name], stride=1, padding="same")
                t = ops.swish(bn(t, blk.expand_bn.name))
            t = ops.depthwise_conv2d(t, p[blk.dw.name], stride=blk.dw.stride, padding="same")
            t = ops.swish(bn(t, blk.dw_bn.name))
            if blk.se_reduce is not None:
                s = ops.global_avg_pool(t)
                s = ops.swish(ops.dense(s, p[blk.se_reduce.name]))
                s = ops.sigmoid(ops.dense(s, p[blk.se_expand.name]))
                t = ops.channel_scale(t, s)
            t = ops.conv2d(t, p[blk.project.name], stride=1, padding="same")
            t = bn(t, blk.project_bn.name)
            if blk.residual:
                t = ops.residual_add(t, inp)

        t = ops.conv2d(t, p[plan.top.name], stride=1, padding="same")
        t = ops.swish(bn(t, plan.top_bn.name))

        head = plan.head
        if isinstance(head, StandardHeadPlan):
            features = t
            t = ops.global_avg_pool(t)
            t = ops.dense(t, p[head.fc.name])
        else:
            t = bn(t, head.bn10.name)
            features = t
            t = ops.dropout(t, head.map_dropout, mode=mode, rng_seed=next_seed())
            t = ops.global_avg_pool(t)
            t = ops.dense(t, p[head.fc11.name])
            t = ops.swish(bn(t, head.bn11.name))
            t = ops.dropout(t, head.mid_dropout, mode=mode, rng_seed=next_seed())
            t = ops.dense(t, p[head.fc12.name])
            t = ops.swish(bn(t, head.bn12.name))
            t = ops.dense(t, p[head.fc13.name])

        probs = ops.softmax(t)
        if want_features:
            return probs, features
        return probs

    def predict_probs(self, x) -> np.ndarray:
        """Inference-mode probabilities as a plain array."""
        return self.forward(x, mode="infer").data

    # -- linearized head (for activation maps) ---------------------------------

    def head_projection(self) -> np.ndarray:
        """Effective (feature_channels, num_classes) linear map over pooled features.

        For the custom head this is the product of the dense weight matrices
        with each intermediate batch norm folded in as a diagonal scale
        (running statistics; shifts and swish nonlinearities are ignored, the
        usual linearization for class activation maps).
        """
        head = self.plan.head
        if isinstance(head, StandardHeadPlan):
            return self._params[head.fc.name].weights.data.copy()

        def bn_diag(name: str) -> np.ndarray:
            lp = self._params[name]
            stats = lp.bn_stats
            return stats.scale.data / np.sqrt(stats.variance + ops.BN_EPSILON)

        w11 = self._params[head.fc11.name].weights.data
        w12 = self._params[head.fc12.name].weights.data
        w13 = self._params[head.fc13.name].weights.data
        m = (w11 * bn_diag(head.bn11.name)[None, :]) @ (
            w12 * bn_diag(head.bn12.name)[None, :]
        ) @ w13
        return m
