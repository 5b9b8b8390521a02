"""The trainable fusion network.

Pipeline: project both frozen embeddings into a shared hidden space
(affine -> GELU -> LayerNorm), run L bidirectional cross-attention layers
(each modality queries the other; both updates read the previous layer's
state), concatenate fusion features [h_v; h_t; h_v*h_t; |h_v - h_t|], and
score with a two-layer GELU/dropout head.

Forward records every intermediate needed by the analytic backward pass in a
ForwardTrace, including dropout masks, so replaying the forward with the
stored masks reproduces the recorded output bit-exactly.

Parameters live in a plain dict keyed by canonical names; param_shapes()
defines both the shapes and the serialization order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericFault, ShapeError, StaleTraceError
from .kernel import (
    RngState,
    dropout_mask,
    gelu,
    gelu_grad,
    ln_backward,
    ln_forward,
    softmax_rows,
    softmax_rows_backward,
)

LN_EPS = 1e-5
POST_LN = "post_ln"
PRE_LN = "pre_ln"


@dataclass(frozen=True)
class FusionConfig:
    d_v: int = 768
    d_t: int = 768
    d_h: int = 512
    n_layers: int = 4
    heads: int = 8
    ffn_dim: int = 2048
    dropout_p: float = 0.1
    out_dim: int = 1
    head_hidden: int = 1024
    norm_placement: str = POST_LN
    tokens: int = 1  # >1 reshapes d_h into `tokens` chunks of d_h/tokens

    def __post_init__(self):
        if self.norm_placement not in (POST_LN, PRE_LN):
            raise ValueError(f"unknown norm_placement {self.norm_placement!r}")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.tokens < 1 or self.d_h % self.tokens != 0:
            raise ValueError(
                f"d_h={self.d_h} must be divisible by tokens={self.tokens}")
        if self.token_width % self.heads != 0:
            raise ValueError(
                f"token width {self.token_width} not divisible by "
                f"heads={self.heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1)")
        if self.out_dim < 1 or self.head_hidden < 1:
            raise ValueError("out_dim and head_hidden must be >= 1")

    @property
    def token_width(self) -> int:
        return self.d_h // self.tokens


@dataclass(frozen=True)
class AblationFlags:
    use_cross_attention: bool = True
    bidirectional: bool = True
    fusion_use_product: bool = True
    fusion_use_difference: bool = True
    fusion_direct_concat_only: bool = False

    def __post_init__(self):
        # direct-concat-only implies product and difference disabled
        if self.fusion_direct_concat_only:
            object.__setattr__(self, "fusion_use_product", False)
            object.__setattr__(self, "fusion_use_difference", False)


DEFAULT_FLAGS = AblationFlags()


def effective_layers(config: FusionConfig, flags: AblationFlags) -> int:
    return config.n_layers if flags.use_cross_attention else 0


def fusion_segments(flags: AblationFlags) -> int:
    if flags.fusion_direct_concat_only:
        return 2
    return 2 + int(flags.fusion_use_product) + int(flags.fusion_use_difference)


def fusion_width(config: FusionConfig, flags: AblationFlags) -> int:
    return config.d_h * fusion_segments(flags)


def _has_attention(modality: str, flags: AblationFlags) -> bool:
    # In single-attention mode only the text branch queries the other
    # modality; the vision branch keeps just its FFN sublayer.
    return flags.bidirectional or modality == "t"


def param_shapes(config: FusionConfig, flags: AblationFlags = DEFAULT_FLAGS):
    """Canonical name -> shape map. Iteration order is the serialization
    order for checkpoints."""
    d_h, w, ffn = config.d_h, config.token_width, config.ffn_dim
    shapes: dict[str, tuple] = {}
    for m, d_in in (("v", config.d_v), ("t", config.d_t)):
        shapes[f"proj_{m}.W"] = (d_h, d_in)
        shapes[f"proj_{m}.b"] = (d_h,)
        shapes[f"proj_{m}.ln_g"] = (d_h,)
        shapes[f"proj_{m}.ln_b"] = (d_h,)
    for l in range(effective_layers(config, flags)):
        for m in ("v", "t"):
            p = f"layer{l}.{m}"
            if _has_attention(m, flags):
                for name in ("Wq", "Wk", "Wv", "Wo"):
                    shapes[f"{p}.{name}"] = (w, w)
                for name in ("bq", "bk", "bv", "bo"):
                    shapes[f"{p}.{name}"] = (w,)
                shapes[f"{p}.ln1_g"] = (w,)
                shapes[f"{p}.ln1_b"] = (w,)
            shapes[f"{p}.ffn_W1"] = (ffn, w)
            shapes[f"{p}.ffn_b1"] = (ffn,)
            shapes[f"{p}.ffn_W2"] = (w, ffn)
            shapes[f"{p}.ffn_b2"] = (w,)
            shapes[f"{p}.ln2_g"] = (w,)
            shapes[f"{p}.ln2_b"] = (w,)
    fw = fusion_width(config, flags)
    shapes["head.W1"] = (config.head_hidden, fw)
    shapes["head.b1"] = (config.head_hidden,)
    shapes["head.W2"] = (config.out_dim, config.head_hidden)
    shapes["head.b2"] = (config.out_dim,)
    return shapes


def count_params(config: FusionConfig, flags: AblationFlags = DEFAULT_FLAGS):
    """Exact parameter count plus a {projection, attention, head} breakdown."""
    breakdown = {"projection": 0, "attention": 0, "head": 0}
    for name, shape in param_shapes(config, flags).items():
        n = int(np.prod(shape))
        if name.startswith("proj"):
            breakdown["projection"] += n
        elif name.startswith("layer"):
            breakdown["attention"] += n
        else:
            breakdown["head"] += n
    return sum(breakdown.values()), breakdown


def _is_weight(name: str) -> bool:
    return ".W" in name or name.endswith(("ffn_W1", "ffn_W2"))


def init_params(config: FusionConfig, rng: RngState,
                flags: AblationFlags = DEFAULT_FLAGS,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, unit LayerNorm gains.
    Deterministic given rng."""
    gen = rng.generator()
    params = {}
    for name, shape in param_shapes(config, flags).items():
        if len(shape) == 2:
            fan_out, fan_in = shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = gen.uniform(-bound, bound, shape).astype(dtype)
        elif name.endswith("ln_g") or name.endswith("ln1_g") or name.endswith("ln2_g"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


@dataclass
class ForwardTrace:
    """Everything backward needs: per-stage activations and dropout masks."""
    config: FusionConfig
    flags: AblationFlags
    params_ref: object
    training: bool
    v_in: np.ndarray
    t_in: np.ndarray
    proj: dict = field(default_factory=dict)
    layers: list = field(default_factory=list)
    fusion: dict = field(default_factory=dict)
    head: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    scores: np.ndarray | None = None


def _check_unit_norm(x: np.ndarray, what: str, tol: float = 1e-3):
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(
            f"{what} embeddings must be unit-norm within {tol} "
            f"(worst deviation {worst:.3g})")


def _check_finite(x: np.ndarray, where: str):
    if not np.all(np.isfinite(x)):
        raise NumericFault(f"non-finite activation in {where}")


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, s, d = x.shape
    return x.reshape(b, s, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, s, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * hd)


def _mha_forward(q_in, kv_in, p, prefix, heads):
    """Multi-head scaled dot-product attention; q_in/kv_in are [B, S, w]."""
    Wq, Wk, Wv, Wo = (p[f"{prefix}.{n}"] for n in ("Wq", "Wk", "Wv", "Wo"))
    bq, bk, bv, bo = (p[f"{prefix}.{n}"] for n in ("bq", "bk", "bv", "bo"))
    Q = q_in @ Wq.T + bq
    K = kv_in @ Wk.T + bk
    V = kv_in @ Wv.T + bv
    Qh, Kh, Vh = (_split_heads(x, heads) for x in (Q, K, V))
    scale = 1.0 / math.sqrt(Qh.shape[-1])
    scores = (Qh @ Kh.transpose(0, 1, 3, 2)) * scale
    A = softmax_rows(scores)
    Oh = A @ Vh
    O = _merge_heads(Oh)
    out = O @ Wo.T + bo
    cache = {"q_in": q_in, "kv_in": kv_in, "Qh": Qh, "Kh": Kh, "Vh": Vh,
             "A": A, "O": O, "scale": scale}
    return out, cache


def _mha_backward(dout, cache, p, prefix, heads, grads):
    Wq, Wk, Wv, Wo = (p[f"{prefix}.{n}"] for n in ("Wq", "Wk", "Wv", "Wo"))
    q_in, kv_in = cache["q_in"], cache["kv_in"]
    Qh, Kh, Vh, A, O = (cache[k] for k in ("Qh", "Kh", "Vh", "A", "O"))
    scale = cache["scale"]

    grads[f"{prefix}.Wo"] += np.einsum("bsj,bse->je", dout, O)
    grads[f"{prefix}.bo"] += dout.sum(axis=(0, 1))
    dO = dout @ Wo
    dOh = _split_heads(dO, heads)
    dA = dOh @ Vh.transpose(0, 1, 3, 2)
    dVh = A.transpose(0, 1, 3, 2) @ dOh
    dscores = softmax_rows_backward(A, dA) * scale
    dQh = dscores @ Kh
    dKh = dscores.transpose(0, 1, 3, 2) @ Qh
    dQ, dK, dV = (_merge_heads(x) for x in (dQh, dKh, dVh))

    grads[f"{prefix}.Wq"] += np.einsum("bsj,bsi->ji", dQ, q_in)
    grads[f"{prefix}.bq"] += dQ.sum(axis=(0, 1))
    grads[f"{prefix}.Wk"] += np.einsum("bsj,bsi->ji", dK, kv_in)
    grads[f"{prefix}.bk"] += dK.sum(axis=(0, 1))
    grads[f"{prefix}.Wv"] += np.einsum("bsj,bsi->ji", dV, kv_in)
    grads[f"{prefix}.bv"] += dV.sum(axis=(0, 1))
    dq_in = dQ @ Wq
    dkv_in = dK @ Wk + dV @ Wv
    return dq_in, dkv_in


def _ffn_forward(x, p, prefix):
    W1, b1 = p[f"{prefix}.ffn_W1"], p[f"{prefix}.ffn_b1"]
    W2, b2 = p[f"{prefix}.ffn_W2"], p[f"{prefix}.ffn_b2"]
    u = x @ W1.T + b1
    g = gelu(u)
    y = g @ W2.T + b2
    return y, {"x": x, "u": u, "g": g}


def _ffn_backward(dy, cache, p, prefix, grads):
    W1, W2 = p[f"{prefix}.ffn_W1"], p[f"{prefix}.ffn_W2"]
    x, u, g = cache["x"], cache["u"], cache["g"]
    grads[f"{prefix}.ffn_W2"] += np.einsum("bsj,bsf->jf", dy, g)
    grads[f"{prefix}.ffn_b2"] += dy.sum(axis=(0, 1))
    dg = dy @ W2
    du = dg * gelu_grad(u)
    grads[f"{prefix}.ffn_W1"] += np.einsum("bsf,bsd->fd", du, x)
    grads[f"{prefix}.ffn_b1"] += du.sum(axis=(0, 1))
    return du @ W1


def _maybe_mask(shape, key, p, gen, training, masks, trace):
    """Returns (scale_factor, mask-or-None) and records the mask used."""
    if not training or p == 0.0:
        return None
    if masks is not None:
        m = masks[key]
    else:
        m = dropout_mask(shape, p, gen)
    trace.masks[key] = m
    return m


def _apply_mask(x, m, p):
    if m is None:
        return x
    return x * m / (1.0 - p)


def forward_batch(V: np.ndarray, T: np.ndarray, params: dict,
                  config: FusionConfig, flags: AblationFlags = DEFAULT_FLAGS,
                  rng: RngState | None = None, training: bool = False,
                  masks: dict | None = None):
    """Batched forward pass. V is [B, d_v], T is [B, d_t]; returns
    ([B, out_dim] scores, ForwardTrace). Pass masks=trace.masks to replay a
    recorded training-mode forward bit-exactly."""
    V = np.atleast_2d(V)
    T = np.atleast_2d(T)
    if V.shape[1] != config.d_v or T.shape[1] != config.d_t:
        raise ShapeError(
            f"input dims {V.shape[1]}/{T.shape[1]} do not match config "
            f"d_v={config.d_v}, d_t={config.d_t}")
    _check_unit_norm(V, "image")
    _check_unit_norm(T, "text")
    if training and masks is None and rng is None and config.dropout_p > 0:
        raise ValueError("training-mode forward needs rng or explicit masks")

    B = V.shape[0]
    S, w = config.tokens, config.token_width
    p_drop = config.dropout_p
    gen = rng.generator() if rng is not None else None
    trace = ForwardTrace(config=config, flags=flags, params_ref=params,
                         training=training, v_in=V, t_in=T)

    # Projection: affine -> GELU -> LayerNorm, then reshape to tokens.
    h = {}
    for m, x in (("v", V), ("t", T)):
        a = x @ params[f"proj_{m}.W"].T + params[f"proj_{m}.b"]
        g = gelu(a)
        y, lnc = ln_forward(g, params[f"proj_{m}.ln_g"],
                            params[f"proj_{m}.ln_b"], LN_EPS)
        trace.proj[m] = {"a": a, "g": g, "ln": lnc}
        h[m] = y.reshape(B, S, w)

    L = effective_layers(config, flags)
    pre_ln = config.norm_placement == PRE_LN
    for l in range(L):
        layer_cache = {}
        hv_prev, ht_prev = h["v"], h["t"]
        new_h = {}
        # Both modality updates read the previous layer's state.
        if pre_ln:
            normed, ln_pre = {}, {}
            for m, x in (("v", hv_prev), ("t", ht_prev)):
                if _has_attention(m, flags):
                    pfx = f"layer{l}.{m}"
                    normed[m], ln_pre[m] = ln_forward(
                        x, params[f"{pfx}.ln1_g"], params[f"{pfx}.ln1_b"],
                        LN_EPS)
        for m in ("v", "t"):
            pfx = f"layer{l}.{m}"
            x_prev = hv_prev if m == "v" else ht_prev
            other_prev = ht_prev if m == "v" else hv_prev
            cache = {}
            if _has_attention(m, flags):
                if pre_ln:
                    # The querying branch's ln1 normalizes both its query
                    # input and the other modality's key/value input.
                    q_in = normed[m]
                    kv_in, kv_lnc = ln_forward(
                        other_prev, params[f"{pfx}.ln1_g"],
                        params[f"{pfx}.ln1_b"], LN_EPS)
                    cache["ln1_q"] = ln_pre[m]
                    cache["ln1_kv"] = kv_lnc
                else:
                    q_in, kv_in = x_prev, other_prev
                attn, mha_cache = _mha_forward(q_in, kv_in, params, pfx,
                                               config.heads)
                cache["mha"] = mha_cache
                mk = _maybe_mask(attn.shape, f"attn.{l}.{m}", p_drop, gen,
                                 training, masks, trace)
                cache["attn_mask"] = mk
                r1 = x_prev + _apply_mask(attn, mk, p_drop)
                if pre_ln:
                    x1 = r1
                else:
                    x1, ln1c = ln_forward(r1, params[f"{pfx}.ln1_g"],
                                          params[f"{pfx}.ln1_b"], LN_EPS)
                    cache["ln1"] = ln1c
            else:
                x1 = x_prev
            cache["x1"] = x1
            if pre_ln:
                n2, ln2c = ln_forward(x1, params[f"{pfx}.ln2_g"],
                                      params[f"{pfx}.ln2_b"], LN_EPS)
                cache["ln2"] = ln2c
                y, ffn_cache = _ffn_forward(n2, params, pfx)
                cache["ffn"] = ffn_cache
                mk = _maybe_mask(y.shape, f"ffn.{l}.{m}", p_drop, gen,
                                 training, masks, trace)
                cache["ffn_mask"] = mk
                out = x1 + _apply_mask(y, mk, p_drop)
            else:
                y, ffn_cache = _ffn_forward(x1, params, pfx)
                cache["ffn"] = ffn_cache
                mk = _maybe_mask(y.shape, f"ffn.{l}.{m}", p_drop, gen,
                                 training, masks, trace)
                cache["ffn_mask"] = mk
                r2 = x1 + _apply_mask(y, mk, p_drop)
                out, ln2c = ln_forward(r2, params[f"{pfx}.ln2_g"],
                                       params[f"{pfx}.ln2_b"], LN_EPS)
                cache["ln2"] = ln2c
            _check_finite(out, f"layer {l} ({m})")
            layer_cache[m] = cache
            new_h[m] = out
        h = new_h
        trace.layers.append(layer_cache)

    # Comprehensive feature fusion over flattened hidden vectors.
    hv = h["v"].reshape(B, config.d_h)
    ht = h["t"].reshape(B, config.d_h)
    segs = [hv, ht]
    if not flags.fusion_direct_concat_only:
        if flags.fusion_use_product:
            segs.append(hv * ht)
        if flags.fusion_use_difference:
            segs.append(np.abs(hv - ht))
    f = np.concatenate(segs, axis=1)
    trace.fusion = {"hv": hv, "ht": ht, "f": f}

    # Prediction head.
    u1 = f @ params["head.W1"].T + params["head.b1"]
    g1 = gelu(u1)
    mk = _maybe_mask(g1.shape, "head", p_drop, gen, training, masks, trace)
    z = _apply_mask(g1, mk, p_drop)
    scores = z @ params["head.W2"].T + params["head.b2"]
    _check_finite(scores, "head")
    trace.head = {"u1": u1, "g1": g1, "z": z, "mask": mk}
    trace.scores = scores
    return scores, trace


def forward(v: np.ndarray, t: np.ndarray, params: dict, config: FusionConfig,
            flags: AblationFlags = DEFAULT_FLAGS,
            rng: RngState | None = None, training: bool = False,
            masks: dict | None = None):
    """Single-pair forward; returns ([out_dim] scores, trace)."""
    scores, trace = forward_batch(v[None, :], t[None, :], params, config,
                                  flags, rng, training, masks)
    return scores[0], trace


def backward(trace: ForwardTrace, upstream: np.ndarray, params: dict,
             config: FusionConfig, flags: AblationFlags = DEFAULT_FLAGS,
             want_input_grads: bool = False):
    """Analytic gradients of sum(scores * upstream) w.r.t. every parameter.
    upstream is [B, out_dim] (or [out_dim] for a single-pair trace)."""
    if trace.params_ref is not params:
        raise StaleTraceError("trace was produced with different parameters")
    if trace.config != config or trace.flags != flags:
        raise StaleTraceError("trace config/flags do not match backward call")
    up = np.atleast_2d(np.asarray(upstream))
    B = trace.v_in.shape[0]
    if up.shape != (B, config.out_dim):
        raise ShapeError(
            f"upstream shape {up.shape} != ({B}, {config.out_dim})")

    dtype = trace.v_in.dtype
    grads = {name: np.zeros(shape, dtype=dtype)
             for name, shape in param_shapes(config, flags).items()}
    p_drop = config.dropout_p

    # Head.
    hd = trace.head
    grads["head.W2"] += up.T @ hd["z"]
    grads["head.b2"] += up.sum(axis=0)
    dz = up @ params["head.W2"]
    dg1 = _apply_mask(dz, hd["mask"], p_drop)
    du1 = dg1 * gelu_grad(hd["u1"])
    grads["head.W1"] += du1.T @ trace.fusion["f"]
    grads["head.b1"] += du1.sum(axis=0)
    df = du1 @ params["head.W1"]

    # Fusion split.
    hv, ht = trace.fusion["hv"], trace.fusion["ht"]
    d_h = config.d_h
    pos = 0
    dhv = df[:, pos:pos + d_h].copy(); pos += d_h
    dht = df[:, pos:pos + d_h].copy(); pos += d_h
    if not flags.fusion_direct_concat_only:
        if flags.fusion_use_product:
            dprod = df[:, pos:pos + d_h]; pos += d_h
            dhv += dprod * ht
            dht += dprod * hv
        if flags.fusion_use_difference:
            ddiff = df[:, pos:pos + d_h]; pos += d_h
            sgn = np.sign(hv - ht)
            dhv += ddiff * sgn
            dht -= ddiff * sgn

    S, w = config.tokens, config.token_width
    dh = {"v": dhv.reshape(B, S, w), "t": dht.reshape(B, S, w)}

    pre_ln = config.norm_placement == PRE_LN
    for l in reversed(range(effective_layers(config, flags))):
        layer_cache = trace.layers[l]
        dprev = {"v": np.zeros((B, S, w), dtype=dtype),
                 "t": np.zeros((B, S, w), dtype=dtype)}
        for m in ("v", "t"):
            pfx = f"layer{l}.{m}"
            cache = layer_cache[m]
            other = "t" if m == "v" else "v"
            d_out = dh[m]
            if pre_ln:
                # out = x1 + dropout(FFN(LN2(x1)))
                dy = _apply_mask(d_out, cache["ffn_mask"], p_drop)
                dn2 = _ffn_backward(dy, cache["ffn"], params, pfx, grads)
                dx1_ln, dg_, db_ = ln_backward(dn2, params[f"{pfx}.ln2_g"],
                                               cache["ln2"])
                grads[f"{pfx}.ln2_g"] += dg_
                grads[f"{pfx}.ln2_b"] += db_
                dx1 = d_out + dx1_ln
                if "mha" in cache:
                    # x1 = x_prev + dropout(MHA(LN1(x_prev), LN1(other)))
                    dattn = _apply_mask(dx1, cache["attn_mask"], p_drop)
                    dq_in, dkv_in = _mha_backward(dattn, cache["mha"], params,
                                                  pfx, config.heads, grads)
                    dxp, dg_, db_ = ln_backward(dq_in, params[f"{pfx}.ln1_g"],
                                                cache["ln1_q"])
                    grads[f"{pfx}.ln1_g"] += dg_
                    grads[f"{pfx}.ln1_b"] += db_
                    dop, dg_, db_ = ln_backward(dkv_in, params[f"{pfx}.ln1_g"],
                                                cache["ln1_kv"])
                    grads[f"{pfx}.ln1_g"] += dg_
                    grads[f"{pfx}.ln1_b"] += db_
                    dprev[m] += dx1 + dxp
                    dprev[other] += dop
                else:
                    dprev[m] += dx1
            else:
                # out = LN2(x1 + dropout(FFN(x1)))
                dr2, dg_, db_ = ln_backward(d_out, params[f"{pfx}.ln2_g"],
                                            cache["ln2"])
                grads[f"{pfx}.ln2_g"] += dg_
                grads[f"{pfx}.ln2_b"] += db_
                dy = _apply_mask(dr2, cache["ffn_mask"], p_drop)
                dx1 = dr2 + _ffn_backward(dy, cache["ffn"], params, pfx, grads)
                if "mha" in cache:
                    # x1 = LN1(x_prev + dropout(MHA(x_prev, other)))
                    dr1, dg_, db_ = ln_backward(dx1, params[f"{pfx}.ln1_g"],
                                                cache["ln1"])
                    grads[f"{pfx}.ln1_g"] += dg_
                    grads[f"{pfx}.ln1_b"] += db_
                    dattn = _apply_mask(dr1, cache["attn_mask"], p_drop)
                    dq_in, dkv_in = _mha_backward(dattn, cache["mha"], params,
                                                  pfx, config.heads, grads)
                    dprev[m] += dr1 + dq_in
                    dprev[other] += dkv_in
                else:
                    dprev[m] += dx1
        dh = dprev

    # Projection.
    input_grads = {}
    for m, x_in in (("v", trace.v_in), ("t", trace.t_in)):
        dh0 = dh[m].reshape(B, d_h)
        pc = trace.proj[m]
        dg_full, dgain, dbias = ln_backward(dh0, params[f"proj_{m}.ln_g"],
                                            pc["ln"])
        grads[f"proj_{m}.ln_g"] += dgain
        grads[f"proj_{m}.ln_b"] += dbias
        da = dg_full * gelu_grad(pc["a"])
        grads[f"proj_{m}.W"] += da.T @ x_in
        grads[f"proj_{m}.b"] += da.sum(axis=0)
        if want_input_grads:
            input_grads[m] = da @ params[f"proj_{m}.W"]

    if want_input_grads:
        return grads, input_grads["v"], input_grads["t"]
    return grads


def flatten_params(params: dict, config: FusionConfig,
                   flags: AblationFlags = DEFAULT_FLAGS) -> np.ndarray:
    return np.concatenate([params[n].reshape(-1)
                           for n in param_shapes(config, flags)])


def unflatten_params(vec: np.ndarray, config: FusionConfig,
                     flags: AblationFlags = DEFAULT_FLAGS) -> dict:
    params, pos = {}, 0
    for name, shape in param_shapes(config, flags).items():
        n = int(np.prod(shape))
        params[name] = vec[pos:pos + n].reshape(shape).copy()
        pos += n
    return params


def config_with(config: FusionConfig, **kw) -> FusionConfig:
    return replace(config, **kw)
