"""The six model cores: parameter containers plus forward wiring.

Four time-invariant kinds and two input-gated kinds, split by structure:

- s4, s4d: one independent single-input single-output system per channel
  (channel j sees only u[:, j]); all channels share one step size. s4
  carries a diagonal-plus-rank-1 transition, s4d a purely diagonal one.
  Preferred execution: convolution for training, stepwise recurrence for
  inference.
- s5, lru: one joint multi-input system across channels. s5 stores
  continuous parameters discretized by the hold map; lru parameterizes the
  discrete transition directly (nu, theta on the unit disk). Preferred
  execution: parallel scan.
- s6: per-channel scalar drive into a shared n-dimensional state whose
  step size, input map, and readout are projections of the current input.
- rglru: a gated ring with state feedback (y = x, p = q); the recurrence
  weight exp(-c * softplus(w_a) * sigmoid(W_delta u)) stays in (0, 1) for
  any parameter values, so stability survives training by construction.

Complex parameters live as separate re/im real arrays (conjugate halves
only; the mirrored half is implied and outputs take twice the real part).
The forward methods are written against the dual-dispatch ops in
`autodiff`, so the same code runs plain numpy when parameters are arrays
and builds a tape when they are leaves of a ParamStore.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import engines
from .discretize import bilinear_dplr, zoh, zoh_timevarying
from .init import InitSpec, init_lru, init_rglru, init_s4, init_s4d, init_s5, init_s6
from .types import (
    ContinuousSystem,
    DiscreteSystem,
    TimeVaryingParams,
    ValidationError,
    as_sequence,
)

__all__ = ["LtiModel", "S6Model", "RgLruModel", "build_model",
           "LTI_KINDS", "LTV_KINDS", "SISO_KINDS"]

LTI_KINDS = ("s4", "s4d", "s5", "lru")
LTV_KINDS = ("s6", "rglru")
SISO_KINDS = ("s4", "s4d")

# parameters that shape the transition spectrum train with a reduced rate
DYNAMICS_PARAMS = frozenset({
    "lam_re", "lam_im", "log_delta", "r_re", "r_im", "s_re", "s_im",
    "nu", "theta", "gamma_log", "log_neg_lam", "b_delta", "w_a",
})


def _mirror(z, axis=-1):
    """Tape-aware conjugate mirror: half storage to the full spectrum."""
    return ad.concat([z, ad.conj(z)], axis=axis)


class _ModelBase:
    kind = "?"

    def register(self, store, prefix: str = "", dynamics_lr_scale: float = 0.1):
        """Move every parameter into `store` as a trainable leaf.

        Transition-spectrum parameters get `dynamics_lr_scale` as their
        per-parameter learning-rate multiplier; projections train at 1.
        """
        for name in list(self.params):
            scale = dynamics_lr_scale if name in DYNAMICS_PARAMS else 1.0
            self.params[name] = store.add(prefix + name, ad.val(self.params[name]),
                                          lr_scale=scale)
        return self

    def param_values(self) -> dict:
        return {k: np.asarray(ad.val(v)).copy() for k, v in self.params.items()}

    def _v(self, name) -> np.ndarray:
        return np.asarray(ad.val(self.params[name]))

    @property
    def on_tape(self) -> bool:
        return any(isinstance(v, ad.Tensor) for v in self.params.values())


class LtiModel(_ModelBase):
    """Time-invariant core for kinds s4 / s4d / lru / s5."""

    def __init__(self, kind: str, q: int, half: int, params: dict):
        if kind not in LTI_KINDS:
            raise ValidationError(f"not a time-invariant kind: {kind!r}")
        self.kind = kind
        self.q = q
        self.half = half
        self.params = dict(params)

    # ------------------------------------------------------------ creation

    @classmethod
    def from_spec(cls, spec: InitSpec) -> "LtiModel":
        half = spec.p // 2
        q = spec.q
        if spec.kind == "lru":
            sysd = init_lru(spec)
            r = np.abs(sysd.abar[:half])
            gamma_log = 0.5 * np.log1p(-(r**2))
            Gamma = sysd.bbar[:half] * np.exp(-gamma_log)[:, None]
            params = {
                "nu": np.log(-np.log(r)),
                "theta": np.angle(sysd.abar[:half]),
                "gamma_log": gamma_log,
                "gb_re": Gamma.real.copy(), "gb_im": Gamma.imag.copy(),
                "c_re": sysd.cbar[:, :half].real.copy(),
                "c_im": sysd.cbar[:, :half].imag.copy(),
                "d": sysd.dbar.copy(),
            }
            return cls("lru", q, half, params)

        if spec.kind == "s5":
            sysc = init_s5(spec)
            params = {
                "lam_re": sysc.lam[:half].real.copy(),
                "lam_im": sysc.lam[:half].imag.copy(),
                "b_re": sysc.B[:half].real.copy(), "b_im": sysc.B[:half].imag.copy(),
                "c_re": sysc.C[:, :half].real.copy(),
                "c_im": sysc.C[:, :half].imag.copy(),
                "d": sysc.D.copy(),
                "log_delta": np.array([math.log(sysc.delta)]),
            }
            return cls("s5", q, half, params)

        sysc = init_s4(spec) if spec.kind == "s4" else init_s4d(spec)
        tile = lambda v: np.tile(v, (q, 1))  # independent per-channel copies
        params = {
            "lam_re": tile(sysc.lam[:half].real),
            "lam_im": tile(sysc.lam[:half].imag),
            "b_re": sysc.B[:half].T.real.copy(), "b_im": sysc.B[:half].T.imag.copy(),
            "c_re": sysc.C[:, :half].real.copy(), "c_im": sysc.C[:, :half].imag.copy(),
            "d": sysc.D.copy(),
            "log_delta": np.array([math.log(sysc.delta)]),
        }
        if spec.kind == "s4":
            r, s = sysc.low_rank
            params.update({
                "r_re": tile(r[:half].real), "r_im": tile(r[:half].imag),
                "s_re": tile(s[:half].real), "s_im": tile(s[:half].imag),
            })
        return cls(spec.kind, q, half, params)

    # ---------------------------------------------------------- properties

    @property
    def p(self) -> int:
        """Full per-system state size (per channel for SISO kinds)."""
        return 2 * self.half

    @property
    def is_siso(self) -> bool:
        return self.kind in SISO_KINDS

    @property
    def train_mode(self) -> str:
        return "conv" if self.is_siso else "scan"

    @property
    def infer_mode(self) -> str:
        return "recurrent" if self.is_siso else "scan"

    # ------------------------------------------------- numpy materialization

    def channel_system(self, j: int):
        """Channel j's standalone system (SISO kinds only)."""
        if not self.is_siso:
            raise ValidationError(f"{self.kind} is a joint multi-input system")
        half = self.half
        full = lambda re, im: np.concatenate([re[j] + 1j * im[j],
                                              re[j] - 1j * im[j]])
        lam = full(self._v("lam_re"), self._v("lam_im"))
        B = full(self._v("b_re"), self._v("b_im"))[:, None]
        C = full(self._v("c_re"), self._v("c_im"))[None, :]
        D = self._v("d")[j:j + 1]
        delta = float(np.exp(self._v("log_delta")[0]))
        low_rank = None
        if self.kind == "s4":
            low_rank = (full(self._v("r_re"), self._v("r_im")),
                        full(self._v("s_re"), self._v("s_im")))
        return ContinuousSystem(lam=lam, B=B, C=C, D=D, delta=delta, low_rank=low_rank)

    def _channel_discrete(self, j: int):
        sysc = self.channel_system(j)
        return bilinear_dplr(sysc) if self.kind == "s4" else zoh(sysc)

    @staticmethod
    def _diagonalize(dplr) -> DiscreteSystem:
        """Equivalent diagonal form of a diagonal-plus-rank-1 step operator."""
        w, V = np.linalg.eig(dplr.dense())
        return DiscreteSystem(abar=w, bbar=np.linalg.solve(V, dplr.bbar),
                              cbar=dplr.cbar @ V, dbar=dplr.dbar)

    def discrete_system(self) -> DiscreteSystem:
        """One diagonal step system for the whole layer.

        SISO kinds materialize as a block-diagonal stack over channels;
        the rank-1 kind is eigen-diagonalized first so every consumer of
        this view (scan engine, eigenvalue plots) sees a plain diagonal.
        """
        if not self.is_siso:
            if self.kind == "lru":
                nu, theta = self._v("nu"), self._v("theta")
                abar = np.concatenate([np.exp(-np.exp(nu) + 1j * theta),
                                       np.exp(-np.exp(nu) - 1j * theta)])
                gb = self._v("gb_re") + 1j * self._v("gb_im")
                bbar = np.concatenate([np.exp(self._v("gamma_log"))[:, None] * gb,
                                       np.conj(np.exp(self._v("gamma_log"))[:, None] * gb)])
                c = self._v("c_re") + 1j * self._v("c_im")
                cbar = np.concatenate([c, np.conj(c)], axis=1)
                return DiscreteSystem(abar=abar, bbar=bbar, cbar=cbar, dbar=self._v("d"))
            lam = self._v("lam_re") + 1j * self._v("lam_im")
            lam = np.concatenate([lam, np.conj(lam)])
            B = self._v("b_re") + 1j * self._v("b_im")
            B = np.concatenate([B, np.conj(B)], axis=0)
            C = self._v("c_re") + 1j * self._v("c_im")
            C = np.concatenate([C, np.conj(C)], axis=1)
            sysc = ContinuousSystem(lam=lam, B=B, C=C, D=self._v("d"),
                                    delta=float(np.exp(self._v("log_delta")[0])))
            return zoh(sysc)

        blocks = []
        for j in range(self.q):
            sysd = self._channel_discrete(j)
            blocks.append(self._diagonalize(sysd) if self.kind == "s4" else sysd)
        p, q = self.p, self.q
        abar = np.concatenate([b.abar for b in blocks])
        bbar = np.zeros((q * p, q), dtype=complex)
        cbar = np.zeros((q, q * p), dtype=complex)
        for j, b in enumerate(blocks):
            bbar[j * p:(j + 1) * p, j] = b.bbar[:, 0]
            cbar[j, j * p:(j + 1) * p] = b.cbar[0]
        return DiscreteSystem(abar=abar, bbar=bbar, cbar=cbar, dbar=self._v("d"))

    # ------------------------------------------------------------- forward

    def forward(self, u, mode: str | None = None, workers: int | None = None):
        """Run the layer over a (T, q) sequence in the requested mode.

        The differentiable path also accepts batched input (..., T, q);
        the plain numpy path is strictly single-sequence.
        """
        batched = np.asarray(ad.val(u)).ndim != 2
        tape = self.on_tape or isinstance(u, ad.Tensor) or batched
        if mode is None:
            mode = self.train_mode if tape else self.infer_mode
        if mode not in ("recurrent", "scan", "conv"):
            raise ValidationError(f"unknown mode {mode!r}")
        if tape:
            return self._forward_ops(u, mode, workers)
        u = as_sequence(u, self.q)
        if self.is_siso:
            outs = []
            for j in range(self.q):
                sysd = self._channel_discrete(j)
                uj = u[:, j:j + 1]
                if mode == "recurrent":
                    yj = engines.run_recurrent(sysd, uj)
                elif mode == "conv":
                    yj = engines.run_convolution(sysd, uj)
                else:
                    diag = self._diagonalize(sysd) if self.kind == "s4" else sysd
                    yj = engines.run_scan(diag, uj, workers=workers)
                outs.append(yj)
            return np.concatenate(outs, axis=1)
        sysd = self.discrete_system()
        if mode == "recurrent":
            return engines.run_recurrent(sysd, u)
        if mode == "conv":
            return engines.run_convolution(sysd, u)
        return engines.run_scan(sysd, u, workers=workers)

    # ------------------------------------------------------ differentiable

    def _forward_ops(self, u, mode, workers):
        ush = np.asarray(ad.val(u)).shape
        T = ush[-2]
        if self.kind == "s4":
            if mode != "conv":
                raise ValidationError("the rank-1 kind differentiates through its kernel; use conv")
            K = self._kernel_s4_ops(T)
            return ad.add(ad.depthwise_causal_conv(u, K), ad.mul(u, self.params["d"]))
        if self.kind == "s4d":
            abar, bbar = self._abar_bbar_siso_ops()
            c = ad.make_complex(self.params["c_re"], self.params["c_im"])
            if mode == "conv":
                P = ad.powers(abar, T)                       # (T, q, half)
                K = ad.mul(ad.real(ad.tsum(ad.mul(P, ad.mul(c, bbar)), axis=-1)), 2.0)
                return ad.add(ad.depthwise_causal_conv(u, K), ad.mul(u, self.params["d"]))
            if mode == "scan":
                drive = ad.mul(ad.reshape(u, ush + (1,)), bbar)
                x = ad.linear_scan(ad.broadcast_in_time(abar, T), drive,
                                   time_axis=-3, workers=workers)
                y = ad.mul(ad.real(ad.tsum(ad.mul(x, c), axis=-1)), 2.0)
                return ad.add(y, ad.mul(u, self.params["d"]))
            raise ValidationError("stepwise recurrence has no tape path; use conv or scan")
        # joint kinds: scan only
        if mode != "scan":
            raise ValidationError(f"{self.kind} differentiates through the scan; use scan")
        if self.kind == "lru":
            abar = ad.exp(ad.make_complex(ad.neg(ad.exp(self.params["nu"])),
                                          self.params["theta"]))
            gb = ad.make_complex(self.params["gb_re"], self.params["gb_im"])
            bbar = ad.mul(ad.reshape(ad.exp(self.params["gamma_log"]), (self.half, 1)), gb)
        else:  # s5
            dl = ad.exp(self.params["log_delta"])            # (1,)
            lam = ad.make_complex(self.params["lam_re"], self.params["lam_im"])
            z = ad.mul(dl, lam)                              # (half,)
            abar = ad.exp(z)
            B = ad.make_complex(self.params["b_re"], self.params["b_im"])
            bbar = ad.mul(ad.reshape(ad.mul(dl, ad.phi1(z)), (self.half, 1)), B)
        c = ad.make_complex(self.params["c_re"], self.params["c_im"])
        drive = ad.matmul(u, ad.swapaxes(bbar, 0, 1))        # (..., T, half)
        x = ad.linear_scan(ad.broadcast_in_time(abar, T), drive,
                           time_axis=-2, workers=workers)
        y = ad.mul(ad.real(ad.matmul(x, ad.swapaxes(c, 0, 1))), 2.0)
        return ad.add(y, ad.mul(u, self.params["d"]))

    def _abar_bbar_siso_ops(self):
        """Per-channel diagonal step quantities (q, half), hold-discretized."""
        dl = ad.exp(self.params["log_delta"])                # (1,)
        lam = ad.make_complex(self.params["lam_re"], self.params["lam_im"])
        z = ad.mul(ad.reshape(dl, (1, 1)), lam)              # (q, half)
        abar = ad.exp(z)
        B = ad.make_complex(self.params["b_re"], self.params["b_im"])
        bbar = ad.mul(ad.mul(ad.reshape(dl, (1, 1)), ad.phi1(z)), B)
        return abar, bbar

    def _kernel_s4_ops(self, T: int):
        """Differentiable impulse response of the rank-1 kind, (T, q).

        Builds each channel's dense step matrix from the rank-1 inverse
        identity (only elementwise inversions), then unrolls a matrix-vector
        iteration for the kernel taps.
        """
        q, p, half = self.q, self.p, self.half
        dl = ad.exp(self.params["log_delta"])                # (1,)
        hd = ad.mul(dl, 0.5)
        lam = _mirror(ad.make_complex(self.params["lam_re"], self.params["lam_im"]))
        r = _mirror(ad.make_complex(self.params["r_re"], self.params["r_im"]))
        s = _mirror(ad.make_complex(self.params["s_re"], self.params["s_im"]))
        b = _mirror(ad.make_complex(self.params["b_re"], self.params["b_im"]))
        c = _mirror(ad.make_complex(self.params["c_re"], self.params["c_im"]))

        hd2 = ad.reshape(hd, (1, 1))
        dm = ad.sub(1.0, ad.mul(hd2, lam))                   # (q, p)
        dp = ad.add(1.0, ad.mul(hd2, lam))
        w = ad.div(ad.conj(s), dm)
        denom = ad.sub(1.0, ad.mul(hd2, ad.tsum(ad.mul(w, r), axis=-1, keepdims=True)))
        rd = ad.div(r, dm)                                   # (q, p)
        scale = ad.div(ad.reshape(hd, (1, 1, 1)), ad.reshape(denom, (q, 1, 1)))

        def minv(X):  # (q, p, m) -> (q, p, m), X := (I - (delta/2) A)^-1 X
            direct = ad.div(X, ad.reshape(dm, (q, p, 1)))
            wX = ad.matmul(ad.reshape(w, (q, 1, p)), X)      # (q, 1, m)
            return ad.add(direct, ad.mul(ad.mul(scale, ad.reshape(rd, (q, p, 1))), wX))

        N = ad.add(ad.mul(ad.reshape(dp, (q, p, 1)), np.eye(p)),
                   ad.mul(ad.reshape(hd, (1, 1, 1)),
                          ad.mul(ad.reshape(r, (q, p, 1)),
                                 ad.conj(ad.reshape(s, (q, 1, p))))))
        abar_mat = minv(N)                                   # (q, p, p)
        X = minv(ad.reshape(ad.mul(ad.reshape(dl, (1, 1)), b), (q, p, 1)))

        rows = []
        for t in range(T):
            k_t = ad.real(ad.tsum(ad.mul(c, ad.reshape(X, (q, p))), axis=-1))
            rows.append(ad.reshape(k_t, (1, q)))
            if t + 1 < T:
                X = ad.matmul(abar_mat, X)
        return ad.concat(rows, axis=0)                       # (T, q)

    # -------------------------------------------------------------- plots

    def eigenvalue_records(self, sample_inputs=None):
        return [(-1, -1, z) for z in self.discrete_system().abar]


class S6Model(_ModelBase):
    """Input-gated core with shared state and per-channel scalar drive.

    State layout (T, q, n): channel j integrates the shared per-step
    transition abar_k with drive bbar_k * u_j(k) and readout c_k. The
    transition diagonal is stored as log(-lam) so lam stays negative and
    every per-step eigenvalue exp(delta_k lam) stays inside (0, 1), no
    matter where training walks the parameters.
    """

    kind = "s6"

    def __init__(self, q: int, n: int, params: dict):
        self.q = q
        self.n = n
        self.params = dict(params)

    @classmethod
    def from_spec(cls, spec: InitSpec) -> "S6Model":
        raw = init_s6(spec)
        params = {
            "log_neg_lam": np.log(-raw["lam"]),
            "W_delta": raw["W_delta"], "b_delta": raw["b_delta"],
            "W_B": raw["W_B"], "W_C": raw["W_C"], "d": raw["D"],
        }
        return cls(spec.q, spec.p, params)

    @property
    def p(self) -> int:
        return self.n

    def compute_params(self, u) -> TimeVaryingParams:
        """Per-step transition quantities for a concrete (T, q) input."""
        u = as_sequence(u, self.q)
        lam = -np.exp(self._v("log_neg_lam"))
        z = u @ self._v("W_delta").T + self._v("b_delta")    # (T, 1)
        delta_seq = np.logaddexp(0.0, z[:, 0])               # softplus, (T,)
        b_seq = u @ self._v("W_B").T                         # (T, n)
        abar_seq, bbar_seq = zoh_timevarying(lam, delta_seq, b_seq)
        drive = u[:, :, None] * bbar_seq[:, None, :]         # (T, q, n)
        c_seq = u @ self._v("W_C").T                         # (T, n)
        return TimeVaryingParams(abar_seq=abar_seq, drive=drive,
                                 c_seq=c_seq, delta_seq=delta_seq)

    def forward(self, u, mode: str = "scan", workers: int | None = None):
        if mode == "recurrent":
            tv = self.compute_params(u)
            u = as_sequence(u, self.q)
            T = u.shape[0]
            x = np.zeros((self.q, self.n))
            y = np.empty((T, self.q))
            for k in range(T):
                x = tv.abar_seq[k][None, :] * x + tv.drive[k]
                y[k] = x @ tv.c_seq[k] + self._v("d") * u[k]
            return y
        if mode != "scan":
            raise ValidationError("input-gated kinds run as scan or recurrent")
        ush = np.asarray(ad.val(u)).shape                    # (..., T, q)
        lead = ush[:-1]
        lam = ad.neg(ad.exp(self.params["log_neg_lam"]))     # (n,)
        z = ad.add(ad.matmul(u, ad.swapaxes(self.params["W_delta"], 0, 1)),
                   self.params["b_delta"])                   # (..., T, 1)
        delta = ad.softplus(z)
        zl = ad.mul(delta, lam)                              # (..., T, n)
        abar = ad.exp(zl)
        b_seq = ad.matmul(u, ad.swapaxes(self.params["W_B"], 0, 1))
        bbar = ad.mul(ad.mul(delta, ad.phi1(zl)), b_seq)     # (..., T, n)
        drive = ad.mul(ad.reshape(u, ush + (1,)),
                       ad.reshape(bbar, lead + (1, self.n))) # (..., T, q, n)
        x = ad.linear_scan(ad.reshape(abar, lead + (1, self.n)), drive,
                           time_axis=-3, workers=workers)
        c_seq = ad.matmul(u, ad.swapaxes(self.params["W_C"], 0, 1))
        y = ad.tsum(ad.mul(x, ad.reshape(c_seq, lead + (1, self.n))), axis=-1)
        return ad.add(y, ad.mul(u, self.params["d"]))

    def eigenvalue_records(self, sample_inputs=None):
        if not sample_inputs:
            raise ValidationError("input-gated kinds need at least one sample input")
        records = []
        for input_id, u in enumerate(sample_inputs):
            abar_seq = self.compute_params(u).abar_seq
            for k in range(abar_seq.shape[0]):
                records.extend((input_id, k, z) for z in abar_seq[k])
        return records


class RgLruModel(_ModelBase):
    """Gated ring with state feedback: y(k) = x(k), p = q.

    abar_k = exp(-c * softplus(w_a) * sigmoid(W_delta u(k))) is a product
    of strictly positive factors in the exponent, so it sits in (0, 1)
    elementwise for any real parameters. The drive is scaled by
    sqrt(1 - abar_k^2) (elementwise) times an input gate, which bounds the
    state by about sqrt(2) * sup|u| on bounded inputs.
    """

    kind = "rglru"

    # floor on the gate exponent: keeps abar < 1 in fp64 even when a saturated
    # gate underflows the exponent to 0, where sqrt(1 - abar^2) has infinite slope
    GATE_EXP_FLOOR = 1e-12

    def __init__(self, p: int, params: dict, c: float = 8.0):
        self.p = self.q = p
        self.c = float(c)
        self.params = dict(params)

    @classmethod
    def from_spec(cls, spec: InitSpec) -> "RgLruModel":
        raw = init_rglru(spec)
        params = {"w_a": raw["w_a"], "W_delta": raw["W_delta"], "W_B": raw["W_B"]}
        return cls(spec.p, params, c=float(raw["c"][0]))

    def compute_params(self, u) -> TimeVaryingParams:
        u = as_sequence(u, self.q)
        gate_a = 1.0 / (1.0 + np.exp(-(u @ self._v("W_delta").T)))
        exponent = np.maximum(self.c * np.logaddexp(0.0, self._v("w_a")) * gate_a,
                              self.GATE_EXP_FLOOR)
        abar_seq = np.exp(-exponent)
        gate_b = 1.0 / (1.0 + np.exp(-(u @ self._v("W_B").T)))
        bbar_seq = np.sqrt(1.0 - abar_seq**2) * gate_b
        return TimeVaryingParams(abar_seq=abar_seq, drive=bbar_seq * u)

    def forward(self, u, mode: str = "scan", workers: int | None = None):
        if mode == "recurrent":
            tv = self.compute_params(u)
            x = np.zeros(self.p)
            y = np.empty_like(tv.drive)
            for k in range(tv.drive.shape[0]):
                x = tv.abar_seq[k] * x + tv.drive[k]
                y[k] = x
            return y
        if mode != "scan":
            raise ValidationError("input-gated kinds run as scan or recurrent")
        decay = ad.mul(ad.softplus(self.params["w_a"]), self.c)        # (p,)
        gate_a = ad.sigmoid(ad.matmul(u, ad.swapaxes(self.params["W_delta"], 0, 1)))
        exponent = ad.clip_min(ad.mul(decay, gate_a), self.GATE_EXP_FLOOR)
        abar = ad.exp(ad.neg(exponent))                                # (T, p)
        gate_b = ad.sigmoid(ad.matmul(u, ad.swapaxes(self.params["W_B"], 0, 1)))
        bbar = ad.mul(ad.sqrt(ad.sub(1.0, ad.mul(abar, abar))), gate_b)
        return ad.linear_scan(abar, ad.mul(bbar, u), time_axis=-2, workers=workers)

    def eigenvalue_records(self, sample_inputs=None):
        if not sample_inputs:
            raise ValidationError("input-gated kinds need at least one sample input")
        records = []
        for input_id, u in enumerate(sample_inputs):
            abar_seq = self.compute_params(u).abar_seq
            for k in range(abar_seq.shape[0]):
                records.extend((input_id, k, z) for z in abar_seq[k])
        return records


def build_model(spec: InitSpec):
    """Construct the model core named by spec.kind."""
    if spec.kind in LTI_KINDS:
        return LtiModel.from_spec(spec)
    if spec.kind == "s6":
        return S6Model.from_spec(spec)
    return RgLruModel.from_spec(spec)
