"""Wall-clock scaling harness and structural ablation runner.

Timed region: the per-head attention cores (softmax vs linearized) on
pre-projected q/k/v.  The X -> QKV and output projections are the same
O(T d^2) code for every mechanism, so they are set up once per sequence
length outside the timer; what is measured is exactly the part whose
complexity differs.  Checksums of each output are kept to defeat
dead-code elimination and to confirm identical kinds see identical
inputs.
"""

from __future__ import annotations

import csv
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import (
    AttentionKind,
    AttentionParams,
    lbla_proximity_matrix,
    make_head_core,
    parse_kind,
)
from .errors import ConfigError
from .linear_attention import DENOM_EPS, KernelKind, build_reweight
from .numeric import SeededRng, seeded_init

CSV_HEADER = ("attn_kind", "kernel", "T", "d", "h",
              "median_ns", "p10_ns", "p90_ns", "checksum")


@dataclass(frozen=True)
class BenchSpec:
    """One benchmark sweep: kinds x lengths, identical seeded inputs per T."""

    lengths: tuple[int, ...] = (512, 1024, 2048, 4096, 8192)
    d_model: int = 256
    heads: int = 4
    kinds: tuple[AttentionKind, ...] = (
        AttentionKind(), AttentionKind(KernelKind.SIGMOID, True))
    repeats: int = 5
    warmup: int = 1
    precision: str = "f64"
    seed: int = 0
    reweight_horizon: int = 0

    def __post_init__(self):
        if self.repeats < 3:
            raise ConfigError(f"repeats must be >= 3, got {self.repeats}")
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")
        if not self.lengths or any(t < 1 for t in self.lengths):
            raise ConfigError("lengths must be non-empty, all >= 1")
        if any(b <= a for a, b in zip(self.lengths, self.lengths[1:])):
            raise ConfigError(f"lengths must be strictly increasing, "
                              f"got {self.lengths}")
        if self.precision not in ("f64", "f32"):
            raise ConfigError(f"precision must be f64 or f32, "
                              f"got {self.precision!r}")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by "
                              f"heads {self.heads}")


@dataclass(frozen=True)
class BenchRecord:
    attn_kind: str
    kernel: str
    seq_len: int
    d: int
    h: int
    median_ns: int
    p10_ns: int
    p90_ns: int
    checksum: float

    def __post_init__(self):
        if not (self.p10_ns <= self.median_ns <= self.p90_ns):
            raise ConfigError(
                f"percentiles out of order: p10={self.p10_ns} "
                f"median={self.median_ns} p90={self.p90_ns}")


@dataclass(frozen=True)
class SkippedCell:
    attn_kind: str
    seq_len: int
    reason: str


@dataclass
class BenchResult:
    records: list[BenchRecord] = field(default_factory=list)
    skipped: list[SkippedCell] = field(default_factory=list)


def _kernel_column(kind: AttentionKind) -> str:
    return "none" if kind.is_softmax else kind.kernel.value


def _cpu_burn_in(seconds: float = 0.25) -> None:
    # Spin the core briefly so the first timed cells do not run on an
    # idle-frequency CPU.
    a = np.full((192, 192), 0.5)
    deadline = time.perf_counter() + seconds
    while time.perf_counter() < deadline:
        a @ a


def run_bench(spec: BenchSpec, log=None) -> BenchResult:
    """Time every (kind, T) cell: warmups discarded, median of repeats kept.

    BLAS pools are limited to one thread for the whole sweep, so every
    cell is single-threaded regardless of environment.  Within a
    sequence length the kinds are timed round-robin (one run of each per
    repeat) so thermal and scheduler drift hits all mechanisms alike.
    A MemoryError in a cell (the quadratic kind at large T) is recorded
    as a skipped cell, not a crash.
    """
    with threadpool_limits(limits=1):
        return _run_bench_single_threaded(spec, log)


def _run_bench_single_threaded(spec: BenchSpec, log) -> BenchResult:
    result = BenchResult()
    dtype = np.float64 if spec.precision == "f64" else np.float32
    _cpu_burn_in()
    for t in spec.lengths:
        rng = SeededRng(spec.seed + t)
        d = spec.d_model
        x = rng.uniform(-1.0, 1.0, (t, d))
        params = AttentionParams(
            w_q=seeded_init(rng, d, d, d), w_k=seeded_init(rng, d, d, d),
            w_v=seeded_init(rng, d, d, d), w_o=seeded_init(rng, d, d, d),
            heads=spec.heads)
        q = (x @ params.w_q).astype(dtype)
        k = (x @ params.w_k).astype(dtype)
        v = (x @ params.w_v).astype(dtype)
        d_k = params.d_k
        # Contiguous per-head views, prepared outside every timed region
        # and shared by all kinds at this T.
        heads = [(np.ascontiguousarray(q[:, h * d_k:(h + 1) * d_k]),
                  np.ascontiguousarray(k[:, h * d_k:(h + 1) * d_k]),
                  np.ascontiguousarray(v[:, h * d_k:(h + 1) * d_k]))
                 for h in range(spec.heads)]

        def make_cell(kind: AttentionKind):
            core = make_head_core(kind, spec.reweight_horizon)

            def cell() -> float:
                return sum(float(np.sum(core(hq, hk, hv)))
                           for hq, hk, hv in heads)

            return cell

        cells = {kind: make_cell(kind) for kind in spec.kinds}
        alive = list(spec.kinds)
        checksums: dict[AttentionKind, float] = {}
        times: dict[AttentionKind, list[int]] = {kind: [] for kind in alive}

        def drop_oom(kind: AttentionKind) -> None:
            alive.remove(kind)
            result.skipped.append(SkippedCell(kind.label(), t, "out of memory"))
            if log is not None:
                print(f"skip {kind.label()} T={t}: out of memory", file=log)

        for _ in range(spec.warmup):
            for kind in list(alive):
                try:
                    checksums[kind] = cells[kind]()
                except MemoryError:
                    drop_oom(kind)
        for _ in range(spec.repeats):
            for kind in list(alive):
                try:
                    start = time.perf_counter_ns()
                    checksums[kind] = cells[kind]()
                    times[kind].append(time.perf_counter_ns() - start)
                except MemoryError:
                    drop_oom(kind)

        for kind in spec.kinds:
            if kind not in alive:
                continue
            p10, median, p90 = np.percentile(times[kind], [10, 50, 90])
            record = BenchRecord(
                attn_kind=kind.label(), kernel=_kernel_column(kind),
                seq_len=t, d=spec.d_model, h=spec.heads,
                median_ns=int(round(median)), p10_ns=int(round(p10)),
                p90_ns=int(round(p90)), checksum=checksums[kind])
            result.records.append(record)
            if log is not None:
                print(f"{kind.label():<14} T={t:<6} "
                      f"median={median / 1e6:9.3f} ms"
                      f"  checksum={checksums[kind]:.6g}", file=log)
    return result


def fit_slope(records: list[BenchRecord]) -> float:
    """Least-squares slope of log(median_ns) against log(T), one kind's rows."""
    points = sorted({(r.seq_len, r.median_ns) for r in records})
    if len(points) < 3:
        raise ValueError(
            f"slope fit needs >= 3 distinct lengths, got {len(points)}")
    logs_t = np.log([p[0] for p in points])
    logs_ns = np.log([max(p[1], 1) for p in points])
    slope, _ = np.polyfit(logs_t, logs_ns, 1)
    return float(slope)


def emit_csv(records: list[BenchRecord], path: str | Path) -> None:
    """Plain-decimal CSV, one row per record, newline-terminated."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([
                r.attn_kind, r.kernel, r.seq_len, r.d, r.h,
                r.median_ns, r.p10_ns, r.p90_ns,
                np.format_float_positional(r.checksum, unique=True)])


def load_csv(path: str | Path) -> list[BenchRecord]:
    """Inverse of emit_csv."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected CSV header {header}")
        return [BenchRecord(
            attn_kind=row[0], kernel=row[1], seq_len=int(row[2]),
            d=int(row[3]), h=int(row[4]), median_ns=int(row[5]),
            p10_ns=int(row[6]), p90_ns=int(row[7]), checksum=float(row[8]))
            for row in reader]


# --- ablation ---------------------------------------------------------------

PROP_NON_NEGATIVE = "non_negative_scores"
PROP_ROW_SUMS = "rows_sum_to_one"
PROP_POSITION = "position_sensitive"

ARM_FULL = "full"
ARM_NO_REWEIGHT = "no-reweight"
ARM_NO_KERNEL = "no-kernel"
ARM_NO_NORMALIZATION = "no-normalization"


@dataclass(frozen=True)
class AblationConfig:
    seq_len: int = 96
    d_k: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.seq_len > 256 or self.d_k > 64:
            raise ConfigError("ablation runs desk-scale only: "
                              "seq_len <= 256, d_k <= 64")
        if self.seq_len < 4 or self.d_k < 1:
            raise ConfigError("ablation needs seq_len >= 4, d_k >= 1")


@dataclass(frozen=True)
class AblationArm:
    name: str
    kernel: KernelKind
    use_reweight: bool
    normalize: bool
    expected_broken: str | None


ABLATION_ARMS = (
    AblationArm(ARM_FULL, KernelKind.SIGMOID, True, True, None),
    AblationArm(ARM_NO_REWEIGHT, KernelKind.SIGMOID, False, True,
                PROP_POSITION),
    AblationArm(ARM_NO_KERNEL, KernelKind.IDENTITY, True, True,
                PROP_NON_NEGATIVE),
    AblationArm(ARM_NO_NORMALIZATION, KernelKind.SIGMOID, True, False,
                PROP_ROW_SUMS),
)


@dataclass(frozen=True)
class AblationArmReport:
    arm: str
    expected_broken: str | None
    passed: dict[str, bool]

    @property
    def conforms(self) -> bool:
        """True when exactly the expected property (if any) is broken."""
        for prop, ok in self.passed.items():
            want_ok = prop != self.expected_broken
            if ok != want_ok:
                return False
        return True


@dataclass
class AblationReport:
    arms: list[AblationArmReport]

    @property
    def all_conform(self) -> bool:
        return all(arm.conforms for arm in self.arms)


def _arm_attention(q, k, v, arm: AblationArm, rw):
    scores = lbla_proximity_matrix(q, k, arm.kernel,
                                   rw if arm.use_reweight else None)
    if arm.normalize:
        return (scores @ v) / (scores.sum(axis=1) + DENOM_EPS)[:, None]
    return scores @ v


def run_ablation(cfg: AblationConfig = AblationConfig()) -> AblationReport:
    """Evaluate which structural properties each ablation arm keeps.

    full arm: non-negative scores, weight rows summing to 1, and
    sensitivity to a generic input permutation all hold.  Each ablation
    breaks exactly one of them: identity kernel admits negative scores,
    dropping normalization breaks the row sums, and dropping the
    re-weighting restores permutation equivariance.
    """
    rng = np.random.default_rng(cfg.seed)
    t = cfg.seq_len
    q = rng.uniform(-3, 3, (t, cfg.d_k))
    k = rng.uniform(-3, 3, (t, cfg.d_k))
    v = rng.uniform(-3, 3, (t, cfg.d_k))
    perm = rng.permutation(t)
    rw = build_reweight(t, t)

    reports = []
    for arm in ABLATION_ARMS:
        scores = lbla_proximity_matrix(q, k, arm.kernel,
                                       rw if arm.use_reweight else None)
        non_negative = bool(np.all(scores >= 0))

        if arm.normalize:
            row_sums = scores.sum(axis=1)
            weights = scores / np.where(row_sums == 0, 1.0, row_sums)[:, None]
        else:
            weights = scores
        rows_ok = bool(np.all(np.abs(weights.sum(axis=1) - 1.0) <= 1e-12))

        base = _arm_attention(q, k, v, arm, rw)
        permuted = _arm_attention(q[perm], k[perm], v[perm], arm,
                                  build_reweight(t, t))
        gap = float(np.max(np.abs(permuted - base[perm])))
        position_sensitive = gap > 1e-6

        reports.append(AblationArmReport(
            arm=arm.name, expected_broken=arm.expected_broken,
            passed={PROP_NON_NEGATIVE: non_negative,
                    PROP_ROW_SUMS: rows_ok,
                    PROP_POSITION: position_sensitive}))
    return AblationReport(arms=reports)


def format_ablation_report(report: AblationReport) -> str:
    lines = []
    for arm in report.arms:
        props = "  ".join(f"{name}={'PASS' if ok else 'FAIL'}"
                          for name, ok in arm.passed.items())
        if arm.expected_broken is None:
            expect = "expected: all pass"
        else:
            expect = f"expected break: {arm.expected_broken}"
        verdict = "OK" if arm.conforms else "UNEXPECTED"
        lines.append(f"arm={arm.arm:<17} {props}  [{expect}]  {verdict}")
    lines.append("ablation structure: "
                 + ("CONFORMS" if report.all_conform else "DOES NOT CONFORM"))
    return "\n".join(lines)


def parse_kinds_arg(text: str, use_reweight: bool = True
                    ) -> tuple[AttentionKind, ...]:
    """Comma list like 'softmax,lbla-sigmoid' -> AttentionKind tuple."""
    names = [part for part in (p.strip() for p in text.split(",")) if part]
    if not names:
        raise ConfigError("at least one attention kind is required")
    return tuple(parse_kind(name, use_reweight) for name in names)


def summarize_slopes(result: BenchResult, out=sys.stdout) -> dict[str, float]:
    """Print per-kind slopes when enough lengths exist; returns the slopes."""
    by_kind: dict[str, list[BenchRecord]] = {}
    for record in result.records:
        by_kind.setdefault(record.attn_kind, []).append(record)
    slopes = {}
    for kind_label, records in by_kind.items():
        if len({r.seq_len for r in records}) >= 3:
            slopes[kind_label] = fit_slope(records)
            print(f"log-log slope {kind_label:<14} "
                  f"{slopes[kind_label]:.3f}", file=out)
    return slopes
