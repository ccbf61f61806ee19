import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from app.models.solver import BackendKind, FixedPointFormat, SolverConfig
from app.utils.app_error import DimensionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FixedPointValue:
    raw: int
    fmt: FixedPointFormat

    def to_float(self) -> float:
        return self.raw / (1 << self.fmt.frac_bits)


class SaturationMonitor:
    """Sticky overflow flag for one run: count plus time of the first event."""

    def __init__(self):
        self.count = 0
        self.first_time: Optional[float] = None
        self.clock = 0.0

    @property
    def flagged(self) -> bool:
        return self.count > 0

    def record(self):
        self.count += 1
        if self.first_time is None:
            self.first_time = self.clock
            logger.warning(f"Fixed-point saturation first seen at t={self.clock:.9g}s")

    def summary(self) -> dict:
        return {"saturation_count": self.count, "first_saturation_time": self.first_time}


class FixedPointArithmetic:
    """Signed two's-complement fixed point with round-half-even and saturation."""

    def __init__(self, fmt: FixedPointFormat, monitor: Optional[SaturationMonitor] = None):
        self.fmt = fmt
        self.monitor = monitor or SaturationMonitor()
        self._frac = fmt.frac_bits
        self._half = 1 << (fmt.frac_bits - 1)
        self._max = fmt.raw_max
        self._min = fmt.raw_min

    # ==================== RAW HELPERS ====================

    def _saturate(self, raw: int) -> int:
        if raw > self._max:
            self.monitor.record()
            return self._max
        if raw < self._min:
            self.monitor.record()
            return self._min
        return raw

    def _round_shift(self, wide: int) -> int:
        """wide / 2^frac rounded to nearest, ties to even."""
        q = wide >> self._frac
        r = wide - (q << self._frac)
        if r > self._half or (r == self._half and q & 1):
            q += 1
        return q

    def _long_divide(self, num: int, den: int) -> int:
        """Restoring long division of num * 2^frac by den, ties to even."""
        if den == 0:
            raise ZeroDivisionError("fixed-point division by zero")
        negative = (num < 0) != (den < 0)
        dividend = abs(num) << self._frac
        divisor = abs(den)
        quotient = 0
        remainder = 0
        for bit in range(dividend.bit_length() - 1, -1, -1):
            remainder = (remainder << 1) | ((dividend >> bit) & 1)
            quotient <<= 1
            if remainder >= divisor:
                remainder -= divisor
                quotient |= 1
        twice = remainder << 1
        if twice > divisor or (twice == divisor and quotient & 1):
            quotient += 1
        return self._saturate(-quotient if negative else quotient)

    def quantize_raw(self, real: float) -> int:
        if not math.isfinite(real):
            self.monitor.record()
            return self._max if real > 0 else self._min
        # scaling by a power of two is exact, round() is ties-to-even
        return self._saturate(round(real * (1 << self._frac)))

    # ==================== VALUE API ====================

    def quantize(self, real: float) -> FixedPointValue:
        return FixedPointValue(self.quantize_raw(real), self.fmt)

    def _check(self, *values: FixedPointValue):
        for v in values:
            if v.fmt != self.fmt:
                raise DimensionError("Fixed-point operands must share a format", self.fmt.tag, v.fmt.tag)

    def add(self, a: FixedPointValue, b: FixedPointValue) -> FixedPointValue:
        self._check(a, b)
        return FixedPointValue(self._saturate(a.raw + b.raw), self.fmt)

    def sub(self, a: FixedPointValue, b: FixedPointValue) -> FixedPointValue:
        self._check(a, b)
        return FixedPointValue(self._saturate(a.raw - b.raw), self.fmt)

    def mul(self, a: FixedPointValue, b: FixedPointValue) -> FixedPointValue:
        self._check(a, b)
        return FixedPointValue(self._saturate(self._round_shift(a.raw * b.raw)), self.fmt)

    def div(self, a: FixedPointValue, b: FixedPointValue) -> FixedPointValue:
        self._check(a, b)
        return FixedPointValue(self._long_divide(a.raw, b.raw), self.fmt)

    def matvec(self, M: Sequence[Sequence[FixedPointValue]], v: Sequence[FixedPointValue]) -> List[FixedPointValue]:
        raw_m = [[x.raw for x in row] for row in M]
        raw_v = [x.raw for x in v]
        return [FixedPointValue(r, self.fmt) for r in self.mv(raw_m, raw_v)]

    # ==================== BACKEND API (raw integer vectors) ====================

    def mv(self, M, v) -> List[int]:
        """Exact multiply-accumulate per row, one rounding at the end."""
        out = []
        for row in M:
            acc = 0
            for a, b in zip(row, v):
                acc += a * b
            out.append(self._saturate(self._round_shift(acc)))
        return out


class Float64Backend:
    name = BackendKind.FLOAT64.value

    def __init__(self):
        self.monitor = SaturationMonitor()

    def vector(self, values) -> np.ndarray:
        return np.array(values, dtype=float).reshape(-1)

    def matrix(self, values) -> np.ndarray:
        return np.array(values, dtype=float)

    def mv(self, M: np.ndarray, v: np.ndarray) -> np.ndarray:
        return M @ v

    def add(self, *vectors: np.ndarray) -> np.ndarray:
        total = vectors[0]
        for v in vectors[1:]:
            total = total + v
        return total

    def matmul(self, M: np.ndarray, N: np.ndarray) -> np.ndarray:
        return M @ N

    def inverse(self, M: np.ndarray) -> Optional[np.ndarray]:
        """Inverse of a float matrix, or None when singular."""
        M = np.asarray(M, dtype=float)
        if M.size == 0:
            return M.copy()
        try:
            inv = np.linalg.inv(M)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(inv)):
            return None
        return inv

    def to_float(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float)


class FixedPointBackend(FixedPointArithmetic):
    """Vector backend over raw integers; matrices are tuples of integer rows."""

    def __init__(self, fmt: FixedPointFormat, monitor: Optional[SaturationMonitor] = None):
        super().__init__(fmt, monitor)
        self.name = fmt.tag

    def vector(self, values) -> List[int]:
        return [self.quantize_raw(float(x)) for x in np.asarray(values, dtype=float).reshape(-1)]

    def matrix(self, values):
        arr = np.asarray(values, dtype=float)
        return tuple(tuple(self.quantize_raw(float(x)) for x in row) for row in arr)

    def add(self, *vectors) -> List[int]:
        return [self._saturate(sum(parts)) for parts in zip(*vectors)]

    def matmul(self, M, N):
        columns = list(zip(*N)) if N else []
        return tuple(tuple(self.mv([row], col)[0] for col in columns) for row in M)

    def inverse(self, values):
        """Gauss-Jordan with partial pivoting in fixed-point arithmetic, or None when singular."""
        quantized = self.matrix(values)
        n = len(quantized)
        one = 1 << self._frac
        aug = [list(quantized[i]) + [one if j == i else 0 for j in range(n)] for i in range(n)]
        for col in range(n):
            pivot_row = max(range(col, n), key=lambda r: abs(aug[r][col]))
            if aug[pivot_row][col] == 0:
                return None
            aug[col], aug[pivot_row] = aug[pivot_row], aug[col]
            pivot = aug[col][col]
            aug[col] = [self._long_divide(x, pivot) for x in aug[col]]
            for r in range(n):
                if r == col or aug[r][col] == 0:
                    continue
                factor = aug[r][col]
                aug[r] = [
                    self._saturate(x - self._round_shift(factor * y)) for x, y in zip(aug[r], aug[col])
                ]
        return tuple(tuple(row[n:]) for row in aug)

    def to_float(self, v) -> np.ndarray:
        scale = 1 << self._frac
        return np.array([r / scale for r in v], dtype=float)


def make_backend(solver_config: SolverConfig, monitor: Optional[SaturationMonitor] = None):
    if solver_config.backend == BackendKind.FIXED_POINT:
        return FixedPointBackend(solver_config.fixed_point, monitor)
    backend = Float64Backend()
    if monitor is not None:
        backend.monitor = monitor
    return backend
