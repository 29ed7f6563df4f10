"""Month-indexed observation series and era windows for calibration."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import ValidationError

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


def month_index(ym: str) -> int:
    """Serial month number of a 'YYYY-MM' string."""
    m = _MONTH_RE.match(ym)
    if not m:
        raise ValidationError(f"month must look like YYYY-MM, got {ym!r}", field="month")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ValidationError(f"month out of range in {ym!r}", field="month")
    return year * 12 + (month - 1)


def month_str(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


def add_months(ym: str, k: int) -> str:
    return month_str(month_index(ym) + k)


def month_range(start: str, end: str) -> list[str]:
    """Inclusive list of months from start to end."""
    i, j = month_index(start), month_index(end)
    if i > j:
        raise ValidationError(f"window start {start} is after end {end}", field="start")
    return [month_str(k) for k in range(i, j + 1)]


@dataclass(frozen=True)
class EraWindow:
    start: str  # YYYY-MM, inclusive
    end: str  # YYYY-MM, inclusive
    label: str = ""

    def __post_init__(self):
        if month_index(self.start) > month_index(self.end):
            raise ValidationError(
                f"window start {self.start} is after end {self.end}", field="start"
            )

    def months(self) -> list[str]:
        return month_range(self.start, self.end)

    def __len__(self) -> int:
        return month_index(self.end) - month_index(self.start) + 1


# The two built-in calibration windows, split at the public release of
# conversational AI assistants (2022-11-30); 33 months each.
PRE_CHATGPT = EraWindow(start="2020-03", end="2022-11", label="Pre-ChatGPT")
POST_CHATGPT = EraWindow(start="2022-12", end="2025-08", label="Post-ChatGPT")

# Cumulative new-page history used for initial stocks and the corpus cap.
HISTORY_START = "2001-01"
HISTORY_END = "2025-08"


@dataclass(frozen=True)
class Provenance:
    source: str  # api | cache | fixture
    fetched_at: str = ""
    fallback_months: tuple[str, ...] = ()
    notes: str = ""

    def __post_init__(self):
        if self.source not in ("api", "cache", "fixture"):
            raise ValidationError(f"unknown provenance source {self.source!r}", field="source")

    def as_dict(self) -> dict:
        return {
            "source": self.source,
            "fetched_at": self.fetched_at,
            "fallback_months": list(self.fallback_months),
            "notes": self.notes,
        }


@dataclass(frozen=True)
class MonthlySeries:
    """Aligned monthly flows for one era: new pages, active editors, pageviews.

    Months are contiguous; `gaps` lists months whose values were imputed by
    carry-forward after a permissive inner join and must be excluded from
    calibration residuals.
    """

    months: tuple[str, ...]
    delta_K: tuple[float, ...]  # new pages per month
    H: tuple[float, ...]  # active editors per month
    Q_millions: tuple[float, ...]  # pageviews / 1e6 per month
    provenance: dict = field(default_factory=dict)
    gaps: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.months)
        if n == 0:
            raise ValidationError("series must contain at least one month", field="months")
        for name in ("delta_K", "H", "Q_millions"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} length differs from months", field=name)
        idx = [month_index(m) for m in self.months]
        for a, b in zip(idx, idx[1:]):
            if b != a + 1:
                raise ValidationError("months must be contiguous and increasing", field="months")
        for name in ("delta_K", "H", "Q_millions"):
            for v in getattr(self, name):
                if not v >= 0:
                    raise ValidationError(f"{name} values must be >= 0", field=name)
        for g in self.gaps:
            if g not in self.months:
                raise ValidationError(f"gap month {g} not in series", field="gaps")

    def __len__(self) -> int:
        return len(self.months)

    def residual_mask(self) -> tuple[bool, ...]:
        """True where a month contributes residuals (not an imputed gap)."""
        gapset = set(self.gaps)
        return tuple(m not in gapset for m in self.months)


_SERIES_HEADER = "month,delta_K,H,Q_millions"


def write_series_csv(series: MonthlySeries, path: Union[str, Path]) -> Path:
    """Write the series as CSV plus a .meta.json provenance sidecar."""
    path = Path(path)
    lines = [_SERIES_HEADER]
    for i, m in enumerate(series.months):
        lines.append(
            f"{m},{format(series.delta_K[i], '.17g')},{format(series.H[i], '.17g')},"
            f"{format(series.Q_millions[i], '.17g')}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    meta = {
        "provenance": {k: v.as_dict() if isinstance(v, Provenance) else v for k, v in series.provenance.items()},
        "gaps": list(series.gaps),
    }
    path.with_suffix(path.suffix + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def read_series_csv(path: Union[str, Path]) -> MonthlySeries:
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").split("\n") if ln]
    if not lines or lines[0] != _SERIES_HEADER:
        raise ValidationError(f"{path}: expected header {_SERIES_HEADER!r}", field="header")
    months, dk, h, qm = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise ValidationError(f"{path}:{lineno}: expected 4 columns", field="row")
        months.append(parts[0])
        dk.append(float(parts[1]))
        h.append(float(parts[2]))
        qm.append(float(parts[3]))
    gaps: tuple[str, ...] = ()
    provenance: dict = {}
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        gaps = tuple(meta.get("gaps", ()))
        provenance = {
            k: Provenance(
                source=v.get("source", "fixture"),
                fetched_at=v.get("fetched_at", ""),
                fallback_months=tuple(v.get("fallback_months", ())),
                notes=v.get("notes", ""),
            )
            for k, v in meta.get("provenance", {}).items()
        }
    return MonthlySeries(
        months=tuple(months),
        delta_K=tuple(dk),
        H=tuple(h),
        Q_millions=tuple(qm),
        provenance=provenance,
        gaps=gaps,
    )
