"""Wikimedia analytics client: fetch, validate, cache, and assemble the
monthly series (new pages, active editors, pageviews) for era windows.

Endpoint shapes follow the public AQS metric families; the base URL is a
configuration value so endpoint drift stays a one-file fix. A pinned
fixture snapshot of the calibration windows ships with the package and is
the default source; live fetches are opt-in.
"""

from __future__ import annotations

import calendar
import json
import os
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import httpx

from .errors import (
    InsufficientDataError,
    SchemaError,
    TransportError,
    ValidationError,
)
from .series import (
    HISTORY_END,
    HISTORY_START,
    EraWindow,
    MonthlySeries,
    Provenance,
    add_months,
    month_index,
    month_range,
)

USER_AGENT = "knowdyn/0.1 (knowledge-dynamics simulation toolkit; research use)"
DEFAULT_BASE_URL = "https://wikimedia.org/api/rest_v1/metrics"
DEFAULT_PROJECT = "en.wikipedia"

EDITOR_BUCKETS = ("5..24-edits", "25..99-edits", "100..-edits")
EDITOR_FALLBACK = "all-activity-levels"

KMAX_MULTIPLIERS = (1.25, 1.5)

_FIXTURE_FILES = {
    "new-pages": "new_pages.json",
    "editors/5..24-edits": "editors_5_24.json",
    "editors/25..99-edits": "editors_25_99.json",
    "editors/100..-edits": "editors_100plus.json",
    "editors/all-activity-levels": "editors_all.json",
    "pageviews": "pageviews.json",
}


def default_fixture_dir() -> Path:
    return Path(str(resources.files("knowdyn") / "fixtures" / "wikipedia"))


def default_cache_dir() -> Path:
    return Path(os.environ.get("KNOWDYN_CACHE_DIR", "cache"))


@dataclass(frozen=True)
class AqsConfig:
    base_url: str = DEFAULT_BASE_URL
    project: str = DEFAULT_PROJECT
    user_agent: str = USER_AGENT
    source: str = "fixture"  # fixture | live
    cache_dir: Optional[Path] = None
    fixture_dir: Optional[Path] = None
    retries: int = 3
    backoff_seconds: float = 1.0

    def __post_init__(self):
        if self.source not in ("fixture", "live"):
            raise ValidationError(f"source must be fixture or live, got {self.source!r}", field="source")


@dataclass(frozen=True)
class MetricSeries:
    """One metric's month -> value map plus how it was obtained."""

    values: dict
    provenance: Provenance


def _month_of_timestamp(ts: str) -> str:
    if "-" in ts:
        return ts[:7]
    if len(ts) >= 6 and ts[:6].isdigit():
        return f"{ts[:4]}-{ts[4:6]}"
    raise SchemaError(f"malformed month key {ts!r} in response")


def _window_dates(window: EraWindow) -> tuple[str, str]:
    start = window.start.replace("-", "") + "01"
    year, month = int(window.end[:4]), int(window.end[5:7])
    last = calendar.monthrange(year, month)[1]
    end = window.end.replace("-", "") + f"{last:02d}"
    return start, end


class WikimediaClient:
    """Fetches the three monthly metrics with retries, caching and fixtures."""

    def __init__(self, config: AqsConfig = AqsConfig(), transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        self._transport = transport

    # -- transport ---------------------------------------------------------

    def _get_json(self, url: str) -> tuple[dict, str]:
        last_error: Exception | None = None
        for attempt in range(self.config.retries):
            try:
                with httpx.Client(
                    transport=self._transport,
                    headers={"User-Agent": self.config.user_agent},
                    timeout=30.0,
                ) as client:
                    response = client.get(url)
                if response.status_code in (429, 503):
                    retry_after = response.headers.get("Retry-After")
                    delay = float(retry_after) if retry_after else self.config.backoff_seconds * 2**attempt
                    last_error = TransportError(f"HTTP {response.status_code} from {url}")
                    time.sleep(min(delay, 30.0))
                    continue
                if response.status_code == 404:
                    raise SchemaError(f"HTTP 404 from {url}")
                response.raise_for_status()
                return response.json(), response.text
            except (httpx.HTTPError, json.JSONDecodeError) as exc:
                last_error = exc
                time.sleep(self.config.backoff_seconds * 2**attempt)
        raise TransportError(f"request failed after {self.config.retries} attempts: {last_error}")

    # -- caching -----------------------------------------------------------

    def _cache_path(self, metric: str, window: EraWindow, options: str) -> Path:
        cache_dir = self.config.cache_dir if self.config.cache_dir is not None else default_cache_dir()
        safe_metric = metric.replace("/", "_")
        name = f"{window.start.replace('-', '')}_{window.end.replace('-', '')}"
        if options:
            name += f"_{options}"
        return Path(cache_dir) / self.config.project / safe_metric / f"{name}.json"

    def _cached_fetch(
        self, metric: str, window: EraWindow, options: str, fetcher: Callable[[], tuple[dict, str, dict]]
    ) -> MetricSeries:
        path = self._cache_path(metric, window, options)
        if path.exists():
            payload = json.loads(path.read_text(encoding="utf-8"))
            prov = payload.get("meta", {})
            return MetricSeries(
                values={m: float(v) for m, v in payload["parsed"].items()},
                provenance=Provenance(
                    source="cache",
                    fetched_at=prov.get("fetched_at", ""),
                    fallback_months=tuple(prov.get("fallback_months", ())),
                    notes=prov.get("notes", ""),
                ),
            )
        parsed, raw_text, meta = fetcher()
        record = {"meta": meta, "raw_text": raw_text, "parsed": parsed}
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record, sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)  # atomic: readers never observe partial files
        return MetricSeries(
            values={m: float(v) for m, v in parsed.items()},
            provenance=Provenance(
                source="api",
                fetched_at=meta.get("fetched_at", ""),
                fallback_months=tuple(meta.get("fallback_months", ())),
                notes=meta.get("notes", ""),
            ),
        )

    # -- fixtures ----------------------------------------------------------

    def _fixture_payload(self, key: str) -> dict:
        fixture_dir = (
            Path(self.config.fixture_dir) if self.config.fixture_dir is not None else default_fixture_dir()
        )
        path = fixture_dir / _FIXTURE_FILES[key]
        if not path.exists():
            raise SchemaError(f"fixture file missing: {path}")
        return json.loads(path.read_text(encoding="utf-8"))

    def fixture_version(self) -> str:
        fixture_dir = (
            Path(self.config.fixture_dir) if self.config.fixture_dir is not None else default_fixture_dir()
        )
        manifest = fixture_dir / "manifest.json"
        if manifest.exists():
            return json.loads(manifest.read_text(encoding="utf-8")).get("version", "unknown")
        return "unknown"

    def _fixture_series(self, key: str, window: EraWindow, parser) -> MetricSeries:
        payload = self._fixture_payload(key)
        parsed = parser(payload)
        wanted = window.months()
        values = {m: parsed[m] for m in wanted if m in parsed}
        if not values:
            raise SchemaError(f"fixture has no months for {key} in {window.start}..{window.end}")
        return MetricSeries(
            values=values,
            provenance=Provenance(source="fixture", fetched_at=self.fixture_version()),
        )

    # -- parsers -----------------------------------------------------------

    @staticmethod
    def _parse_results(payload: dict, value_key: str) -> dict:
        try:
            items = payload["items"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"payload missing 'items': {exc}") from exc
        values: dict[str, float] = {}
        for item in items:
            for row in item.get("results", []):
                month = _month_of_timestamp(str(row.get("timestamp", "")))
                if value_key not in row:
                    raise SchemaError(f"row for {month} missing {value_key!r}")
                values[month] = float(row[value_key])
        return values

    @staticmethod
    def _parse_pageviews(payload: dict) -> dict:
        try:
            items = payload["items"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"payload missing 'items': {exc}") from exc
        values: dict[str, float] = {}
        for row in items:
            month = _month_of_timestamp(str(row.get("timestamp", "")))
            if "views" not in row:
                raise SchemaError(f"row for {month} missing 'views'")
            values[month] = float(row["views"])
        return values

    # -- metric fetches ------------------------------------------------------

    def _new_pages_url(self, window: EraWindow, page_type: str) -> str:
        start, end = _window_dates(window)
        return (
            f"{self.config.base_url}/edited-pages/new/{self.config.project}/"
            f"all-editor-types/{page_type}/monthly/{start}/{end}"
        )

    def fetch_new_pages(self, window: EraWindow) -> MetricSeries:
        """Monthly new-page counts; content pages, falling back to all page types."""
        if self.config.source == "fixture":
            return self._fixture_series(
                "new-pages", window, lambda p: self._parse_results(p, "new_pages")
            )

        def fetcher():
            fetched_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
            try:
                payload, raw = self._get_json(self._new_pages_url(window, "content"))
                parsed = self._parse_results(payload, "new_pages")
                meta = {"fetched_at": fetched_at, "page_type": "content", "notes": ""}
            except SchemaError:
                payload, raw = self._get_json(self._new_pages_url(window, "all-page-types"))
                parsed = self._parse_results(payload, "new_pages")
                meta = {
                    "fetched_at": fetched_at,
                    "page_type": "all-page-types",
                    "notes": "content breakdown unavailable; fell back to all page types",
                }
            if not parsed:
                raise SchemaError(f"empty new-pages response for {window.start}..{window.end}")
            return parsed, raw, meta

        return self._cached_fetch("new-pages", window, "content", fetcher)

    def _editors_url(self, window: EraWindow, level: str) -> str:
        start, end = _window_dates(window)
        return (
            f"{self.config.base_url}/editors/aggregate/{self.config.project}/"
            f"all-editor-types/all-page-types/{level}/monthly/{start}/{end}"
        )

    def fetch_active_editors(self, window: EraWindow) -> MetricSeries:
        """Active editors: sum of the 5-24, 25-99 and 100+ activity buckets.

        Months where any bucket is missing fall back to the at-least-one-edit
        level and are flagged in provenance.
        """
        if self.config.source == "fixture":
            buckets = [
                self._fixture_series(f"editors/{level}", window, lambda p: self._parse_results(p, "editors"))
                for level in EDITOR_BUCKETS
            ]
            fallback = self._fixture_series(
                f"editors/{EDITOR_FALLBACK}", window, lambda p: self._parse_results(p, "editors")
            )
            return self._sum_buckets(window, [b.values for b in buckets], fallback.values, "fixture", self.fixture_version())

        def fetcher():
            fetched_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
            bucket_values = []
            raws = []
            for level in EDITOR_BUCKETS:
                payload, raw = self._get_json(self._editors_url(window, level))
                bucket_values.append(self._parse_results(payload, "editors"))
                raws.append(raw)
            wanted = set(window.months())
            missing = sorted(
                m for m in wanted if any(m not in bucket for bucket in bucket_values)
            )
            fallback_values: dict = {}
            if missing:
                payload, raw = self._get_json(self._editors_url(window, EDITOR_FALLBACK))
                fallback_values = self._parse_results(payload, "editors")
                raws.append(raw)
            combined = self._sum_buckets(window, bucket_values, fallback_values, "api", fetched_at)
            meta = {
                "fetched_at": fetched_at,
                "fallback_months": list(combined.provenance.fallback_months),
                "notes": combined.provenance.notes,
            }
            return combined.values, json.dumps(raws), meta

        return self._cached_fetch("editors", window, "5plus-sum", fetcher)

    @staticmethod
    def _sum_buckets(
        window: EraWindow, buckets: list[dict], fallback: dict, source: str, fetched_at: str
    ) -> MetricSeries:
        values: dict[str, float] = {}
        fallback_months: list[str] = []
        for m in window.months():
            if all(m in bucket for bucket in buckets):
                values[m] = float(sum(bucket[m] for bucket in buckets))
            elif m in fallback:
                values[m] = float(fallback[m])
                fallback_months.append(m)
        if not values:
            raise SchemaError(f"no editor data for {window.start}..{window.end}")
        notes = "fallback to >=1-edit level for some months" if fallback_months else ""
        return MetricSeries(
            values=values,
            provenance=Provenance(
                source=source, fetched_at=fetched_at, fallback_months=tuple(fallback_months), notes=notes
            ),
        )

    def fetch_pageviews(self, window: EraWindow) -> MetricSeries:
        """Monthly aggregate pageviews, all-access, user agents only, raw counts."""
        if self.config.source == "fixture":
            return self._fixture_series("pageviews", window, self._parse_pageviews)

        def fetcher():
            fetched_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
            start, end = _window_dates(window)
            url = (
                f"{self.config.base_url}/pageviews/aggregate/{self.config.project}/"
                f"all-access/user/monthly/{start}00/{end}00"
            )
            payload, raw = self._get_json(url)
            parsed = self._parse_pageviews(payload)
            if not parsed:
                raise SchemaError(f"empty pageviews response for {window.start}..{window.end}")
            return parsed, raw, {"fetched_at": fetched_at, "notes": ""}

        return self._cached_fetch("pageviews", window, "all-access_user", fetcher)

    # -- assembly ------------------------------------------------------------

    def assemble_series(self, window: EraWindow, permissive: bool = False) -> MonthlySeries:
        """Inner-join the three metrics on month and rescale views to millions.

        A join that breaks month contiguity is an error by default; with
        `permissive` the gaps are imputed by carry-forward, recorded in
        `gaps`, and excluded from calibration residuals downstream.
        """
        new_pages = self.fetch_new_pages(window)
        editors = self.fetch_active_editors(window)
        views = self.fetch_pageviews(window)

        joined = sorted(
            set(new_pages.values) & set(editors.values) & set(views.values), key=month_index
        )
        if len(joined) < 12:
            raise InsufficientDataError(
                f"inner join produced {len(joined)} months for {window.start}..{window.end}; "
                "calibration needs at least 12",
                field="months",
            )
        full = month_range(joined[0], joined[-1])
        gaps = [m for m in full if m not in joined]
        if gaps and not permissive:
            raise ValidationError(
                f"inner join breaks month contiguity at {', '.join(gaps)}; "
                "pass permissive to impute and exclude them",
                field="months",
            )

        def series_of(values: dict) -> list[float]:
            out: list[float] = []
            for m in full:
                if m in values:
                    out.append(values[m])
                else:
                    out.append(out[-1] if out else 0.0)  # carry-forward imputation
            return out

        dk = series_of(new_pages.values)
        h = series_of(editors.values)
        q_raw = series_of(views.values)
        return MonthlySeries(
            months=tuple(full),
            delta_K=tuple(dk),
            H=tuple(h),
            Q_millions=tuple(v / 1e6 for v in q_raw),
            provenance={
                "new_pages": new_pages.provenance,
                "editors": editors.provenance,
                "pageviews": views.provenance,
            },
            gaps=tuple(gaps),
        )

    # -- era-derived stocks ----------------------------------------------------

    def fetch_new_pages_history(self) -> MetricSeries:
        return self.fetch_new_pages(EraWindow(start=HISTORY_START, end=HISTORY_END, label="history"))

    def build_initial_stock(self, era_start: str) -> float:
        """Initial stock: cumulative new pages from the start of history to the
        month immediately preceding the era start."""
        if month_index(era_start) <= month_index(HISTORY_START):
            return 0.0
        window = EraWindow(start=HISTORY_START, end=add_months(era_start, -1), label="history")
        history = self.fetch_new_pages(window)
        missing = [m for m in window.months() if m not in history.values]
        if missing:
            raise SchemaError(f"history missing months: {missing[:5]}...")
        return float(sum(history.values[m] for m in window.months()))

    def build_kmax(self, multiplier: float = 1.25) -> float:
        """Corpus cap: multiplier x cumulative new pages over the whole history;
        a single value shared by both eras."""
        if multiplier not in KMAX_MULTIPLIERS:
            raise ValidationError(
                f"kmax multiplier must be one of {KMAX_MULTIPLIERS}, got {multiplier}",
                field="multiplier",
            )
        history = self.fetch_new_pages_history()
        window = EraWindow(start=HISTORY_START, end=HISTORY_END)
        missing = [m for m in window.months() if m not in history.values]
        if missing:
            raise SchemaError(f"history missing months: {missing[:5]}...")
        return multiplier * float(sum(history.values[m] for m in window.months()))
