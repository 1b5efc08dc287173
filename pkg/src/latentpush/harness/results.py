"""Result tables with reproducibility headers.

CSV with `#`-prefixed header comments carrying the config hash, dataset hash,
and creation seed. The plotter and the reader both skip comments, so emitting
a plot never feeds back into numbers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

COLUMNS = ("experiment", "metric", "value", "stderr", "seeds")


@dataclass
class ResultTable:
    rows: list[dict] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)

    def add(self, experiment: str, metric: str, value: float,
            stderr: float = 0.0, seeds: int = 1) -> None:
        self.rows.append({"experiment": experiment, "metric": metric,
                          "value": float(value), "stderr": float(stderr),
                          "seeds": int(seeds)})

    def value(self, experiment: str, metric: str) -> float:
        for row in self.rows:
            if row["experiment"] == experiment and row["metric"] == metric:
                return row["value"]
        raise KeyError(f"no row ({experiment}, {metric})")

    def experiments(self) -> list[str]:
        seen = []
        for row in self.rows:
            if row["experiment"] not in seen:
                seen.append(row["experiment"])
        return seen

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.meta):
            buf.write(f"# {k}={self.meta[k]}\n")
        writer = csv.DictWriter(buf, fieldnames=COLUMNS)
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        return buf.getvalue()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        return path

    @staticmethod
    def from_csv(text: str) -> "ResultTable":
        meta: dict[str, str] = {}
        data_lines = []
        for line in text.splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
            elif line.strip():
                data_lines.append(line)
        table = ResultTable(meta=meta)
        reader = csv.DictReader(io.StringIO("\n".join(data_lines)))
        for row in reader:
            table.add(row["experiment"], row["metric"], float(row["value"]),
                      float(row["stderr"]), int(row["seeds"]))
        return table

    @staticmethod
    def load(path: str | Path) -> "ResultTable":
        return ResultTable.from_csv(Path(path).read_text())
