"""Line-oriented experiment configuration.

Format: `[section]` headers, `key=value` lines, `#` comments. No external
parser. Every run artifact embeds the canonical serialization and its hash,
so results are traceable to the exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from ..policy import POLICY_PRESETS, PolicyConfig
from ..world_model import WM_PRESETS, WMConfig
from ..env.arena import EnvConfig

_DEFAULTS: dict[str, dict[str, str]] = {
    "experiment": {"name": "default", "seed": "0", "output": "runs/default"},
    "env": {"grid": "32", "colors": "4"},
    "data": {"clips": "2000", "clip_length": "12", "heldout_clips": "64",
             "demos_per_task": "10"},
    "wm": {"preset": "study", "interaction": "interactive",
           "clean_interaction": "true", "use_semantic": "true",
           "mode": "diffusion", "sampling_steps": "2", "history": "4",
           "horizon": "6", "target": "residual", "residual_scale_geom": "auto",
           "residual_scale_sem": "auto", "train_steps": "800", "batch": "12",
           "lr": "2e-3"},
    "policy": {"preset": "study", "imagination": "imagined",
               "refine_iters": "2", "denoise_steps": "2",
               "train_steps": "1500", "batch": "16", "lr": "1e-3",
               "exec_chunk": "1"},
    "encoder": {"seed": "101", "patch": "4", "d_geom": "64", "d_sem": "64"},
    "eval": {"rollouts": "20", "eval_seeds": "3", "max_steps": "40",
             "workers": "2"},
}


class ExperimentConfig:
    def __init__(self, sections: dict[str, dict[str, str]] | None = None):
        self.sections: dict[str, dict[str, str]] = {
            name: dict(defaults) for name, defaults in _DEFAULTS.items()}
        for name, kv in (sections or {}).items():
            self.sections.setdefault(name, {}).update(kv)

    # -- typed getters ---------------------------------------------------
    def get(self, section: str, key: str) -> str:
        try:
            return self.sections[section][key]
        except KeyError:
            raise KeyError(f"missing config value [{section}] {key}") from None

    def get_int(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def get_float(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def get_bool(self, section: str, key: str) -> bool:
        v = self.get(section, key).strip().lower()
        if v in ("true", "1", "yes", "on"):
            return True
        if v in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"[{section}] {key}={v!r} is not a boolean")

    def set(self, section: str, key: str, value) -> None:
        self.sections.setdefault(section, {})[key] = str(value)

    # -- module config builders -------------------------------------------
    def env_config(self) -> EnvConfig:
        return EnvConfig(grid=self.get_int("env", "grid"),
                         num_colors=self.get_int("env", "colors"))

    def wm_config(self, **overrides) -> WMConfig:
        preset = WM_PRESETS[self.get("wm", "preset")]
        fields = dict(
            history=self.get_int("wm", "history"),
            horizon=self.get_int("wm", "horizon"),
            d_geom=self.get_int("encoder", "d_geom"),
            d_sem=self.get_int("encoder", "d_sem"),
            interaction=self.get("wm", "interaction"),
            clean_interaction=self.get_bool("wm", "clean_interaction"),
            use_semantic=self.get_bool("wm", "use_semantic"),
            mode=self.get("wm", "mode"),
            target=self.get("wm", "target"),
            sampling_steps=self.get_int("wm", "sampling_steps"),
            **preset,
        )
        for key in ("residual_scale_geom", "residual_scale_sem"):
            raw = self.get("wm", key)
            if raw != "auto":
                fields[key] = float(raw)
        fields.update(overrides)
        return WMConfig(**fields)

    def policy_config(self, **overrides) -> PolicyConfig:
        preset = POLICY_PRESETS[self.get("policy", "preset")]
        fields = dict(
            history=self.get_int("wm", "history"),
            horizon=self.get_int("wm", "horizon"),
            d_geom=self.get_int("encoder", "d_geom"),
            d_sem=self.get_int("encoder", "d_sem"),
            imagination=self.get("policy", "imagination"),
            refine_iters=self.get_int("policy", "refine_iters"),
            denoise_steps=self.get_int("policy", "denoise_steps"),
            wm_sampling_steps=self.get_int("wm", "sampling_steps"),
            exec_chunk=self.get_int("policy", "exec_chunk"),
            use_semantic=self.get_bool("wm", "use_semantic"),
            **preset,
        )
        fields.update(overrides)
        return PolicyConfig(**fields)

    # -- serialization -----------------------------------------------------
    def serialize(self) -> str:
        lines = []
        for section in sorted(self.sections):
            lines.append(f"[{section}]")
            for key in sorted(self.sections[section]):
                lines.append(f"{key}={self.sections[section][key]}")
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize())

    @staticmethod
    def parse(text: str) -> "ExperimentConfig":
        sections: dict[str, dict[str, str]] = {}
        current: str | None = None
        for lineno, raw in enumerate(text.split("\n"), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                sections.setdefault(current, {})
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            if current is None:
                raise ValueError(f"line {lineno}: key=value outside any [section]")
            key, _, value = line.partition("=")
            sections[current][key.strip()] = value.strip()
        return ExperimentConfig(sections)

    @staticmethod
    def load(path: str | Path) -> "ExperimentConfig":
        return ExperimentConfig.parse(Path(path).read_text())
