"""Run configuration files.

Configs are flat INI-style text with one section per concern
(``[run]``, ``[mesh]``, ``[contour]``, ``[scft]``, ``[adapt]``,
``[heat]``).  Parsing is strict: unknown sections or keys raise
:class:`ConfigError` immediately so a typo cannot silently fall back
to a default.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptivity import AdaptParams, transfer_fields
from .halfedge import PolygonMesh, uniform_quad_mesh
from .meshio import read_mesh
from .scft import FieldState, ScftParams, init_fields

log = logging.getLogger(__name__)

EXPERIMENTS = (
    "heat_convergence",
    "contour_convergence",
    "integral_convergence",
    "scft_uniform",
    "scft_adaptive",
    "scft_ladder",
)

MESH_KINDS = ("square", "file")
INIT_MODES = ("zero", "random", "gaussians", "stripes", "file")


class ConfigError(ValueError):
    """Malformed run configuration."""


_BOOL_STATES = {
    "1": True, "yes": True, "true": True, "on": True,
    "0": False, "no": False, "false": False, "off": False,
}


class _Section:
    """Key-value view over one section with strict consumption."""

    def __init__(self, name: str, items: dict[str, str]):
        self.name = name
        self._items = dict(items)

    def _take(self, key: str) -> str | None:
        return self._items.pop(key, None)

    def _fail(self, key: str, msg: str):
        raise ConfigError(f"[{self.name}] {key}: {msg}")

    def get_str(self, key: str, default: str, choices=None) -> str:
        raw = self._take(key)
        value = default if raw is None else raw.strip()
        if choices is not None and value not in choices:
            self._fail(key, f"must be one of {', '.join(choices)} "
                            f"(got {value!r})")
        return value

    def get_int(self, key: str, default: int) -> int:
        raw = self._take(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            self._fail(key, f"expected an integer, got {raw!r}")

    def get_float(self, key: str, default: float) -> float:
        raw = self._take(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            self._fail(key, f"expected a number, got {raw!r}")

    def get_bool(self, key: str, default: bool) -> bool:
        raw = self._take(key)
        if raw is None:
            return default
        try:
            return _BOOL_STATES[raw.strip().lower()]
        except KeyError:
            self._fail(key, f"expected a boolean, got {raw!r}")

    def get_ints(self, key: str, default: tuple[int, ...]) -> tuple[int, ...]:
        raw = self._take(key)
        if raw is None:
            return default
        try:
            return tuple(int(tok) for tok in raw.split())
        except ValueError:
            self._fail(key, f"expected whitespace-separated integers, "
                            f"got {raw!r}")

    def get_floats(self, key: str,
                   default: tuple[float, ...]) -> tuple[float, ...]:
        raw = self._take(key)
        if raw is None:
            return default
        try:
            return tuple(float(tok) for tok in raw.split())
        except ValueError:
            self._fail(key, f"expected whitespace-separated numbers, "
                            f"got {raw!r}")

    def get_rows(self, key: str, ncols: int) -> tuple[tuple[float, ...], ...]:
        """Semicolon-separated rows of ``ncols`` numbers each."""
        raw = self._take(key)
        if raw is None:
            return ()
        rows = []
        for chunk in raw.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            toks = chunk.split()
            if len(toks) != ncols:
                self._fail(key, f"each row needs {ncols} numbers, "
                                f"got {chunk!r}")
            try:
                rows.append(tuple(float(t) for t in toks))
            except ValueError:
                self._fail(key, f"non-numeric entry in row {chunk!r}")
        return tuple(rows)

    def finish(self):
        if self._items:
            bad = ", ".join(sorted(self._items))
            raise ConfigError(f"unknown key(s) in [{self.name}]: {bad}")


@dataclass(frozen=True)
class RunSection:
    experiment: str = ""
    seed: int = 0
    output_dir: str = "out"
    threads: int = 0          # 0 = leave library defaults alone
    serial: bool = False
    snapshot_every: int = 0   # extra snapshots every N iterations (0 = final only)

    @classmethod
    def parse(cls, sec: _Section) -> "RunSection":
        out = cls(
            experiment=sec.get_str("experiment", ""),
            seed=sec.get_int("seed", 0),
            output_dir=sec.get_str("output_dir", "out"),
            threads=sec.get_int("threads", 0),
            serial=sec.get_bool("serial", False),
            snapshot_every=sec.get_int("snapshot_every", 0),
        )
        sec.finish()
        return out


@dataclass(frozen=True)
class MeshSection:
    kind: str = "square"
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    nx: int = 16
    ny: int = 16
    file: str = ""
    k: int = 1

    @classmethod
    def parse(cls, sec: _Section) -> "MeshSection":
        out = cls(
            kind=sec.get_str("kind", "square", choices=MESH_KINDS),
            x0=sec.get_float("x0", 0.0),
            x1=sec.get_float("x1", 1.0),
            y0=sec.get_float("y0", 0.0),
            y1=sec.get_float("y1", 1.0),
            nx=sec.get_int("nx", 16),
            ny=sec.get_int("ny", 16),
            file=sec.get_str("file", ""),
            k=sec.get_int("k", 1),
        )
        sec.finish()
        if out.k not in (1, 2):
            raise ConfigError(f"[mesh] k must be 1 or 2, got {out.k}")
        if out.kind == "file" and not out.file:
            raise ConfigError("[mesh] kind=file requires the 'file' key")
        return out


@dataclass(frozen=True)
class ContourSection:
    ns: int = 100
    sweeps: int = 1
    cn_ladder: tuple[int, ...] = (4, 8, 16, 32)
    sdc_ladder: tuple[int, ...] = (4, 8, 16, 32)

    @classmethod
    def parse(cls, sec: _Section) -> "ContourSection":
        out = cls(
            ns=sec.get_int("ns", 100),
            sweeps=sec.get_int("sweeps", 1),
            cn_ladder=sec.get_ints("cn_ladder", (4, 8, 16, 32)),
            sdc_ladder=sec.get_ints("sdc_ladder", (4, 8, 16, 32)),
        )
        sec.finish()
        return out


@dataclass(frozen=True)
class ScftSection:
    chi_n: float = 20.0
    f: float = 0.5
    lambda_plus: float = 2.0
    lambda_minus: float = 2.0
    hamiltonian_tol: float = 1.0e-6
    max_iters: int = 2000
    jump_guard: float = 10.0
    init: str = "random"
    init_file: str = ""
    eps: float = 0.0          # 0 = default amplitude for random init
    bumps: tuple[tuple[float, ...], ...] = ()
    stripes: tuple[tuple[float, ...], ...] = ()
    chi_n_ladder: tuple[float, ...] = ()
    mesh_ladder: tuple[int, ...] = ()

    @classmethod
    def parse(cls, sec: _Section) -> "ScftSection":
        out = cls(
            chi_n=sec.get_float("chi_n", 20.0),
            f=sec.get_float("f", 0.5),
            lambda_plus=sec.get_float("lambda_plus", 2.0),
            lambda_minus=sec.get_float("lambda_minus", 2.0),
            hamiltonian_tol=sec.get_float("hamiltonian_tol", 1.0e-6),
            max_iters=sec.get_int("max_iters", 2000),
            jump_guard=sec.get_float("jump_guard", 10.0),
            init=sec.get_str("init", "random", choices=INIT_MODES),
            init_file=sec.get_str("init_file", ""),
            eps=sec.get_float("eps", 0.0),
            bumps=sec.get_rows("bumps", 4),
            stripes=sec.get_rows("stripes", 3),
            chi_n_ladder=sec.get_floats("chi_n_ladder", ()),
            mesh_ladder=sec.get_ints("mesh_ladder", ()),
        )
        sec.finish()
        if out.init == "file" and not out.init_file:
            raise ConfigError("[scft] init=file requires the 'init_file' key")
        return out


@dataclass(frozen=True)
class AdaptSection:
    theta: float = 1.0
    eta_ref_trigger: float = 0.1
    stage_max_iters: int = 500
    min_stage_iters: int = 30
    check_every: int = 5
    max_cycles: int = 40
    max_refine: int = 3
    max_coarsen: int = 2
    max_level: int = 3

    @classmethod
    def parse(cls, sec: _Section) -> "AdaptSection":
        out = cls(
            theta=sec.get_float("theta", 1.0),
            eta_ref_trigger=sec.get_float("eta_ref_trigger", 0.1),
            stage_max_iters=sec.get_int("stage_max_iters", 500),
            min_stage_iters=sec.get_int("min_stage_iters", 30),
            check_every=sec.get_int("check_every", 5),
            max_cycles=sec.get_int("max_cycles", 40),
            max_refine=sec.get_int("max_refine", 3),
            max_coarsen=sec.get_int("max_coarsen", 2),
            max_level=sec.get_int("max_level", 3),
        )
        sec.finish()
        return out


@dataclass(frozen=True)
class HeatSection:
    ladder: tuple[int, ...] = (16, 32, 64, 128)
    dt: float = 1.0e-4
    s_end: float = 1.0

    @classmethod
    def parse(cls, sec: _Section) -> "HeatSection":
        out = cls(
            ladder=sec.get_ints("ladder", (16, 32, 64, 128)),
            dt=sec.get_float("dt", 1.0e-4),
            s_end=sec.get_float("s_end", 1.0),
        )
        sec.finish()
        return out


_SECTION_PARSERS = {
    "run": RunSection,
    "mesh": MeshSection,
    "contour": ContourSection,
    "scft": ScftSection,
    "adapt": AdaptSection,
    "heat": HeatSection,
}


@dataclass(frozen=True)
class RunConfig:
    """Fully parsed and validated run configuration."""

    run: RunSection = field(default_factory=RunSection)
    mesh: MeshSection = field(default_factory=MeshSection)
    contour: ContourSection = field(default_factory=ContourSection)
    scft: ScftSection = field(default_factory=ScftSection)
    adapt: AdaptSection = field(default_factory=AdaptSection)
    heat: HeatSection = field(default_factory=HeatSection)
    base_dir: str = "."

    # -- construction -----------------------------------------------------

    @classmethod
    def from_string(cls, text: str, base_dir: str = ".") -> "RunConfig":
        parser = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#",),
            delimiters=("=",),
        )
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unparseable config: {exc}") from exc
        parts: dict[str, object] = {}
        for name in parser.sections():
            if name not in _SECTION_PARSERS:
                known = ", ".join(sorted(_SECTION_PARSERS))
                raise ConfigError(f"unknown section [{name}]; "
                                  f"known sections: {known}")
            sec = _Section(name, dict(parser.items(name)))
            parts[name] = _SECTION_PARSERS[name].parse(sec)
        cfg = cls(base_dir=base_dir, **parts)
        if not cfg.run.experiment:
            raise ConfigError("[run] experiment is required")
        if cfg.run.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"[run] experiment must be one of {', '.join(EXPERIMENTS)} "
                f"(got {cfg.run.experiment!r})")
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_string(path.read_text(), base_dir=str(path.parent))

    def replace(self, **run_overrides) -> "RunConfig":
        """New config with selected [run] fields replaced."""
        return dataclasses.replace(
            self, run=dataclasses.replace(self.run, **run_overrides))

    # -- derived objects --------------------------------------------------

    def resolve_path(self, name: str) -> Path:
        """Resolve a file reference relative to the config's directory."""
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def build_mesh(self, nx: int | None = None) -> PolygonMesh:
        m = self.mesh
        if m.kind == "square":
            return uniform_quad_mesh(m.x0, m.x1, m.y0, m.y1,
                                     nx if nx is not None else m.nx,
                                     nx if nx is not None else m.ny)
        return read_mesh(self.resolve_path(m.file))

    def scft_params(self, *, chi_n: float | None = None,
                    ns: int | None = None) -> ScftParams:
        s = self.scft
        return ScftParams(
            chi_n=s.chi_n if chi_n is None else chi_n,
            f=s.f,
            ns=self.contour.ns if ns is None else ns,
            sweeps=self.contour.sweeps,
            lambda_plus=s.lambda_plus,
            lambda_minus=s.lambda_minus,
            hamiltonian_tol=s.hamiltonian_tol,
            max_iters=s.max_iters,
            jump_guard=s.jump_guard,
        )

    def adapt_params(self) -> AdaptParams:
        a = self.adapt
        return AdaptParams(
            theta=a.theta, eta_ref_trigger=a.eta_ref_trigger,
            stage_max_iters=a.stage_max_iters,
            min_stage_iters=a.min_stage_iters, check_every=a.check_every,
            max_cycles=a.max_cycles, max_refine=a.max_refine,
            max_coarsen=a.max_coarsen, max_level=a.max_level,
        )

    def initial_fields(self, system) -> FieldState:
        s = self.scft
        if s.init == "file":
            from .restart import load_snapshot
            from .vem import assemble
            mesh, k, arrays, _meta = load_snapshot(
                self.resolve_path(s.init_file))
            old = assemble(mesh, k)
            state = FieldState(w_plus=arrays["w_plus"],
                               w_minus=arrays["w_minus"])
            log.info("initial fields loaded from %s (%d DOFs)",
                     s.init_file, old.n_dofs)
            return transfer_fields(old, system, state)
        kwargs: dict = {"chi_n": s.chi_n, "seed": self.run.seed}
        if s.init == "random" and s.eps > 0.0:
            kwargs["eps"] = s.eps
        if s.init == "gaussians":
            kwargs["bumps"] = np.asarray(s.bumps, dtype=float)
        if s.init == "stripes":
            kwargs["stripes"] = np.asarray(s.stripes, dtype=float)
        return init_fields(system, s.init, **kwargs)

    def dump(self, path: str | Path):
        """Write the resolved configuration as JSON for provenance."""
        payload = {name: dataclasses.asdict(getattr(self, name))
                   for name in _SECTION_PARSERS}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True)
                              + "\n")
