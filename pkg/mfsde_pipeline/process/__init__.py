"""
Run configuration of the experiment harness: a JSON file, overridden field by
field from the command line, with unset fields filled from a preset.
"""
import dataclasses
import json
import pathlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

from mfsde_pipeline import ConfigError
from mfsde_pipeline.model import EXAMPLES
from mfsde_pipeline.utils import dumps, parse_int_list

STUDIES = (
    "fp-temporal",
    "fp-spatial",
    "em-converge",
    "moments",
    "solve-fp",
    "simulate",
)
PRESET_NAMES = ("paper", "quick")
MODES = ("exact", "interpolate")
KERNEL_MODES = ("exact", "convolution")
ERROR_EPOCHS = ("final", "max")
DUMP_FORMATS = ("bin", "csv", "both")


@dataclass(frozen=True)
class RunConfig:
    """
    Resolutions are step counts: N time steps on [0, T], M nodes per half
    axis. ladder and reference read per study:
        fp-temporal  ladder/reference are N, on M nodes
        fp-spatial   ladder/reference are M, with N steps
        em-converge  ladder/reference are SDE steps, density on (M, N)
    """

    study: str = "solve-fp"
    example: Optional[int] = 1
    density_path: Optional[str] = None
    alpha: Optional[float] = None
    M: Optional[int] = None
    N: Optional[int] = None
    ladder: Optional[Tuple[int, ...]] = None
    reference: Optional[int] = None
    sde_N: Optional[int] = None
    paths: Optional[int] = None
    particles: Optional[int] = None
    trials: Optional[int] = None
    particle_N: Optional[int] = None
    seed: int = 0
    out: str = "results"
    preset: str = "quick"
    diagnostics: bool = True
    mode: str = "interpolate"
    kernel_mode: str = "exact"
    error_epoch: str = "final"
    workers: int = 1
    dump_format: str = "bin"
    progress: bool = False

    def to_dict(self):
        d = dataclasses.asdict(self)
        if d["ladder"] is not None:
            d["ladder"] = list(d["ladder"])
        return d

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


FIELDS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _powers(lo, hi):
    return tuple(2**k for k in range(lo, hi + 1))


def _particle_moments(M, N, sde_N, particles, trials, particle_N, paths=10**4):
    return dict(
        M=M,
        N=N,
        sde_N=sde_N,
        paths=paths,
        particles=particles,
        trials=trials,
        particle_N=particle_N,
    )


# Example 1 lives on (-6, 6). Examples 2 and 3 solve the PDE studies on
# (-1, 1)^2 and the SDE studies on (-4, 4)^2.
PRESETS = {
    "paper": {
        1: {
            "fp-temporal": dict(
                alpha=6.0, M=512, reference=2**14, ladder=_powers(9, 12)
            ),
            "fp-spatial": dict(
                alpha=6.0, N=2**14, reference=512, ladder=(16, 32, 64, 128)
            ),
            "em-converge": dict(
                alpha=6.0,
                M=512,
                N=2**14,
                reference=2**14,
                ladder=_powers(9, 12),
                paths=10**5,
            ),
            "moments": dict(
                alpha=6.0, **_particle_moments(512, 2**12, 2**9, 1000, 100, 2**9)
            ),
            "solve-fp": dict(alpha=6.0, M=512, N=2**9),
            "simulate": dict(alpha=6.0, M=512, N=2**12, sde_N=2**9, paths=10**4),
        },
        2: {
            "fp-temporal": dict(
                alpha=1.0, M=32, reference=2**12, ladder=_powers(7, 10)
            ),
            "fp-spatial": dict(alpha=1.0, N=32, reference=128, ladder=(8, 16, 32)),
            "em-converge": dict(
                alpha=4.0,
                M=32,
                N=2**8,
                reference=2**12,
                ladder=_powers(7, 10),
                paths=10**4,
            ),
            "moments": dict(
                alpha=4.0, **_particle_moments(32, 2**8, 2**8, 1000, 100, 2**8)
            ),
            "solve-fp": dict(alpha=1.0, M=32, N=2**7),
            "simulate": dict(alpha=4.0, M=32, N=2**8, sde_N=2**8, paths=10**4),
        },
        3: {
            "fp-temporal": dict(alpha=1.0, M=24, reference=2**8, ladder=_powers(3, 6)),
            "fp-spatial": dict(alpha=1.0, N=2**6, reference=192, ladder=(6, 12, 24)),
            "em-converge": dict(
                alpha=4.0,
                M=32,
                N=2**8,
                reference=2**8,
                ladder=_powers(3, 6),
                paths=10**4,
            ),
            "moments": dict(
                alpha=4.0, **_particle_moments(32, 2**8, 2**8, 1000, 100, 2**8)
            ),
            "solve-fp": dict(alpha=1.0, M=24, N=2**6),
            "simulate": dict(alpha=4.0, M=32, N=2**8, sde_N=2**8, paths=10**4),
        },
    },
    "quick": {
        1: {
            "fp-temporal": dict(
                alpha=6.0, M=128, reference=2**10, ladder=_powers(5, 8)
            ),
            "fp-spatial": dict(alpha=6.0, N=2**10, reference=256, ladder=(16, 32, 64)),
            "em-converge": dict(
                alpha=6.0,
                M=128,
                N=2**10,
                reference=2**10,
                ladder=_powers(5, 8),
                paths=10**4,
            ),
            "moments": dict(
                alpha=6.0, **_particle_moments(128, 2**8, 2**8, 1000, 100, 2**6)
            ),
            "solve-fp": dict(alpha=6.0, M=128, N=64),
            "simulate": dict(alpha=6.0, M=128, N=2**8, sde_N=2**8, paths=10**3),
        },
        2: {
            "fp-temporal": dict(
                alpha=1.0, M=16, reference=2**10, ladder=_powers(5, 8)
            ),
            "fp-spatial": dict(alpha=1.0, N=32, reference=128, ladder=(8, 16, 32)),
            "em-converge": dict(
                alpha=4.0,
                M=16,
                N=2**6,
                reference=2**10,
                ladder=_powers(5, 8),
                paths=10**4,
            ),
            "moments": dict(
                alpha=4.0, **_particle_moments(32, 2**6, 2**6, 1000, 20, 2**6)
            ),
            "solve-fp": dict(alpha=1.0, M=16, N=2**5),
            "simulate": dict(alpha=4.0, M=16, N=2**6, sde_N=2**6, paths=10**3),
        },
        3: {
            "fp-temporal": dict(alpha=1.0, M=12, reference=2**8, ladder=_powers(3, 6)),
            "fp-spatial": dict(alpha=1.0, N=16, reference=192, ladder=(6, 12, 24)),
            "em-converge": dict(
                alpha=4.0,
                M=16,
                N=2**6,
                reference=2**8,
                ladder=_powers(3, 6),
                paths=10**4,
            ),
            "moments": dict(
                alpha=4.0, **_particle_moments(32, 2**6, 2**6, 1000, 20, 2**6)
            ),
            "solve-fp": dict(alpha=1.0, M=12, N=2**5),
            "simulate": dict(alpha=4.0, M=16, N=2**6, sde_N=2**6, paths=10**3),
        },
    },
}

INTEGER_FIELDS = (
    "example",
    "M",
    "N",
    "reference",
    "sde_N",
    "paths",
    "particles",
    "trials",
    "particle_N",
    "seed",
    "workers",
)


def _coerce(name, value):
    if value is None:
        return None
    try:
        if name == "ladder":
            return parse_int_list(value)
        if name in INTEGER_FIELDS:
            if isinstance(value, bool) or int(value) != value:
                raise ValueError("not an integer")
            return int(value)
        if name == "alpha":
            return float(value)
        if name in ("diagnostics", "progress"):
            if not isinstance(value, bool):
                raise ValueError("not a boolean")
            return value
        if name in ("density_path", "out"):
            return str(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(name, "{!r} ({})".format(value, err))
    return value


def load_run_config(filepath=None, **overrides):
    """
    Read a RunConfig from JSON. A manifest written by a run is accepted too.
    Overrides that are not None win over the file. Unset resolutions are
    filled from the preset, then the result is validated.

    Raises:
        ConfigError: unreadable file, unknown field or invalid value
    """
    values = {}
    if filepath is not None:
        try:
            with open(filepath) as f:
                values = json.load(f)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError("config", "cannot read {}: {}".format(filepath, err))
        if not isinstance(values, dict):
            raise ConfigError("config", "{} holds no JSON object".format(filepath))
        if "config" in values and "versions" in values:
            values = values["config"]

    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(values) - set(FIELDS))
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    return validate(resolve(cfg))


def resolve(cfg):
    """Fill the fields left unset from the preset of the example and study"""
    if cfg.preset not in PRESET_NAMES:
        raise ConfigError("preset", "{!r} not in {}".format(cfg.preset, PRESET_NAMES))
    if cfg.study not in STUDIES:
        raise ConfigError("study", "{!r} not in {}".format(cfg.study, STUDIES))
    if cfg.example not in EXAMPLES:
        raise ConfigError(
            "example", "{!r} not in {}".format(cfg.example, sorted(EXAMPLES))
        )
    preset = PRESETS[cfg.preset][cfg.example][cfg.study]
    fill = {k: v for k, v in preset.items() if getattr(cfg, k) is None}
    return cfg.replace(**fill)


def _check_choice(cfg, name, options):
    if getattr(cfg, name) not in options:
        raise ConfigError(name, "{!r} not in {}".format(getattr(cfg, name), options))


def _check_positive(cfg, name, minimum=1):
    value = getattr(cfg, name)
    if value is None:
        raise ConfigError(name, "required by study {}".format(cfg.study))
    if value < minimum:
        raise ConfigError(name, "must be >= {}, got {}".format(minimum, value))


def _power_of_two(ratio):
    ratio = Fraction(ratio)
    q = ratio if ratio >= 1 else 1 / ratio
    return q.denominator == 1 and q.numerator & (q.numerator - 1) == 0


def _check_ladder(cfg):
    ladder = cfg.ladder
    if not ladder or len(ladder) < 2:
        raise ConfigError("ladder", "needs at least two resolutions")
    steps = sorted(ladder)
    if any(b != 2 * a for a, b in zip(steps, steps[1:])):
        raise ConfigError("ladder", "resolutions must double, got {}".format(ladder))
    _check_positive(cfg, "reference", 2)
    if (
        cfg.reference <= steps[-1]
        or cfg.reference % steps[-1]
        or not _power_of_two(Fraction(cfg.reference, steps[-1]))
    ):
        raise ConfigError(
            "reference",
            "{} is not a power-of-two refinement of {}".format(
                cfg.reference, steps[-1]
            ),
        )


def _density_grid(cfg):
    if cfg.density_path is None:
        return None
    if not pathlib.Path(cfg.density_path).exists():
        raise ConfigError("density_path", "{} does not exist".format(cfg.density_path))
    try:
        g = dumps.read_density_grid(cfg.density_path)
    except (OSError, ValueError, KeyError) as err:
        raise ConfigError("density_path", "unreadable density dump: {}".format(err))
    d = EXAMPLES[cfg.example]().d
    if g.d != d:
        raise ConfigError(
            "density_path",
            "dump is {}-dimensional, example {} is {}-dimensional".format(
                g.d, cfg.example, d
            ),
        )
    return g


def validate(cfg):
    """
    :returns: cfg
    :raises ConfigError: naming the first invalid field
    """
    _check_choice(cfg, "mode", MODES)
    _check_choice(cfg, "kernel_mode", KERNEL_MODES)
    _check_choice(cfg, "error_epoch", ERROR_EPOCHS)
    _check_choice(cfg, "dump_format", DUMP_FORMATS)
    _check_positive(cfg, "workers")
    if cfg.seed < 0:
        raise ConfigError("seed", "must be non-negative")
    if cfg.alpha is None or not cfg.alpha > 0:
        raise ConfigError("alpha", "must be positive, got {}".format(cfg.alpha))
    density_grid = _density_grid(cfg)
    N = cfg.N if density_grid is None else density_grid.N

    if cfg.study == "fp-temporal":
        _check_positive(cfg, "M", 2)
        _check_ladder(cfg)
    elif cfg.study == "fp-spatial":
        _check_positive(cfg, "N")
        _check_ladder(cfg)
        if min(cfg.ladder) < 2:
            raise ConfigError("ladder", "M must be >= 2")
    elif cfg.study == "em-converge":
        _check_positive(cfg, "M", 2)
        _check_positive(cfg, "N")
        _check_positive(cfg, "paths", 2)
        _check_ladder(cfg)
        if not _power_of_two(Fraction(cfg.reference, N)):
            raise ConfigError(
                "reference",
                "SDE steps {} and density steps {} must differ by a power of "
                "two".format(cfg.reference, N),
            )
    elif cfg.study == "moments":
        for name in ("N", "sde_N", "particles", "trials", "particle_N"):
            _check_positive(cfg, name)
        _check_positive(cfg, "M", 2)
        _check_positive(cfg, "paths", 2)
    else:
        _check_positive(cfg, "M", 2)
        _check_positive(cfg, "N")
        if cfg.study == "simulate":
            _check_positive(cfg, "sde_N")
            _check_positive(cfg, "paths")

    if cfg.study in ("moments", "simulate") and not _power_of_two(
        Fraction(cfg.sde_N, N)
    ):
        raise ConfigError(
            "sde_N",
            "SDE steps {} and density steps {} must differ by a power of two".format(
                cfg.sde_N, N
            ),
        )
    return cfg
