"""Config-driven pipeline runner.

A run is described by one JSON file (schema below) listing tasks that
execute in order over a shared grid/medium: ``decompose``, ``modes``,
``verify``, ``ldos``, ``rate``, ``cavity-factor``.  Outputs are CSV for
spectra and JSON for scalar summaries; every report embeds the
tolerances, broadening and seed that produced it.  Identical config and
seed give byte-identical outputs.

Exit codes: 0 success, 2 configuration/schema error, 3 solver failure,
4 invariant-suite failure from the ``verify`` task.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["grid", "medium", "tasks"],
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "required": ["dims"],
            "additionalProperties": False,
            "properties": {
                "dims": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 3,
                    "maxItems": 3,
                },
                "spacing": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "medium": {"$ref": "#/$defs/descriptor"},
        "mu": {"$ref": "#/$defs/descriptor"},
        "tasks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "enum": ["decompose", "modes", "verify", "ldos", "rate", "cavity-factor"]
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "poisson_tol": {"type": "number", "exclusiveMinimum": 0},
                "eig_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "modes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "variant": {"enum": ["nonmagnetic", "magnetic"]},
                "bank_out": {"type": "string"},
                "bank_in": {"type": "string"},
            },
        },
        "atoms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["position", "levels", "dipoles"],
                "additionalProperties": False,
                "properties": {
                    "position": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 3,
                        "maxItems": 3,
                    },
                    "levels": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 2,
                    },
                    "dipoles": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["levels", "moment"],
                            "additionalProperties": False,
                            "properties": {
                                "levels": {
                                    "type": "array",
                                    "items": {"type": "integer", "minimum": 0},
                                    "minItems": 2,
                                    "maxItems": 2,
                                },
                                "moment": {
                                    "type": "array",
                                    "items": {"type": "number"},
                                    "minItems": 3,
                                    "maxItems": 3,
                                },
                            },
                        },
                    },
                    "cavity_radius": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "ldos": {
            "type": "object",
            "required": ["omega_min", "omega_max", "count"],
            "additionalProperties": False,
            "properties": {
                "omega_min": {"type": "number", "minimum": 0},
                "omega_max": {"type": "number", "exclusiveMinimum": 0},
                "count": {"type": "integer", "minimum": 2},
                "position": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 3,
                    "maxItems": 3,
                },
                "orientation": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 3,
                    "maxItems": 3,
                },
                "eta": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "rate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "atom": {"type": "integer", "minimum": 0},
                "transition": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "local_field": {"type": "boolean"},
                "factor_grid": {"type": "integer", "minimum": 8},
            },
        },
        "cavity_factor": {
            "type": "object",
            "required": ["eps_out", "radius"],
            "additionalProperties": False,
            "properties": {
                "eps_out": {"type": "number", "exclusiveMinimum": 0},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "grid": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 2},
                    "minItems": 3,
                    "maxItems": 3,
                },
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "si": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "length_unit_m": {"type": "number", "exclusiveMinimum": 0}
            },
        },
    },
    "$defs": {
        "descriptor": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"type": "string"}},
        }
    },
}

_SPEED_OF_LIGHT = 299792458.0


def _medium_from_config(data):
    from .bankfile import descriptor_from_dict

    return descriptor_from_dict(data)


def _atoms_from_config(entries):
    import numpy as np

    from .emission import AtomSpec

    atoms = []
    for entry in entries:
        nlev = len(entry["levels"])
        dip = np.zeros((nlev, nlev, 3))
        for d in entry["dipoles"]:
            k, kp = d["levels"]
            if k >= nlev or kp >= nlev:
                raise ValueError(f"dipole levels {k},{kp} out of range for {nlev} levels")
            dip[k, kp] = d["moment"]
            dip[kp, k] = d["moment"]
        atoms.append(
            AtomSpec(
                position=tuple(entry["position"]),
                levels=tuple(entry["levels"]),
                dipoles=dip,
                cavity_radius=entry.get("cavity_radius"),
            )
        )
    return atoms


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path: Path, payload: dict):
    _write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows, params: dict, columns=("omega", "value")):
    lines = [f"# {k}={params[k]}" for k in sorted(params)]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(repr(float(x)) for x in row))
    _write_atomic(path, "\n".join(lines) + "\n")


class _Runner:
    def __init__(self, config: dict, out_dir: Path, verbosity: int):
        import numpy as np  # noqa: F401  (ensures numeric stack is up)

        from .lattice import Grid
        from .medium import build_profile

        self.config = config
        self.out_dir = out_dir
        self.verbosity = verbosity
        self.seed = int(config.get("seed", 0))
        grid_cfg = config["grid"]
        self.grid = Grid(tuple(grid_cfg["dims"]), grid_cfg.get("spacing", 1.0))
        desc = _medium_from_config(config["medium"])
        mu_desc = _medium_from_config(config["mu"]) if "mu" in config else None
        self.medium = build_profile(desc, self.grid, mu_desc)
        self.atoms = _atoms_from_config(config.get("atoms", []))
        solver = config.get("solver", {})
        self.poisson_tol = solver.get("poisson_tol", 1e-10)
        self.eig_tol = solver.get("eig_tol", 1e-8)
        self.max_iter = solver.get("max_iter")
        self.bank = None
        self.si_length = config.get("si", {}).get("length_unit_m")

    def log(self, msg: str, level: int = 1):
        if self.verbosity >= level:
            print(msg)

    def _params(self, **extra) -> dict:
        base = {
            "seed": self.seed,
            "poisson_tol": self.poisson_tol,
            "eig_tol": self.eig_tol,
        }
        base.update(extra)
        return base

    def _require_bank(self):
        if self.bank is None:
            bank_in = self.config.get("modes", {}).get("bank_in")
            if bank_in:
                from .bankfile import load_bank

                self.bank = load_bank(Path(bank_in))
            else:
                raise ValueError(
                    "task needs a mode bank: run the 'modes' task first or set modes.bank_in"
                )
        return self.bank

    def task_modes(self):
        from .modes import NONMAGNETIC, QOperator, solve_modes

        cfg = self.config.get("modes", {})
        count = cfg.get("count", 12)
        variant = cfg.get("variant", NONMAGNETIC)
        op = QOperator(self.medium, variant)
        self.bank = solve_modes(
            op,
            count,
            tol=self.eig_tol,
            seed=self.seed,
            poisson_tol=min(self.poisson_tol, 1e-10),
        )
        payload = {
            "task": "modes",
            "count": len(self.bank),
            "frequencies": [float(w) for w in self.bank.frequencies],
            "gram_defect": self.bank.gram_defect,
            "max_residual": float(self.bank.residuals.max()),
            "params": self._params(variant=variant),
        }
        if self.si_length:
            scale = _SPEED_OF_LIGHT / self.si_length
            payload["frequencies_si_rad_per_s"] = [
                float(w) * scale for w in self.bank.frequencies
            ]
        bank_out = cfg.get("bank_out")
        if bank_out:
            from .bankfile import save_bank

            save_bank(self.bank, self.out_dir / bank_out)
            payload["bank_file"] = bank_out
        _write_json(self.out_dir / "modes.json", payload)
        self.log(f"modes: {len(self.bank)} modes, gram defect {self.bank.gram_defect:.2e}")

    def task_decompose(self):
        import numpy as np

        from .electrostatics import helmholtz_decompose
        from .lattice import EDGE, VectorField, div_raw

        rng = np.random.default_rng(self.seed)
        x = VectorField(self.grid, EDGE, rng.standard_normal((3,) + self.grid.dims))
        result = helmholtz_decompose(x, self.medium, tol=self.poisson_tol)
        recon = np.linalg.norm(
            x.values - (result.x1.values + result.x2.values)
        ) / np.linalg.norm(x.values)
        div_rel = np.linalg.norm(
            div_raw(result.x1.values, self.grid.spacing)
        ) / np.linalg.norm(x.values)
        payload = {
            "task": "decompose",
            "reconstruction_error": float(recon),
            "x1_divergence": float(div_rel),
            "poisson_residual": result.residual_norm,
            "params": self._params(),
        }
        _write_json(self.out_dir / "decompose.json", payload)
        self.log(f"decompose: reconstruction {recon:.2e}, div(x1) {div_rel:.2e}")

    def task_verify(self) -> bool:
        import numpy as np

        from .electrostatics import helmholtz_decompose
        from .lattice import (
            EDGE,
            FACE,
            ScalarField,
            VectorField,
            curl,
            curl_t,
            div,
            grad,
            inner,
        )
        from .modes import mode_residual_report

        if self.bank is None and self.config.get("modes", {}).get("bank_in"):
            self._require_bank()

        rng = np.random.default_rng(self.seed)
        checks = {}

        phi = ScalarField(self.grid, rng.standard_normal(self.grid.dims))
        v = VectorField(self.grid, EDGE, rng.standard_normal((3,) + self.grid.dims))
        w = VectorField(self.grid, FACE, rng.standard_normal((3,) + self.grid.dims))

        cg = curl(grad(phi)).values
        checks["curl_grad_zero"] = (float(np.abs(cg).max()), 1e-13)
        dc = div(curl_t(w)).values
        checks["div_curl_t_zero"] = (float(np.abs(dc).max()), 1e-13)
        lhs = inner(grad(phi), v)
        rhs = -inner(phi, div(v))
        scale = max(abs(lhs), abs(rhs), 1e-300)
        checks["grad_div_adjoint"] = (abs(lhs - rhs) / scale, 1e-12)
        lhs = inner(curl(v), w)
        rhs = inner(v, curl_t(w))
        scale = max(abs(lhs), abs(rhs), 1e-300)
        checks["curl_adjoint"] = (abs(lhs - rhs) / scale, 1e-12)

        result = helmholtz_decompose(v, self.medium, tol=self.poisson_tol)
        recon = np.linalg.norm(
            v.values - result.x1.values - result.x2.values
        ) / np.linalg.norm(v.values)
        checks["decomposition_reconstruction"] = (float(recon), 1e-12)
        div_rel = np.linalg.norm(
            div(result.x1).values
        ) / np.linalg.norm(v.values)
        checks["decomposition_transversality"] = (float(div_rel), 1e-8)

        if self.bank is not None:
            report = mode_residual_report(self.bank)
            checks["bank_gram_defect"] = (report.gram_defect, 1e-8)
            checks["bank_max_residual"] = (float(report.residuals.max()), 1e-6)
            checks["bank_weighted_divergence"] = (report.max_weighted_divergence, 1e-8)

        results = {
            name: {"value": value, "tolerance": tol, "pass": bool(value <= tol)}
            for name, (value, tol) in checks.items()
        }
        ok = all(r["pass"] for r in results.values())
        payload = {
            "task": "verify",
            "pass": ok,
            "checks": results,
            "params": self._params(),
        }
        _write_json(self.out_dir / "verify.json", payload)
        for name, r in sorted(results.items()):
            self.log(
                f"verify: {'PASS' if r['pass'] else 'FAIL'} {name} "
                f"({r['value']:.3e} vs {r['tolerance']:.1e})"
            )
        return ok

    def task_ldos(self):
        import numpy as np

        from .emission import default_broadening, ldos_spectrum

        bank = self._require_bank()
        cfg = self.config["ldos"]
        omegas = np.linspace(cfg["omega_min"], cfg["omega_max"], cfg["count"])
        position = cfg.get("position")
        if position is None:
            if self.atoms:
                position = self.atoms[0].position
            else:
                position = tuple(l / 2 for l in self.grid.lengths)
        orientation = cfg.get("orientation", [0.0, 0.0, 1.0])
        eta = cfg.get("eta")
        if eta is None:
            eta = default_broadening(bank, float(np.median(omegas)))
        om, values = ldos_spectrum(bank, position, orientation, omegas, eta)
        params = self._params(
            eta=eta,
            position=tuple(position),
            orientation=tuple(orientation),
        )
        _write_csv(self.out_dir / "ldos.csv", zip(om, values), params)
        self.log(f"ldos: {len(om)} samples, eta={eta:.3e}")

    def task_rate(self):
        from .emission import emission_rate, local_field_corrected_rate
        from .lattice import Grid

        bank = self._require_bank()
        cfg = self.config.get("rate", {})
        if not self.atoms:
            raise ValueError("rate task requires at least one atom")
        atom = self.atoms[cfg.get("atom", 0)]
        transition = tuple(cfg.get("transition", (1, 0)))
        eta = cfg.get("eta")
        if cfg.get("local_field"):
            n = cfg.get("factor_grid", 48)
            radius = atom.cavity_radius
            if radius is None:
                raise ValueError("local_field rate requires atom.cavity_radius")
            factor_grid = Grid((n, n, n), spacing=radius / max(4, n // 8))
            report = local_field_corrected_rate(
                bank, atom, transition, eta,
                factor_grid=factor_grid, factor_tol=self.poisson_tol,
            )
        else:
            report = emission_rate(bank, atom, transition, eta)
        payload = {
            "task": "rate",
            "rate": report.rate,
            "rate_free_space": report.rate_free_space,
            "ratio": report.ratio,
            "local_field_factor": report.local_field_factor,
            "params": self._params(
                eta=report.eta,
                transition=list(transition),
                atom=cfg.get("atom", 0),
            ),
        }
        if self.si_length:
            scale = _SPEED_OF_LIGHT / self.si_length
            payload["rate_si_per_s"] = report.rate * scale
        _write_json(self.out_dir / "rate.json", payload)
        self.log(f"rate: ratio {report.ratio:.4f} (eta={report.eta:.3e})")

    def task_cavity_factor(self):
        from .electrostatics import cavity_field_factor
        from .lattice import Grid

        cfg = self.config["cavity_factor"]
        dims = cfg.get("grid", list(self.grid.dims))
        grid = Grid(tuple(dims), self.grid.spacing)
        factor = cavity_field_factor(
            cfg["eps_out"], grid, cfg["radius"], tol=self.poisson_tol
        )
        quasi_static = 3 * cfg["eps_out"] / (2 * cfg["eps_out"] + 1)
        payload = {
            "task": "cavity-factor",
            "factor": factor,
            "quasi_static_reference": quasi_static,
            "eps_out": cfg["eps_out"],
            "radius": cfg["radius"],
            "grid": list(dims),
            "params": self._params(),
        }
        _write_json(self.out_dir / "cavity_factor.json", payload)
        self.log(f"cavity-factor: {factor:.5f} (quasi-static {quasi_static:.5f})")


def validate_config(config: dict):
    """Schema plus feasibility checks; raises ConfigError on violation."""
    import jsonschema

    from .errors import ConfigError

    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc

    dims = config["grid"]["dims"]
    ncells = dims[0] * dims[1] * dims[2]
    count = config.get("modes", {}).get("count", 12)
    if "modes" in config.get("tasks", []) and count > 2 * ncells - 2:
        raise ConfigError(
            f"modes.count={count} exceeds the transverse subspace "
            f"({2 * ncells - 2} nonzero modes on a {dims} grid)"
        )
    for task in config["tasks"]:
        key = {"ldos": "ldos", "cavity-factor": "cavity_factor"}.get(task)
        if key and key not in config:
            raise ConfigError(f"task {task!r} needs a {key!r} config section")
    if "rate" in config["tasks"] and not config.get("atoms"):
        raise ConfigError("task 'rate' needs a nonempty 'atoms' list")


def run(config_path, out_dir, threads: int = 0, verbosity: int = 1) -> int:
    """Execute a configuration; returns the process exit code."""
    if threads:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ[var] = str(threads)

    from .errors import ConfigError, EpsmodesError, SolverError

    config_path = Path(config_path)
    out_dir = Path(out_dir)
    try:
        config = json.loads(config_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        validate_config(config)
        out_dir.mkdir(parents=True, exist_ok=True)
        runner = _Runner(config, out_dir, verbosity)
    except (ConfigError, ValueError, EpsmodesError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    handlers = {
        "decompose": runner.task_decompose,
        "modes": runner.task_modes,
        "verify": runner.task_verify,
        "ldos": runner.task_ldos,
        "rate": runner.task_rate,
        "cavity-factor": runner.task_cavity_factor,
    }
    for task in config["tasks"]:
        try:
            result = handlers[task]()
        except SolverError as exc:
            print(f"error in task {task!r}: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        except (ValueError, EpsmodesError) as exc:
            print(f"error in task {task!r}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if task == "verify" and result is False:
            print("verify: invariant suite failed", file=sys.stderr)
            return EXIT_INVARIANT
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="epsmodes",
        description="Mode solving, field decomposition and emission rates "
        "in periodic inhomogeneous dielectrics.",
    )
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out-dir", default=".", help="directory for reports")
    parser.add_argument(
        "--threads", type=int, default=0,
        help="cap internal parallelism (0 = library default)",
    )
    parser.add_argument(
        "--verbosity", type=int, default=1, choices=(0, 1, 2),
        help="console chatter level",
    )
    args = parser.parse_args(argv)
    return run(args.config, args.out_dir, args.threads, args.verbosity)


if __name__ == "__main__":
    sys.exit(main())
