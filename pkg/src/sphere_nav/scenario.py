"""Scenario files, configuration validation, and batch execution.

A scenario is a single JSON document:

    {
      "name": "...", "dimension": 3, "target": [1,0,0,0], "delta": 0.13,
      "constraints": [
        {"type": "cap", "axis": [...], "xi": 0.5236},
        {"type": "star", "anchor": [...], "kernel": [...],
         "normal": [...],                      # hyperplane normal (optional)
         "profile": {"kind": "implicit-radial", "form": "power-sum",
                     "exponents": [0.4, 0.4, 0.4], "level": 1.5},
         "resolution": 2048}
      ],
      "controller": {"law": "conic-gradient" | "star-piecewise",
                     "k1": 1.0, "kappa": 1.0 | "auto", "epsilon": 0.01 | "auto"},
      "sim": {"dt": 1e-3, "T": 30.0, "log_stride": 10},
      "initial_conditions": {"explicit": [[...]], "count": 9, "seed": 41}
    }

Star profiles: ``power-sum`` is the sublevel set sum_i |s_i|^e_i <= level in
hyperplane coordinates about the anchor; ``radial-table`` lists boundary
radii about the kernel at uniform angles (planar bodies only).  When
``normal`` is omitted it defaults to the anchor direction; the in-plane
basis completes the normal deterministically (standard axes, Gram-Schmidt
in index order), which the tabulated radii rely on.

Reports are reproducible byte for byte for a fixed (scenario, seed): no
timestamps, sorted keys, and 17-significant-digit floats in the CSVs.  The
environment variable SPHERE_NAV_SEED overrides the scenario seed.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .constraints import (
    ConicCap,
    ConstraintArrangement,
    EuclideanStarBody,
    PowerSumProfile,
    RadialTableProfile,
    build_projected_star,
    complete_basis,
    phi,
    suggest_epsilon,
    validate_kernel,
    validate_region_disjointness,
)
from .controllers import (
    ConicControllerParams,
    ConicGradientController,
    StarControllerParams,
    StarPiecewiseController,
    suggest_kappa,
)
from .errors import (
    InvariantViolation,
    ScenarioParseError,
    SphereNavError,
)
from .geometry import UnitPoint, coords_of
from .simulate import (
    NonSmoothNeighborhood,
    SimConfig,
    Trajectory,
    integrate,
    jacobian_fd,
)

SEED_ENV_VAR = "SPHERE_NAV_SEED"


# ---------------------------------------------------------------------------
# scenario model and parsing
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    dimension: int
    target: UnitPoint
    arrangement: ConstraintArrangement
    law: str
    k1: float
    kappa: float | str | None
    epsilon: float | str
    sim: SimConfig
    explicit_ics: list
    ic_count: int
    seed: int
    path: str | None = None

    def resolved_epsilon(self) -> float:
        if self.epsilon == "auto":
            return suggest_epsilon(self.arrangement, self.target)
        return float(self.epsilon)

    def resolved_kappa(self) -> float | None:
        if self.law != "star-piecewise":
            return None
        if self.kappa == "auto":
            return suggest_kappa(self.arrangement, self.target,
                                 self.resolved_epsilon()).recommended
        return float(self.kappa)

    def build_controller(self):
        eps = self.resolved_epsilon()
        if self.law == "conic-gradient":
            params = ConicControllerParams(k1=self.k1, epsilon=eps,
                                           x_d=self.target)
            return ConicGradientController(self.arrangement, params)
        params = StarControllerParams(k1=self.k1, kappa=self.resolved_kappa(),
                                      epsilon=eps, x_d=self.target)
        return StarPiecewiseController(self.arrangement, params)


def _unit_or_violation(vec, what: str, dim: int, violations: list[str]):
    arr = np.asarray(vec, dtype=float)
    if arr.shape != (dim + 1,):
        violations.append(f"{what}: expected {dim + 1} coordinates")
        return None
    nrm = float(np.linalg.norm(arr))
    if abs(nrm - 1.0) > 1e-6:
        violations.append(f"{what}: not a unit vector (norm {nrm:.6g})")
        return None
    return arr / nrm


def _parse_profile(block: dict, violations: list[str]):
    kind = block.get("kind")
    if kind == "implicit-radial":
        form = block.get("form", "power-sum")
        if form != "power-sum":
            violations.append(f"profile: unknown implicit form {form!r}")
            return None
        return PowerSumProfile(block["exponents"], block["level"])
    if kind == "radial-table":
        return RadialTableProfile(block["values"])
    violations.append(f"profile: unknown kind {kind!r}")
    return None


def _parse_constraint(block: dict, dim: int, index: int,
                      violations: list[str]):
    what = f"constraints[{index}]"
    ctype = block.get("type")
    if ctype == "cap":
        axis = _unit_or_violation(block.get("axis"), f"{what}.axis", dim,
                                  violations)
        xi = block.get("xi")
        if xi is None or not 0.0 <= float(xi) < np.pi:
            violations.append(f"{what}.xi must be in [0, pi)")
            return None, None
        if axis is None:
            return None, None
        return ConicCap(UnitPoint(axis), float(xi)), None
    if ctype == "star":
        anchor = np.asarray(block.get("anchor"), dtype=float)
        if anchor.shape != (dim + 1,):
            violations.append(f"{what}.anchor: expected {dim + 1} coordinates")
            return None, None
        kernel = np.asarray(block.get("kernel", anchor), dtype=float)
        profile = _parse_profile(block.get("profile", {}), violations)
        if profile is None:
            return None, None
        normal = np.asarray(block.get("normal", anchor), dtype=float)
        if abs(float(normal @ anchor)) < 1e-12:
            violations.append(f"{what}: hyperplane through the origin")
            return None, None
        basis = complete_basis(normal)
        try:
            body = EuclideanStarBody(anchor=anchor, basis=basis,
                                     kernel_point=kernel, profile=profile)
            shape = build_projected_star(body, int(block.get("resolution", 2048)))
        except SphereNavError as exc:
            violations.append(f"{what}: {exc}")
            return None, None
        explicit_kernel = block.get("kernel_on_sphere")
        gk = shape.kernel_on_sphere if explicit_kernel is None \
            else UnitPoint(np.asarray(explicit_kernel, dtype=float))
        return shape, gk
    violations.append(f"{what}.type must be 'cap' or 'star'")
    return None, None


def parse_scenario(path: str) -> Scenario:
    """Load and fully validate a scenario file.

    Collects every violated invariant before raising, so a bad file reports
    all of its problems at once.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioParseError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, line=exc.lineno) from exc
    return scenario_from_dict(doc, path=path)


def scenario_from_dict(doc: dict, path: str | None = None) -> Scenario:
    violations: list[str] = []
    name = doc.get("name") or (os.path.basename(path or "scenario").rsplit(".", 1)[0])
    dim = int(doc.get("dimension", 0))
    if dim < 2:
        violations.append("dimension must be >= 2")
        raise InvariantViolation(violations)

    target = _unit_or_violation(doc.get("target"), "target", dim, violations)

    sets, kernels = [], []
    for i, block in enumerate(doc.get("constraints", [])):
        s, gk = _parse_constraint(block, dim, i, violations)
        if s is not None:
            sets.append(s)
            kernels.append(gk if gk is not None else None)
    kernels = [k if k is not None else None for k in kernels]
    resolved_kernels = []
    for s, k in zip(sets, kernels):
        if k is not None:
            resolved_kernels.append(k)
        elif isinstance(s, ConicCap):
            resolved_kernels.append(s.axis)
        else:
            resolved_kernels.append(s.kernel_on_sphere)

    ctrl = doc.get("controller", {})
    law = ctrl.get("law")
    if law not in ("conic-gradient", "star-piecewise"):
        violations.append("controller.law must be 'conic-gradient' or 'star-piecewise'")
    k1 = float(ctrl.get("k1", 1.0))
    if k1 <= 0:
        violations.append("controller.k1 must be positive")
    kappa = ctrl.get("kappa", "auto")
    if kappa != "auto" and kappa is not None and float(kappa) <= 0:
        violations.append("controller.kappa must be positive or 'auto'")
    epsilon = ctrl.get("epsilon", "auto")
    if epsilon != "auto" and float(epsilon) <= 0:
        violations.append("controller.epsilon must be positive or 'auto'")

    sim_block = doc.get("sim", {})
    try:
        sim = SimConfig(dt=float(sim_block.get("dt", 1e-3)),
                        T=float(sim_block.get("T", 30.0)),
                        renormalize_every=int(sim_block.get("renormalize_every", 1)),
                        log_stride=int(sim_block.get("log_stride", 1)))
    except ValueError as exc:
        violations.append(f"sim: {exc}")
        sim = SimConfig()

    arrangement = ConstraintArrangement(sets, resolved_kernels,
                                        delta_declared=doc.get("delta"))

    if target is not None and sets:
        margins = arrangement.signed_margins(target)
        if float(margins.min()) <= 0.0:
            violations.append("target lies inside (or on) the unsafe union")
        if law == "star-piecewise":
            # the star law steers toward kernel antipodes; those reference
            # arcs degenerate when a kernel is antipodal to the target
            for i, g in enumerate(arrangement.kernels):
                if float(g.coords @ target) <= -1.0 + 1e-9:
                    violations.append(f"kernel {i} is antipodal to the target")

    ic_block = doc.get("initial_conditions", {})
    explicit = []
    for j, row in enumerate(ic_block.get("explicit", [])):
        v = _unit_or_violation(row, f"initial_conditions.explicit[{j}]", dim,
                               violations)
        if v is not None and sets:
            if float(arrangement.signed_margins(v).min()) < 0.0:
                violations.append(
                    f"initial_conditions.explicit[{j}] starts inside the unsafe union")
        if v is not None:
            explicit.append(v)
    ic_count = int(ic_block.get("count", 0))
    seed = int(ic_block.get("seed", 0))

    if violations:
        raise InvariantViolation(violations)

    return Scenario(name=name, dimension=dim, target=UnitPoint(target),
                    arrangement=arrangement, law=law, k1=k1, kappa=kappa,
                    epsilon=epsilon, sim=sim, explicit_ics=explicit,
                    ic_count=ic_count, seed=seed, path=path)


def effective_seed(sc: Scenario, override: int | None = None) -> int:
    if override is not None:
        return int(override)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        return int(env)
    return sc.seed


def draw_initial_conditions(sc: Scenario, seed: int) -> list[np.ndarray]:
    """Explicit ICs plus seeded rejection draws from the safe set."""
    ics = [np.asarray(v, dtype=float) for v in sc.explicit_ics]
    if sc.ic_count <= 0:
        return ics
    rng = np.random.default_rng(seed)
    needed = sc.ic_count
    guard = 0
    while needed > 0:
        batch = geo.sample_uniform_many(sc.dimension, max(4 * needed, 16), rng)
        for row in batch:
            if float(sc.arrangement.signed_margins(row).min()) >= 0.0:
                ics.append(row)
                needed -= 1
                if needed == 0:
                    break
        guard += 1
        if guard > 1000:
            raise InvariantViolation(
                ["rejection sampling failed to find feasible initial conditions"])
    return ics


# ---------------------------------------------------------------------------
# validation command
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    scenario: str
    delta_declared: float | None
    delta_measured: float
    phi_delta: float | None
    eps_bar: float
    epsilon: float
    epsilon_suggested: float
    kappa_bar: float | None
    kappa_recommended: float | None
    kappa_configured: float | None
    kernel_ok: list[bool]
    kernel_codes: list[list[str]]
    regions_disjoint: bool
    region_witness: list | None
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "delta_declared": self.delta_declared,
            "delta_measured": self.delta_measured,
            "phi_delta": self.phi_delta,
            "eps_bar": self.eps_bar,
            "epsilon": self.epsilon,
            "epsilon_suggested": self.epsilon_suggested,
            "kappa_bar": self.kappa_bar,
            "kappa_recommended": self.kappa_recommended,
            "kappa_configured": self.kappa_configured,
            "kernel_ok": self.kernel_ok,
            "kernel_codes": self.kernel_codes,
            "regions_disjoint": self.regions_disjoint,
            "region_witness": self.region_witness,
            "failures": self.failures,
            "ok": self.ok,
        }


def validate_scenario(sc: Scenario, samples: int = 20_000,
                      kernel_samples: int = 120, seed: int = 0) -> ValidationReport:
    """Run every configuration check and collect failures (never raises)."""
    arr = sc.arrangement
    failures: list[str] = []

    delta = arr.delta_measured(seed=seed)
    phi_delta = None
    if np.isfinite(delta) and delta > 0:
        phi_delta = phi(min(delta, 2.0))
    if arr.delta_declared is not None and delta < arr.delta_declared - 1e-6:
        failures.append(
            f"measured separation {delta:.6g} is below the declared {arr.delta_declared}")

    eps_bar = float(arr.distances(sc.target).min())
    epsilon = sc.resolved_epsilon()
    try:
        eps_suggested = suggest_epsilon(arr, sc.target)
    except SphereNavError as exc:
        eps_suggested = float("nan")
        failures.append(f"no band width can be suggested: {exc}")
    bound = eps_bar if phi_delta is None else min(eps_bar, phi_delta)
    if not 0.0 < epsilon < bound:
        failures.append(
            f"epsilon {epsilon:.6g} is not admissible (must be below {bound:.6g})")

    kernel_ok, kernel_codes = [], []
    for i, s in enumerate(arr.sets):
        rep = validate_kernel(s, arr.kernels[i], samples=kernel_samples, seed=seed)
        kernel_ok.append(rep.ok)
        kernel_codes.append([f.code for f in rep.failures])
        if not rep.ok:
            failures.append(f"kernel {i}: {', '.join(kernel_codes[-1])}")

    disj = validate_region_disjointness(arr, sc.target, epsilon,
                                        samples=samples, seed=seed)
    if not disj.ok:
        failures.append(
            f"shadow regions overlap ({disj.overlaps} of {disj.checked} samples)")

    kappa_bar = kappa_rec = kappa_cfg = None
    if sc.law == "star-piecewise":
        ks = suggest_kappa(arr, sc.target, epsilon)
        kappa_bar, kappa_rec = ks.kappa_bar, ks.recommended
        kappa_cfg = sc.resolved_kappa()
        if not np.isfinite(kappa_bar):
            failures.append("no finite repulsion-gain bound exists for this geometry")
        elif kappa_cfg is not None and kappa_cfg <= kappa_bar:
            failures.append(
                f"kappa {kappa_cfg:.6g} does not exceed the bound {kappa_bar:.6g}")

    return ValidationReport(
        scenario=sc.name, delta_declared=arr.delta_declared,
        delta_measured=delta, phi_delta=phi_delta, eps_bar=eps_bar,
        epsilon=epsilon, epsilon_suggested=eps_suggested,
        kappa_bar=kappa_bar, kappa_recommended=kappa_rec,
        kappa_configured=kappa_cfg,
        kernel_ok=kernel_ok, kernel_codes=kernel_codes,
        regions_disjoint=disj.ok,
        region_witness=None if disj.witness is None else list(disj.witness),
        failures=failures)


# ---------------------------------------------------------------------------
# batch runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    ic_id: int
    x0: list
    verdict: str
    note: str
    safe: bool
    min_margin: float
    time_converged: float | None
    final_d_target: float
    csv_path: str | None = None

    def to_dict(self) -> dict:
        # the report stores the basename so identical (scenario, seed) runs
        # produce identical bytes regardless of the output directory
        return {
            "ic_id": self.ic_id, "x0": self.x0, "verdict": self.verdict,
            "note": self.note, "safe": self.safe,
            "min_margin": self.min_margin,
            "time_converged": self.time_converged,
            "final_d_target": self.final_d_target,
            "csv_file": None if self.csv_path is None
            else os.path.basename(self.csv_path),
        }


@dataclass
class RunReport:
    scenario: str
    seed: int
    epsilon: float
    kappa: float | None
    results: list[RunResult]
    validation: ValidationReport | None = None

    @property
    def n_converged(self) -> int:
        return sum(r.verdict == "converged" for r in self.results)

    @property
    def n_safe(self) -> int:
        return sum(r.safe for r in self.results)

    @property
    def all_converged_safe(self) -> bool:
        return all(r.verdict == "converged" and r.safe for r in self.results)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "seed": self.seed,
            "epsilon": self.epsilon, "kappa": self.kappa,
            "n_runs": len(self.results),
            "n_converged": self.n_converged, "n_safe": self.n_safe,
            "results": [r.to_dict() for r in self.results],
            "validation": None if self.validation is None
            else self.validation.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_trajectory_csv(traj: Trajectory, path: str):
    """One row per logged step; floats carry 17 significant digits."""
    n1 = traj.x.shape[1]
    header = (["t"] + [f"x{i}" for i in range(n1)] + [f"u{i}" for i in range(n1)]
              + ["d_target", "d_unsafe", "active_i", "V_active"])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(len(traj)):
            row = [_fmt(traj.t[k])]
            row += [_fmt(v) for v in traj.x[k]]
            row += [_fmt(v) for v in traj.u[k]]
            row += [_fmt(traj.d_target[k]), _fmt(traj.d_unsafe[k])]
            a = int(traj.active[k])
            row.append("" if a < 0 else str(a))
            v = traj.v_active[k]
            row.append("" if np.isnan(v) else _fmt(v))
            fh.write(",".join(row) + "\n")


def _run_one(args):
    sc, ic_id, x0 = args
    controller = sc.build_controller()
    traj = integrate(x0, controller, sc.sim)
    return ic_id, traj


def run_scenario(sc: Scenario, parallel: int = 1, out_dir: str | None = None,
                 seed: int | None = None,
                 include_validation: bool = False) -> RunReport:
    """Integrate every initial condition and assemble the batch report.

    Individual failures (aborted verdicts) do not stop the batch.  Results
    are keyed by ic_id, so the report does not depend on the execution
    order or the level of parallelism.
    """
    run_seed = effective_seed(sc, seed)
    ics = draw_initial_conditions(sc, run_seed)
    jobs = [(sc, i, x0) for i, x0 in enumerate(ics)]
    trajs: dict[int, Trajectory] = {}
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for ic_id, traj in pool.map(_run_one, jobs):
                trajs[ic_id] = traj
    else:
        for job in jobs:
            ic_id, traj = _run_one(job)
            trajs[ic_id] = traj

    results: list[RunResult] = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    long_rows: list[str] = []
    for ic_id in sorted(trajs):
        traj = trajs[ic_id]
        csv_path = None
        if out_dir is not None:
            csv_path = os.path.join(out_dir, f"{sc.name}_ic{ic_id:02d}.csv")
            write_trajectory_csv(traj, csv_path)
        for k in range(len(traj)):
            long_rows.append(",".join([
                _fmt(traj.t[k]), _fmt(traj.d_target[k]),
                _fmt(traj.d_unsafe[k]), str(ic_id)]))
        results.append(RunResult(
            ic_id=ic_id, x0=[float(v) for v in trajs[ic_id].x[0]],
            verdict=traj.verdict, note=traj.note, safe=traj.safe,
            min_margin=traj.min_margin, time_converged=traj.time_converged,
            final_d_target=float(traj.d_target[-1]), csv_path=csv_path))

    validation = validate_scenario(sc) if include_validation else None
    report = RunReport(scenario=sc.name, seed=run_seed,
                       epsilon=sc.resolved_epsilon(),
                       kappa=sc.resolved_kappa(),
                       results=results, validation=validation)
    if out_dir is not None:
        with open(os.path.join(out_dir, f"{sc.name}_summary.json"), "w") as fh:
            fh.write(report.to_json())
        with open(os.path.join(out_dir, f"{sc.name}_plot_long.csv"), "w") as fh:
            fh.write("t,d_target,d_unsafe,ic_id\n")
            fh.write("\n".join(long_rows) + ("\n" if long_rows else ""))
    return report


def run_trajectories(sc: Scenario, seed: int | None = None,
                     parallel: int = 1) -> list[Trajectory]:
    """The raw trajectories of a batch, ordered by ic_id (for analysis/tests)."""
    run_seed = effective_seed(sc, seed)
    ics = draw_initial_conditions(sc, run_seed)
    jobs = [(sc, i, x0) for i, x0 in enumerate(ics)]
    out: dict[int, Trajectory] = {}
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for ic_id, traj in pool.map(_run_one, jobs):
                out[ic_id] = traj
    else:
        for job in jobs:
            ic_id, traj = _run_one(job)
            out[ic_id] = traj
    return [out[i] for i in sorted(out)]


# ---------------------------------------------------------------------------
# diagnostics command
# ---------------------------------------------------------------------------

def _expected_spectrum_note(sc: Scenario, at: str) -> str:
    k1 = sc.k1
    n = sc.dimension
    if at == "target":
        return (f"expected -k1*(I + x_d x_d^T): eigenvalues "
                f"{-2 * k1:.6g} (x1) and {-k1:.6g} (x{n})")
    if sc.law == "conic-gradient":
        return (f"far-field linearization (k1/9)*(I + x_d x_d^T): eigenvalues "
                f"{2 * k1 / 9:.6g} (x1) and {k1 / 9:.6g} (x{n})")
    return (f"far-field linearization k1*(I + x_d x_d^T): eigenvalues "
            f"{2 * k1:.6g} (x1) and {k1:.6g} (x{n})")


def diagnose_scenario(sc: Scenario, points: list | None = None,
                      equilibria: bool = True, step: float = 1e-5) -> dict:
    """FD Jacobian spectra at the target, its antipode, and user points."""
    controller = sc.build_controller()
    eps = sc.resolved_epsilon()
    queries: list[tuple[str, np.ndarray]] = []
    if equilibria:
        queries.append(("target", controller.x_d.copy()))
        anti = -controller.x_d
        if float(controller.distance_profile(anti).min()) >= eps:
            queries.append(("antipode", anti))
    for j, p in enumerate(points or []):
        queries.append((f"point{j}", coords_of(p)))

    entries = []
    for label, p in queries:
        entry = {"label": label, "x": [float(v) for v in p]}
        try:
            spec = jacobian_fd(p, controller, step=step)
        except NonSmoothNeighborhood:
            # shrink the stencil once and retry before giving up
            try:
                spec = jacobian_fd(p, controller, step=step / 100.0)
                entry["note"] = "non-smooth neighborhood; step shrunk and retried"
            except NonSmoothNeighborhood:
                entry["error"] = "non-smooth neighborhood at the requested point"
                entries.append(entry)
                continue
        entry["eig_ambient"] = [float(np.real(v)) for v in spec.eig_ambient]
        entry["eig_tangent"] = [float(np.real(v)) for v in spec.eig_tangent]
        if label in ("target", "antipode"):
            entry["reference"] = _expected_spectrum_note(sc, label)
        entries.append(entry)
    return {"scenario": sc.name, "step": step, "spectra": entries}
