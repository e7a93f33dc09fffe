"""Certificate assembly, grid sweeps, complexity, and Pareto fronts.

A certificate packages every input and output of the bound evaluation for
one (posterior family, beta, lambda) cell so that re-running the assembly
from the recorded fields reproduces the bound bitwise.

The bound's beta also sets the curvature/KL trade-off for the closed-form
families through the weight 1/(beta n), under which the quadratic
objective is the second-order expansion of the bound surrogate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from pbcert.curvature import CurvatureEstimate
from pbcert.gaussians import (
    DiagGaussian,
    catoni_inv,
    chernoff_gap,
    kl_block,
    kl_diag,
    sample_gaussian,
    union_bound_nats,
)
from pbcert.nnet import NetSpec, forward, loss
from pbcert.posteriors import (
    FAMILIES,
    closed_form_posterior,
    isotropic_posterior,
    joint_optimal_diag,
    skfac_posterior,
    vi_optimize_diag,
)
from pbcert.rng import child_seed

CSV_SCHEMA_VERSION = "1"

CERT_COLUMNS = [
    "schema_version", "family", "beta", "lambda", "n", "m",
    "delta", "delta_prime", "b", "c", "risk_mc", "kl_nats",
    "union_bound_nats", "chernoff_gap", "bound_value",
    "beta_star", "complexity", "validity", "seed",
]

PARETO_COLUMNS = [
    "schema_version", "family", "risk_mc", "complexity",
    "beta", "lambda", "validity", "seed",
]


@dataclass
class BoundCertificate:
    family: str
    beta: float
    lam: float
    n: int
    m: int
    delta: float
    delta_prime: float
    b: float
    c: float
    risk_mc: float
    kl_nats: float
    union_bound_nats: float
    chernoff_gap: float
    bound_value: float
    beta_star: float
    complexity: float
    valid_prior: bool
    seed: int


@dataclass(frozen=True)
class ParetoPoint:
    x: float                 # MC empirical 01-risk
    y: float                 # complexity
    family: str = ""
    beta: float = float("nan")
    lam: float = float("nan")
    seed: int = 0
    valid_prior: bool = True

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0):
            raise ValueError(f"x must lie in [0, 1], got {self.x}")
        if self.y < 0:
            raise ValueError(f"y must be nonnegative, got {self.y}")


def mc_empirical_risk(posterior, spec: NetSpec, data, m: int, seed: int):
    """Mean 01-error over m independent posterior draws.

    Per-draw errors are returned for dispersion diagnostics; draws use
    per-index derived seeds so the estimate is scheduling-independent.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    X, y = np.asarray(data.X), np.asarray(data.y)
    errors = np.empty(m)
    for j in range(m):
        theta = sample_gaussian(posterior, child_seed(seed, "mc", j))
        errors[j] = loss("zero_one", forward(spec, theta, X).outputs, y)
    return float(errors.mean()), errors


def complexity_metric(risk_mc: float, kl_nats: float, beta_star: float,
                      n: int) -> float:
    """Catoni complexity at the optimal beta, penalty terms excluded."""
    return catoni_inv(beta_star, risk_mc + kl_nats / (beta_star * n)) - risk_mc


def assemble_bound(family: str, risk_mc: float, kl_nats: float, beta: float,
                   lam: float, n: int, m: int, delta: float,
                   delta_prime: float, b: float, c: float,
                   valid_prior: bool = True, seed: int = 0) -> BoundCertificate:
    """Evaluate the full valid bound for one cell; confidence 1 - delta - delta'."""
    if not (0.0 <= risk_mc <= 1.0):
        raise ValueError("risk_mc must lie in [0, 1]")
    union = union_bound_nats(lam, b, c, delta)
    gap = chernoff_gap(m, delta_prime)
    inner = risk_mc + kl_nats / (beta * n) + union / (beta * n) + gap
    bound = min(1.0, catoni_inv(beta, inner))
    return BoundCertificate(
        family=family, beta=beta, lam=lam, n=n, m=m, delta=delta,
        delta_prime=delta_prime, b=b, c=c, risk_mc=risk_mc, kl_nats=kl_nats,
        union_bound_nats=union, chernoff_gap=gap, bound_value=bound,
        beta_star=beta,
        complexity=complexity_metric(risk_mc, kl_nats, beta, n),
        valid_prior=valid_prior, seed=seed,
    )


@dataclass
class GridContext:
    """Everything a family needs to build posteriors and evaluate cells."""

    spec: NetSpec
    theta_star: np.ndarray
    theta0: np.ndarray
    data: object
    m: int = 100
    delta: float = 0.025
    delta_prime: float = 0.025
    b: float = 100.0
    c: float = 1.0
    seed: int = 0
    fisher: CurvatureEstimate = None
    blocks: CurvatureEstimate = None
    vi_epochs: int = 5
    vi_batch_size: int = 100
    vi_lr: float = 0.1

    @property
    def n(self) -> int:
        return np.asarray(self.data.X).shape[0]


def build_posterior(family: str, beta: float, lam: float, ctx: GridContext,
                    cell_seed: int):
    """Posterior, its KL against the family's prior, and prior validity."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    theta_star, theta0 = ctx.theta_star, ctx.theta0
    if family in ("iso-zero", "iso-init"):
        center = np.zeros_like(theta_star) if family == "iso-zero" else theta0
        posterior, prior = isotropic_posterior(theta_star, center, lam)
        return posterior, kl_diag(posterior, prior), True
    beta_obj = 1.0 / (beta * ctx.n)
    if family == "closed-diag":
        if ctx.fisher is None:
            raise ValueError("closed-diag requires a diagonal Fisher estimate")
        sigma = closed_form_posterior(ctx.fisher.diag_fisher, beta_obj, lam)
        posterior = DiagGaussian.from_variance(theta_star, sigma)
        prior = DiagGaussian.isotropic(theta0, lam)
        return posterior, kl_diag(posterior, prior), True
    if family == "closed-joint":
        if ctx.fisher is None:
            raise ValueError("closed-joint requires a diagonal Fisher estimate")
        res = joint_optimal_diag(ctx.fisher.fisher_floored(), beta_obj, lam,
                                 theta_star, theta0)
        posterior = DiagGaussian.from_variance(theta_star, res.sigma_rho)
        prior = DiagGaussian.from_variance(theta0, lam * res.sigma_pi)
        return posterior, kl_diag(posterior, prior), False
    if family == "vi-diag":
        vi = vi_optimize_diag(ctx.spec, theta_star, theta0, ctx.data, beta,
                              lam, ctx.vi_epochs, cell_seed,
                              batch_size=ctx.vi_batch_size, lr=ctx.vi_lr,
                              delta=ctx.delta)
        prior = DiagGaussian.isotropic(theta0, lam)
        return vi.posterior, kl_diag(vi.posterior, prior), True
    # skfac-block
    if ctx.blocks is None:
        raise ValueError("skfac-block requires block Hessians")
    posterior = skfac_posterior(ctx.spec, theta_star, ctx.blocks, beta_obj, lam)
    return posterior, kl_block(posterior, theta0, lam), True


@dataclass
class GridResult:
    certificates: list
    failures: list = field(default_factory=list)   # (beta, lam, message)


def grid_search(family: str, beta_grid, lambda_grid, ctx: GridContext) -> GridResult:
    """One certificate per (beta, lambda) cell.

    Cells are independent and replayable: each derives its own seed from
    (master seed, family, cell index).  Per-cell failures are recorded and
    the sweep continues.  After the sweep, each lambda column's optimal
    beta (argmin bound) is applied to the complexity of its cells.
    """
    beta_grid = [float(b) for b in beta_grid]
    lambda_grid = [float(lam) for lam in lambda_grid]
    certs = []
    failures = []
    for j, lam in enumerate(lambda_grid):
        for i, beta in enumerate(beta_grid):
            cell_seed = child_seed(ctx.seed, family, i, j)
            try:
                posterior, kl, valid = build_posterior(family, beta, lam, ctx,
                                                       cell_seed)
                risk, _ = mc_empirical_risk(posterior, ctx.spec, ctx.data,
                                            ctx.m, cell_seed)
                certs.append(assemble_bound(
                    family, risk, kl, beta, lam, ctx.n, ctx.m, ctx.delta,
                    ctx.delta_prime, ctx.b, ctx.c, valid_prior=valid,
                    seed=cell_seed,
                ))
            except Exception as exc:   # noqa: BLE001 - sweep must continue
                failures.append((beta, lam, f"{type(exc).__name__}: {exc}"))
    # per-lambda optimal beta, then recompute complexities
    for lam in lambda_grid:
        column = [cert for cert in certs if cert.lam == lam]
        if not column:
            continue
        best = min(column, key=lambda cert: cert.bound_value)
        for cert in column:
            cert.beta_star = best.beta
            cert.complexity = complexity_metric(cert.risk_mc, cert.kl_nats,
                                                best.beta, cert.n)
    return GridResult(certificates=certs, failures=failures)


def pareto_front(points) -> list:
    """Non-dominated subset minimizing both coordinates, x ascending.

    Exact duplicates are kept; a point is removed only when another point
    is at least as good in both coordinates and strictly better in one.
    """
    ordered = sorted(points, key=lambda p: (p.x, p.y))
    front = []
    best_y = math.inf
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].x == ordered[i].x:
            j += 1
        group_min = ordered[i].y
        if group_min < best_y:
            front.extend(p for p in ordered[i:j] if p.y == group_min)
            best_y = group_min
        i = j
    return front


def certificates_to_points(certs) -> list:
    return [
        ParetoPoint(x=cert.risk_mc, y=cert.complexity, family=cert.family,
                    beta=cert.beta, lam=cert.lam, seed=cert.seed,
                    valid_prior=cert.valid_prior)
        for cert in certs
    ]


def reference_star(record, train_data, test_data) -> ParetoPoint:
    """Complexity a perfect bound would need for the bound to equal the
    test error: (train 01-error, max(0, test - train)).  An interpretation
    of the ideal-bound marker, labeled as such in outputs."""
    if test_data is None:
        raise ValueError("test split required for the reference star")
    train_err = loss("zero_one",
                     forward(record.spec, record.theta_star,
                             np.asarray(train_data.X)).outputs,
                     np.asarray(train_data.y))
    test_err = loss("zero_one",
                    forward(record.spec, record.theta_star,
                            np.asarray(test_data.X)).outputs,
                    np.asarray(test_data.y))
    return ParetoPoint(x=train_err, y=max(0.0, test_err - train_err),
                       family="reference", seed=record.seed)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_certificates_csv(path, certs) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CERT_COLUMNS)
        for cert in certs:
            writer.writerow([
                CSV_SCHEMA_VERSION, cert.family, _fmt(cert.beta),
                _fmt(cert.lam), cert.n, cert.m, _fmt(cert.delta),
                _fmt(cert.delta_prime), _fmt(cert.b), _fmt(cert.c),
                _fmt(cert.risk_mc), _fmt(cert.kl_nats),
                _fmt(cert.union_bound_nats), _fmt(cert.chernoff_gap),
                _fmt(cert.bound_value), _fmt(cert.beta_star),
                _fmt(cert.complexity),
                "valid" if cert.valid_prior else "invalid-prior",
                cert.seed,
            ])


def read_certificates_csv(path) -> list:
    certs = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or reader.fieldnames[0] != "schema_version":
            raise ValueError(f"{path}: missing schema_version header")
        for row in reader:
            certs.append(BoundCertificate(
                family=row["family"], beta=float(row["beta"]),
                lam=float(row["lambda"]), n=int(row["n"]), m=int(row["m"]),
                delta=float(row["delta"]), delta_prime=float(row["delta_prime"]),
                b=float(row["b"]), c=float(row["c"]),
                risk_mc=float(row["risk_mc"]), kl_nats=float(row["kl_nats"]),
                union_bound_nats=float(row["union_bound_nats"]),
                chernoff_gap=float(row["chernoff_gap"]),
                bound_value=float(row["bound_value"]),
                beta_star=float(row["beta_star"]),
                complexity=float(row["complexity"]),
                valid_prior=row["validity"] == "valid",
                seed=int(row["seed"]),
            ))
    return certs


def write_pareto_csv(path, fronts: dict) -> None:
    """fronts maps family name -> list of ParetoPoint."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(PARETO_COLUMNS)
        for family in sorted(fronts):
            for p in fronts[family]:
                writer.writerow([
                    CSV_SCHEMA_VERSION, family, _fmt(p.x), _fmt(p.y),
                    _fmt(p.beta), _fmt(p.lam),
                    "valid" if p.valid_prior else "invalid-prior", p.seed,
                ])
