"""Command-line entry point: ``censored-dm simulate|fit|report``.

All three subcommands read one JSON configuration file; relative paths in it
are resolved against the file's directory. Exit codes: 0 success, 1 I/O
failure, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import pickle
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import io
from .data_model import decluster
from .dm_core import DmParams
from .errors import DomainError, NumericalError
from .experiments.diagnostics import dm_functionals, heidelberger_welch, psrf
from .experiments.scoring import predictive_angular_density, return_level_band, score_sample
from .experiments.simulation import SimulationConfig, apply_censoring, simulate_dataset, synthetic_pattern
from .independent import fit_independent
from .margins import MarginParams
from .sampler import Chain, McmcConfig, PriorConfig, prepare_data, record_params, run_chain

log = logging.getLogger("censored_dm")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
OBSERVATIONS, TRUTH, PATTERN = "observations.csv", "truth.json", "pattern.csv"
STAGE_SIMULATE, STAGE_FIT, STAGE_REPORT = 0, 1, 2


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class Stations:
    threshold: np.ndarray
    zeta: np.ndarray
    per_station_shape: bool = False

    @property
    def d(self) -> int:
        return len(self.threshold)

    def template(self) -> MarginParams:
        shape = np.zeros(self.d) if self.per_station_shape else 0.0
        return MarginParams(np.zeros(self.d), shape, self.zeta, self.threshold, self.per_station_shape)


@dataclass
class RunConfig:
    raw: dict
    base: Path
    output: Path
    seed: int
    chains: int

    def section(self, name: str) -> dict:
        sec = self.raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"'{name}' must be an object")
        return sec

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def stations(self) -> Stations:
        sec = self.section("stations")
        try:
            st = Stations(
                np.asarray(sec["threshold"], dtype=float),
                np.asarray(sec["zeta"], dtype=float),
                bool(sec.get("per_station_shape", False)),
            )
            st.template()
        except KeyError as e:
            raise ConfigError(f"stations: missing key {e}") from None
        except (DomainError, ValueError, TypeError) as e:
            raise ConfigError(f"stations: {e}") from None
        return st

    def mcmc(self, iterations: int | None) -> McmcConfig:
        sec = dict(self.section("fit").get("mcmc", {}))
        if iterations is not None:
            sec["iterations"] = iterations
        try:
            return McmcConfig.from_dict(sec)
        except (DomainError, TypeError, KeyError) as e:
            raise ConfigError(f"fit.mcmc: {e}") from None

    def priors(self) -> PriorConfig:
        sec = self.section("fit").get("prior", {})
        known = {f.name for f in fields(PriorConfig)}
        if set(sec) - known:
            raise ConfigError(f"fit.prior: unknown keys {sorted(set(sec) - known)}")
        try:
            return PriorConfig(**sec)
        except (DomainError, TypeError) as e:
            raise ConfigError(f"fit.prior: {e}") from None

    def data_path(self) -> Path:
        return self.path(self.raw["data"]) if "data" in self.raw else self.output / OBSERVATIONS


def load_config(path, seed=None, chains=None, output=None) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"configuration file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    if chains is not None:
        raw.setdefault("fit", {})["chains"] = chains
    if output is not None:
        raw["output"] = str(Path(output).resolve())
    if "seed" not in raw or not isinstance(raw["seed"], int) or raw["seed"] < 0:
        raise ConfigError("an explicit non-negative integer 'seed' is required")
    if "output" not in raw:
        raise ConfigError("an 'output' directory is required")
    base = path.resolve().parent
    out = Path(raw["output"])
    out = out if out.is_absolute() else base / out
    n_chains = raw.get("fit", {}).get("chains", 1)
    if not isinstance(n_chains, int) or n_chains < 1:
        raise ConfigError("fit.chains must be a positive integer")
    return RunConfig(raw, base, out, raw["seed"], n_chains)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def _psi_from(data, where: str) -> DmParams:
    try:
        return DmParams.from_dict(data)
    except (KeyError, DomainError, ValueError, TypeError) as e:
        raise ConfigError(f"{where}: {e}") from None


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    st = cfg.stations()
    sec = cfg.section("simulate")
    try:
        psi = _psi_from(sec["psi"], "simulate.psi")
        chi_sec = sec["chi"]
        chi = MarginParams(chi_sec["log_scale"], chi_sec["shape"], st.zeta, st.threshold, st.per_station_shape)
        sim = SimulationConfig(int(sec["n"]), psi, chi, sec.get("n_eff"))
    except KeyError as e:
        raise ConfigError(f"simulate: missing key {e}") from None
    except (DomainError, ValueError, TypeError) as e:
        raise ConfigError(f"simulate: {e}") from None
    pattern = None
    if "pattern_file" in sec:
        pattern = io.read_pattern(cfg.path(sec["pattern_file"]))
    elif "pattern" in sec:
        p = sec["pattern"]
        try:
            pattern = synthetic_pattern(
                sim.n, chi.u, int(p["n_systematic"]), tuple(p.get("historical_stations", (0,))), float(p.get("historical_bound", 10.0))
            )
        except (KeyError, DomainError) as e:
            raise ConfigError(f"simulate.pattern: {e}") from None
    rng = _rng(cfg.seed, STAGE_SIMULATE)
    obs = simulate_dataset(sim, rng)
    if pattern is not None:
        try:
            obs = apply_censoring(obs, pattern, chi)
        except DomainError as e:
            raise ConfigError(f"censoring pattern: {e}") from None
    cfg.output.mkdir(parents=True, exist_ok=True)
    outputs = [cfg.output / OBSERVATIONS, cfg.output / TRUTH]
    io.write_observations(outputs[0], obs, st.d)
    io.write_truth(outputs[1], psi, chi)
    if pattern is not None:
        outputs.append(cfg.output / PATTERN)
        io.write_pattern(outputs[-1], pattern)
    io.write_manifest(cfg.output / "manifest_simulate.json", "simulate", cfg.raw, {"seed": cfg.seed}, outputs)
    log.info("simulated %d days (%d radial excesses) into %s", len(obs), sim.n_rad_exc, cfg.output)
    return outputs


# --------------------------------------------------------------------- fit


def load_fit_data(cfg: RunConfig, st: Stations):
    path = cfg.data_path()
    if not path.exists():
        raise ConfigError(f"observation file {path} not found")
    obs, d = io.read_observations(path)
    if d != st.d:
        raise DataError(f"{path}: {d} stations but {st.d} thresholds configured")
    lag = cfg.section("fit").get("decluster_lag")
    if lag is not None:
        obs = [c.maxima for c in decluster(obs, st.threshold, int(lag))]
    return obs


@dataclass
class ChainJob:
    index: int
    seed: int
    key: str
    stream: str
    checkpoint: str
    checkpoint_every: int
    observations: list
    stations: Stations
    priors: PriorConfig
    mcmc: McmcConfig
    chi0: MarginParams
    psi0: DmParams
    cov: np.ndarray


def run_chain_job(job: ChainJob) -> int:
    """Run (or resume) one chain, appending records to its stream.

    A checkpoint holds the chain state, its random stream and the stream
    length at that point; resuming truncates anything written after it, so
    an interrupted run continues byte-identically.
    """
    data = prepare_data(job.observations, job.stations.zeta, job.stations.threshold)
    chain = Chain(data, job.priors, job.mcmc, job.chi0, job.psi0, job.cov, _rng(job.seed, STAGE_FIT, job.index))
    offset = 0
    if os.path.exists(job.checkpoint):
        with open(job.checkpoint, "rb") as fh:
            ck = pickle.load(fh)
        if ck["key"] != job.key:
            raise ConfigError(f"{job.checkpoint} belongs to a different configuration; remove it to start over")
        chain.restore(ck["chain"])
        offset = ck["offset"]
    mode = "r+b" if os.path.exists(job.stream) else "wb"
    n = 0
    with open(job.stream, mode) as fh:
        fh.truncate(offset)
        fh.seek(offset)
        for rec in run_chain(chain):
            fh.write(io.dump_record(rec).encode())
            n += 1
            it = chain.state.iteration
            if it > 0 and (n % job.checkpoint_every == 0 or it >= job.mcmc.iterations):
                fh.flush()
                os.fsync(fh.fileno())
                blob = pickle.dumps({"key": job.key, "chain": chain.snapshot(), "offset": fh.tell()})
                io.atomic_write_bytes(job.checkpoint, blob)
    return chain.state.iteration


def _chain_key(cfg: RunConfig, mcmc: McmcConfig, data_path: Path, index: int) -> str:
    # the iteration count is left out so that finished chains can be extended
    fit = dict(cfg.section("fit"))
    fit.pop("chains", None)
    fit["mcmc"] = {k: v for k, v in mcmc.to_dict().items() if k != "iterations"}
    return io.config_hash({"fit": fit, "stations": cfg.raw.get("stations"), "seed": cfg.seed, "chain": index, "data": io.file_hash(data_path)})


def cmd_fit(cfg: RunConfig, iterations: int | None = None) -> list[Path]:
    st = cfg.stations()
    mcmc = cfg.mcmc(iterations)
    priors = cfg.priors()
    sec = cfg.section("fit")
    every = sec.get("checkpoint_every", 100)
    if not isinstance(every, int) or every < 1:
        raise ConfigError("fit.checkpoint_every must be a positive integer")
    obs = load_fit_data(cfg, st)
    data = prepare_data(obs, st.zeta, st.threshold)
    if data.n_above == 0:
        raise DataError(
            f"no record lies determinately above the thresholds ({data.n_obs} usable records, "
            f"{data.n_below} below): the dependence model cannot be fitted; lower the thresholds"
        )
    try:
        pre = fit_independent(obs, st.zeta, st.threshold, st.per_station_shape)
    except DomainError as e:
        raise DataError(str(e)) from None
    psi0 = _psi_from(sec["init_psi"], "fit.init_psi") if "init_psi" in sec else DmParams.single(st.d, float(np.exp(priors.nu_mean_log)))
    if psi0.d != st.d:
        raise ConfigError("fit.init_psi dimension does not match the stations")
    cov = np.asarray(sec["marginal_cov"], dtype=float) if "marginal_cov" in sec else pre.cov
    cfg.output.mkdir(parents=True, exist_ok=True)
    io.atomic_write_text(
        cfg.output / "preliminary.json",
        json.dumps({"chi": pre.chi.to_dict(), "cov": pre.cov.tolist(), "converged": pre.converged}, indent=1, sort_keys=True) + "\n",
    )
    data_path = cfg.data_path()
    jobs = [
        ChainJob(
            c, cfg.seed, _chain_key(cfg, mcmc, data_path, c),
            str(cfg.output / f"chain_{c}.jsonl"), str(cfg.output / f"chain_{c}.ckpt"), every,
            obs, st, priors, mcmc, pre.chi, psi0, cov,
        )
        for c in range(cfg.chains)
    ]
    if len(jobs) == 1:
        run_chain_job(jobs[0])
    else:
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            list(pool.map(run_chain_job, jobs))
    outputs = [Path(j.stream) for j in jobs]
    seeds = {"seed": cfg.seed, "chains": [[cfg.seed, STAGE_FIT, c] for c in range(cfg.chains)]}
    io.write_manifest(cfg.output / "manifest_fit.json", "fit", cfg.raw, seeds, outputs + [cfg.output / "preliminary.json"])
    log.info("fitted %d chain(s) of %d iterations into %s", cfg.chains, mcmc.iterations, cfg.output)
    return outputs


# ------------------------------------------------------------------ report


def _thin_evenly(items: list, n: int) -> list:
    if len(items) <= n:
        return items
    idx = np.round(np.linspace(0, len(items) - 1, n)).astype(int)
    return [items[i] for i in idx]


def _series(records: list, template: MarginParams) -> dict:
    out: dict[str, list] = {}
    for rec in records:
        chi, psi = record_params(rec, template)
        vals = {f"log_scale_{j + 1}": chi.log_scale[j] for j in range(chi.d)}
        for j, x in enumerate(np.atleast_1d(chi.shape)):
            vals[f"shape_{j + 1}"] = x
        for b, x in enumerate(dm_functionals(psi)):
            vals[f"dm_functional_{b + 1}"] = x
        for k, v in vals.items():
            out.setdefault(k, []).append(float(v))
    return out


def cmd_report(cfg: RunConfig) -> list[Path]:
    st = cfg.stations()
    template = st.template()
    mcmc = cfg.mcmc(None)
    sec = cfg.section("report")
    streams = sorted(cfg.output.glob("chain_*.jsonl"), key=lambda p: int(p.stem.split("_")[1]))
    if not streams:
        raise ConfigError(f"no chain files in {cfg.output}")
    burn = int(sec.get("burn_in", mcmc.burn))
    level = float(sec.get("stationarity_level", 1e-4))
    chains = []
    for p in streams:
        recs = [r for r in io.read_records(p) if r["iteration"] > burn]
        if recs:
            chains.append(recs)
    if not chains:
        raise DataError(f"no records after the burn-in of {burn} iterations")
    report: dict = {"burn_in": burn, "chains": [len(c) for c in chains], "warnings": []}
    outputs = []

    # convergence
    series = [_series(c, template) for c in chains]
    diag: dict = {"stationarity": {}, "psrf": {}}
    for name in series[0]:
        diag["stationarity"][name] = []
        for s in series:
            if len(s[name]) >= 100:
                r = heidelberger_welch(s[name], level)
                diag["stationarity"][name].append({"passed": r.passed, "start": r.start, "statistic": r.statistic, "p_value": r.p_value})
            else:
                diag["stationarity"][name].append(None)
    if len(series) < 2:
        report["warnings"].append("fewer than 2 chains: PSRF section skipped")
        log.warning("fewer than 2 chains: PSRF section skipped")
    else:
        n = min(len(c) for c in chains)
        if n < 10:
            report["warnings"].append("chains too short for PSRF")
        else:
            for name in series[0]:
                diag["psrf"][name] = psrf([s[name][-n:] for s in series])
    report["diagnostics"] = diag

    pooled = [r for c in chains for r in c]
    draws = [record_params(r, template) for r in _thin_evenly(pooled, int(sec.get("max_draws", 500)))]
    shapes = np.array([np.atleast_1d(chi.shape) for chi, _ in draws])
    report["shape"] = {
        "mean": shapes.mean(axis=0).tolist(),
        "q05": np.quantile(shapes, 0.05, axis=0).tolist(),
        "q95": np.quantile(shapes, 0.95, axis=0).tolist(),
    }
    report["k_frequencies"] = {str(k): int(v) for k, v in zip(*np.unique([r["k"] for r in pooled], return_counts=True))}

    # return levels; the T = 1/zeta row is the threshold itself
    per_year = int(sec.get("obs_per_year", 365))
    years = np.asarray(sec.get("periods_years", [1, 2, 5, 10, 20, 50, 100]), dtype=float)
    chis = [chi for chi, _ in draws]
    for j in range(st.d):
        periods = np.concatenate([[1.0 / st.zeta[j]], years * per_year])
        mean, q05, q95 = return_level_band(chis, j, periods)
        path = cfg.output / f"return_levels_{j + 1}.tsv"
        io.write_table(path, {"period": periods, "years": periods / per_year, "mean": mean, "q05": q05, "q95": q95})
        outputs.append(path)

    # bivariate angular densities
    grid = np.linspace(0, 1, int(sec.get("grid", 99)) + 2)[1:-1]
    psis = [psi for _, psi in draws]
    for i in range(st.d):
        for j in range(i + 1, st.d):
            mean, q05, q95 = predictive_angular_density(psis, (i, j), grid)
            path = cfg.output / f"angular_{i + 1}_{j + 1}.tsv"
            io.write_table(path, {"w": grid, "mean": mean, "q05": q05, "q95": q95})
            outputs.append(path)

    truth_path = cfg.path(sec["truth"]) if "truth" in sec else cfg.data_path().parent / TRUTH
    if truth_path.exists():
        psi_t, chi_t = io.read_truth(truth_path)
        period = float(sec.get("score_period_years", 10)) * per_year
        rng = _rng(cfg.seed, STAGE_REPORT)
        scores = score_sample(draws, chi_t, psi_t, period, rng, int(sec.get("n_angles", 20_000)))
        report["scores"] = {"period": period, **scores.to_dict()}
        xi_t = np.atleast_1d(chi_t.shape)
        report["shape"]["true"] = xi_t.tolist()
        report["shape"]["covered"] = [bool(lo <= t <= hi) for lo, t, hi in zip(report["shape"]["q05"], xi_t, report["shape"]["q95"])]
    else:
        report["warnings"].append("no truth sidecar: scores omitted")

    path = cfg.output / "report.json"
    io.atomic_write_text(path, json.dumps(report, indent=1, sort_keys=True) + "\n")
    outputs.append(path)
    io.write_manifest(cfg.output / "manifest_report.json", "report", cfg.raw, {"seed": cfg.seed, "report": [cfg.seed, STAGE_REPORT]}, outputs)
    return outputs


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="censored-dm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate", "simulate a censored data set and its truth sidecar"),
        ("fit", "run the Markov chains (resumable)"),
        ("report", "diagnostics, scores and predictive tables"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--chains", type=int, help="override the number of chains")
        p.add_argument("--iterations", type=int, help="override the number of iterations")
        p.add_argument("--output", help="override the output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.chains, args.output)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "fit":
            cmd_fit(cfg, args.iterations)
        else:
            if args.iterations is not None:
                cfg.raw.setdefault("fit", {}).setdefault("mcmc", {})["iterations"] = args.iterations
            cmd_report(cfg)
    except ConfigError as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    except (DataError, DomainError) as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except NumericalError as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    except OSError as e:
        log.error("I/O error: %s", e)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
