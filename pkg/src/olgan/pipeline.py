"""Experiment stages: data generation, training, inversion, metrics, reports.

Every stage reads and writes inside ``cfg.out``:

    data/, data_test/          dataset bundles (train / held-out test)
    generator/, critic/        checkpoints (model.json + weights.bin)
    history.csv, train.json    training record
    inversion/                 observation.csv, map.json, chain.csv,
                               pushforward.csv, posterior.json
    metrics.json, w1_table.csv, spectrum.csv
    plots/                     plot-ready CSV series
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pde
from .config import stream
from .generators import (
    Standardizer,
    SurrogateConfig,
    build_generator,
    compute_pod,
    fit_trunk_surrogates,
    generator_from_state,
    generator_state,
)
from .inference import (
    NoiseModel,
    Observation,
    map_estimate,
    mh_sample,
    posterior_stats,
    push_forward,
)
from .io import DatasetBundle, load_checkpoint, read_csv, save_checkpoint, write_csv
from .metrics import r_squared, relative_l2, w1_table
from .random_fields import SquaredExpKernel, build_kle, lhs_sample, sample_gp
from .wgan import init_critic, spectrum_diagnostic, train

log = logging.getLogger(__name__)

PARAM_NAMES_CASE1 = ["c1", "c2", "c3"]


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(message)
        self.stage = stage


def _seed_int(seed, name):
    return int(stream(seed, name).integers(2**63 - 1))


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, obj):
    # strict JSON: non-finite numbers become null
    text = json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def _read_json(path):
    return json.loads(Path(path).read_text())


def _echo(cfg):
    # The output directory is left out so artifacts do not depend on where they live.
    conf = cfg.to_dict()
    conf.pop("out")
    return {"config": conf, "seed": cfg.seed}


# -- data -------------------------------------------------------------------
def case1_samples(params, sensors, grid=33):
    return np.array([pde.interp_sensors(pde.solve_poisson(pde.PoissonProblem(*p, n=grid)), sensors) for p in params])


def case3_solve(source, dc):
    problem = pde.DiffusionReactionProblem(
        source, None, dc.diffusion, dc.reaction, dc.fine_nx, dc.fine_nt
    )
    return pde.solve_diffusion_reaction(problem)


def case3_coords(n):
    ax = np.linspace(0.0, 1.0, n)
    X, T = np.meshgrid(ax, ax, indexing="ij")
    return np.column_stack([X.ravel(), T.ravel()])


def gen_data(cfg):
    """Build the training and held-out test bundles for ``cfg.case``."""
    dc = cfg.data
    if cfg.case == "custom":
        train_b = DatasetBundle.load(dc.dataset_dir)
        test_dir = Path(str(dc.dataset_dir).rstrip("/") + "_test")
        test_b = DatasetBundle.load(test_dir) if test_dir.exists() else train_b.subset(slice(0, 1))
        return train_b, test_b

    meta = {"case": cfg.case, **_echo(cfg)}
    if cfg.case == "case1":
        sensors = pde.uniform_sensors(dc.sensors_per_axis, dc.sensor_lo, dc.sensor_hi)
        params = lhs_sample(dc.n_samples, pde.PARAM_BOUNDS, stream(cfg.seed, "data"))
        test_params = np.vstack(
            [pde.TRUTH_PARAMS, lhs_sample(dc.n_test, pde.PARAM_BOUNDS, stream(cfg.seed, "test"))]
        ) if dc.n_test else np.atleast_2d(pde.TRUTH_PARAMS)
        meta.update(
            param_names=PARAM_NAMES_CASE1,
            coord_names=["x", "y"],
            field_names=["source_params", "temperature"],
            provenance="LHS source parameters; 5-point FD Poisson solve; bilinear sensor interpolation",
        )
        train_b = DatasetBundle(params, case1_samples(params, sensors, dc.grid), sensors.coords, dict(meta))
        test_b = DatasetBundle(test_params, case1_samples(test_params, sensors, dc.grid), sensors.coords, dict(meta))
        return train_b, test_b

    xs = np.linspace(0.0, 1.0, dc.n_source)
    basis = build_kle(SquaredExpKernel(dc.lengthscale, dc.gp_variance), xs, dc.kle_energy)
    coords = case3_coords(dc.coarse)

    def responses(sources):
        return np.array([case3_solve(u, dc).resample(dc.coarse, dc.coarse).ravel() for u in sources])

    sources = sample_gp(basis, stream(cfg.seed, "data"), n=dc.n_samples)
    test_sources = sample_gp(basis, stream(cfg.seed, "test"), n=max(dc.n_test, 1))
    meta.update(
        param_names=[f"u{k}" for k in range(dc.n_source)],
        coord_names=["x", "t"],
        field_names=["source", "concentration"],
        kle_modes=basis.n_modes,
        kle_energy=basis.energy,
        provenance="GP sources via truncated KLE; Crank-Nicolson/Newton solve; linear resampling",
    )
    train_b = DatasetBundle(sources, responses(sources), coords, dict(meta), xs)
    test_b = DatasetBundle(test_sources, responses(test_sources), coords, dict(meta), xs)
    return train_b, test_b


def _atomic_save(bundle, directory):
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        bundle.save(tmp)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if directory.exists():
        shutil.rmtree(directory)
    tmp.rename(directory)


def run_gen_data(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        train_b, test_b = gen_data(cfg)
    except Exception as exc:
        raise StageError("gen-data", str(exc)) from exc
    _atomic_save(train_b, out / "data")
    _atomic_save(test_b, out / "data_test")
    return train_b, test_b


def load_data(cfg):
    out = Path(cfg.out)
    return DatasetBundle.load(out / "data"), DatasetBundle.load(out / "data_test")


# -- training ---------------------------------------------------------------
def make_generator(cfg, dataset):
    gc = cfg.generator
    per_dim_m = gc.param_kind == "param"
    scaler = Standardizer.fit(dataset.params, dataset.responses, m_per_dim=per_dim_m, d_per_dim=False)
    m_std, d_std = scaler.to_std(dataset.params, dataset.responses)
    sur_cfg = SurrogateConfig(
        lr=gc.surrogate_lr,
        max_iters=gc.surrogate_iters,
        threshold=gc.surrogate_threshold,
        seed=_seed_int(cfg.seed, "init"),
    )
    d_sur = m_sur = None
    if gc.response_kind == "pod":
        d_sur = fit_trunk_surrogates(compute_pod(d_std, gc.p, dataset.coords), dataset.coords, sur_cfg)
    if gc.param_kind == "pod":
        m_sur = fit_trunk_surrogates(compute_pod(m_std, gc.p, dataset.param_coords), dataset.param_coords, sur_cfg)
    gen = build_generator(
        gc.latent_dim,
        dataset.n_m,
        dataset.coords,
        stream(cfg.seed, "init"),
        scaler,
        response_kind=gc.response_kind,
        param_kind=gc.param_kind,
        response_surrogate=d_sur,
        param_surrogate=m_sur,
        param_coords=dataset.param_coords,
        n_responses=dataset.n_d,
        param_activation=gc.param_activation,
        p=gc.p,
    )
    gen.field_names = tuple(dataset.meta.get("field_names", ("m", "d")))
    gen.meta = {
        "n_m": dataset.n_m,
        "n_d": dataset.n_d,
        "param_names": dataset.meta.get("param_names"),
        "surrogate_mse": {
            "response": None if d_sur is None else d_sur.mse,
            "param": None if m_sur is None else m_sur.mse,
        },
    }
    return gen


def save_generator(gen, directory):
    meta, arrays = generator_state(gen)
    save_checkpoint(directory, meta, arrays)


def load_generator(directory):
    meta, arrays = load_checkpoint(directory)
    return generator_from_state(meta, arrays)


def run_train(cfg, dataset=None):
    out = Path(cfg.out)
    if dataset is None:
        dataset = DatasetBundle.load(out / "data")
    gen = make_generator(cfg, dataset)
    critic = init_critic(dataset.n_m + dataset.n_d, stream(cfg.seed, "init"), cfg.train.critic_hidden)
    tcfg = replace(cfg.train, seed=_seed_int(cfg.seed, "train"))

    def checkpoint(epoch, hist):
        save_generator(gen, out / "generator")
        save_checkpoint(out / "critic", {"model": "critic", "epoch": epoch, "sizes": critic.sizes},
                        {f"W{k}": w for k, w in enumerate(critic.weights)}
                        | {f"b{k}": b for k, b in enumerate(critic.biases)})
        hist.write_csv(out / "history.csv")

    checkpoint(0, train_history_stub(cfg))
    try:
        hist = train(dataset, gen, critic, tcfg, on_checkpoint=checkpoint)
    except Exception as exc:
        raise StageError("train", f"{exc} (last checkpoint kept in {out / 'generator'})") from exc
    _write_json(
        out / "train.json",
        {
            **_echo(cfg),
            "generator_steps": len(hist.gen_loss),
            "critic_steps": len(hist.critic_loss),
            "final_wasserstein_estimate": hist.wasserstein[-1] if hist.wasserstein else None,
            "surrogate_mse": gen.meta["surrogate_mse"],
        },
    )
    return gen, hist


def train_history_stub(cfg):
    from .wgan import TrainHistory

    return TrainHistory(n_critic=cfg.train.n_critic)


# -- inversion ----------------------------------------------------------------
def random_spacetime_sensors(n_x, n_t, rng):
    xs = np.sort(rng.uniform(0.0, 1.0, n_x))
    ts = np.linspace(0.0, 1.0, n_t)
    X, T = np.meshgrid(xs, ts, indexing="ij")
    return np.column_stack([X.ravel(), T.ravel()])


def build_observation(cfg, test, train_coords):
    """Noisy observation of held-out test row ``test_index`` and its truth."""
    ic = cfg.inference
    k = ic.test_index
    truth = test.params[k]
    if ic.sensors == "train":
        coords, clean = test.coords, test.responses[k]
    elif ic.sensors == "random":
        rng = stream(cfg.seed, "sensors")
        if cfg.case == "case1":
            dc = cfg.data
            sensors = pde.random_sensors(ic.n_random_sensors, rng, dc.sensor_lo, dc.sensor_hi, avoid=train_coords)
            field = pde.solve_poisson(pde.PoissonProblem(*truth, n=dc.grid))
            coords, clean = sensors.coords, pde.interp_sensors(field, sensors)
        elif cfg.case == "case3":
            sol = case3_solve(truth, cfg.data)
            coords = random_spacetime_sensors(ic.n_random_sensors, ic.random_time_levels, rng)
            clean = pde.interp_sensors(sol.s, coords, axes=(sol.x, sol.t))
        else:
            raise ValueError("random sensor layouts need a built-in forward solver (case1/case3)")
    else:
        raise ValueError(f"unknown sensor layout {ic.sensors!r}")
    noise = NoiseModel(ic.noise_level, ic.noise_mode)
    obs = Observation.synthesize(coords, clean, noise, stream(cfg.seed, "observation"))
    return obs, truth, clean


def report_grid(coords, n):
    """Regular grid over the bounding box of the training coordinates."""
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def run_invert(cfg, gen=None, test=None, train_coords=None):
    out = Path(cfg.out)
    inv = out / "inversion"
    inv.mkdir(parents=True, exist_ok=True)
    if gen is None:
        gen = load_generator(out / "generator")
    if test is None:
        test = DatasetBundle.load(out / "data_test")
    if train_coords is None:
        train_coords = DatasetBundle.load(out / "data").coords if (out / "data").exists() else test.coords
    ic = cfg.inference
    obs, truth, clean = build_observation(cfg, test, train_coords)
    write_csv(
        inv / "observation.csv",
        np.column_stack([obs.coords, clean, obs.values]),
        [f"x{k}" for k in range(obs.coords.shape[1])] + ["clean", "observed"],
    )
    rng = stream(cfg.seed, "inference")
    mp = map_estimate(obs, gen, ic.map_iters, ic.map_lr, ic.map_starts, rng)
    _write_json(
        inv / "map.json",
        {
            "z_map": mp.z.tolist(),
            "log_posterior": mp.log_post,
            "starts": mp.starts.tolist(),
            "final_log_posterior": mp.final_log_post.tolist(),
        },
    )
    chain = mh_sample(obs, gen, mp.z, ic.n_samples, ic.burn_in, rng, ic.initial_scale, ic.adapt_every)
    nz = gen.latent_dim
    write_csv(
        inv / "chain.csv",
        np.column_stack([chain.samples, chain.accepted.astype(float), chain.log_post]),
        [f"z{k}" for k in range(nz)] + ["accepted", "log_post"],
    )
    pushed = push_forward(chain, gen, obs.coords)
    n_m = test.n_m
    write_csv(
        inv / "pushforward.csv",
        pushed,
        _param_names(test) + [f"d{k}" for k in range(pushed.shape[1] - n_m)],
    )
    summary = posterior_stats(pushed, n_m, truth)
    grid = report_grid(train_coords, ic.report_grid)
    field = posterior_stats(push_forward(chain, gen, grid), n_m)
    write_csv(
        inv / "response_field.csv",
        np.column_stack([grid, field.response_mean, field.response_std]),
        [f"x{k}" for k in range(grid.shape[1])] + ["mean", "std"],
    )
    post = {
        **_echo(cfg),
        "param_names": _param_names(test),
        "summary": summary.as_dict(),
        "acceptance_rate": chain.acceptance_rate,
        "burn_in_acceptance_rate": chain.burn_in_acceptance,
        "proposal_scale": chain.final_scale,
        "n_chain": len(chain),
        "z_map": mp.z.tolist(),
        "observation": {
            "n_sensors": len(obs.values),
            "layout": ic.sensors,
            "sigma": obs.sigma,
            "noise_level": ic.noise_level,
            "noise_mode": ic.noise_mode,
        },
        "response_fit": {
            "relative_l2_vs_clean": relative_l2(summary.response_mean, clean),
            "relative_l2_observed_vs_clean": relative_l2(obs.values, clean),
        },
    }
    if n_m > 1 and np.ptp(truth) > 0:
        post["relative_l2"] = relative_l2(summary.mean, truth)
        post["r_squared"] = r_squared(summary.mean, truth)
    _write_json(inv / "posterior.json", post)
    return {"observation": obs, "map": mp, "chain": chain, "pushed": pushed, "summary": summary, "posterior": post}


def _param_names(bundle):
    return list(bundle.meta.get("param_names") or [f"m{k}" for k in range(bundle.n_m)])


# -- metrics and reports ------------------------------------------------------
def fake_samples(cfg, gen, coords):
    z = stream(cfg.seed, "eval").standard_normal((cfg.inference.n_fake, gen.latent_dim))
    return gen(z, coords)


def run_spectrum(cfg, gen=None, dataset=None):
    out = Path(cfg.out)
    gen = gen or load_generator(out / "generator")
    dataset = dataset or DatasetBundle.load(out / "data")
    _, d_fake = fake_samples(cfg, gen, dataset.coords)
    real, fake = spectrum_diagnostic(dataset.responses, d_fake)
    k = np.arange(1, len(real) + 1)
    write_csv(out / "spectrum.csv", np.column_stack([k, real, fake]), ["component", "real", "fake"])
    return real, fake


def run_metrics(cfg, gen=None, dataset=None):
    out = Path(cfg.out)
    gen = gen or load_generator(out / "generator")
    dataset = dataset or DatasetBundle.load(out / "data")
    post = _read_json(out / "inversion" / "posterior.json")
    m_fake, d_fake = fake_samples(cfg, gen, dataset.coords)
    names = _param_names(dataset)
    w1 = w1_table(dataset.params, m_fake, names)
    with open(out / "w1_table.csv", "w") as fh:
        fh.write("direction,w1\n")
        for n, v in w1.items():
            fh.write(f"{n},{v!r}\n")
    real, fake = spectrum_diagnostic(dataset.responses, d_fake)
    summ = post["summary"]
    mean, truth = np.array(summ["mean"]), np.array(summ["truth"])
    metrics = {
        **_echo(cfg),
        "posterior_mean_relative_error": summ["relative_error"],
        "truth_within_3sigma": summ["within_3sigma"],
        "relative_l2": relative_l2(mean, truth),
        "r_squared": r_squared(mean, truth) if np.ptp(truth) > 0 else None,
        "w1": w1,
        "spectrum": {"real": real[:20].tolist(), "fake": fake[:20].tolist()},
        "acceptance_rate": post["acceptance_rate"],
        "response_fit": post["response_fit"],
    }
    _write_json(out / "metrics.json", metrics)
    return metrics


def run_emit_plots(cfg):
    out = Path(cfg.out)
    inv = out / "inversion"
    plots = out / "plots"
    for need in (inv / "pushforward.csv", inv / "chain.csv", inv / "response_field.csv", out / "spectrum.csv"):
        if not need.exists():
            raise FileNotFoundError(f"missing artifact {need}")
    plots.mkdir(parents=True, exist_ok=True)
    post = _read_json(inv / "posterior.json")
    names = post["param_names"]
    _, pushed = read_csv(inv / "pushforward.csv")
    n_m = len(names)
    n = len(pushed)
    write_csv(
        plots / "posterior_scatter.csv",
        np.column_stack([pushed[:, :n_m], np.full(n, 1.0 / n)]),
        names + ["weight"],
    )
    header, chain = read_csv(inv / "chain.csv")
    write_csv(plots / "chain_trace.csv", np.column_stack([np.arange(len(chain)), chain]), ["step"] + header)
    header, spec = read_csv(out / "spectrum.csv")
    write_csv(plots / "spectrum.csv", spec, header)
    header, field = read_csv(inv / "response_field.csv")
    write_csv(plots / "response_field.csv", field, header)
    summ = post["summary"]
    write_csv(
        plots / "posterior_summary.csv",
        np.column_stack([summ["mean"], summ["std"], summ.get("truth", summ["mean"])]),
        ["mean", "std", "truth"],
    )
    return sorted(p.name for p in plots.iterdir())


def run_pipeline(cfg):
    """gen-data -> train -> invert -> spectrum -> metrics -> emit-plots."""
    train_b, test_b = run_gen_data(cfg)
    gen, _ = run_train(cfg, train_b)
    run_invert(cfg, gen, test_b, train_b.coords)
    run_spectrum(cfg, gen, train_b)
    metrics = run_metrics(cfg, gen, train_b)
    run_emit_plots(cfg)
    return metrics
