"""Command-line pipeline: train both models, simulate, analyze.

Exit codes: 0 success, 1 validation error (bad flags or configuration),
2 runtime error (including a failed gradient check).
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from ndcb import dataio
from ndcb.errors import ConfigurationError, NdcbError


@click.group()
def cli():
    """Non-distortive cancelable biometric template toolkit."""


def _write_jsonl(records, path):
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


@cli.command("train-embedding")
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--epochs", default=20, show_default=True)
@click.option("--margin", default=0.2, show_default=True)
@click.option("--dim", default=10, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--batch-size", default=64, show_default=True)
@click.option("--seed", required=True, type=int)
def train_embedding(data_dir, out, epochs, margin, dim, lr, batch_size, seed):
    """Train the sphere embedder on the MNIST train split."""
    from ndcb.embedder import EmbedTrainConfig, train_embedder

    cfg = EmbedTrainConfig(
        n_dim=dim, margin=margin, learning_rate=lr, batch_size=batch_size,
        epochs=epochs, seed=seed,
    )
    dataset = dataio.load_mnist(data_dir, "train")
    _, params, losses = train_embedder(dataset, cfg)
    dataio.save_weights(params, out)
    _write_jsonl(
        [{"epoch": i, "loss": loss} for i, loss in enumerate(losses)],
        out + ".train.jsonl",
    )
    click.echo(f"embedder -> {out} ({epochs} epochs, final loss "
               f"{losses[-1]:.6f})" if losses else f"embedder -> {out} (0 epochs)")


@cli.command("train-generator")
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--embedder", "embedder_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--alpha", default=0.3, show_default=True)
@click.option("--beta", default=0.9, show_default=True)
@click.option("--dist", default="mse", show_default=True,
              type=click.Choice(["mse", "hamming", "dssim", "sobel", "combined"]))
@click.option("--gamma-c", default=0.5, show_default=True)
@click.option("--epochs", default=20, show_default=True)
@click.option("--batch-size", default=64, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--seed", required=True, type=int)
def train_generator_cmd(data_dir, embedder_path, out, alpha, beta, dist, gamma_c,
                        epochs, batch_size, lr, seed):
    """Train the distortion U-Net against a frozen embedder."""
    from ndcb.embedder import embedder_from_weights
    from ndcb.generator import GenTrainConfig, train_generator

    cfg = GenTrainConfig(
        alpha=alpha, beta=beta, dist=dist, gamma_c=gamma_c,
        batch_size=batch_size, learning_rate=lr, epochs=epochs, seed=seed,
    )
    emb_params = dataio.load_weights(embedder_path)
    emb_network = embedder_from_weights(emb_params)
    dataset = dataio.load_mnist(data_dir, "train")
    _, params, log = train_generator(dataset, emb_network, emb_params, cfg)
    dataio.save_weights(params, out)
    _write_jsonl(log, out + ".train.jsonl")
    if log:
        last = log[-1]
        click.echo(
            f"generator -> {out} (mean d_img {last['d_img']:.4f}, "
            f"mean d_emb {last['d_emb']:.4f})"
        )
    else:
        click.echo(f"generator -> {out} (0 epochs, He init)")


@cli.command("simulate")
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--embedder", "embedder_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--generator", "generator_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", default="no_distortion", show_default=True,
              type=click.Choice(["no_distortion", "with_distortion", "cancelable"]))
@click.option("--registered", default=5, show_default=True)
@click.option("--probes", default=1000, show_default=True)
@click.option("--theta-min", default=0.0, show_default=True)
@click.option("--theta-max", default=4.0, show_default=True)
@click.option("--theta-steps", default=401, show_default=True)
@click.option("--seed", required=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def simulate_cmd(data_dir, embedder_path, generator_path, mode, registered, probes,
                 theta_min, theta_max, theta_steps, seed, out):
    """Enroll, sweep thresholds on the test split, report metrics at theta*."""
    from ndcb.embedder import embedder_from_weights
    from ndcb.generator import generator_from_weights
    from ndcb.simulate import SimConfig, enroll, sweep_threshold

    cfg = SimConfig(
        mode=mode, registered=registered, probes=probes,
        theta_min=theta_min, theta_max=theta_max, theta_steps=theta_steps, seed=seed,
    )
    if mode != "no_distortion" and generator_path is None:
        raise ConfigurationError(f"--mode {mode} requires --generator")

    emb_params = dataio.load_weights(embedder_path)
    emb_network = embedder_from_weights(emb_params)
    gen_network = gen_params = None
    if generator_path is not None:
        gen_params = dataio.load_weights(generator_path)
        gen_network = generator_from_weights(gen_params)

    dataset = dataio.load_mnist(data_dir, "test")
    db = enroll(dataset, cfg, emb_network, emb_params, gen_network, gen_params)
    report, rows = sweep_threshold(
        dataset, db, cfg, emb_network, emb_params, gen_network, gen_params
    )
    dataio.export_metrics_json(report, out)
    sweep_path = out + ".sweep.csv"
    header = "theta,tp,fn,tn,fp,acc,aer"
    lines = [header] + [
        f"{r['theta']!r},{r['tp']},{r['fn']},{r['tn']},{r['fp']},{r['acc']!r},{r['aer']!r}"
        for r in rows
    ]
    Path(sweep_path).write_text("\n".join(lines) + "\n")
    click.echo(
        f"{mode}: Acc {report.accuracy:.3f}  Sp {report.specificity:.3f}  "
        f"NPV {report.npv:.3f}  FPR {report.fpr:.3f}  FNR {report.fnr:.3f}  "
        f"AER {report.aer:.3f}  (theta*={report.theta_star:.3f})"
    )


@cli.command("histogram")
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--generator", "generator_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pairs", default=10_000, show_default=True)
@click.option("--bins", default=20, show_default=True)
@click.option("--seed", required=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def histogram_cmd(data_dir, generator_path, pairs, bins, seed, out):
    """Hamming-distance histograms for real/real, real/gen, gen/gen pairs."""
    from ndcb.generator import generator_from_weights
    from ndcb.simulate import SCENARIOS, hamming_histogram

    gen_params = dataio.load_weights(generator_path)
    gen_network = generator_from_weights(gen_params)
    dataset = dataio.load_mnist(data_dir, "test")
    histograms = {}
    for scenario in SCENARIOS:
        h = hamming_histogram(dataset, gen_network, gen_params, scenario, pairs, bins, seed)
        histograms[scenario] = (h.edges, h.counts)
    dataio.export_histogram_csv(histograms, out)
    click.echo(f"histograms -> {out} ({len(SCENARIOS)} scenarios x {bins} bins)")


@cli.command("gradcheck")
@click.option("--seed", default=0, show_default=True, type=int)
def gradcheck_cmd(seed):
    """Finite-difference check of every layer and loss gradient (float64)."""
    from ndcb.nn.gradcheck import TOLERANCE, run_suite

    perturb = os.environ.get("NDCB_GRADCHECK_PERTURB") or None
    reports = run_suite(seed=seed, perturb=perturb)
    worst = max(reports, key=lambda r: r.max_rel_err)
    for rep in reports:
        status = "ok" if rep.passed else "FAIL"
        click.echo(f"{rep.op:<24} max_rel_err {rep.max_rel_err:.3e}  {status}")
    click.echo(
        f"checked {len(reports)} ops; worst {worst.op} at {worst.max_rel_err:.3e} "
        f"(tolerance {TOLERANCE:g})"
    )
    if not all(r.passed for r in reports):
        raise NdcbError(f"gradient check failed: {worst.op} at {worst.max_rel_err:.3e}")


def main():
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Exit as e:
        sys.exit(e.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.UsageError as e:
        e.show()
        sys.exit(1)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except ConfigurationError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    except NdcbError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
