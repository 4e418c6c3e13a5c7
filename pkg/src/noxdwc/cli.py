"""Command-line pipeline: ingest -> features -> fit -> evaluate -> mine, plus sensitivity.

Each command reads its inputs from, and writes its artifacts to, the output
directory, so later stages can be re-run without repeating earlier ones.
"""

from __future__ import annotations

import io
import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__, dwc, metrics, sensitivity
from .config import RunConfig, canonical_json, load_config
from .errors import DataError, MissingArtifactError, NoxDwcError, NumericError
from .features import build_feature_table, read_feature_csv
from .models import TRANSIT_BUS, ModelCoefficients, canonical_model_id, fit_model, predict_series
from .obd_ingest import load_records, write_canonical_csv
from .regression import train_test_mask

logger = logging.getLogger("noxdwc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# artifact -> command that produces it
ARTIFACTS = {
    "manifest.json": "ingest",
    "records.csv": "ingest",
    "features.csv": "features",
    "features.json": "features",
    "coefficients.json": "fit",
    "evaluation.json": "evaluate",
    "scatter.csv": "evaluate",
    "predictions.csv": "evaluate",
    "patterns.json": "mine",
    "sensitivity.json": "sensitivity",
    "sensitivity.csv": "sensitivity",
}


class Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.hash = cfg.hash()

    def provenance(self, command: str) -> dict:
        return {"tool": "noxdwc", "version": __version__, "config_hash": self.hash, "command": command}

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(p, ARTIFACTS[name])
        return p

    def write_json(self, name: str, command: str, payload: dict) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        doc = {"provenance": self.provenance(command), **payload}
        p = self.path(name)
        p.write_text(canonical_json(doc, indent=2) + "\n")
        return p

    def csv_header(self, command: str) -> str:
        return f"noxdwc {__version__} command={command} config_hash={self.hash}"

    def write_frame(self, name: str, command: str, frame: pd.DataFrame) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        buf.write(f"# {self.csv_header(command)}\n")
        frame.to_csv(buf, index=False, lineterminator="\n")
        p = self.path(name)
        p.write_text(buf.getvalue())
        return p

    def write_text(self, name: str, command: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.path(name)
        p.write_text(f"# {self.csv_header(command)}\n{text}")
        return p

    # stages ---------------------------------------------------------------

    def records(self):
        return load_records(self.require("records.csv"), cfg=self.cfg.validity)

    def features(self):
        return read_feature_csv(self.require("features.csv"))

    def mask(self, n: int):
        if self.cfg.split is None:
            return None
        return train_test_mask(n, self.cfg.split, self.cfg.seed)

    def foreign(self) -> ModelCoefficients:
        if self.cfg.foreign_coefficients is not None:
            try:
                return ModelCoefficients.load(self.cfg.foreign_coefficients)
            except FileNotFoundError:
                raise DataError(f"foreign coefficients not found: {self.cfg.foreign_coefficients}") from None
        return TRANSIT_BUS


def cmd_ingest(run: Run) -> dict:
    rs = load_records(run.cfg.dataset, run.cfg.mapping, run.cfg.validity)
    run.out.mkdir(parents=True, exist_ok=True)
    write_canonical_csv(rs, run.path("records.csv"), [run.csv_header("ingest")])
    manifest = rs.manifest()
    manifest["source"] = Path(rs.source).name
    run.write_json("manifest.json", "ingest", {"manifest": manifest})
    return manifest


def cmd_features(run: Run):
    rs = run.records()
    ft = build_feature_table(rs, run.cfg.engine)
    run.write_frame("features.csv", "features", ft.frame)
    summary = {
        "rows": len(ft),
        "present": int(ft.present.sum()),
        "beta_clamped": int(ft.frame["beta_clamped"].sum()),
        "errors": [{"record": i, "message": m} for i, m in ft.errors],
    }
    run.write_json("features.json", "features", {"features": summary})
    return ft


def cmd_fit(run: Run) -> ModelCoefficients:
    ft = run.features()
    model = canonical_model_id(run.cfg.model)
    if model == "model_alt":
        coeffs = run.foreign().with_model("model_alt")
    else:
        coeffs = fit_model(ft, model, run.cfg.engine, run.cfg.max_iter, mask=run.mask(len(ft)))
    run.write_json("coefficients.json", "fit", {
        "coefficients_record": coeffs.to_json_dict(),
        "train_fraction": run.cfg.split,
        "seed": run.cfg.seed,
    })
    return coeffs


def cmd_evaluate(run: Run) -> dict:
    ft = run.features()
    coeffs = ModelCoefficients.load(run.require("coefficients.json"))
    series = predict_series(ft, coeffs, run.cfg.engine)
    present = series.present
    mask = run.mask(len(ft))
    splits = {"all": present}
    if mask is not None:
        splits = {"train": present & mask, "test": present & ~mask}
    reports = {}
    for name, sel in splits.items():
        if sel.sum() >= 2:
            reports[name] = metrics.accuracy(series.predicted[sel], series.observed[sel]).to_dict()
    frame = ft.frame
    preds = pd.DataFrame({
        "timestamp": frame["timestamp"],
        "segment": frame["segment"],
        "predicted_ppm": series.predicted,
        "observed_ppm": series.observed,
        "divergence_ppm": series.divergence,
    })
    scatter = preds.loc[present, ["timestamp", "observed_ppm", "predicted_ppm"]].copy()
    if mask is not None:
        scatter["split"] = np.where(mask[present], "train", "test")
    run.write_frame("predictions.csv", "evaluate", preds)
    run.write_frame("scatter.csv", "evaluate", scatter)
    payload = {"model_id": coeffs.model_id, "coefficients": coeffs.as_dict(), "accuracy": reports}
    run.write_json("evaluation.json", "evaluate", payload)
    return payload


def _read_csv(path: Path) -> pd.DataFrame:
    with open(path) as fh:
        text = "".join(line for line in fh if not line.startswith("#"))
    return pd.read_csv(io.StringIO(text), float_precision="round_trip")


def cmd_mine(run: Run) -> dict:
    rs = run.records()
    preds = _read_csv(run.require("predictions.csv"))
    if len(preds) != len(rs):
        raise DataError("predictions.csv does not align with records.csv; re-run `noxdwc evaluate`")
    p = run.cfg.dwc
    result = dwc.mine(
        rs, preds["divergence_ppm"].to_numpy(dtype=float), p.set_id, p.L, p.threshold, p.minsupp,
        p.epsilon, p.delta, p.mode, p.constant_only, p.edge_correction, p.max_size,
    )
    report = result.report()
    run.write_json("patterns.json", "mine", {"dwc": report})
    return report


def cmd_sensitivity(run: Run) -> sensitivity.SensitivityReport:
    ft = run.features()
    report = sensitivity.run_sensitivity(
        ft, run.foreign(), run.cfg.engine, mask=run.mask(len(ft)), max_iter=run.cfg.max_iter
    )
    run.write_json("sensitivity.json", "sensitivity", {"sensitivity": report.to_dict()})
    run.write_text("sensitivity.csv", "sensitivity", report.to_csv())
    return report


STAGES = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "mine": cmd_mine,
    "sensitivity": cmd_sensitivity,
}


def cmd_pipeline(run: Run) -> None:
    for name, stage in STAGES.items():
        logger.info("running %s", name)
        stage(run)


# click wiring ---------------------------------------------------------------

MODEL_CHOICES = ["baseline", "regressed", "proposed", "model_whole", "model1", "model2", "model3",
                 "model4", "model5", "model_alt"]


def _options(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML run configuration."),
        click.option("--data", type=click.Path(dir_okay=False), help="OBD CSV (default: bundled sample)."),
        click.option("--out", type=click.Path(file_okay=False), help="Artifact directory."),
        click.option("--model", type=click.Choice(MODEL_CHOICES), help="Model to fit and evaluate."),
        click.option("--set", "set_id", type=click.IntRange(1, 4), help="DWC parameter set."),
        click.option("--L", "L", type=click.IntRange(min=1), help="Window length in records (s)."),
        click.option("--threshold", type=float, help="Summed |divergence| per window, ppm."),
        click.option("--epsilon", type=float, help="Minimum cross-K."),
        click.option("--minsupp", type=float, help="Minimum support."),
        click.option("--delta", type=float, help="Cross-K lag in seconds."),
        click.option("--split", type=click.FloatRange(0, 1, min_open=True), help="Training fraction."),
        click.option("--seed", type=int, help="Seed for the train/test split."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _make_command(name: str, fn, help_text: str):
    @click.pass_context
    def command(ctx, config_path, **overrides):
        cfg = load_config(config_path, **overrides)
        fn(Run(cfg))
        click.echo(f"{name}: wrote artifacts to {cfg.out}", err=True)

    command.__doc__ = help_text
    return cli.command(name)(_options(command))


@click.group()
@click.version_option(__version__, prog_name="noxdwc")
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def cli(verbose):
    """Predict engine-out NOx from OBD logs and mine divergent-window patterns."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


_make_command("ingest", cmd_ingest, "Parse, validate and segment the OBD log.")
_make_command("features", cmd_features, "Compute per-record physics features.")
_make_command("fit", cmd_fit, "Fit the selected NOx model.")
_make_command("evaluate", cmd_evaluate, "Score predictions and write per-record divergence.")
_make_command("mine", cmd_mine, "Mine divergent-window co-occurrence patterns.")
_make_command("sensitivity", cmd_sensitivity, "Fit and compare all drop-one-term variants.")
_make_command("pipeline", cmd_pipeline, "Run every stage in order.")


def main(argv=None) -> int:
    """Entry point returning the process exit code."""
    try:
        rv = cli.main(args=argv, prog_name="noxdwc", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except NumericError as exc:
        click.echo(f"numeric error: {exc}", err=True)
        return EXIT_NUMERIC
    except (NoxDwcError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
