"""
Command line: ingest a catalog, build the environment map, run or re-score designs, plot bundles.

    cd app
    python cli.py ingest ../data/nk
    python cli.py embed --config ../configs/solar_absorber.yaml -v
    python cli.py design --config ../configs/solar_absorber.yaml --out ../runs/solar
    python cli.py evaluate --materials MgF2,TiO2,Si,Ge,Cu --thicknesses 35.3,27.1,112.5,172.0,200.0
    python cli.py plot ../runs/solar
"""
import logging
from pathlib import Path
from typing import Optional

import pandas as pd
import typer
import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

import embedding
import search
from a3c import UpdateError, save_checkpoint
from material_db import load_database
from plots import environment_map_html, plot_environment_map, plot_spectrum, plot_trace
from runtime_config import config
from tmm import write_spectrum_csv

logger = logging.getLogger("cli")

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "solar_absorber.yaml"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRAINING = 3
EXIT_SEARCH = 4

app = typer.Typer(add_completion=False, help="Thin-film material and thickness inverse design.")
console = Console()

ConfigOption = typer.Option(DEFAULT_CONFIG, "--config", help="Run configuration (YAML).")
SeedOption = typer.Option(None, "--seed", help="Override every seed in the run configuration.")
VerboseOption = typer.Option(0, "--verbose", "-v", count=True, help="-v for INFO, -vv for DEBUG.")


def setup_logging(verbosity):
    level = {0: config.LOG_LEVEL, 1: "INFO"}.get(verbosity, "DEBUG")
    config.update(SHOW_PROGRESS=verbosity > 0)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def print_frame(frame: pd.DataFrame, title=None):
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column))
    for row in frame.itertuples(index=False):
        table.add_row(*(str(value) for value in row))
    console.print(table)


def fail(message, code):
    logger.error(message)
    console.print(f"[red]Error:[/red] {message}")
    raise typer.Exit(code)


def guarded(action):
    """Runs a command body and maps failures to exit codes."""
    try:
        return action()
    except search.SearchFailure as exc:
        if exc.trace is not None and len(exc.trace):
            print_frame(exc.trace.tail(10), title="Search trace (last episodes)")
        fail(str(exc), EXIT_SEARCH)
    except (embedding.TrainingDivergenceError, UpdateError) as exc:
        fail(str(exc), EXIT_TRAINING)
    except (ValueError, KeyError, OSError) as exc:
        fail(str(exc), EXIT_INPUT)


def load_config(path, seed=None, workers=None):
    if seed is not None:
        config.update(SEED=seed)
    if workers is not None:
        config.update(A3C_WORKERS=workers)
    run_cfg = search.load_run_config(path)
    if seed is not None:
        run_cfg = run_cfg.with_seed(seed)
    if workers is not None:
        run_cfg = run_cfg.model_copy(update={"a3c": run_cfg.a3c.model_copy(update={"workers": workers})})
    return run_cfg


@app.command()
def ingest(directory: Path = typer.Argument(..., help="Directory of dispersion files."),
           verbose: int = VerboseOption):
    """Validate a material catalog and print its summary."""
    setup_logging(verbose)

    def body():
        db = load_database(directory)
        low, high = db.wavelength_support
        console.print(f"{len(db)} materials, support [{low:g}, {high:g}] nm")
        counts = pd.DataFrame(list(db.category_counts().items()), columns=["Category", "Materials"])
        print_frame(counts)

    guarded(body)


@app.command()
def embed(config_path: Path = ConfigOption, out: Optional[Path] = typer.Option(None, "--out"),
          seed: Optional[int] = SeedOption, sweep: bool = typer.Option(False, "--sweep",
          help="Also train encoders of latent width 5, 10, 15 and 20 and compare their losses."),
          verbose: int = VerboseOption):
    """Train the encoder, embed the catalog and write the environment map."""
    setup_logging(verbose)

    def body():
        run_cfg = load_config(config_path, seed)
        db = load_database(run_cfg.paths.catalog)
        env_map, encoded, _ = embedding.build_environment_map(db, run_cfg.embedding, run_cfg.tsne)

        out_dir = run_cfg.paths.map.parent if out is None else out
        map_path = run_cfg.paths.map if out is None else out / run_cfg.paths.map.name
        embedding.save_map(env_map, map_path)
        embedding.write_embedding_csv(env_map, out_dir / "embedding.csv")
        plot_environment_map(env_map, out_dir / "environment_map.svg")
        environment_map_html(env_map, out_dir / "environment_map.html")

        rows = [("Materials", len(env_map)), ("Reconstruction loss", f"{encoded.final_loss:.5f}")]
        try:
            rows.append(("Category silhouette", f"{embedding.category_silhouette(env_map):.3f}"))
        except embedding.EmbeddingError as exc:
            rows.append(("Category silhouette", f"n/a ({exc})"))
        rows.append(("Map file", str(map_path)))
        print_frame(pd.DataFrame(rows, columns=["Metric", "Value"]), title="Environment space")

        if sweep:
            losses = embedding.latent_dim_sweep(db, run_cfg.embedding)
            losses.to_csv(out_dir / "latent_sweep.csv", index=False, lineterminator="\n")
            print_frame(losses, title="Latent width sweep")

    guarded(body)


@app.command()
def design(config_path: Path = ConfigOption, out: Path = typer.Option(Path("design"), "--out"),
           seed: Optional[int] = SeedOption, workers: Optional[int] = typer.Option(None, "--workers", min=1),
           checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Write the trained agent here."),
           verbose: int = VerboseOption):
    """Search materials and thicknesses for the configured task and write the result bundle."""
    setup_logging(verbose)

    def body():
        run_cfg = load_config(config_path, seed, workers)
        db = load_database(run_cfg.paths.catalog)
        env_map = embedding.load_map(run_cfg.paths.map)
        task = search.build_task(run_cfg.task)
        result = search.run_search(task, run_cfg.a3c, run_cfg.ga, env_map, db)
        search.write_bundle(result, out, task)
        if checkpoint is not None and result.agent is not None:
            save_checkpoint(result.agent, checkpoint)
        print_frame(search.summary_frame(result), title="Design")
        console.print(f"Bundle written to {out}")

    guarded(body)


def _split(values, cast):
    return [cast(v.strip()) for v in values.split(",") if v.strip()]


@app.command()
def evaluate(materials: str = typer.Option(..., "--materials", help="Comma-separated names, top layer first."),
             thicknesses: str = typer.Option(..., "--thicknesses", help="Comma-separated thicknesses in nm."),
             config_path: Path = ConfigOption, out: Path = typer.Option(Path("evaluation"), "--out"),
             verbose: int = VerboseOption):
    """Score a fixed design against the configured target."""
    setup_logging(verbose)

    def body():
        names = _split(materials, str)
        values = _split(thicknesses, float)
        if len(names) != len(values):
            raise ValueError(f"{len(names)} materials but {len(values)} thicknesses")
        run_cfg = load_config(config_path)
        db = load_database(run_cfg.paths.catalog)
        task_cfg = run_cfg.task.model_copy(update={"layer_count": len(names), "frozen_layers": {}})
        task = search.build_task(task_cfg)
        result = search.evaluate_design(names, values, task, db)
        write_spectrum_csv(result.spectra, out / "spectrum.csv")
        print_frame(search.summary_frame(result), title="Evaluation")

    guarded(body)


@app.command()
def plot(bundle_dir: Path = typer.Argument(..., help="Result bundle written by `design`."),
         verbose: int = VerboseOption):
    """Render spectrum.svg and trace.svg for a result bundle."""
    setup_logging(verbose)

    def body():
        spectrum_csv = bundle_dir / "spectrum.csv"
        trace_csv = bundle_dir / "trace.csv"
        for path in (spectrum_csv, trace_csv):
            if not path.is_file():
                raise FileNotFoundError(f"Missing {path}")
        band = None
        summary = bundle_dir / "summary.yaml"
        if summary.is_file():
            band = (yaml.safe_load(summary.read_text()) or {}).get("band_nm")
        plot_spectrum(pd.read_csv(spectrum_csv), bundle_dir / "spectrum.svg", band=band)
        plot_trace(pd.read_csv(trace_csv), bundle_dir / "trace.svg")
        console.print(f"Plots written to {bundle_dir}")

    guarded(body)


if __name__ == "__main__":
    app()
