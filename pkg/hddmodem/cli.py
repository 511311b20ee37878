import logging
from contextlib import closing, contextmanager
from pathlib import Path
from typing import List, Optional

import typer

from . import acoustics, channel, config, framing, harness, hddtx, modulation, receiver, wavio
from .errors import ConfigError, FramingError, ModemError, ReceiverError, TransmitError

app = typer.Typer(help="Covert acoustic channel over hard disk seek noise.")

LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


@contextmanager
def _handle_errors():
    try:
        yield  # allow code inside the "with" statement to run
    except Exception as e:
        match e:
            case FileNotFoundError():
                typer.secho(f"File not found: {e}", fg=typer.colors.RED)
            case ConfigError():
                typer.secho(f"Bad config: {e}", fg=typer.colors.RED)
            case TransmitError():
                typer.secho(
                    f"Transmission aborted: {e} ({len(e.events)} reads logged)",
                    fg=typer.colors.RED,
                )
            case ReceiverError():
                typer.secho(f"Decoding failed: {e}", fg=typer.colors.RED)
            case ModemError():
                typer.secho(f"{e}", fg=typer.colors.RED)
            case _:
                typer.secho(f"{e.__class__.__name__}: {e}", fg=typer.colors.RED)
        raise typer.Exit(1)


@app.callback()
def main(
    verbose: int = typer.Option(
        0,
        "--verbose",
        "-v",
        count=True,
        help="-v for progress, -vv for receiver internals.",
    ),
):
    logging.basicConfig(
        level=LOG_LEVELS[min(verbose, len(LOG_LEVELS) - 1)],
        format="%(levelname)s %(name)s: %(message)s",
    )


def _payload(bits: str | None, file: Path | None) -> framing.BitString:
    if (bits is None) == (file is None):
        raise FramingError("give exactly one of --bits and --file")
    if file is not None:
        return framing.BitString.from_bytes(file.read_bytes())
    return framing.BitString(bits)


def _timing(text: str) -> modulation.SymbolTiming:
    """'0.3' for symmetric timing, '0.3/0.5' for t0/t1"""
    t0, sep, t1 = text.partition("/")
    return modulation.SymbolTiming(float(t0), float(t1 if sep else t0))


@app.command(help="Split a payload into frames and print the serialized frame bits.")
def encode(
    bits: Optional[str] = typer.Option(None, "--bits", "-b", help="Payload as '0'/'1' text"),
    file: Optional[Path] = typer.Option(None, "--file", "-f", help="Send the bytes of a file"),
    payload_len: int = typer.Option(36, "--payload-len", "-L", min=1),
):
    with _handle_errors():
        frames = framing.frame_encode(_payload(bits, file), framing.FrameConfig(payload_len))
        serialized = framing.frame_serialize(frames)
    typer.echo(str(serialized))


@app.command(help="Turn serialized frame bits into an on/off seek schedule (CSV).")
def modulate(
    bits: str = typer.Option(..., "--bits", "-b", help="Serialized frame bits"),
    output_file: Path = typer.Option(..., "--output-file", "-o"),
    t0: float = typer.Option(0.3, "--t0", help="Duration of a 0 symbol (s)"),
    t1: float = typer.Option(0.3, "--t1", help="Duration of a 1 symbol (s)"),
):
    with _handle_errors():
        schedule = modulation.modulate(framing.BitString(bits), modulation.SymbolTiming(t0, t1))
        output_file = schedule.to_csv(output_file)
    typer.secho(f"Created file: {output_file}", fg=typer.colors.GREEN)


@app.command(help="Render a seek schedule as the sound the disk would make (WAV).")
def synth(
    schedule_file: Path = typer.Option(..., "--schedule", "-s"),
    output_file: Path = typer.Option(..., "--output-file", "-o"),
    seed: int = typer.Option(..., "--seed", min=0),
    profile: str = typer.Option("desktop", "--profile", "-p", help="desktop, external, aam-off"),
    rate: int = typer.Option(16000, "--rate", "-r", help="Sample rate (Hz)"),
    lead_in: float = typer.Option(1.0, "--lead-in", help="Idle audio before the schedule (s)"),
    tail: float = typer.Option(1.0, "--tail", help="Idle audio after the schedule (s)"),
):
    with _handle_errors():
        spec = config.load_experiment(profile=profile)
        schedule = modulation.SymbolSchedule.from_csv(schedule_file).padded(lead_in, tail)
        waveform = acoustics.render_schedule(schedule, spec.profile, rate, seed=seed)
        output_file = wavio.write_wav(waveform, output_file)
    typer.secho(f"Created file: {output_file}", fg=typer.colors.GREEN)


@app.command(name="channel", help="Carry a recording across the room to a microphone.")
def channel_(
    input_file: Path = typer.Option(..., "--input-file", "-i"),
    output_file: Path = typer.Option(..., "--output-file", "-o"),
    seed: int = typer.Option(..., "--seed", min=0),
    config_file: Optional[Path] = typer.Option(None, "--config", "-c"),
    distance: Optional[float] = typer.Option(None, "--distance", "-d", help="Metres"),
    ambient: Optional[float] = typer.Option(None, "--ambient", help="Ambient noise level (dB)"),
    workload: Optional[str] = typer.Option(
        None, "--workload", "-w", help="quiet, office, video, compile"
    ),
    rate: Optional[int] = typer.Option(None, "--rate", "-r", help="Microphone sample rate (Hz)"),
):
    with _handle_errors():
        spec = config.load_experiment(
            config_file,
            seed=seed,
            distance_m=distance,
            ambient_noise_level_db=ambient,
            workload=workload,
        )
        received = channel.propagate(wavio.read_wav(input_file), spec.channel, rate)
        output_file = wavio.write_wav(received, output_file)
    typer.secho(f"Created file: {output_file}", fg=typer.colors.GREEN)


@app.command(help="Decode payload bits from a recording. Use '-' to read raw PCM from stdin.")
def decode(
    input_file: str = typer.Option(..., "--input-file", "-i"),
    rate: Optional[int] = typer.Option(None, "--rate", "-r", help="Sample rate of stdin PCM"),
    config_file: Optional[Path] = typer.Option(None, "--config", "-c"),
    payload_len: Optional[int] = typer.Option(None, "--payload-len", "-L", min=1),
    force_band: bool = typer.Option(
        False, "--force-band", help="Skip the carrier scan and use the default band"
    ),
    reference: Optional[str] = typer.Option(None, "--reference", help="Sent bits, to count errors"),
    report_file: Optional[Path] = typer.Option(None, "--report", help="Write a JSON report"),
):
    with _handle_errors():
        cfg = config.load_experiment(
            config_file,
            payload_len=payload_len,
            force_default_band=force_band or None,
        ).receiver_config()
        if input_file == "-":
            if rate is None:
                raise ReceiverError("--rate is required when reading PCM from stdin")
            waveform = wavio.read_pcm(typer.get_binary_stream("stdin"), rate)
        else:
            waveform = wavio.read_wav(input_file)
        result = receiver.receive(waveform, cfg)
        if report_file is not None:
            ref = framing.BitString(reference) if reference else None
            report_file.write_text(receiver.report_json(result, ref), encoding="utf-8")
    if not result.frames:
        typer.secho("No frames decoded", fg=typer.colors.YELLOW)
    typer.echo(str(result.payload))


def _experiment(config_file, seed, trials, **overrides):
    return config.load_experiment(
        config_file,
        seeds=tuple(range(seed, seed + trials)),
        **overrides,
    )


def _print_report(report: harness.BerReport):
    for point in report.points:
        where = (
            f"{point.distance_m:.2f} m"
            if report.axis == "distance"
            else f"SNR {point.snr_target_db:+.1f} dB"
        )
        if not point.attainable:
            typer.secho(f"{where}: unattainable", fg=typer.colors.YELLOW)
            continue
        typer.echo(
            f"{where}: BER {point.ber:.4f} ± {point.std_error:.4f} "
            f"({point.bit_errors}/{point.bits} bits, {point.frames_lost} frames lost)"
        )
    if report.monotone is False:
        typer.secho("BER is not monotone in SNR", fg=typer.colors.YELLOW)


@app.command(help="Monte Carlo BER of the simulated link at one or more distances.")
def loopback(
    seed: int = typer.Option(..., "--seed", min=0, help="First trial seed"),
    trials: int = typer.Option(100, "--trials", "-n", min=1, help="Trials per distance"),
    config_file: Optional[Path] = typer.Option(None, "--config", "-c"),
    distance: Optional[List[float]] = typer.Option(None, "--distance", "-d", help="Metres"),
    payload: Optional[str] = typer.Option(
        None, "--payload", help="'random:N', 'file:PATH' or literal bits"
    ),
    t0: Optional[float] = typer.Option(None, "--t0"),
    t1: Optional[float] = typer.Option(None, "--t1"),
    workload: Optional[str] = typer.Option(None, "--workload", "-w"),
    workers: Optional[int] = typer.Option(None, "--workers", "-j", min=1),
    output_dir: Optional[Path] = typer.Option(None, "--output-dir", "-o"),
):
    with _handle_errors():
        spec = _experiment(
            config_file,
            seed,
            trials,
            distances=tuple(distance) if distance else None,
            payload=payload,
            t0=t0,
            t1=t1,
            workload=workload,
            workers=workers,
            output_dir=output_dir,
        )
        report = harness.run_loopback(spec)
    _print_report(report)


@app.command(help="BER against carrier-band SNR, calibrating the ambient noise per target.")
def sweep(
    snr: List[float] = typer.Option(..., "--snr", help="SNR targets (dB), at least three"),
    seed: int = typer.Option(..., "--seed", min=0, help="First trial seed"),
    trials: int = typer.Option(30, "--trials", "-n", min=1, help="Trials per SNR target"),
    config_file: Optional[Path] = typer.Option(None, "--config", "-c"),
    distance: Optional[float] = typer.Option(None, "--distance", "-d", help="Metres"),
    workload: Optional[str] = typer.Option(None, "--workload", "-w"),
    workers: Optional[int] = typer.Option(None, "--workers", "-j", min=1),
    output_dir: Optional[Path] = typer.Option(None, "--output-dir", "-o"),
):
    with _handle_errors():
        spec = _experiment(
            config_file,
            seed,
            trials,
            snr_targets=tuple(snr),
            distance_m=distance,
            workload=workload,
            workers=workers,
            output_dir=output_dir,
        )
        report = harness.sweep_snr(spec)
    _print_report(report)


@app.command(help="Raw and effective bit rates for one or more symbol timings.")
def throughput(
    timing: List[str] = typer.Option(
        ["0.3"], "--timing", "-t", help="T in seconds, or t0/t1 for asymmetric timing"
    ),
    payload_len: int = typer.Option(36, "--payload-len", "-L", min=1),
):
    with _handle_errors():
        rows = harness.throughput_table(
            [_timing(t) for t in timing], framing.FrameConfig(payload_len)
        )
    typer.echo(harness.format_throughput(rows))


@app.command(help="Export the 50 Hz spectrogram of a recording as CSV.")
def spectrogram(
    input_file: Path = typer.Option(..., "--input-file", "-i"),
    output_file: Path = typer.Option(..., "--output-file", "-o"),
):
    with _handle_errors():
        output_file = harness.spectrogram_export(wavio.read_wav(input_file), output_file)
    typer.secho(f"Created file: {output_file}", fg=typer.colors.GREEN)


@app.command(
    name="hddtx",
    help="Transmit a schedule by driving real (or simulated) disk seeks.",
)
def hddtx_(
    schedule_file: Optional[Path] = typer.Option(None, "--schedule", "-s"),
    bits: Optional[str] = typer.Option(None, "--bits", "-b", help="Serialized frame bits"),
    t0: float = typer.Option(0.3, "--t0"),
    t1: float = typer.Option(0.3, "--t1"),
    mock: bool = typer.Option(False, "--mock", help="Simulated disk with a virtual clock"),
    device: Optional[Path] = typer.Option(None, "--device", help="Block device or large file"),
    acknowledged: bool = typer.Option(
        False, "--i-understand-io-load", help="Required to drive a real device"
    ),
    latency: float = typer.Option(0.005, "--mock-latency", help="Seconds per simulated read"),
    stride: int = typer.Option(10000, "--stride", min=1, help="Sector advance per read pair"),
    gap: float = typer.Option(
        0.05, "--gap", min=0.001, help="Read gap that ends a carrier-on segment (s)"
    ),
    events_file: Optional[Path] = typer.Option(None, "--events", "-e", help="Read log CSV"),
):
    if mock == (device is not None):
        typer.secho("Choose exactly one of --mock and --device", fg=typer.colors.RED)
        raise typer.Exit(1)
    if device is not None and not acknowledged:
        typer.secho(
            "Refusing to drive a real device without --i-understand-io-load",
            fg=typer.colors.RED,
        )
        raise typer.Exit(1)
    with _handle_errors():
        if (schedule_file is None) == (bits is None):
            raise ModemError("give exactly one of --schedule and --bits")
        if schedule_file is not None:
            schedule = modulation.SymbolSchedule.from_csv(schedule_file)
        else:
            schedule = modulation.modulate(
                framing.BitString(bits), modulation.SymbolTiming(t0, t1)
            )
        backend = hddtx.MockBackend(latency_s=latency) if mock else hddtx.DeviceBackend(device)
        with closing(backend):
            cache = hddtx.cache_avoidance_setup(backend)
            span = hddtx.SeekSpan.full(backend.capacity_sectors, sector_stride=stride)
            origin = backend.now()
            events = hddtx.execute_schedule(schedule, span, backend)
            finished = backend.now()
        if events_file is not None:
            hddtx.write_events_csv(events_file, events)
        rebuilt = hddtx.events_to_schedule(events, gap, origin_s=origin, end_s=finished)
    typer.echo(f"cache: {cache}")
    typer.secho(
        f"{len(events)} reads, {len(rebuilt.on_intervals())} carrier-on segments "
        f"over {finished - origin:.2f}s",
        fg=typer.colors.GREEN,
    )
