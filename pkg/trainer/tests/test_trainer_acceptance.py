"""Release gate for the trainer: a freshly trained prior must pay its way.

Trains a small denoising prior on synthetic images through the command line,
then drives the restoration package's own command line on five held-out
images. The hybrid prior (mix 0.5) with the trained weights must reach at
least the average PSNR of the internal-only prior at the same noise level,
and the exported weights must reproduce the trainer's forward pass through
the restoration package's inference to within 1e-5.
"""

import json
import re
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

import sasc_trainer.cli as cli
from sasc_trainer.model import PriorNet

from imagegen import synth, write_corpus

priornet = pytest.importorskip("sasc.priornet")

SASC = [sys.executable, "-m", "sasc.cli"]
SIGMA = 25.0


def _emit(capsys, name: str, ok: bool, detail: str) -> None:
    tag = "PASS" if ok else "FAIL"
    with capsys.disabled():
        print(f"\n[{tag}] {name}: {detail}", flush=True)
    assert ok, f"{name}: {detail}"


def _run(args: list) -> str:
    proc = subprocess.run(args, capture_output=True, text=True)
    assert proc.returncode == 0, f"{' '.join(args)}\n{proc.stderr}"
    return proc.stdout


def _psnr_from(stdout: str) -> float:
    match = re.search(r"psnr_db=([0-9.]+)", stdout)
    assert match, f"no psnr_db in output: {stdout!r}"
    return float(match.group(1))


def _model_from_file(path: str) -> tuple[PriorNet, object]:
    """Rebuild the torch module from an exported weight file."""
    net = priornet.read_weights(path)
    hidden = len(net.layers) - 1
    channels = net.layers[0].out_channels
    kernel = net.layers[0].taps.shape[2]
    model = PriorNet(hidden_layers=hidden, channels=channels,
                     kernel_size=kernel, residual=net.residual_skip)
    with torch.no_grad():
        for conv, layer in zip(model.convs, net.layers):
            taps = np.flip(layer.taps, axis=(2, 3)).copy()
            conv.weight.copy_(torch.from_numpy(taps.astype(np.float32)))
            conv.bias.copy_(torch.from_numpy(layer.biases.astype(np.float32)))
    return model, net


def test_trained_prior_lifts_hybrid_restoration(tmp_path, capsys):
    t0 = time.time()
    train_dir = tmp_path / "train"
    held_dir = tmp_path / "held"
    train_dir.mkdir()
    held_dir.mkdir()
    write_corpus(train_dir, range(30), size=64)
    held = [str(held_dir / f"img{i}.f32") for i in range(5)]
    for i, path in enumerate(held):
        from sasc_trainer.data import write_float_image
        write_float_image(path, synth(1000 + i, 64))

    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(
        {"degradation": "noise", "sigma": SIGMA, "epochs": 30, "seed": 0}))
    weights = str(tmp_path / "prior.sascprn")
    rc = cli.main(["train", "--spec", str(spec_path),
                   "--data", str(train_dir), "--out", weights])
    assert rc == 0
    capsys.readouterr()

    # Exported file loads in the restoration package and the two inference
    # implementations agree on the trained weights.
    model, net = _model_from_file(weights)
    worst = 0.0
    for i in range(5):
        img = synth(2000 + i, 48)
        with torch.no_grad():
            ours = model(torch.from_numpy(img.astype(np.float32))[None, None])
        theirs = priornet.infer(net, img)
        worst = max(worst, float(np.max(np.abs(ours[0, 0].numpy() - theirs))))
    _emit(capsys, "trained weight parity", worst < 1e-5,
          f"max forward gap {worst:.3e} over 5 images (bound 1e-5)")

    internal = []
    hybrid = []
    for i, clean in enumerate(held):
        noisy = str(tmp_path / f"noisy{i}.f32")
        _run(SASC + ["degrade", clean, "--kind", "noise", "--sigma", str(SIGMA),
                     "--seed", str(200 + i), "--out", noisy])
        out_int = str(tmp_path / f"int{i}.f32")
        internal.append(_psnr_from(_run(
            SASC + ["restore", noisy, "--mode", "denoise", "--sigma", str(SIGMA),
                    "--prior", "internal", "--reference", clean,
                    "--out", out_int])))
        out_hyb = str(tmp_path / f"hyb{i}.f32")
        hybrid.append(_psnr_from(_run(
            SASC + ["restore", noisy, "--mode", "denoise", "--sigma", str(SIGMA),
                    "--prior", "hybrid", "--weights", weights, "--mix", "0.5",
                    "--reference", clean, "--out", out_hyb])))

    avg_int = sum(internal) / len(internal)
    avg_hyb = sum(hybrid) / len(hybrid)
    elapsed = time.time() - t0
    _emit(capsys, "hybrid vs internal prior", avg_hyb >= avg_int,
          f"hybrid {avg_hyb:.2f} dB vs internal {avg_int:.2f} dB "
          f"(+{avg_hyb - avg_int:.2f}) on 5 held-out images, {elapsed:.0f}s")
