"""Small end-to-end CLI session, shared by the CLI tests and the acceptance suite."""
import json
import os

from macblocks.cli import main

TINY_TRAINING = {"episodes": 2, "steps_per_episode": 4, "sim_epoch_sec": 0.2,
                 "batch_size": 4, "hidden_sizes": [8]}
SCENARIO = {"nodeCount": 3, "offeredLoadPktPerSec": 100.0, "durationSec": 1.0, "seed": 2}
# the sweep covers the whole design space, so it gets a very short run
SWEEP_SCENARIO = {**SCENARIO, "durationSec": 0.1}
CONFIG = {"backoff": "BEB", "ack": "ImmediateAck", "fragmentation": 500, "aggregation": "Off",
          "rtsCts": True, "cwMin": 31, "carrierSense": True, "dataRateMbps": 24}


def write_inputs(root):
    paths = {}
    for name, doc in (("training", TINY_TRAINING), ("scenario", SCENARIO),
                      ("sweep_scenario", SWEEP_SCENARIO), ("config", CONFIG)):
        paths[name] = os.path.join(root, f"{name}.json")
        with open(paths[name], "w") as fh:
            json.dump(doc, fh)
    return paths


def full_session(root, seed=5):
    """Run every subcommand once; returns {subcommand: exit code}."""
    p = write_inputs(root)
    out = lambda name: os.path.join(root, "out", name)
    codes = {
        "validate": main(["--seed", str(seed), "--out", out("validate"), "validate", p["config"]]),
        "enumerate": main(["--out", out("enumerate"), "enumerate"]),
        "simulate": main(["simulate", "--seed", str(seed), "--trace", "--out", out("simulate"),
                          p["config"], p["scenario"]]),
        "train": main(["train", "--seed", str(seed), "--out", out("train"), "--training", p["training"],
                       p["scenario"]]),
    }
    ckpt = os.path.join(out("train"), "checkpoint.json")
    codes["evaluate"] = main(["evaluate", "--seed", str(seed), "--seeds", "2", "--out", out("evaluate"),
                              ckpt, p["scenario"]])
    codes["compare"] = main(["compare", "--seed", str(seed), "--seeds", "2", "--out", out("compare"),
                             ckpt, p["scenario"]])
    codes["select-blocks"] = main(["select-blocks", "--seed", str(seed), "--repeats", "2",
                                   "--training", p["training"], "--out", out("select"), p["scenario"]])
    codes["sweep"] = main(["sweep", "--seed", str(seed), "--seeds", "1", "--max-sim-sec", "1",
                           "--out", out("sweep"), p["sweep_scenario"]])
    return codes


def output_files(root):
    """Relative path -> bytes for every CSV/JSON/TSV the session wrote."""
    base = os.path.join(root, "out")
    found = {}
    for dirpath, _, files in os.walk(base):
        for f in files:
            if f.endswith((".csv", ".json", ".tsv")):
                full = os.path.join(dirpath, f)
                with open(full, "rb") as fh:
                    found[os.path.relpath(full, base)] = fh.read()
    return found
