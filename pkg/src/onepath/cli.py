"""Command-line surface: key generation, training, model preparation, query
sharing, inference, benchmarking, self-test and leakage audit.

Set ONEPATH_SEED to fix every random draw (keys, shuffles, shares, nonces);
two runs with the same seed produce byte-identical transcripts.  Exit codes:
0 ok, 2 invariant failure, 3 parameter infeasibility.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import random
import sys
from math import isqrt
from pathlib import Path

import click

from .bench import run_bench
from .errors import (
    AuthenticationError,
    LeakageViolation,
    OnePathError,
    OracleMismatch,
    ParameterError,
)
from .input_share import QueryUpload, prepare_query, recover_seed
from .model_prep import EncryptedTree, PreparedModel, ShuffledIndexMap
from .params import (
    derive_params,
    keygen,
    load_key_material,
    save_key_material,
)
from .primitives import read_key_file
from .sharing import RingParams, ShareVector
from .system import ProtocolSystem
from .tree import (
    Quantizer,
    complete_pad,
    dump_tree_json,
    load_csv,
    load_tree_json,
    plaintext_infer,
    quantize,
    random_complete_tree,
    train_cart,
)
from . import wire

EXIT_INVARIANT = 2
EXIT_PARAMETER = 3


def _guard(fn):
    @functools.wraps(fn)
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ParameterError as exc:
            click.echo(f"parameter error: {exc}", err=True)
            sys.exit(EXIT_PARAMETER)
        except (OracleMismatch, LeakageViolation) as exc:
            click.echo(f"invariant failure: {exc}", err=True)
            sys.exit(EXIT_INVARIANT)
        except (AuthenticationError, OnePathError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INVARIANT)

    return inner


def _seed() -> int | None:
    value = os.environ.get("ONEPATH_SEED")
    return int(value) if value else None


def _rng() -> random.Random:
    seed = _seed()
    return random.Random(seed) if seed is not None else random.SystemRandom()


@click.group()
def main():
    """Privacy-preserving decision tree inference."""


# ---------------------------------------------------------------------------
# keygen
# ---------------------------------------------------------------------------


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--security-bits", default=128, show_default=True, type=int)
@click.option("--ring-bits", "-l", default=16, show_default=True, type=int)
@click.option("--feature-bits", "-t", default=10, show_default=True, type=int)
@click.option("--slope-max", default=None, type=int, help="Override the derived slope cap.")
@click.option("--force", is_flag=True, help="Overwrite existing key files.")
@_guard
def keygen_cmd(out_dir, security_bits, ring_bits, feature_bits, slope_max, force):
    """Generate group, FE and symmetric keys; refuse unsafe parameter combos."""
    if (out_dir / "params.json").exists() and not force:
        raise click.ClickException(f"{out_dir} already holds keys (use --force)")
    params = derive_params(
        security_bits=security_bits,
        ring_bits=ring_bits,
        feature_bits=feature_bits,
        slope_max=slope_max,
    )
    material = keygen(params, _rng())
    save_key_material(out_dir, material)
    span = 2 * params.window + 1
    click.echo(f"wrote keys to {out_dir}")
    click.echo(
        f"slope_max={params.slope_max} A_max={params.a_max} B_max={params.b_max}"
    )
    click.echo(
        f"W=(A_max+B_max)*2^{ring_bits}={params.window} "
        f"(recovery ~{isqrt(span) + 1} group ops)"
    )


main.add_command(keygen_cmd, name="keygen")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--depth", required=True, type=click.IntRange(1, 17))
@click.option("--feature-bits", "-t", default=10, show_default=True, type=int)
@click.option("--out", "tree_out", required=True, type=click.Path(path_type=Path))
@click.option(
    "--public-out",
    type=click.Path(path_type=Path),
    default=None,
    help="Where to write the public shape/quantizer file (default: <out dir>/public.json).",
)
@_guard
def train_cmd(data, depth, feature_bits, tree_out, public_out):
    """Train a CART tree, quantize it and pad it to a complete binary tree."""
    X, y, _ = load_csv(data)
    quantizer = Quantizer.fit(X, feature_bits)
    plain = train_cart(X, y, depth)
    tree = complete_pad(quantize(plain, quantizer), depth)
    tree_out.write_text(dump_tree_json(tree, quantizer))
    public = {
        "n": tree.n_features,
        "depth": tree.depth,
        "feature_bits": feature_bits,
        "quantizer": quantizer.to_dict(),
    }
    public_path = public_out or tree_out.parent / "public.json"
    public_path.write_text(json.dumps(public, indent=2) + "\n")
    correct = sum(
        plaintext_infer(tree, quantizer.apply_vector(row))[0] == label
        for row, label in zip(X, y)
    )
    click.echo(
        f"trained depth {plain.depth}, padded to {depth} "
        f"(gamma={tree.gamma}, m={tree.m}); training accuracy {correct / len(y):.1%}"
    )
    click.echo(f"wrote {tree_out} and {public_path}")


main.add_command(train_cmd, name="train")


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


@main.command()
@click.option("--tree", "tree_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--keys", "key_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option(
    "--retain/--no-retain",
    default=True,
    show_default=True,
    help="Keep the provider-side shuffle map and coefficients on disk.",
)
@_guard
def prepare_cmd(tree_path, key_dir, out_dir, retain):
    """Encrypt a tree into the two server payloads plus the sealed PRF seed."""
    from .model_prep import prepare_model
    from .primitives import sample_prf_seed

    keys = load_key_material(key_dir)
    tree, _quantizer = load_tree_json(tree_path.read_text())
    rng = _rng()
    seed = sample_prf_seed(tree.gamma, rng)
    prepared = prepare_model(tree, keys, seed, rng)
    out_dir.mkdir(parents=True, exist_ok=True)
    group = keys.params.group
    enc_blob = prepared.cs1_tree.to_bytes(group)
    root_blob = wire.pack_prep_root(
        tree.depth,
        tree.n_features,
        keys.params.ring,
        keys.params.feature_bits,
        prepared.cs2_root,
        group,
    )
    (out_dir / "enc_tree.bin").write_bytes(enc_blob)
    (out_dir / "root.bin").write_bytes(root_blob)
    (out_dir / "seed_ct.bin").write_bytes(prepared.seed_ct)
    if retain:
        (out_dir / "provider.json").write_text(
            json.dumps(
                {
                    "shuffle": prepared.shuffle.order,
                    "coefficients": prepared.coefficients,
                },
                indent=2,
            )
            + "\n"
        )
    click.echo(
        f"encrypted tree: {len(enc_blob)} bytes ({tree.gamma} internal, {tree.m} leaves); "
        f"root payload: {len(root_blob)} bytes"
    )
    click.echo(f"wrote payloads to {out_dir}")


main.add_command(prepare_cmd, name="prepare")


# ---------------------------------------------------------------------------
# share
# ---------------------------------------------------------------------------


def _parse_vector(text: str) -> list[float]:
    return [float(v) for v in text.replace(" ", "").split(",") if v]


@main.command()
@click.option("--public", "public_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--sk3", "sk3_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--seed-ct", "seed_ct_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--input", "input_text", required=True, help="Comma-separated feature values.")
@click.option("--ring-bits", "-l", default=16, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@_guard
def share_cmd(public_path, sk3_path, seed_ct_path, input_text, ring_bits, out_dir):
    """Quantize a feature vector and split it into the per-server uploads."""
    public = json.loads(public_path.read_text())
    quantizer = Quantizer.from_dict(public["quantizer"])
    gamma = (1 << public["depth"]) - 1
    sk3 = read_key_file(sk3_path)
    seed = recover_seed(seed_ct_path.read_bytes(), sk3, gamma)
    ring = RingParams(ring_bits)
    x = quantizer.apply_vector(_parse_vector(input_text))
    upload = prepare_query(x, seed, ring, gamma, _rng(), public["feature_bits"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "cs1.share").write_bytes(upload.cs1.to_bytes(ring))
    (out_dir / "cs2.share").write_bytes(upload.cs2.to_bytes(ring))
    (out_dir / "upload.json").write_text(
        json.dumps(
            {
                "session_id": upload.session_id.hex(),
                "ring_bits": ring_bits,
                "unit1": upload.unit_shares[0],
                "unit2": upload.unit_shares[1],
            },
            indent=2,
        )
        + "\n"
    )
    click.echo(f"wrote share bundle for session {upload.session_id.hex()} to {out_dir}")


main.add_command(share_cmd, name="share")


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _load_prepared(model_dir: Path) -> PreparedModel:
    enc_tree = EncryptedTree.from_bytes((model_dir / "enc_tree.bin").read_bytes())
    _, _, _, _, root = wire.unpack_prep_root((model_dir / "root.bin").read_bytes())
    seed_ct = (model_dir / "seed_ct.bin").read_bytes()
    shuffle = coefficients = None
    provider = model_dir / "provider.json"
    if provider.exists():
        doc = json.loads(provider.read_text())
        shuffle = ShuffledIndexMap(doc["shuffle"])
        coefficients = [tuple(c) for c in doc["coefficients"]]
    return PreparedModel(enc_tree, root, seed_ct, shuffle, coefficients)


@main.command()
@click.option("--keys", "key_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--public", "public_path", type=click.Path(exists=True, path_type=Path))
@click.option("--input", "input_text", default=None, help="Comma-separated feature values.")
@click.option("--shares", "share_dir", type=click.Path(exists=True, path_type=Path))
@click.option("--transcript", "transcript_path", type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
@_guard
def infer_cmd(key_dir, model_dir, public_path, input_text, share_dir, transcript_path, as_json):
    """Run one encrypted inference from prepared payload files."""
    keys = load_key_material(key_dir)
    system = ProtocolSystem(keys, rng=_rng())
    system.install_prepared(_load_prepared(Path(model_dir)))
    if share_dir is not None:
        share_dir = Path(share_dir)
        doc = json.loads((share_dir / "upload.json").read_text())
        cs1, _ = ShareVector.from_bytes((share_dir / "cs1.share").read_bytes())
        cs2, _ = ShareVector.from_bytes((share_dir / "cs2.share").read_bytes())
        upload = QueryUpload(
            session_id=bytes.fromhex(doc["session_id"]),
            cs1=cs1,
            cs2=cs2,
            unit_shares=(doc["unit1"], doc["unit2"]),
        )
        result = system.query_upload(upload)
    elif input_text is not None:
        if public_path is None:
            raise click.ClickException("--input requires --public for the quantizer")
        public = json.loads(Path(public_path).read_text())
        quantizer = Quantizer.from_dict(public["quantizer"])
        result = system.query(quantizer.apply_vector(_parse_vector(input_text)))
    else:
        raise click.ClickException("provide either --input or --shares")
    if transcript_path is not None:
        Path(transcript_path).write_text(system.transcript.export_jsonl())
    if as_json:
        click.echo(
            json.dumps(
                {
                    "label": result.label,
                    "session_id": result.session_id.hex(),
                    "counters": result.counters,
                }
            )
        )
    else:
        click.echo(result.label)


main.add_command(infer_cmd, name="infer")


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--depth", required=True, type=click.IntRange(1, 17))
@click.option("--reps", default=10, show_default=True, type=click.IntRange(0, None))
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(1, 64))
@click.option("--security-bits", default=112, show_default=True, type=int)
@click.option("--ring-bits", "-l", default=16, show_default=True, type=int)
@click.option("--feature-bits", "-t", default=10, show_default=True, type=int)
@click.option("--json", "json_path", type=click.Path(path_type=Path))
@_guard
def bench_cmd(data, depth, reps, jobs, security_bits, ring_bits, feature_bits, json_path):
    """Train, prepare and run oracle-checked encrypted queries; report costs."""
    report = run_bench(
        data,
        depth,
        reps,
        rng=_rng(),
        security_bits=security_bits,
        ring_bits=ring_bits,
        feature_bits=feature_bits,
        jobs=jobs,
    )
    click.echo(report.table())
    if json_path is not None:
        json_path.write_text(report.to_json() + "\n")
        click.echo(f"wrote {json_path}")


main.add_command(bench_cmd, name="bench")


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------


@main.command()
@click.option("--keys", "key_dir", type=click.Path(exists=True, path_type=Path))
@click.option("--transcript-out", type=click.Path(path_type=Path))
@_guard
def selftest_cmd(key_dir, transcript_out):
    """Run the full invariant suite; deterministic under ONEPATH_SEED."""
    failures: list[str] = []

    def check(name: str, fn) -> None:
        try:
            fn()
            click.echo(f"ok   {name}")
        except Exception as exc:  # noqa: BLE001 - reported as named failure
            failures.append(name)
            click.echo(f"FAIL {name}: {exc}")

    rng = _rng()
    from .ipfe import ipfe_decrypt, ipfe_encrypt, ipfe_keyder
    from .model_prep import linear_coefficients, fisher_yates, prepare_model
    from .primitives import (
        generate_symmetric_key,
        prf_eval,
        sample_prf_seed,
        ske_decrypt,
        ske_encrypt,
    )
    from .sharing import Share, reconstruct, signed_decode, split

    if key_dir is not None:
        keys = load_key_material(key_dir)
    else:
        keys = keygen(derive_params(security_bits=112), rng)
    params = keys.params
    table = params.build_dlog_table()
    ring = params.ring

    def fe_round_trip():
        ct = ipfe_encrypt(keys.mpk, (1, 2), rng)
        fk = ipfe_keyder(keys.fe, (3, 4))
        assert ipfe_decrypt(keys.mpk, ct, fk, table) == 11, "textbook vector"
        for _ in range(100):
            m = (rng.randint(-params.a_max, params.a_max), rng.randint(-params.b_max, params.b_max))
            y = (rng.randrange(ring.modulus), rng.randrange(ring.modulus))
            ct = ipfe_encrypt(keys.mpk, m, rng)
            fk = ipfe_keyder(keys.fe, y)
            assert ipfe_decrypt(keys.mpk, ct, fk, table) == m[0] * y[0] + m[1] * y[1]

    def share_reconstruction():
        small = RingParams(8)
        for value in range(small.modulus):
            s1, s2 = split(value, small, rng)
            assert reconstruct(s1, s2, small) == value
        for _ in range(500):
            value = rng.randrange(ring.modulus)
            s1, s2 = split(value, ring, rng)
            assert reconstruct(s1, s2, ring) == value

    def mask_cancellation():
        n, gamma = 7, 15
        seed = sample_prf_seed(gamma, rng)
        x = [rng.randrange(1 << params.feature_bits) for _ in range(n)]
        upload = prepare_query(x, seed, ring, gamma, rng, params.feature_bits)
        for j in range(1, gamma + 1):
            mask = prf_eval(seed, j, n, ring.bits)
            rec = (upload.cs1.offsets[j - 1] + upload.cs2.offsets[j - 1]) % ring.modulus
            dot = sum(m * v for m, v in zip(mask, x)) % ring.modulus
            assert (rec + dot) % ring.modulus == 0

    def linear_encoding():
        for theta in range(64):
            slope = rng.randint(1, params.slope_max)
            a, b = linear_coefficients(theta, slope)
            for x in range(64):
                assert ((a + b * x) > 1) == (x > theta)

    def dlog_window():
        g = params.group
        for _ in range(50):
            e = rng.randint(-params.window, params.window)
            assert table.recover(g.power(g.g, e % g.q)) == e

    def ske_layering():
        sk1, sk2 = keys.sk1, keys.sk2
        idx = (9).to_bytes(4, "big")
        layered = ske_encrypt(sk2, ske_encrypt(sk1, idx, rng), rng)
        assert ske_decrypt(sk1, ske_decrypt(sk2, layered)) == idx
        try:
            ske_decrypt(sk1, layered)
        except AuthenticationError:
            pass
        else:
            raise AssertionError("wrong peel order must fail authentication")

    def shuffle_bijection():
        for gamma in (1, 7, 63):
            assert sorted(fisher_yates(gamma, rng).order) == list(range(1, gamma + 1))

    transcripts: list[bytes] = []

    def oracle_equivalence():
        for depth in range(1, 7):
            tree = random_complete_tree(depth, rng.randint(2, 10), params.feature_bits, rng)
            system = ProtocolSystem(keys, rng=rng, table=table)
            system.prepare(tree)
            for _ in range(2):
                x = [rng.randrange(1 << params.feature_bits) for _ in range(tree.n_features)]
                result, report = system.audit_query(x)
                report.raise_if_failed()
                expect, _ = plaintext_infer(tree, x)
                assert result.label == expect, f"oracle mismatch at depth {depth}"
            transcripts.append(system.transcript.canonical_bytes())

    check("fe_inner_product", fe_round_trip)
    check("share_reconstruction", share_reconstruction)
    check("mask_cancellation", mask_cancellation)
    check("linear_encoding", linear_encoding)
    check("dlog_window", dlog_window)
    check("ske_layering", ske_layering)
    check("shuffle_bijection", shuffle_bijection)
    check("oracle_equivalence_and_audit", oracle_equivalence)

    blob = b"".join(transcripts)
    click.echo(f"transcript sha256 {hashlib.sha256(blob).hexdigest()}")
    if transcript_out is not None:
        Path(transcript_out).write_bytes(blob)
    if failures:
        click.echo(f"selftest FAILED: {', '.join(failures)}")
        sys.exit(EXIT_INVARIANT)
    click.echo("selftest passed (8 checks)")


main.add_command(selftest_cmd, name="selftest")


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


@main.command()
@click.option("--data", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--depth", default=3, show_default=True, type=click.IntRange(1, 17))
@click.option("--n-features", default=8, show_default=True, type=int)
@click.option("--reps", default=3, show_default=True, type=click.IntRange(1, None))
@click.option("--security-bits", default=112, show_default=True, type=int)
@_guard
def audit_cmd(data, depth, n_features, reps, security_bits):
    """Run seeded sessions and print the leakage-audit report."""
    rng = _rng()
    params = derive_params(security_bits=security_bits)
    keys = keygen(params, rng)
    if data is not None:
        X, y, _ = load_csv(data)
        quantizer = Quantizer.fit(X, params.feature_bits)
        tree = complete_pad(quantize(train_cart(X, y, depth), quantizer), depth)
        rows = [quantizer.apply_vector(row) for row in X]
    else:
        tree = random_complete_tree(depth, n_features, params.feature_bits, rng)
        rows = None
    system = ProtocolSystem(keys, rng=rng)
    system.prepare(tree)
    reports = []
    for _ in range(reps):
        if rows is not None:
            x = rows[rng.randrange(len(rows))]
        else:
            x = [rng.randrange(1 << params.feature_bits) for _ in range(tree.n_features)]
        _result, report = system.audit_query(x)
        reports.append(report)
    doc = {
        "sessions": reps,
        "depth": depth,
        "ok": all(r.ok for r in reports),
        "violations": sorted({v for r in reports for v in r.violations}),
        "checks": sorted(reports[0].checks),
    }
    click.echo(json.dumps(doc, indent=2))
    if not doc["ok"]:
        sys.exit(EXIT_INVARIANT)


main.add_command(audit_cmd, name="audit")


if __name__ == "__main__":
    main()
