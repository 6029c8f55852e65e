"""Persistence: CSV export/import, the binary eigen cache, plot scripts.

Everything written here is deterministic byte-for-byte for fixed inputs:
floats are serialized with repr (shortest round trip), newlines are
always "\\n", and dict-shaped headers are JSON with sorted keys. That is
what makes re-running a manifest reproduce identical checksums.
"""

import hashlib
import json
import os

import numpy as np

from .errors import ConfigError
from .spectra import Spectrum, diagonalize, diagonalize_sector, sector_decompose

CSV_MARK = "# ethydro csv 1"

CACHE_MAGIC = b"ETHYDRO-EIGCACHE\n"
CACHE_FORMAT = 1


class CacheInvalid(Exception):
    """Cache entry unusable (missing, corrupt, or for another spec)."""


# ============================================================
# generic CSV
# ============================================================


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, names, columns, comments=()):
    """Columns of equal length under a one-line header; '#' comments first."""
    columns = [np.asarray(c) for c in columns]
    if len(names) != len(columns):
        raise ConfigError("one name per column")
    n = columns[0].shape[0] if columns else 0
    for c in columns:
        if c.ndim != 1 or c.shape[0] != n:
            raise ConfigError("columns must be 1-d and equal length")
    lines = [CSV_MARK]
    lines += [f"# {c}" for c in comments]
    lines.append(",".join(names))
    for i in range(n):
        lines.append(",".join(_cell(c[i]) for c in columns))
    data = ("\n".join(lines) + "\n").encode()
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def read_csv(path):
    """Returns (names, dict name -> float64 array, comment lines)."""
    comments, names, rows = [], None, []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            if names is None:
                names = [s.strip() for s in line.split(",")]
                continue
            rows.append([float(s) for s in line.split(",")])
    if names is None:
        raise ConfigError(f"{path} has no header row")
    arr = np.asarray(rows, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, len(names))
    if arr.shape[1] != len(names):
        raise ConfigError(f"{path}: ragged rows")
    cols = {nm: arr[:, k] for k, nm in enumerate(names)}
    return names, cols, comments


# ============================================================
# typed writers (one per artifact family)
# ============================================================


def write_diagonal_profile(path, energies, diagonals, comments=()):
    return write_csv(path, ["energy", "obs_diag"], [energies, diagonals],
                     comments=comments)


def write_frequency_profile(path, profile, comments=()):
    extra = [f"bin_width: {profile.bin_width!r}", f"beta: {profile.beta!r}",
             f"kind: {profile.kind}"]
    return write_csv(path, ["omega", "f2", "count"],
                     [profile.omega, profile.values, profile.counts],
                     comments=list(comments) + extra)


def write_time_series(path, series, comments=()):
    vals = np.asarray(series.values)
    extra = [f"beta: {series.beta!r}", f"observable: {series.observable}",
             f"length: {series.length}"]
    return write_csv(
        path, ["t", "re_c", "im_c", "stderr"],
        [series.times, vals.real, vals.imag, series.stderr],
        comments=list(comments) + extra,
    )


def write_moment_table(path, table, comments=()):
    rows = table.rows()
    ms = [r[0] for r in rows]
    raw = [r[1] for r in rows]
    cc = [r[2] for r in rows]
    err = [r[3] for r in rows]
    return write_csv(path, ["m", "raw", "cc", "stderr"], [ms, raw, cc, err],
                     comments=list(comments) + [f"beta: {table.beta!r}"])


def write_hydro_series(path, times, values, comments=()):
    return write_csv(path, ["t", "c"], [times, values], comments=comments)


def write_plateaus(path, sizes, plateaus, comments=()):
    return write_csv(path, ["L", "plateau"], [sizes, plateaus],
                     comments=comments)


def write_fit_report(path, fit, comments=()):
    lines = [f"# {c}" for c in comments]
    lines.append(fit.report())
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
    return path


def write_fit_residuals(path, fit, comments=()):
    if fit.xs is None or fit.fitted is None:
        raise ConfigError("fit carries no point data to export")
    resid = np.asarray(fit.ys) - np.asarray(fit.fitted)
    return write_csv(path, ["x", "y", "fitted", "residual"],
                     [fit.xs, fit.ys, fit.fitted, resid], comments=comments)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ============================================================
# binary eigen cache
# ============================================================
# Layout (documented so external tools can read it):
#   bytes 0..16   magic "ETHYDRO-EIGCACHE\n"
#   ascii line    "format 1"
#   ascii line    decimal byte length of the JSON header that follows
#   JSON header   sort_keys utf-8: spec_hash, spec (full echo), sector,
#                 n, has_vectors, vector_dtype, payload_sha256, byte_order
#   payload       n little-endian float64 eigenvalues, then (if present)
#                 the n*n eigenvector matrix column-major, float64 or
#                 complex128 as declared in the header.
# The loader rejects (never silently reuses) entries whose magic, format,
# spec hash, spec echo, sector, or payload checksum disagree.


def _vector_payload(spectrum):
    if spectrum.eigenvectors is None:
        return b"", None
    v = np.asarray(spectrum.eigenvectors)
    if np.iscomplexobj(v):
        return np.asfortranarray(v.astype(np.complex128)).tobytes(order="F"), "complex128"
    return np.asfortranarray(v.astype(np.float64)).tobytes(order="F"), "float64"


def save_spectrum_cache(path, spec, sector_token, spectrum):
    """Atomic write of one (spec, sector) eigen block."""
    energies = np.ascontiguousarray(spectrum.energies, dtype="<f8")
    vec_bytes, vec_dtype = _vector_payload(spectrum)
    payload = energies.tobytes() + vec_bytes
    header = {
        "spec_hash": spec.hash(),
        "spec": spec.as_dict(),
        "sector": sector_token,
        "n": int(energies.shape[0]),
        "has_vectors": spectrum.eigenvectors is not None,
        "vector_dtype": vec_dtype,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "byte_order": "little",
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    blob = CACHE_MAGIC + f"format {CACHE_FORMAT}\n".encode() \
        + f"{len(hdr)}\n".encode() + hdr + payload
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    return path


def load_spectrum_cache(path, spec, sector_token, want_vectors=True):
    """Load one cached eigen block or raise CacheInvalid."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CacheInvalid(f"unreadable: {exc}") from None
    if not blob.startswith(CACHE_MAGIC):
        raise CacheInvalid("bad magic")
    rest = blob[len(CACHE_MAGIC):]
    try:
        fmt_line, rest = rest.split(b"\n", 1)
        if fmt_line != f"format {CACHE_FORMAT}".encode():
            raise CacheInvalid(f"unknown format {fmt_line!r}")
        len_line, rest = rest.split(b"\n", 1)
        hdr_len = int(len_line)
        header = json.loads(rest[:hdr_len].decode())
        payload = rest[hdr_len:]
    except (ValueError, UnicodeDecodeError) as exc:
        raise CacheInvalid(f"damaged header: {exc}") from None
    if header.get("spec_hash") != spec.hash():
        raise CacheInvalid("cached for a different chain (hash)")
    if header.get("spec") != spec.as_dict():
        raise CacheInvalid("cached for a different chain (echo)")
    if header.get("sector") != sector_token:
        raise CacheInvalid("cached for a different sector")
    if header.get("payload_sha256") != hashlib.sha256(payload).hexdigest():
        raise CacheInvalid("payload checksum mismatch")
    n = int(header["n"])
    energies = np.frombuffer(payload[:8 * n], dtype="<f8").copy()
    if energies.shape[0] != n:
        raise CacheInvalid("truncated eigenvalues")
    vectors = None
    if header["has_vectors"]:
        dtype = np.complex128 if header["vector_dtype"] == "complex128" else np.float64
        need = n * n * np.dtype(dtype).itemsize
        raw = payload[8 * n:8 * n + need]
        if len(raw) != need:
            raise CacheInvalid("truncated eigenvectors")
        vectors = np.frombuffer(raw, dtype=dtype).reshape((n, n), order="F").copy()
    elif want_vectors:
        raise CacheInvalid("cached without eigenvectors")
    return Spectrum(energies=energies, eigenvectors=vectors)


def cache_path(cache_dir, spec, sector_token):
    return os.path.join(cache_dir, f"{spec.hash()[:20]}.{sector_token}.eig")


def load_or_build_blocks(spec, h_op, route, cache_dir, want_vectors=True,
                         notices=None):
    """Eigen blocks through the cache; corrupt entries are rebuilt.

    route is "dense" (single block, token "all") or "sectors"
    (translation blocks). Returns the same [(basis | None, Spectrum), ...]
    shape as eigen_blocks, plus the list of cache files touched.
    """
    os.makedirs(cache_dir, exist_ok=True)
    files = []

    def fetch(token, build):
        path = cache_path(cache_dir, spec, token)
        files.append(path)
        try:
            return load_spectrum_cache(path, spec, token,
                                       want_vectors=want_vectors)
        except CacheInvalid as exc:
            if notices is not None and os.path.exists(path):
                notices.append(f"cache {os.path.basename(path)}: {exc}; rebuilding")
        spectrum = build()
        save_spectrum_cache(path, spec, token, spectrum)
        return spectrum

    if route == "dense":
        spectrum = fetch("all", lambda: diagonalize(h_op, want_vectors=want_vectors))
        return [(None, spectrum)], files
    if route != "sectors":
        raise ConfigError(f"unknown spectra route {route!r}")
    bases = sector_decompose(spec, split_reflection=False)
    blocks = []
    for basis in bases:
        token = basis.label.token()
        spectrum = fetch(token, lambda b=basis: diagonalize_sector(
            h_op, b, want_vectors=want_vectors))
        spectrum.sector_label = basis.label
        blocks.append((basis, spectrum))
    return blocks, files


def symmetric_sector_energies(spec, h_op, cache_dir, notices=None):
    """Eigenvalues of the zero-momentum, reflection-even block.

    This is the block whose gap statistics are meaningful: translation,
    reflection, and momentum labels are all resolved, so no exact
    degeneracies pollute the spacings.
    """
    os.makedirs(cache_dir, exist_ok=True)
    bases = sector_decompose(spec, split_reflection=True)
    target = None
    for b in bases:
        if b.label.kappa == 0 and b.label.parity == 1:
            target = b
            break
    if target is None:
        raise ConfigError("no zero-momentum reflection-even block found")
    token = target.label.token()
    path = cache_path(cache_dir, spec, token)
    try:
        spectrum = load_spectrum_cache(path, spec, token, want_vectors=False)
    except CacheInvalid as exc:
        if notices is not None and os.path.exists(path):
            notices.append(f"cache {os.path.basename(path)}: {exc}; rebuilding")
        spectrum = diagonalize_sector(h_op, target, want_vectors=False)
        save_spectrum_cache(path, spec, token, spectrum)
    return spectrum.energies, path


# ============================================================
# plot script emission
# ============================================================
# One self-contained matplotlib script per figure family. Scripts load
# only the CSVs sitting next to them; guide-line exponents are filled in
# from the manifest's fitted verdicts at emission time, never hard-coded
# here. A family whose CSV went missing is skipped with a notice.

_PLOT_PRELUDE = '''\
"""Auto-generated plot script; runs standalone next to its CSV files."""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(HERE, name)) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    names = [s.strip() for s in lines[0].split(",")]
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    return {n: data[:, k] for k, n in enumerate(names)}
'''


def _guide_label(exponent):
    return f"t^-{exponent:g}"


def _autocorr_script(entries):
    # entries: (csv, label, guide_nu or None)
    body = [_PLOT_PRELUDE, "", "fig, ax = plt.subplots(figsize=(5.2, 4.0))"]
    for csv, label, nu in entries:
        body.append(f"d = load({csv!r})")
        body.append("mask = (d['t'] > 0) & (np.abs(d['re_c']) > 0)")
        body.append(
            f"ax.loglog(d['t'][mask], np.abs(d['re_c'][mask]), label={label!r})")
        if nu is not None:
            body += [
                f"nu = {nu!r}  # from the fitted verdict",
                "tg = d['t'][mask]",
                "if tg.size:",
                "    anchor = np.abs(d['re_c'][mask])[len(tg) // 3]",
                "    ref = tg[len(tg) // 3]",
                "    ax.loglog(tg, anchor * (tg / ref) ** (-nu), 'k--', lw=0.8,"
                f" label={_guide_label(nu)!r})",
            ]
    body += [
        "ax.set_xlabel('t')",
        "ax.set_ylabel('|C(t)|')",
        "ax.legend(fontsize=7)",
        "fig.tight_layout()",
        "fig.savefig(os.path.join(HERE, 'autocorr.png'), dpi=160)",
        "print('wrote autocorr.png')",
        "",
    ]
    return "\n".join(body)


_F2_GUIDES = {
    1: ("om ** -0.5", "omega^-1/2"),
    2: ("np.abs(np.log(om))", "|log omega|"),
    3: ("om ** 0.5", "omega^1/2"),
    4: ("om", "omega"),
}


def _f2_script(entries):
    # entries: (csv, label, m or None)
    body = [_PLOT_PRELUDE, "", "fig, ax = plt.subplots(figsize=(5.2, 4.0))"]
    for csv, label, m in entries:
        body.append(f"d = load({csv!r})")
        body.append("mask = (d['count'] > 0) & (d['omega'] > 0) & (d['f2'] > 0)")
        body.append("om = d['omega'][mask]")
        body.append(f"ax.loglog(om, d['f2'][mask], '.', ms=3, label={label!r})")
        if m in _F2_GUIDES:
            expr, glabel = _F2_GUIDES[m]
            body += [
                f"guide = {expr}  # overlap order m = {m} from the manifest",
                "k = len(om) // 3",
                "if om.size:",
                "    scale = d['f2'][mask][k] / guide[k]",
                f"    ax.loglog(om, scale * guide, 'k--', lw=0.8, label={glabel!r})",
            ]
    body += [
        "ax.set_xlabel('omega')",
        "ax.set_ylabel('|f|^2')",
        "ax.legend(fontsize=7)",
        "fig.tight_layout()",
        "fig.savefig(os.path.join(HERE, 'f2.png'), dpi=160)",
        "print('wrote f2.png')",
        "",
    ]
    return "\n".join(body)


def _plateau_script(entries):
    # entries: (csv, label, slope or None)
    body = [_PLOT_PRELUDE, "", "fig, ax = plt.subplots(figsize=(5.2, 4.0))"]
    for csv, label, slope in entries:
        body.append(f"d = load({csv!r})")
        body.append("mask = d['plateau'] > 0")
        body.append("lv = d['L'][mask]")
        body.append(f"ax.loglog(lv, d['plateau'][mask], 'o-', label={label!r})")
        if slope is not None:
            body += [
                f"slope = {slope!r}  # fitted finite-size exponent",
                "if lv.size:",
                "    anchor = d['plateau'][mask][0]",
                "    ax.loglog(lv, anchor * (lv / lv[0]) ** slope, 'k--',"
                " lw=0.8, label=f'L^{slope:g}')",
            ]
    body += [
        "ax.set_xlabel('L')",
        "ax.set_ylabel('infinite-time plateau')",
        "ax.legend(fontsize=7)",
        "fig.tight_layout()",
        "fig.savefig(os.path.join(HERE, 'plateau.png'), dpi=160)",
        "print('wrote plateau.png')",
        "",
    ]
    return "\n".join(body)


def _gap_ratio_script(csv):
    body = [
        _PLOT_PRELUDE,
        "",
        f"d = load({csv!r})",
        "fig, ax = plt.subplots(figsize=(5.2, 4.0))",
        "ax.plot(d['L'], d['r'], 'o-', label='measured')",
        "ax.axhline(0.5307, color='k', ls='--', lw=0.8, label='GOE 0.5307')",
        "ax.axhline(2 * np.log(2) - 1, color='gray', ls=':', lw=0.8,"
        " label='Poisson 0.3863')",
        "ax.set_xlabel('L')",
        "ax.set_ylabel('mean gap ratio')",
        "ax.legend(fontsize=7)",
        "fig.tight_layout()",
        "fig.savefig(os.path.join(HERE, 'gap_ratio.png'), dpi=160)",
        "print('wrote gap_ratio.png')",
        "",
    ]
    return "\n".join(body)


def emit_plots(manifest, out_dir=None, notices=None):
    """Write one plot script per figure family present in the manifest.

    manifest is a RunManifest (or its dict form). Returns the script
    paths. Families whose CSVs are missing on disk are skipped with a
    notice; a manifest without completed tasks yields no scripts.
    """
    md = manifest if isinstance(manifest, dict) else manifest.to_dict()
    out_dir = out_dir or md.get("out_dir") or "."
    tasks = [t for t in md.get("tasks", []) if t.get("status") == "done"]
    if notices is None:
        notices = []

    def results(kind):
        return [t for t in tasks if t["kind"] == kind]

    def have(csv):
        ok = os.path.exists(os.path.join(out_dir, csv))
        if not ok:
            notices.append(f"missing {csv}; skipped from plots")
        return ok

    verdicts = {}
    for t in results("verdict"):
        key = (t["params"]["length"], t["params"]["beta"],
               t["params"]["observable"])
        verdicts[key] = t["results"]
    orders = {}
    for t in results("overlap"):
        key = (t["params"]["length"], t["params"]["beta"],
               t["params"]["observable"])
        orders[key] = t["results"].get("order")

    written = []

    auto_entries = []
    for t in results("eth") + results("dqt"):
        p = t["params"]
        key = (p["length"], p["beta"], p["observable"])
        csvs = [c for c in t["outputs"] if c.startswith("autocorr-")]
        v = verdicts.get(key)
        nu = None
        if v is not None and np.isfinite(v.get("bound", np.inf)):
            nu = float(v["bound"])
        for csv in sorted(csvs):
            if have(csv):
                label = f"L={p['length']} beta={p['beta']:g} {p['observable']}"
                if csv.startswith("autocorr-dqt"):
                    label += " (dqt)"
                auto_entries.append((csv, label, nu))
    if auto_entries:
        path = os.path.join(out_dir, "plot_autocorr.py")
        with open(path, "wb") as fh:
            fh.write(_autocorr_script(auto_entries).encode())
        written.append(path)

    f2_entries = []
    for t in results("eth") + results("dqt"):
        p = t["params"]
        key = (p["length"], p["beta"], p["observable"])
        m = orders.get(key)
        m = int(m) if isinstance(m, (int, float)) and np.isfinite(m) else None
        for csv in sorted(c for c in t["outputs"] if c.startswith("f2-")):
            if have(csv):
                f2_entries.append(
                    (csv, f"L={p['length']} beta={p['beta']:g} {p['observable']}", m))
    if f2_entries:
        path = os.path.join(out_dir, "plot_f2.py")
        with open(path, "wb") as fh:
            fh.write(_f2_script(f2_entries).encode())
        written.append(path)

    plateau_entries = []
    for t in results("plateau"):
        p = t["params"]
        csvs = [c for c in t["outputs"] if c.startswith("plateau-")]
        slope = t["results"].get("exponent")
        for csv in sorted(csvs):
            if have(csv):
                plateau_entries.append(
                    (csv, f"beta={p['beta']:g} {p['observable']}", slope))
    if plateau_entries:
        path = os.path.join(out_dir, "plot_plateau.py")
        with open(path, "wb") as fh:
            fh.write(_plateau_script(plateau_entries).encode())
        written.append(path)

    gr = results("gap_ratio")
    if gr:
        csvs = sorted(c for t in gr for c in t["outputs"]
                      if c.startswith("gap-ratio"))
        if csvs and have(csvs[0]):
            path = os.path.join(out_dir, "plot_gap_ratio.py")
            with open(path, "wb") as fh:
                fh.write(_gap_ratio_script(csvs[0]).encode())
            written.append(path)

    return written
