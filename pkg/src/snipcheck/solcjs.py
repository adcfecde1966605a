"""Make ``solc --standard-json`` stand-ins from solc-js (emscripten) builds.

Native compiler binaries are not always obtainable; the npm ``solc``
package ships the same compiler as ``soljson.js``.  A small node runner
calls its exported standard-JSON entry point, and a shell shim gives it
the command-line shape the bridge expects.
"""

from __future__ import annotations

import shutil
import stat
import tarfile
from pathlib import Path

RUNNER = r"""'use strict';
// usage: node runner.js <dir containing soljson.js> --standard-json < input.json
const path = require('path');
const soljson = require(path.resolve(process.argv[2], 'soljson.js'));
let compile;
if (typeof soljson._solidity_compile === 'function') {
  const f = soljson.cwrap('solidity_compile', 'string', ['string', 'number', 'number']);
  compile = (input) => f(input, 0, 0);
} else if (typeof soljson._compileStandard === 'function') {
  const f = soljson.cwrap('compileStandard', 'string', ['string', 'number']);
  compile = (input) => f(input, 0);
} else {
  process.stderr.write('soljson.js exposes no standard-JSON entry point\n');
  process.exit(3);
}
const chunks = [];
process.stdin.on('data', (c) => chunks.push(c));
process.stdin.on('end', () => {
  process.stdout.write(compile(Buffer.concat(chunks).toString('utf8')));
});
"""


def write_runner(directory: str | Path) -> Path:
    path = Path(directory) / "solcjs-runner.js"
    path.write_text(RUNNER)
    return path


def unpack_npm_tarball(tarball: str | Path, dest: str | Path) -> Path:
    """Extract an npm ``solc-x.y.z.tgz`` and return the folder holding
    ``soljson.js``."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    with tarfile.open(tarball) as tf:
        tf.extractall(dest, filter="data")
    hits = list(dest.rglob("soljson.js"))
    if not hits:
        raise FileNotFoundError(f"{tarball} contains no soljson.js")
    return hits[0].parent


def make_shim(soljson_dir: str | Path, shim_path: str | Path, node: str | None = None) -> Path:
    node = node or shutil.which("node")
    if node is None:
        raise FileNotFoundError("node is not installed")
    soljson_dir = Path(soljson_dir).resolve()
    runner = write_runner(soljson_dir)
    shim = Path(shim_path)
    shim.write_text(f'#!/bin/sh\nexec "{node}" "{runner}" "{soljson_dir}" "$@"\n')
    shim.chmod(shim.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return shim


def write_catalog(entries: dict[str, str | Path], path: str | Path) -> Path:
    """TOML ``[compilers]`` table mapping version -> executable."""
    lines = ["[compilers]"]
    for version, exe in sorted(entries.items()):
        lines.append(f'"{version}" = "{Path(exe).resolve()}"')
    out = Path(path)
    out.write_text("\n".join(lines) + "\n")
    return out


def build_catalog(tarballs: dict[str, str | Path], workdir: str | Path) -> Path:
    """Unpack each ``version -> tarball``, make shims, write ``catalog.toml``."""
    workdir = Path(workdir)
    entries = {}
    for version, tarball in tarballs.items():
        folder = unpack_npm_tarball(tarball, workdir / version)
        entries[version] = make_shim(folder, workdir / f"solc-{version}")
    return write_catalog(entries, workdir / "catalog.toml")


if __name__ == "__main__":  # pragma: no cover - maintenance helper
    import sys

    if len(sys.argv) < 3:
        sys.exit("usage: python -m snipcheck.solcjs WORKDIR VERSION=TARBALL...")
    pairs = dict(arg.split("=", 1) for arg in sys.argv[2:])
    print(build_catalog(pairs, sys.argv[1]))
