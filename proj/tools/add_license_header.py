#!/usr/bin/env python3
# Copyright 2026 The Twinbench Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Prepend the Apache-2.0 header to project sources that lack it.

Usage: tools/add_license_header.py [--check] [root]
"""

import argparse
import pathlib
import sys

HEADER = """Copyright 2026 The Twinbench Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License."""

DIRS = ("core", "tests", "tools", "benchmarks")
SLASH = {".cpp", ".hpp", ".h", ".cc"}
HASH = {".py", ".cmake", ".sh"}


def comment(style):
    lines = HEADER.splitlines()
    return "\n".join((style + " " + l).rstrip() for l in lines) + "\n\n"


def style_for(path):
    if path.suffix in SLASH:
        return "//"
    if path.suffix in HASH or path.name == "CMakeLists.txt":
        return "#"
    return None


def process(path, check):
    style = style_for(path)
    if style is None:
        return False
    text = path.read_text()
    if "Copyright 2026 The Twinbench Authors." in text[:400]:
        return False
    if check:
        return True
    shebang = ""
    if text.startswith("#!"):
        shebang, _, text = text.partition("\n")
        shebang += "\n"
    path.write_text(shebang + comment(style) + text)
    return True


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--check", action="store_true", help="list files missing the header and exit 1")
    ap.add_argument("root", nargs="?", default=pathlib.Path(__file__).resolve().parent.parent, type=pathlib.Path)
    args = ap.parse_args()
    files = [args.root / "CMakeLists.txt"]
    for d in DIRS:
        files += sorted(p for p in (args.root / d).rglob("*") if p.is_file())
    touched = [p for p in files if process(p, args.check)]
    for p in touched:
        print(p.relative_to(args.root))
    return 1 if args.check and touched else 0


if __name__ == "__main__":
    sys.exit(main())
