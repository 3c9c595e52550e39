/** Corpus build driver: compiles each fixture variant, strips a twin, and
 * derives its ground-truth file.  Output layout is deterministic: entries are
 * emitted in matrix order and file names are `<fixture>_<opt>[.suffix]`.
 */

import { execFileSync } from 'node:child_process';
import * as fs from 'node:fs';
import * as path from 'node:path';

import { COMMON_FLAGS, FIXTURES, Fixture, Opt, START_STUB } from './matrix.js';
import { formatTruth, parseFuncSymbols } from './truth.js';

export interface ManifestEntry {
  fixture: string;
  opt: Opt;
  stripped: string;
  unstripped: string;
  truth: string;
}

export interface BuildNote {
  fixture: string;
  reason: string;
}

export interface BuildResult {
  manifest: ManifestEntry[];
  notes: BuildNote[];
}

export interface Toolchain {
  cc: string;
  objcopy: string;
  readelf: string;
}

export const DEFAULT_TOOLCHAIN: Toolchain = {
  cc: 'gcc',
  objcopy: 'objcopy',
  readelf: 'readelf',
};

export function toolAvailable(tool: string): boolean {
  try {
    execFileSync(tool, ['--version'], { stdio: 'ignore' });
    return true;
  } catch {
    return false;
  }
}

function buildVariant(
  fixture: Fixture,
  opt: Opt,
  fixturesDir: string,
  outDir: string,
  tc: Toolchain,
): ManifestEntry {
  const base = `${fixture.name}_${opt}`;
  const unstripped = path.join(outDir, base);
  const stripped = `${unstripped}.stripped`;
  const truth = `${unstripped}.truth`;

  const args = [
    `-${opt}`,
    ...COMMON_FLAGS,
    ...(fixture.extraFlags ?? []),
    ...fixture.sources.map((s) => path.join(fixturesDir, s)),
    path.join(fixturesDir, START_STUB),
    '-o',
    unstripped,
  ];
  execFileSync(tc.cc, args, { stdio: 'pipe' });
  execFileSync(tc.objcopy, ['--strip-all', unstripped, stripped], { stdio: 'pipe' });
  const symbols = execFileSync(tc.readelf, ['-sW', unstripped], {
    encoding: 'utf-8',
  });
  fs.writeFileSync(truth, formatTruth(parseFuncSymbols(symbols)));
  return {
    fixture: fixture.name,
    opt,
    stripped: path.basename(stripped),
    unstripped: path.basename(unstripped),
    truth: path.basename(truth),
  };
}

export function buildCorpus(
  outDir: string,
  fixturesDir: string = path.join(path.dirname(outDir), 'fixtures'),
  tc: Toolchain = DEFAULT_TOOLCHAIN,
  fixtures: Fixture[] = FIXTURES,
): BuildResult {
  fs.mkdirSync(outDir, { recursive: true });
  const manifest: ManifestEntry[] = [];
  const notes: BuildNote[] = [];

  const missing = [tc.cc, tc.objcopy, tc.readelf].filter((t) => !toolAvailable(t));
  if (missing.length) {
    for (const f of fixtures) {
      notes.push({ fixture: f.name, reason: `toolchain missing: ${missing.join(', ')}` });
    }
  } else {
    for (const fixture of fixtures) {
      for (const opt of fixture.opts) {
        try {
          manifest.push(buildVariant(fixture, opt, fixturesDir, outDir, tc));
        } catch (err) {
          notes.push({
            fixture: fixture.name,
            reason: `build failed at ${opt}: ${(err as Error).message}`,
          });
        }
      }
    }
  }

  fs.writeFileSync(
    path.join(outDir, 'manifest.json'),
    JSON.stringify(manifest, null, 2) + '\n',
  );
  if (notes.length) {
    fs.writeFileSync(
      path.join(outDir, 'build-notes.json'),
      JSON.stringify(notes, null, 2) + '\n',
    );
  }
  return { manifest, notes };
}
