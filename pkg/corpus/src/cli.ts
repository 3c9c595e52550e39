import * as path from 'node:path';
import { fileURLToPath } from 'node:url';

import { buildCorpus } from './build.js';

const here = path.dirname(fileURLToPath(import.meta.url));
const outDir = process.argv[2] ?? path.resolve(here, '..', 'prebuilt');
const fixturesDir = path.resolve(here, '..', 'fixtures');

const { manifest, notes } = buildCorpus(outDir, fixturesDir);
console.log(`built ${manifest.length} variants into ${outDir}`);
for (const note of notes) {
  console.log(`skipped ${note.fixture}: ${note.reason}`);
}
process.exit(notes.some((n) => n.reason.startsWith('build failed')) ? 1 : 0);
