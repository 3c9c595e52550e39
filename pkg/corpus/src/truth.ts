/** Ground-truth extraction from a symbol-table dump.
 *
 * Truth is the set of nonzero-size FUNC symbols of the unstripped twin,
 * read from `readelf -sW` output rather than from the detection library,
 * keeping the two sides of the evaluation independent.
 */

export function parseFuncSymbols(readelfOutput: string): number[] {
  const addrs = new Set<number>();
  for (const line of readelfOutput.split('\n')) {
    // e.g. "  12: 0000000000001040   143 FUNC    GLOBAL DEFAULT   13 main"
    const m = line.match(
      /^\s*\d+:\s+([0-9a-f]+)\s+(0x[0-9a-f]+|\d+)\s+FUNC\s+\S+\s+\S+\s+(\S+)\s+\S/,
    );
    if (!m) continue;
    const [, addrHex, sizeField, shndx] = m;
    const size = sizeField.startsWith('0x')
      ? parseInt(sizeField, 16)
      : parseInt(sizeField, 10);
    if (size === 0 || shndx === 'UND') continue;
    addrs.add(parseInt(addrHex, 16));
  }
  return [...addrs].sort((a, b) => a - b);
}

export function formatTruth(addrs: number[]): string {
  return addrs.map((a) => `0x${a.toString(16)}`).join('\n') + (addrs.length ? '\n' : '');
}
