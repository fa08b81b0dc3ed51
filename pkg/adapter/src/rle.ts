/**
 * Row-major run-length encoding with alternating counts, the first counting
 * zeros (possibly zero-length). Counts must sum to width * height.
 */

export function encodeRle(bitmap: Uint8Array): number[] {
  const counts: number[] = [];
  let value = 0;
  let run = 0;
  for (let i = 0; i < bitmap.length; i++) {
    const v = bitmap[i] ? 1 : 0;
    if (v === value) {
      run++;
    } else {
      counts.push(run);
      value = v;
      run = 1;
    }
  }
  counts.push(run);
  return counts;
}

export function decodeRle(counts: number[], width: number, height: number): Uint8Array {
  let total = 0;
  for (const c of counts) {
    if (c < 0 || !Number.isInteger(c)) throw new Error(`bad RLE count ${c}`);
    total += c;
  }
  if (total !== width * height) {
    throw new Error(`RLE counts sum to ${total}, expected ${width * height}`);
  }
  const out = new Uint8Array(width * height);
  let pos = 0;
  let value = 0;
  for (const c of counts) {
    if (value) out.fill(1, pos, pos + c);
    pos += c;
    value ^= 1;
  }
  return out;
}
