/**
 * Minimal PNG reader: 8-bit gray / RGB / RGBA / palette, non-interlaced.
 * Enough to load the pipeline's flat-colored scene images without pulling
 * in a native image dependency; zlib comes from the node runtime.
 */

import { inflateSync } from "node:zlib";

export interface Image {
  width: number;
  height: number;
  channels: number;
  data: Uint8Array; // row-major, `channels` bytes per pixel
}

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

export function decodePng(buf: Uint8Array): Image {
  for (let i = 0; i < 8; i++) {
    if (buf[i] !== SIGNATURE[i]) throw new Error("not a PNG file");
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  let off = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = 0;
  let palette: Uint8Array | null = null;
  const idat: Uint8Array[] = [];

  while (off < buf.length) {
    const len = view.getUint32(off);
    const type = String.fromCharCode(buf[off + 4], buf[off + 5], buf[off + 6], buf[off + 7]);
    const body = buf.subarray(off + 8, off + 8 + len);
    if (type === "IHDR") {
      width = view.getUint32(off + 8);
      height = view.getUint32(off + 12);
      bitDepth = buf[off + 16];
      colorType = buf[off + 17];
      const interlace = buf[off + 20];
      if (bitDepth !== 8) throw new Error(`unsupported bit depth ${bitDepth}`);
      if (![0, 2, 3, 6].includes(colorType)) {
        throw new Error(`unsupported color type ${colorType}`);
      }
      if (interlace !== 0) throw new Error("interlaced PNG not supported");
    } else if (type === "PLTE") {
      palette = body.slice();
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
    off += 12 + len; // length + type + body + crc
  }
  if (!width || !height) throw new Error("missing IHDR");

  const channels = colorType === 2 ? 3 : colorType === 6 ? 4 : 1;
  const raw = inflateSync(Buffer.concat(idat.map((c) => Buffer.from(c))));
  const stride = width * channels;
  const out = new Uint8Array(height * stride);
  let pos = 0;
  let prevRow = new Uint8Array(stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[pos++];
    const row = raw.subarray(pos, pos + stride);
    pos += stride;
    const cur = out.subarray(y * stride, (y + 1) * stride);
    unfilterRow(filter, row, cur, prevRow, channels);
    prevRow = cur;
  }

  if (colorType === 3) {
    if (!palette) throw new Error("palette image without PLTE");
    const rgb = new Uint8Array(width * height * 3);
    for (let i = 0; i < width * height; i++) {
      const p = out[i] * 3;
      rgb[i * 3] = palette[p];
      rgb[i * 3 + 1] = palette[p + 1];
      rgb[i * 3 + 2] = palette[p + 2];
    }
    return { width, height, channels: 3, data: rgb };
  }
  return { width, height, channels, data: out };
}

function unfilterRow(
  filter: number,
  row: Uint8Array,
  cur: Uint8Array,
  prev: Uint8Array,
  bpp: number,
): void {
  switch (filter) {
    case 0:
      cur.set(row);
      return;
    case 1:
      for (let i = 0; i < row.length; i++) {
        cur[i] = (row[i] + (i >= bpp ? cur[i - bpp] : 0)) & 0xff;
      }
      return;
    case 2:
      for (let i = 0; i < row.length; i++) {
        cur[i] = (row[i] + prev[i]) & 0xff;
      }
      return;
    case 3:
      for (let i = 0; i < row.length; i++) {
        const left = i >= bpp ? cur[i - bpp] : 0;
        cur[i] = (row[i] + ((left + prev[i]) >> 1)) & 0xff;
      }
      return;
    case 4:
      for (let i = 0; i < row.length; i++) {
        const a = i >= bpp ? cur[i - bpp] : 0;
        const b = prev[i];
        const c = i >= bpp ? prev[i - bpp] : 0;
        cur[i] = (row[i] + paeth(a, b, c)) & 0xff;
      }
      return;
    default:
      throw new Error(`unknown PNG filter ${filter}`);
  }
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

/** RGB triple of a pixel, expanding gray to three equal channels. */
export function rgbAt(img: Image, x: number, y: number): [number, number, number] {
  const i = (y * img.width + x) * img.channels;
  if (img.channels === 1) {
    const v = img.data[i];
    return [v, v, v];
  }
  return [img.data[i], img.data[i + 1], img.data[i + 2]];
}
