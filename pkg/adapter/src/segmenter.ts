/**
 * Promptable instance segmentation behind a tiny interface.
 *
 * The built-in backend segments by flood-filling connected regions of
 * near-identical color, which answers prompts exactly on the pipeline's
 * flat-colored synthetic images and keeps this reference adapter free of a
 * model runtime. A real foundation-model backend plugs in behind the same
 * interface; when one returns several mask hypotheses for a prompt it must
 * reduce them to the single highest-confidence mask, because the protocol
 * carries exactly one mask per prompt.
 */

import { Image, rgbAt } from "./png.js";
import { Prompt } from "./protocol.js";

export interface Segmenter {
  /** Bitmap of the prompted instance, or null when unanswerable. */
  segment(image: Image, prompt: Prompt): Uint8Array | null;
}

const BACKGROUND_ID = -1;

export class ColorRegionSegmenter implements Segmenter {
  private readonly tolerance: number;
  private labels: Int32Array | null = null;
  private labeledImage: Image | null = null;

  constructor(tolerance = 4) {
    this.tolerance = tolerance;
  }

  segment(image: Image, prompt: Prompt): Uint8Array | null {
    const labels = this.labelRegions(image);
    let region: number;
    if (prompt.point !== null) {
      // a point picks its region; with a bbox present it acts as the
      // positive click inside the box
      region = labels[prompt.point[1] * image.width + prompt.point[0]];
    } else {
      region = this.dominantRegionInBox(image, labels, prompt.bbox!);
    }
    if (region === BACKGROUND_ID) return null;
    const bitmap = new Uint8Array(image.width * image.height);
    for (let i = 0; i < labels.length; i++) {
      if (labels[i] === region) bitmap[i] = 1;
    }
    return bitmap;
  }

  private dominantRegionInBox(
    image: Image,
    labels: Int32Array,
    bbox: [number, number, number, number],
  ): number {
    const [u0, v0, u1, v1] = bbox;
    const counts = new Map<number, number>();
    for (let v = Math.max(0, v0); v <= Math.min(image.height - 1, v1); v++) {
      for (let u = Math.max(0, u0); u <= Math.min(image.width - 1, u1); u++) {
        const r = labels[v * image.width + u];
        if (r === BACKGROUND_ID) continue;
        counts.set(r, (counts.get(r) ?? 0) + 1);
      }
    }
    let best = BACKGROUND_ID;
    let bestCount = 0;
    for (const [r, c] of counts) {
      if (c > bestCount || (c === bestCount && r < best)) {
        best = r;
        bestCount = c;
      }
    }
    return best;
  }

  /** 4-connected components of near-equal color; black is background. */
  private labelRegions(image: Image): Int32Array {
    if (this.labeledImage === image && this.labels) return this.labels;
    const { width, height } = image;
    const labels = new Int32Array(width * height).fill(-2);
    let next = 0;
    const stack: number[] = [];
    for (let start = 0; start < width * height; start++) {
      if (labels[start] !== -2) continue;
      const [r0, g0, b0] = rgbAt(image, start % width, Math.floor(start / width));
      if (r0 + g0 + b0 === 0) {
        labels[start] = BACKGROUND_ID;
        continue;
      }
      const region = next++;
      labels[start] = region;
      stack.push(start);
      while (stack.length) {
        const i = stack.pop()!;
        const x = i % width;
        const y = Math.floor(i / width);
        for (const [dx, dy] of [[1, 0], [-1, 0], [0, 1], [0, -1]] as const) {
          const nx = x + dx;
          const ny = y + dy;
          if (nx < 0 || nx >= width || ny < 0 || ny >= height) continue;
          const j = ny * width + nx;
          if (labels[j] !== -2) continue;
          const [r, g, b] = rgbAt(image, nx, ny);
          if (
            Math.abs(r - r0) <= this.tolerance &&
            Math.abs(g - g0) <= this.tolerance &&
            Math.abs(b - b0) <= this.tolerance
          ) {
            labels[j] = region;
            stack.push(j);
          } else if (r + g + b === 0) {
            labels[j] = BACKGROUND_ID;
          }
        }
      }
    }
    this.labels = labels;
    this.labeledImage = image;
    return labels;
  }
}

export function makeSegmenter(checkpoint: string): Segmenter {
  if (checkpoint === "color-region" || checkpoint === "") {
    return new ColorRegionSegmenter();
  }
  throw new Error(
    `unknown checkpoint '${checkpoint}': this reference adapter ships only ` +
      `the built-in 'color-region' backend`,
  );
}
