/**
 * Exchange wire format shared with the fusion pipeline:
 *   <frame:06>.prompts.json  -> {frame, image, width, height, prompts[]}
 *   <frame:06>.masks.json    -> {frame, width, height, masks[]}
 * Coordinates are integer pixels, origin top-left, u = column.
 */

export interface Prompt {
  id: number;
  point: [number, number] | null;
  bbox: [number, number, number, number] | null;
}

export interface MaskRequest {
  frame: number;
  image: string; // relative to the prompts file's directory
  width: number;
  height: number;
  prompts: Prompt[];
}

export interface MaskEntry {
  prompt_id: number;
  rle: number[];
}

export interface MaskResponse {
  frame: number;
  width: number;
  height: number;
  masks: MaskEntry[];
}

export class SchemaError extends Error {}

function asInt(value: unknown, what: string): number {
  if (typeof value !== "number" || !Number.isInteger(value)) {
    throw new SchemaError(`${what} must be an integer, got ${JSON.stringify(value)}`);
  }
  return value;
}

export function parseRequest(text: string, source: string): MaskRequest {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (e) {
    throw new SchemaError(`${source}: invalid JSON (${e})`);
  }
  if (typeof doc !== "object" || doc === null) {
    throw new SchemaError(`${source}: prompts document must be an object`);
  }
  const d = doc as Record<string, unknown>;
  const frame = asInt(d.frame, "frame");
  const width = asInt(d.width, "width");
  const height = asInt(d.height, "height");
  if (width <= 0 || height <= 0) {
    throw new SchemaError(`${source}: bad image size ${width}x${height}`);
  }
  if (typeof d.image !== "string") {
    throw new SchemaError(`${source}: image must be a path string`);
  }
  if (!Array.isArray(d.prompts)) {
    throw new SchemaError(`${source}: prompts must be a list`);
  }
  const seen = new Set<number>();
  const prompts: Prompt[] = d.prompts.map((raw, i) => {
    if (typeof raw !== "object" || raw === null) {
      throw new SchemaError(`${source}: prompt ${i} must be an object`);
    }
    const p = raw as Record<string, unknown>;
    const id = asInt(p.id, `prompt ${i} id`);
    if (seen.has(id)) throw new SchemaError(`${source}: duplicate prompt id ${id}`);
    seen.add(id);
    let point: [number, number] | null = null;
    if (p.point != null) {
      if (!Array.isArray(p.point) || p.point.length !== 2) {
        throw new SchemaError(`${source}: prompt ${id} point must be [u, v]`);
      }
      point = [asInt(p.point[0], "u"), asInt(p.point[1], "v")];
      if (point[0] < 0 || point[0] >= width || point[1] < 0 || point[1] >= height) {
        throw new SchemaError(`${source}: prompt ${id} point out of bounds`);
      }
    }
    let bbox: [number, number, number, number] | null = null;
    if (p.bbox != null) {
      if (!Array.isArray(p.bbox) || p.bbox.length !== 4) {
        throw new SchemaError(`${source}: prompt ${id} bbox must be [u0, v0, u1, v1]`);
      }
      bbox = [
        asInt(p.bbox[0], "u0"), asInt(p.bbox[1], "v0"),
        asInt(p.bbox[2], "u1"), asInt(p.bbox[3], "v1"),
      ];
      if (bbox[2] < bbox[0] || bbox[3] < bbox[1]) {
        throw new SchemaError(`${source}: prompt ${id} bbox is degenerate`);
      }
    }
    if (point === null && bbox === null) {
      throw new SchemaError(`${source}: prompt ${id} needs a point or a bbox`);
    }
    return { id, point, bbox };
  });
  return { frame, image: d.image, width, height, prompts };
}

export function serializeResponse(response: MaskResponse): string {
  return JSON.stringify(
    {
      frame: response.frame,
      height: response.height,
      masks: response.masks.map((m) => ({ prompt_id: m.prompt_id, rle: m.rle })),
      width: response.width,
    },
    null,
    1,
  );
}
