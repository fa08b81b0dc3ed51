/**
 * Answering side of the exchange: read a prompts file, segment, write the
 * masks file next to it. Output is written to a temp file and renamed so a
 * polling consumer never sees partial JSON.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { decodePng } from "./png.js";
import { encodeRle } from "./rle.js";
import { MaskResponse, parseRequest, serializeResponse } from "./protocol.js";
import { Segmenter } from "./segmenter.js";

export function masksPathFor(promptsFile: string): string {
  return promptsFile.replace(/\.prompts\.json$/, ".masks.json");
}

export function answerRequest(promptsFile: string, segmenter: Segmenter): string {
  const text = fs.readFileSync(promptsFile, "utf-8");
  const request = parseRequest(text, promptsFile);

  const response: MaskResponse = {
    frame: request.frame,
    width: request.width,
    height: request.height,
    masks: [],
  };
  if (request.prompts.length > 0) {
    const imagePath = path.resolve(path.dirname(promptsFile), request.image);
    const image = decodePng(fs.readFileSync(imagePath));
    if (image.width !== request.width || image.height !== request.height) {
      throw new Error(
        `${imagePath}: image is ${image.width}x${image.height}, request says ` +
          `${request.width}x${request.height}`,
      );
    }
    for (const prompt of request.prompts) {
      const bitmap = segmenter.segment(image, prompt);
      if (bitmap === null || !bitmap.includes(1)) continue; // unanswered
      response.masks.push({ prompt_id: prompt.id, rle: encodeRle(bitmap) });
    }
  }

  const outPath = masksPathFor(promptsFile);
  const tmpPath = `${outPath}.tmp`;
  fs.writeFileSync(tmpPath, serializeResponse(response));
  fs.renameSync(tmpPath, outPath);
  return outPath;
}

/** Answer every unanswered prompts file in the directory once. */
export function sweepDirectory(dir: string, segmenter: Segmenter): string[] {
  const produced: string[] = [];
  const entries = fs.readdirSync(dir).filter((f) => f.endsWith(".prompts.json")).sort();
  for (const entry of entries) {
    const promptsFile = path.join(dir, entry);
    if (fs.existsSync(masksPathFor(promptsFile))) continue;
    produced.push(answerRequest(promptsFile, segmenter));
  }
  return produced;
}

export async function watchDirectory(
  dir: string,
  segmenter: Segmenter,
  pollMs = 500,
  shouldStop: () => boolean = () => false,
): Promise<void> {
  for (;;) {
    const produced = sweepDirectory(dir, segmenter);
    for (const p of produced) console.error(`answered ${p}`);
    if (shouldStop()) return;
    await new Promise((resolve) => setTimeout(resolve, pollMs));
  }
}
