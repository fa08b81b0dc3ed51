#!/usr/bin/env node
/**
 * mask-exchange-adapter --once <prompts-file> | --watch <dir>
 *                       [--checkpoint <name>] [--device <id>]
 *
 * Exit codes: 0 success, 1 bad input or schema violation (no partial
 * output file is left behind).
 */

import { parseArgs } from "node:util";

import { answerRequest, watchDirectory } from "./adapter.js";
import { makeSegmenter } from "./segmenter.js";

async function main(): Promise<number> {
  const { values } = parseArgs({
    options: {
      once: { type: "string" },
      watch: { type: "string" },
      checkpoint: { type: "string", default: "color-region" },
      device: { type: "string", default: "cpu" },
      "poll-ms": { type: "string", default: "500" },
    },
  });
  if (!values.once === !values.watch) {
    console.error("exactly one of --once <prompts-file> or --watch <dir> is required");
    return 1;
  }
  // the built-in backend ignores the device; a model backend would not
  const segmenter = makeSegmenter(values.checkpoint!);
  if (values.once) {
    const out = answerRequest(values.once, segmenter);
    console.error(`answered ${out}`);
    return 0;
  }
  await watchDirectory(values.watch!, segmenter, Number(values["poll-ms"]));
  return 0;
}

main()
  .then((code) => process.exit(code))
  .catch((err) => {
    console.error(String(err?.message ?? err));
    process.exit(1);
  });
