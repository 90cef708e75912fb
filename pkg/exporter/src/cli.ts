#!/usr/bin/env node
/** Command line for the exporter: images + captions in, UEB1 files out. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { runExport } from "./export.js";

export async function main(argv: string[]): Promise<number> {
  const parser = yargs(argv)
    .scriptName("ueb-export")
    .command(
      ["export", "$0"],
      "encode an image directory and a caption file into UEB1 embedding files",
      (cmd) =>
        cmd
          .option("images", { type: "string", demandOption: true, describe: "directory of .png images" })
          .option("captions", { type: "string", demandOption: true, describe: "UTF-8 file of image_id<TAB>caption lines" })
          .option("model", { type: "string", demandOption: true, describe: 'dual encoder id, e.g. "tiny-dual-64"' })
          .option("out", { type: "string", demandOption: true, describe: "output directory" })
          .option("deterministic", { type: "boolean", default: false, describe: "force reproducible inference settings" })
    )
    .strict()
    .exitProcess(false)
    .fail((message, error) => {
      throw error ?? new Error(message);
    });

  const args = await parser.parse();
  const result = runExport({
    imagesDir: args.images as string,
    captionsFile: args.captions as string,
    modelId: args.model as string,
    outDir: args.out as string,
    deterministic: Boolean(args.deterministic),
  });
  console.log(
    `encoded ${result.nImages} images and ${result.nCaptions} captions ` +
      `at dim ${result.dim} -> ${result.textPath}, ${result.imagePath}`
  );
  return 0;
}

const invokedDirectly = process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (invokedDirectly) {
  main(hideBin(process.argv))
    .then((code) => process.exit(code))
    .catch((error) => {
      console.error(`error: ${error.message}`);
      process.exit(1);
    });
}
