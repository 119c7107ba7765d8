#!/usr/bin/env node
/**
 * Extraction CLI.
 *
 * Usage:
 *   crossemo-extract --model facebook/hubert-base-ls960 --audio-root data/ravdess \
 *       --out hubert.xemb [--backend hub|test] [--sample-rate N] [--layers 1-12] \
 *       [--validate-cmd "python3 -m crossemo"] [--server http://host:port]
 *
 * After writing, the file is linted through the crossemo toolkit when either
 * --validate-cmd (its CLI) or --server (its HTTP service) is given.
 */

import { execFileSync } from "node:child_process";

import { DeterministicTestBackend, type InferenceBackend } from "./backend.js";
import { extract } from "./extract.js";
import { HubBackend } from "./hub.js";

interface CliOptions {
  model: string;
  audioRoot: string;
  out: string;
  backend: "hub" | "test";
  sampleRate?: number;
  layers?: [number, number];
  validateCmd?: string;
  server?: string;
}

function parseArgs(argv: string[]): CliOptions {
  const options: Partial<CliOptions> = { backend: "hub" };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      i++;
      if (i >= argv.length) {
        throw new UsageError(`${flag} needs a value`);
      }
      return argv[i];
    };
    switch (flag) {
      case "--model":
        options.model = next();
        break;
      case "--audio-root":
        options.audioRoot = next();
        break;
      case "--out":
        options.out = next();
        break;
      case "--backend": {
        const value = next();
        if (value !== "hub" && value !== "test") {
          throw new UsageError(`--backend must be hub or test, got '${value}'`);
        }
        options.backend = value;
        break;
      }
      case "--sample-rate":
        options.sampleRate = parseInt(next(), 10);
        break;
      case "--layers": {
        const match = /^(\d+)-(\d+)$/.exec(next());
        if (match === null) {
          throw new UsageError("--layers takes LOW-HIGH, e.g. 1-12");
        }
        options.layers = [parseInt(match[1], 10), parseInt(match[2], 10)];
        break;
      }
      case "--validate-cmd":
        options.validateCmd = next();
        break;
      case "--server":
        options.server = next();
        break;
      case "--help":
      case "-h":
        printUsage();
        process.exit(0);
        break;
      default:
        throw new UsageError(`unknown flag '${flag}'`);
    }
  }
  for (const required of ["model", "audioRoot", "out"] as const) {
    if (options[required] === undefined) {
      throw new UsageError(`--${required === "audioRoot" ? "audio-root" : required} is required`);
    }
  }
  return options as CliOptions;
}

class UsageError extends Error {}

function printUsage(): void {
  console.log(
    "crossemo-extract --model ID --audio-root DIR --out FILE " +
      "[--backend hub|test] [--sample-rate N] [--layers LOW-HIGH] " +
      '[--validate-cmd "python3 -m crossemo"] [--server URL]',
  );
}

function buildBackend(options: CliOptions): InferenceBackend {
  if (options.backend === "test") {
    return new DeterministicTestBackend({
      modelId: options.model,
      sampleRate: options.sampleRate ?? 16000,
    });
  }
  return new HubBackend(options.model);
}

async function validateViaServer(server: string, path: string): Promise<string[]> {
  const response = await fetch(`${server.replace(/\/$/, "")}/validate`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ path }),
  });
  const body = (await response.json()) as { valid: boolean; errors: string[] };
  return body.valid ? [] : body.errors;
}

function validateViaCli(command: string, path: string): string[] {
  const [executable, ...prefix] = command.split(/\s+/);
  try {
    execFileSync(executable, [...prefix, "validate", path], { stdio: "pipe" });
    return [];
  } catch (error: any) {
    const stderr = error.stderr?.toString() ?? String(error);
    return stderr.split("\n").filter((line: string) => line.trim() !== "");
  }
}

export async function main(argv = process.argv.slice(2)): Promise<number> {
  let options: CliOptions;
  try {
    options = parseArgs(argv);
  } catch (error) {
    if (error instanceof UsageError) {
      console.error(`usage error: ${error.message}`);
      printUsage();
      return 2;
    }
    throw error;
  }

  try {
    const report = await extract({
      audioRoot: options.audioRoot,
      outputPath: options.out,
      backend: buildBackend(options),
      targetSampleRate: options.sampleRate,
      layerRange: options.layers,
    });
    console.log(
      `wrote ${report.written} records to ${report.outputPath} ` +
        `(speech ${report.countsByDomain.speech}, music ${report.countsByDomain.music})`,
    );
    if (report.skipped.length > 0) {
      console.log(`skipped ${report.skipped.length} files (see stderr)`);
    }

    let errors: string[] = [];
    if (options.server !== undefined) {
      errors = await validateViaServer(options.server, report.outputPath);
    } else if (options.validateCmd !== undefined) {
      errors = validateViaCli(options.validateCmd, report.outputPath);
    } else {
      return 0;
    }
    if (errors.length > 0) {
      for (const line of errors) {
        console.error(`validate: ${line}`);
      }
      return 1;
    }
    console.log("validate: OK");
    return 0;
  } catch (error) {
    console.error(`error: ${error instanceof Error ? error.message : error}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (invokedDirectly) {
  main().then((code) => process.exit(code));
}
