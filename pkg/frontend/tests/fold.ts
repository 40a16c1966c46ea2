// Shared fixture folding for the dashboard tests.

import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";

import { decodeFrame } from "../src/protocol.js";
import { foldFrames, initialViewModel, takeSeq, ViewModel } from "../src/viewmodel.js";

const FIXTURE = fileURLToPath(new URL("./fixtures/fig3-frames.jsonl", import.meta.url));

export function afterHandshake(): ViewModel {
  // the app consumes seq 1 for HELLO and 2 for SUBSCRIBE before any
  // frame comes back
  let vm = initialViewModel("operator");
  vm = takeSeq(vm).vm;
  vm = takeSeq(vm).vm;
  return vm;
}

export function foldFixture(): ViewModel {
  const lines = readFileSync(FIXTURE, "utf-8").split("\n");
  return foldFrames(afterHandshake(), lines, decodeFrame);
}
