// Wire protocol for the shop gateway: one line of canonical JSON per
// frame. Encoding must match the gateway byte for byte (sorted keys,
// no whitespace, ASCII-escaped, trailing newline), so command frames
// built here are directly comparable against server-side expectations.

export const PROTOCOL_VERSION = 1;

export const FRAME_TYPES = [
  "HELLO",
  "WELCOME",
  "SUBSCRIBE",
  "STATE",
  "COMMAND",
  "ACK",
  "NACK",
  "EVENT",
  "SNAPSHOT_REQ",
  "SNAPSHOT_RES",
  "PING",
  "PONG",
] as const;

export type FrameType = (typeof FRAME_TYPES)[number];

export interface ParsedFrame {
  type: FrameType;
  seq: number;
  tsMs: number;
  body: Record<string, unknown>;
}

function escapeNonAscii(json: string): string {
  // JSON.stringify leaves non-ASCII raw; the gateway escapes it.
  return json.replace(/[-￿]/g, (ch) => {
    return "\\u" + ch.charCodeAt(0).toString(16).padStart(4, "0");
  });
}

export function canonicalJson(value: unknown): string {
  if (value === null) return "null";
  switch (typeof value) {
    case "boolean":
      return value ? "true" : "false";
    case "number":
      if (!Number.isFinite(value)) throw new Error("non-finite number in frame");
      if (!Number.isInteger(value)) {
        // the dashboard only ever sends integers; refusing floats keeps
        // client frames byte-compatible without replicating repr()
        throw new Error("non-integer number in outbound frame");
      }
      return String(value);
    case "string":
      return escapeNonAscii(JSON.stringify(value));
    case "object":
      if (Array.isArray(value)) {
        return "[" + value.map(canonicalJson).join(",") + "]";
      }
      const record = value as Record<string, unknown>;
      const keys = Object.keys(record).sort();
      const parts = keys.map(
        (k) => escapeNonAscii(JSON.stringify(k)) + ":" + canonicalJson(record[k]),
      );
      return "{" + parts.join(",") + "}";
    default:
      throw new Error(`cannot encode ${typeof value}`);
  }
}

export function encodeFrame(
  type: FrameType,
  seq: number,
  tsMs: number,
  body: Record<string, unknown> = {},
): string {
  for (const key of ["v", "type", "seq", "ts_ms"]) {
    if (key in body) throw new Error(`body may not shadow envelope key ${key}`);
  }
  const doc: Record<string, unknown> = { v: PROTOCOL_VERSION, type, seq, ts_ms: tsMs, ...body };
  return canonicalJson(doc) + "\n";
}

export function decodeFrame(line: string): ParsedFrame {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch (err) {
    throw new Error(`malformed frame: ${err}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new Error("frame must be a JSON object");
  }
  const record = doc as Record<string, unknown>;
  if (record.v !== PROTOCOL_VERSION) throw new Error(`unsupported version ${record.v}`);
  const type = record.type;
  if (typeof type !== "string" || !(FRAME_TYPES as readonly string[]).includes(type)) {
    throw new Error(`unknown frame type ${type}`);
  }
  const seq = record.seq;
  const tsMs = record.ts_ms;
  if (typeof seq !== "number" || typeof tsMs !== "number") {
    throw new Error("seq/ts_ms must be numbers");
  }
  const body: Record<string, unknown> = {};
  for (const [key, value] of Object.entries(record)) {
    if (key !== "v" && key !== "type" && key !== "seq" && key !== "ts_ms") {
      body[key] = value;
    }
  }
  return { type: type as FrameType, seq, tsMs, body };
}
