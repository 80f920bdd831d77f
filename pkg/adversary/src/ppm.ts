import * as fs from "node:fs";

/** An RGB image as float32 values in [0, 1], interleaved row-major. */
export interface Image {
  width: number;
  height: number;
  data: Float32Array; // length = width * height * 3
}

/**
 * Binary PPM (P6) — the plainest format both this package and the
 * similarity scorer CLI read and write without extra dependencies.
 */
export function encodePpm(image: Image): Buffer {
  const { width, height, data } = image;
  if (data.length !== width * height * 3) {
    throw new Error(`pixel buffer length ${data.length} != ${width}x${height}x3`);
  }
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  const body = Buffer.alloc(width * height * 3);
  for (let i = 0; i < body.length; i++) {
    body[i] = Math.round(Math.min(1, Math.max(0, data[i])) * 255);
  }
  return Buffer.concat([header, body]);
}

export function decodePpm(raw: Buffer): Image {
  // header: magic, width, height, maxval, each followed by whitespace;
  // comment lines (#...) may appear between tokens
  let pos = 0;
  const token = (): string => {
    while (pos < raw.length) {
      const ch = raw[pos];
      if (ch === 0x23) {
        while (pos < raw.length && raw[pos] !== 0x0a) pos++;
      } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
        pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < raw.length && !/\s/.test(String.fromCharCode(raw[pos]))) pos++;
    return raw.subarray(start, pos).toString("ascii");
  };
  const magic = token();
  if (magic !== "P6") throw new Error(`not a binary PPM (magic ${JSON.stringify(magic)})`);
  const width = Number(token());
  const height = Number(token());
  const maxval = Number(token());
  if (!(width > 0 && height > 0 && maxval > 0 && maxval < 65536)) {
    throw new Error(`bad PPM header ${width}x${height} maxval ${maxval}`);
  }
  pos++; // single whitespace byte after maxval
  const count = width * height * 3;
  if (maxval > 255) throw new Error("16-bit PPM not supported");
  if (raw.length - pos < count) throw new Error("truncated PPM payload");
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) data[i] = raw[pos + i] / maxval;
  return { width, height, data };
}

export function writePpm(file: string, image: Image): void {
  fs.writeFileSync(file, encodePpm(image));
}

export function readPpm(file: string): Image {
  return decodePpm(fs.readFileSync(file));
}
