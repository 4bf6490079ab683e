/**
 * Minimal 8-bit grayscale PNG codec with byte-deterministic output.
 *
 * The encoder writes stored (uncompressed) deflate blocks, so the same mask
 * always produces the same bytes regardless of platform or zlib version;
 * label masks are small enough that compression buys nothing. The decoder
 * only accepts what the encoder emits (8-bit grayscale, filter 0, stored
 * blocks), which is all the annotation tool ever needs to re-open.
 */

const PNG_SIGNATURE = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10]);

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let crc = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    crc = CRC_TABLE[(crc ^ bytes[i]) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32be(value: number): Uint8Array {
  return new Uint8Array([
    (value >>> 24) & 0xff, (value >>> 16) & 0xff,
    (value >>> 8) & 0xff, value & 0xff,
  ]);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  return out;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const typeBytes = new Uint8Array([...type].map((c) => c.charCodeAt(0)));
  const body = concat([typeBytes, data]);
  return concat([u32be(data.length), body, u32be(crc32(body))]);
}

/** zlib stream around stored deflate blocks (max 65535 bytes each). */
function zlibStored(raw: Uint8Array): Uint8Array {
  const parts: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const blockSize = 65535;
  for (let start = 0; start < raw.length || start === 0; start += blockSize) {
    const block = raw.subarray(start, Math.min(start + blockSize, raw.length));
    const final = start + blockSize >= raw.length ? 1 : 0;
    const len = block.length;
    parts.push(new Uint8Array([
      final, len & 0xff, (len >>> 8) & 0xff,
      ~len & 0xff, (~len >>> 8) & 0xff,
    ]));
    parts.push(block);
    if (raw.length === 0) break;
  }
  parts.push(u32be(adler32(raw)));
  return concat(parts);
}

export function encodeGrayPng(values: Uint8Array, width: number,
                              height: number): Uint8Array {
  if (values.length !== width * height) {
    throw new Error(`mask size ${values.length} != ${width}x${height}`);
  }
  const ihdr = concat([
    u32be(width), u32be(height),
    new Uint8Array([8, 0, 0, 0, 0]), // bit depth 8, grayscale, no interlace
  ]);
  const raw = new Uint8Array(height * (width + 1));
  for (let row = 0; row < height; row++) {
    raw[row * (width + 1)] = 0; // filter: none
    raw.set(values.subarray(row * width, (row + 1) * width),
            row * (width + 1) + 1);
  }
  return concat([
    PNG_SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

export interface GrayImage {
  width: number;
  height: number;
  values: Uint8Array;
}

export function decodeGrayPng(bytes: Uint8Array): GrayImage {
  for (let i = 0; i < PNG_SIGNATURE.length; i++) {
    if (bytes[i] !== PNG_SIGNATURE[i]) throw new Error("not a PNG file");
  }
  let offset = PNG_SIGNATURE.length;
  let width = 0;
  let height = 0;
  const idat: Uint8Array[] = [];
  while (offset < bytes.length) {
    const length = (bytes[offset] << 24 | bytes[offset + 1] << 16
      | bytes[offset + 2] << 8 | bytes[offset + 3]) >>> 0;
    const type = String.fromCharCode(bytes[offset + 4], bytes[offset + 5],
                                     bytes[offset + 6], bytes[offset + 7]);
    const data = bytes.subarray(offset + 8, offset + 8 + length);
    if (type === "IHDR") {
      width = (data[0] << 24 | data[1] << 16 | data[2] << 8 | data[3]) >>> 0;
      height = (data[4] << 24 | data[5] << 16 | data[6] << 8 | data[7]) >>> 0;
      if (data[8] !== 8 || data[9] !== 0) {
        throw new Error("only 8-bit grayscale PNGs are supported");
      }
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      break;
    }
    offset += 12 + length;
  }
  const stream = concat(idat);
  const raw = inflateStored(stream);
  const values = new Uint8Array(width * height);
  for (let row = 0; row < height; row++) {
    if (raw[row * (width + 1)] !== 0) {
      throw new Error("only filter type 0 is supported");
    }
    values.set(raw.subarray(row * (width + 1) + 1, (row + 1) * (width + 1)),
               row * width);
  }
  return { width, height, values };
}

function inflateStored(stream: Uint8Array): Uint8Array {
  if ((stream[0] & 0x0f) !== 8) throw new Error("not a zlib stream");
  const parts: Uint8Array[] = [];
  let offset = 2;
  for (;;) {
    const header = stream[offset];
    if ((header & 0x06) !== 0) {
      throw new Error("only stored deflate blocks are supported");
    }
    const len = stream[offset + 1] | (stream[offset + 2] << 8);
    parts.push(stream.subarray(offset + 5, offset + 5 + len));
    offset += 5 + len;
    if (header & 1) break;
  }
  return concat(parts);
}
