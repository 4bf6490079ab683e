import { describe, expect, it } from "vitest";

import { paintOverlay, rasterizeSuctionMask, strokeCenter } from "../src/raster.js";
import {
  Brushstroke, MASK_NEGATIVE, MASK_NEITHER, MASK_POSITIVE, Session,
} from "../src/types.js";

function session(strokes: Brushstroke[], width = 40, height = 30): Session {
  return { width, height, strokes };
}

function disc(row: number, col: number, diameter: number,
              polarity: "positive" | "negative" = "positive"): Brushstroke {
  return { kind: "circular", path: [{ row, col }], diameter, polarity,
           angleStep: 0 };
}

describe("suction mask rasterization", () => {
  it("empty stroke list leaves the mask untouched", () => {
    const mask = rasterizeSuctionMask(session([]));
    expect(mask.every((v) => v === MASK_NEITHER)).toBe(true);
    const overlay = paintOverlay(session([]));
    expect(overlay.every((v) => v === 0)).toBe(true);
  });

  it("a circular stroke marks its disc", () => {
    const mask = rasterizeSuctionMask(session([disc(15, 20, 10)]));
    const at = (row: number, col: number) => mask[row * 40 + col];
    expect(at(15, 20)).toBe(MASK_POSITIVE);
    expect(at(15, 25)).toBe(MASK_POSITIVE);  // on the radius
    expect(at(15, 26)).toBe(MASK_NEITHER);   // just outside
    expect(at(11, 20)).toBe(MASK_POSITIVE);
    expect(at(9, 20)).toBe(MASK_NEITHER);
  });

  it("later opposite-polarity stroke wins the overlap", () => {
    const mask = rasterizeSuctionMask(session([
      disc(15, 20, 12, "positive"),
      disc(15, 24, 8, "negative"),
    ]));
    const at = (row: number, col: number) => mask[row * 40 + col];
    expect(at(15, 16)).toBe(MASK_POSITIVE);  // only the first stroke
    expect(at(15, 24)).toBe(MASK_NEGATIVE);  // overlap: second wins
    expect(at(15, 22)).toBe(MASK_NEGATIVE);
  });

  it("rectangular strokes never touch the mask", () => {
    const stroke: Brushstroke = { kind: "rectangular", path: [{ row: 10, col: 10 }],
                                  diameter: 12, polarity: "positive", angleStep: 2 };
    const mask = rasterizeSuctionMask(session([stroke]));
    expect(mask.every((v) => v === MASK_NEITHER)).toBe(true);
  });

  it("strokes clip at the canvas border", () => {
    const mask = rasterizeSuctionMask(session([disc(0, 0, 10)]));
    expect(mask[0]).toBe(MASK_POSITIVE);
    expect(mask.length).toBe(40 * 30);
  });
});

describe("overlay painting", () => {
  it("positive strokes render green, negative red", () => {
    const pos = paintOverlay(session([disc(15, 20, 6, "positive")]));
    const neg = paintOverlay(session([disc(15, 20, 6, "negative")]));
    const at = (buf: Uint8ClampedArray, row: number, col: number) =>
      Array.from(buf.subarray((row * 40 + col) * 4, (row * 40 + col) * 4 + 4));
    const [pr, pg, , pa] = at(pos, 15, 20);
    const [nr, ng, , na] = at(neg, 15, 20);
    expect(pg).toBeGreaterThan(pr);
    expect(nr).toBeGreaterThan(ng);
    expect(pa).toBeGreaterThan(0);
    expect(na).toBeGreaterThan(0);
  });

  it("rectangular strokes render a rotated bar", () => {
    const stroke: Brushstroke = { kind: "rectangular", path: [{ row: 15, col: 20 }],
                                  diameter: 16, polarity: "positive", angleStep: 0 };
    const overlay = paintOverlay(session([stroke]));
    const alpha = (row: number, col: number) => overlay[(row * 40 + col) * 4 + 3];
    expect(alpha(15, 20)).toBeGreaterThan(0);
    expect(alpha(15, 27)).toBeGreaterThan(0);  // along the angle-0 axis
    expect(alpha(15, 29)).toBe(0);             // beyond half length
    expect(alpha(9, 20)).toBe(0);              // beyond half breadth
  });
});

describe("stroke center", () => {
  it("is the rounded mean of the path", () => {
    const stroke: Brushstroke = {
      kind: "rectangular", diameter: 10, polarity: "positive", angleStep: 3,
      path: [{ row: 10, col: 10 }, { row: 11, col: 13 }, { row: 12, col: 13 }],
    };
    expect(strokeCenter(stroke)).toEqual({ row: 11, col: 12 });
  });
});
