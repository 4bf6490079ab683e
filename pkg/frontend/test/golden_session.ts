import { Session } from "../src/types.js";

/**
 * Fixed scripted session used by the golden-file test and the golden
 * generator. Covers overlapping opposite-polarity suction strokes, an
 * off-canvas clip, and grasp strokes on two different angle steps.
 */
export function scriptedSession(): Session {
  return {
    width: 96,
    height: 72,
    strokes: [
      {
        kind: "circular",
        path: [{ row: 20, col: 24 }, { row: 22, col: 28 }],
        diameter: 16,
        polarity: "positive",
        angleStep: 0,
      },
      {
        kind: "circular",
        path: [{ row: 26, col: 30 }],
        diameter: 10,
        polarity: "negative", // overlaps the positive stroke; later wins
        angleStep: 0,
      },
      {
        kind: "circular",
        path: [{ row: 2, col: 92 }], // clips the canvas corner
        diameter: 12,
        polarity: "positive",
        angleStep: 0,
      },
      {
        kind: "rectangular",
        path: [{ row: 50, col: 40 }, { row: 52, col: 42 }],
        diameter: 24,
        polarity: "positive",
        angleStep: 4, // pi/4
      },
      {
        kind: "rectangular",
        path: [{ row: 60, col: 70 }],
        diameter: 20,
        polarity: "negative",
        angleStep: 12,
      },
    ],
  };
}
