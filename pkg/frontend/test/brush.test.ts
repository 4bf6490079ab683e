import { describe, expect, it } from "vitest";

import { DEFAULT_BRUSH, MIN_DIAMETER, adjustBrush } from "../src/brush.js";
import { ANGLE_STEPS } from "../src/types.js";

describe("brush hotkeys", () => {
  it("brackets change diameter by 2 px", () => {
    let state = { ...DEFAULT_BRUSH, diameter: 20 };
    state = adjustBrush(state, "]");
    expect(state.diameter).toBe(22);
    state = adjustBrush(state, "[");
    state = adjustBrush(state, "[");
    expect(state.diameter).toBe(18);
  });

  it("diameter never drops below the minimum", () => {
    let state = { ...DEFAULT_BRUSH, diameter: MIN_DIAMETER };
    state = adjustBrush(state, "[");
    expect(state.diameter).toBe(MIN_DIAMETER);
  });

  it("angle keys step through the pi/16 grid and wrap", () => {
    let state = { ...DEFAULT_BRUSH, angleStep: 0 };
    state = adjustBrush(state, "e");
    expect(state.angleStep).toBe(1);
    state = adjustBrush(state, "q");
    state = adjustBrush(state, "q");
    expect(state.angleStep).toBe(ANGLE_STEPS - 1);
    for (let i = 0; i < ANGLE_STEPS; i++) {
      expect(state.angleStep).toBeGreaterThanOrEqual(0);
      expect(state.angleStep).toBeLessThan(ANGLE_STEPS);
      state = adjustBrush(state, "e");
    }
    expect(state.angleStep).toBe(ANGLE_STEPS - 1);
  });

  it("toggles polarity and stroke kind", () => {
    let state = { ...DEFAULT_BRUSH };
    state = adjustBrush(state, "x");
    expect(state.polarity).toBe("negative");
    state = adjustBrush(state, "m");
    expect(state.kind).toBe("rectangular");
    state = adjustBrush(adjustBrush(state, "m"), "x");
    expect(state.kind).toBe("circular");
    expect(state.polarity).toBe("positive");
  });

  it("ignores unknown keys", () => {
    const state = { ...DEFAULT_BRUSH };
    expect(adjustBrush(state, "Escape")).toBe(state);
  });
});
