import { ANGLE_STEPS, BrushState } from "./types.js";

export const DEFAULT_BRUSH: BrushState = {
  kind: "circular",
  diameter: 20,
  polarity: "positive",
  angleStep: 0,
};

export const MIN_DIAMETER = 2;
export const DIAMETER_STEP = 2;

/**
 * Hotkey handling: brackets resize the brush by 2 px, q/e step the grasp
 * angle through the pi/16 grid, x flips polarity, m switches between the
 * circular suction brush and the rectangular grasp brush. Unknown keys leave
 * the state untouched.
 */
export function adjustBrush(state: BrushState, hotkey: string): BrushState {
  switch (hotkey) {
    case "[":
      return { ...state, diameter: Math.max(MIN_DIAMETER, state.diameter - DIAMETER_STEP) };
    case "]":
      return { ...state, diameter: state.diameter + DIAMETER_STEP };
    case "q":
      return { ...state, angleStep: (state.angleStep + ANGLE_STEPS - 1) % ANGLE_STEPS };
    case "e":
      return { ...state, angleStep: (state.angleStep + 1) % ANGLE_STEPS };
    case "x":
      return { ...state, polarity: state.polarity === "positive" ? "negative" : "positive" };
    case "m":
      return { ...state, kind: state.kind === "circular" ? "rectangular" : "circular" };
    default:
      return state;
  }
}
