export type Polarity = "positive" | "negative";
export type StrokeKind = "circular" | "rectangular";

export const ANGLE_STEPS = 16; // gripper angle bins over [0, pi)
export const ANGLE_STEP_RAD = Math.PI / ANGLE_STEPS;

export interface PixelPoint {
  row: number;
  col: number;
}

/**
 * One brushstroke. Circular strokes label suction areas and stamp a disc at
 * every path point; rectangular strokes label grasps and export as a single
 * label at the stroke center. `angleStep` indexes the pi/16 angle grid so
 * exported angles are always exact grid multiples.
 */
export interface Brushstroke {
  kind: StrokeKind;
  path: PixelPoint[];
  diameter: number;
  polarity: Polarity;
  angleStep: number; // meaningful for rectangular strokes only
}

export interface BrushState {
  kind: StrokeKind;
  diameter: number;
  polarity: Polarity;
  angleStep: number;
}

export interface Session {
  width: number;
  height: number;
  strokes: Brushstroke[];
}

export interface GraspLabelJson {
  row: number;
  col: number;
  angle_rad: number;
  polarity: Polarity;
}

export const MASK_NEITHER = 0;
export const MASK_NEGATIVE = 128;
export const MASK_POSITIVE = 255;

export function strokeAngle(stroke: Brushstroke): number {
  return stroke.angleStep * ANGLE_STEP_RAD;
}
