import {
  Brushstroke, MASK_NEGATIVE, MASK_NEITHER, MASK_POSITIVE, PixelPoint,
  Session, strokeAngle,
} from "./types.js";

/** Rectangular grasp strokes are this much narrower than they are long. */
export const RECT_ASPECT = 3;

function maskValue(stroke: Brushstroke): number {
  return stroke.polarity === "positive" ? MASK_POSITIVE : MASK_NEGATIVE;
}

function stampDisc(values: Uint8Array, width: number, height: number,
                   center: PixelPoint, diameter: number, value: number): void {
  const radius = diameter / 2;
  const r2 = radius * radius;
  const rowMin = Math.max(0, Math.ceil(center.row - radius));
  const rowMax = Math.min(height - 1, Math.floor(center.row + radius));
  const colMin = Math.max(0, Math.ceil(center.col - radius));
  const colMax = Math.min(width - 1, Math.floor(center.col + radius));
  for (let row = rowMin; row <= rowMax; row++) {
    for (let col = colMin; col <= colMax; col++) {
      const dr = row - center.row;
      const dc = col - center.col;
      if (dr * dr + dc * dc <= r2) {
        values[row * width + col] = value;
      }
    }
  }
}

/**
 * Rasterize the suction strokes of a session to the trinary label mask
 * (0 neither / 128 negative / 255 positive). Strokes paint in order, so a
 * later stroke overwrites earlier ones where they overlap; rectangular
 * (grasp) strokes never touch the mask.
 */
export function rasterizeSuctionMask(session: Session): Uint8Array {
  const { width, height } = session;
  const values = new Uint8Array(width * height).fill(MASK_NEITHER);
  for (const stroke of session.strokes) {
    if (stroke.kind !== "circular") continue;
    for (const point of stroke.path) {
      stampDisc(values, width, height, point, stroke.diameter,
                maskValue(stroke));
    }
  }
  return values;
}

/** Center pixel of a stroke: the rounded mean of its path points. */
export function strokeCenter(stroke: Brushstroke): PixelPoint {
  let row = 0;
  let col = 0;
  for (const point of stroke.path) {
    row += point.row;
    col += point.col;
  }
  return {
    row: Math.round(row / stroke.path.length),
    col: Math.round(col / stroke.path.length),
  };
}

function insideRect(stroke: Brushstroke, center: PixelPoint, row: number,
                    col: number): boolean {
  const angle = strokeAngle(stroke);
  const cos = Math.cos(angle);
  const sin = Math.sin(angle);
  const dx = col - center.col;
  const dy = row - center.row;
  const along = cos * dx + sin * dy;
  const across = -sin * dx + cos * dy;
  const halfLength = stroke.diameter / 2;
  const halfBreadth = Math.max(2, stroke.diameter / RECT_ASPECT) / 2;
  return Math.abs(along) <= halfLength && Math.abs(across) <= halfBreadth;
}

export interface OverlayPixel {
  r: number;
  g: number;
  b: number;
  a: number;
}

const POSITIVE_COLOR: OverlayPixel = { r: 40, g: 200, b: 60, a: 140 };
const NEGATIVE_COLOR: OverlayPixel = { r: 220, g: 50, b: 40, a: 140 };

/**
 * Render strokes into an RGBA overlay for display: positive strokes green,
 * negative red; later strokes win where they overlap. Returns the raw RGBA
 * buffer (row-major, 4 bytes per pixel) ready for an ImageData canvas blit.
 */
export function paintOverlay(session: Session): Uint8ClampedArray {
  const { width, height } = session;
  const rgba = new Uint8ClampedArray(width * height * 4);
  const put = (row: number, col: number, color: OverlayPixel) => {
    const at = (row * width + col) * 4;
    rgba[at] = color.r;
    rgba[at + 1] = color.g;
    rgba[at + 2] = color.b;
    rgba[at + 3] = color.a;
  };
  for (const stroke of session.strokes) {
    const color = stroke.polarity === "positive" ? POSITIVE_COLOR : NEGATIVE_COLOR;
    if (stroke.kind === "circular") {
      for (const point of stroke.path) {
        const radius = stroke.diameter / 2;
        const r2 = radius * radius;
        for (let row = Math.max(0, Math.ceil(point.row - radius));
             row <= Math.min(height - 1, Math.floor(point.row + radius)); row++) {
          for (let col = Math.max(0, Math.ceil(point.col - radius));
               col <= Math.min(width - 1, Math.floor(point.col + radius)); col++) {
            const dr = row - point.row;
            const dc = col - point.col;
            if (dr * dr + dc * dc <= r2) put(row, col, color);
          }
        }
      }
    } else {
      const center = strokeCenter(stroke);
      const reach = stroke.diameter;
      for (let row = Math.max(0, center.row - reach);
           row <= Math.min(height - 1, center.row + reach); row++) {
        for (let col = Math.max(0, center.col - reach);
             col <= Math.min(width - 1, center.col + reach); col++) {
          if (insideRect(stroke, center, row, col)) put(row, col, color);
        }
      }
    }
  }
  return rgba;
}
