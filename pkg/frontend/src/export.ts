import { decodeGrayPng, encodeGrayPng } from "./png.js";
import { rasterizeSuctionMask, strokeCenter } from "./raster.js";
import {
  ANGLE_STEP_RAD, GraspLabelJson, MASK_NEGATIVE, MASK_NEITHER, MASK_POSITIVE,
  Session, strokeAngle,
} from "./types.js";

export interface ExportedLabels {
  maskPng: Uint8Array;
  graspJson: string;
}

/**
 * Grasp labels from the rectangular strokes: one label per stroke at its
 * center pixel. Angles come off the pi/16 step grid, so every exported
 * angle_rad is an exact grid multiple.
 */
export function graspLabels(session: Session): GraspLabelJson[] {
  const labels: GraspLabelJson[] = [];
  for (const stroke of session.strokes) {
    if (stroke.kind !== "rectangular" || stroke.path.length === 0) continue;
    const center = strokeCenter(stroke);
    labels.push({
      row: center.row,
      col: center.col,
      angle_rad: strokeAngle(stroke),
      polarity: stroke.polarity,
    });
  }
  return labels;
}

function formatLabels(labels: GraspLabelJson[]): string {
  // stable field order and fixed layout so exports are byte-reproducible
  const rows = labels.map((label) =>
    ` {"angle_rad": ${JSON.stringify(label.angle_rad)}, "col": ${label.col},` +
    ` "polarity": ${JSON.stringify(label.polarity)}, "row": ${label.row}}`);
  if (rows.length === 0) return "[]\n";
  return "[\n" + rows.join(",\n") + "\n]\n";
}

/** Session -> mask PNG bytes + grasp label JSON, the evaluation formats. */
export function exportSession(session: Session): ExportedLabels {
  const mask = rasterizeSuctionMask(session);
  return {
    maskPng: encodeGrayPng(mask, session.width, session.height),
    graspJson: formatLabels(graspLabels(session)),
  };
}

export interface ImportedLabels {
  width: number;
  height: number;
  mask: Uint8Array;
  labels: GraspLabelJson[];
}

/**
 * Re-open previously exported labels. The mask must be trinary and every
 * grasp angle must sit on the pi/16 grid; re-exporting imported labels
 * reproduces the files byte for byte.
 */
export function importLabels(maskPng: Uint8Array,
                             graspJson: string): ImportedLabels {
  const image = decodeGrayPng(maskPng);
  for (const value of image.values) {
    if (value !== MASK_NEITHER && value !== MASK_NEGATIVE
        && value !== MASK_POSITIVE) {
      throw new Error(`corrupt mask value ${value}`);
    }
  }
  const parsed = JSON.parse(graspJson) as GraspLabelJson[];
  for (const label of parsed) {
    const steps = label.angle_rad / ANGLE_STEP_RAD;
    if (Math.abs(steps - Math.round(steps)) > 1e-9) {
      throw new Error(`grasp angle ${label.angle_rad} is off the pi/16 grid`);
    }
    if (label.polarity !== "positive" && label.polarity !== "negative") {
      throw new Error(`bad polarity ${label.polarity}`);
    }
  }
  return { width: image.width, height: image.height, mask: image.values,
           labels: parsed };
}

/** Re-serialize imported labels (lossless round trip for label semantics). */
export function reexportLabels(imported: ImportedLabels): ExportedLabels {
  return {
    maskPng: encodeGrayPng(imported.mask, imported.width, imported.height),
    graspJson: formatLabels(imported.labels),
  };
}
