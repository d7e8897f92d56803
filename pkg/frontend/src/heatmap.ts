/**
 * Signed-heatmap rendering for principal-component vectors.
 *
 * PC entries are signed; they render with a symmetric diverging color
 * map around 0 (blue negative, white zero, red positive), scaled by the
 * largest absolute entry so that the extremes saturate consistently.
 */

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number;
}

/** Map value in [-scale, scale] to a diverging blue-white-red color. */
export function divergingColor(value: number, scale: number): Rgba {
  if (scale <= 0 || !Number.isFinite(value)) {
    return { r: 255, g: 255, b: 255, a: 255 };
  }
  const t = Math.max(-1, Math.min(1, value / scale));
  if (t >= 0) {
    const k = 1 - t;
    return { r: 255, g: Math.round(255 * k), b: Math.round(255 * k), a: 255 };
  }
  const k = 1 + t;
  return { r: Math.round(255 * k), g: Math.round(255 * k), b: 255, a: 255 };
}

/** Scale of a signed heatmap: the largest absolute entry. */
export function heatmapScale(values: ArrayLike<number>): number {
  let m = 0;
  for (let i = 0; i < values.length; i++) {
    const a = Math.abs(values[i]);
    if (a > m) m = a;
  }
  return m;
}

/** RGBA byte buffer (width * height * 4) for a signed vector. */
export function signedHeatmap(
  values: Float64Array,
  width: number,
  height: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (values.length !== width * height) {
    throw new Error(`vector length ${values.length} != ${width}x${height}`);
  }
  const scale = heatmapScale(values);
  const out = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  for (let i = 0; i < values.length; i++) {
    const c = divergingColor(values[i], scale);
    out[4 * i] = c.r;
    out[4 * i + 1] = c.g;
    out[4 * i + 2] = c.b;
    out[4 * i + 3] = c.a;
  }
  return out;
}

/** Grayscale RGBA bytes for a [0, 1]-clamped image frame. */
export function grayscaleImage(
  values: Float64Array,
  width: number,
  height: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (values.length !== width * height) {
    throw new Error(`frame length ${values.length} != ${width}x${height}`);
  }
  const out = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  for (let i = 0; i < values.length; i++) {
    const v = Math.round(255 * Math.max(0, Math.min(1, values[i])));
    out[4 * i] = v;
    out[4 * i + 1] = v;
    out[4 * i + 2] = v;
    out[4 * i + 3] = 255;
  }
  return out;
}
