/**
 * Client-side heatmap rendering: a float map is min-max normalized and
 * pushed through a fixed color ramp into RGBA pixels for a canvas.
 */

/** Low-to-high color ramp (dark violet to bright yellow). */
export const HEATMAP_STOPS: ReadonlyArray<readonly [number, number, number]> = [
  [13, 8, 135],
  [126, 3, 168],
  [204, 71, 120],
  [248, 149, 64],
  [240, 249, 33],
];

/** Interpolate the ramp at t in [0, 1] (clamped). */
export function colorAt(t: number): [number, number, number] {
  const clamped = Math.min(1, Math.max(0, t));
  const scaled = clamped * (HEATMAP_STOPS.length - 1);
  const lo = Math.floor(scaled);
  const hi = Math.min(lo + 1, HEATMAP_STOPS.length - 1);
  const frac = scaled - lo;
  const a = HEATMAP_STOPS[lo]!;
  const b = HEATMAP_STOPS[hi]!;
  return [
    Math.round(a[0] + (b[0] - a[0]) * frac),
    Math.round(a[1] + (b[1] - a[1]) * frac),
    Math.round(a[2] + (b[2] - a[2]) * frac),
  ];
}

/**
 * Render a (height x width) row-major float map to RGBA bytes.
 * A constant map renders as the ramp midpoint.
 */
export function renderHeatmap(
  values: ArrayLike<number>,
  width: number,
  height: number,
  alpha = 180,
): Uint8ClampedArray<ArrayBuffer> {
  if (values.length !== width * height) {
    throw new Error(`map has ${values.length} values, expected ${width * height}`);
  }
  let min = Infinity;
  let max = -Infinity;
  for (let i = 0; i < values.length; i++) {
    const v = values[i]!;
    if (v < min) min = v;
    if (v > max) max = v;
  }
  const span = max - min;
  const out = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < values.length; i++) {
    const t = span > 0 ? (values[i]! - min) / span : 0.5;
    const [r, g, b] = colorAt(t);
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = alpha;
  }
  return out;
}
