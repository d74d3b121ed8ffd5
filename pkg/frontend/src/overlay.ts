/**
 * Mask overlay rendering: each mask gets a palette color, a translucent
 * fill, and an opaque boundary. Pixels are written only where some decoded
 * mask is set, so the overlay can never show stale or invented regions.
 */

import type { DecodedMask } from "./rle.js";

/** Per-mask colors, cycled in order. */
export const MASK_PALETTE: ReadonlyArray<readonly [number, number, number]> = [
  [251, 146, 60], // orange
  [59, 130, 246], // blue
  [34, 197, 94], // green
  [168, 85, 247], // purple
  [236, 72, 153], // pink
  [6, 182, 212], // cyan
  [245, 158, 11], // amber
  [99, 102, 241], // indigo
];

export const FILL_ALPHA = 96;
export const BOUNDARY_ALPHA = 235;

/** True when the mask pixel at (x, y) borders a 0 pixel or the image edge. */
function isBoundary(mask: DecodedMask, x: number, y: number): boolean {
  const { data, width, height } = mask;
  if (x === 0 || y === 0 || x === width - 1 || y === height - 1) return true;
  const i = y * width + x;
  return (
    data[i - 1] === 0 || data[i + 1] === 0 || data[i - width] === 0 || data[i + width] === 0
  );
}

/**
 * Composite masks into one RGBA buffer of the given image size.
 * Later masks paint over earlier ones where they overlap.
 */
export function renderOverlay(
  masks: DecodedMask[],
  width: number,
  height: number,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(width * height * 4);
  masks.forEach((mask, index) => {
    if (mask.width !== width || mask.height !== height) {
      throw new Error(
        `mask is ${mask.width}x${mask.height}, image is ${width}x${height}`,
      );
    }
    const [r, g, b] = MASK_PALETTE[index % MASK_PALETTE.length]!;
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        const i = y * width + x;
        if (mask.data[i] === 0) continue;
        out[i * 4] = r;
        out[i * 4 + 1] = g;
        out[i * 4 + 2] = b;
        out[i * 4 + 3] = isBoundary(mask, x, y) ? BOUNDARY_ALPHA : FILL_ALPHA;
      }
    }
  });
  return out;
}
