/**
 * Lossless run-length mask codec matching the service's wire format:
 * counts alternate runs of 0s and 1s (starting with 0s) over the row-major
 * flattened mask, and must sum to exactly width * height.
 */

import type { RleMaskData } from "./types.js";

/** A decoded binary mask: one byte per pixel, row-major, values 0 or 1. */
export interface DecodedMask {
  data: Uint8Array;
  width: number;
  height: number;
}

/** Decode an RLE payload to a flat 0/1 byte mask. Throws on malformed input. */
export function decodeRle(rle: RleMaskData): DecodedMask {
  const { width, height, counts } = rle;
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new Error(`bad mask dimensions ${width}x${height}`);
  }
  const total = width * height;
  const data = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const run of counts) {
    if (!Number.isInteger(run) || run < 0) {
      throw new Error(`bad run length ${run}`);
    }
    if (pos + run > total) {
      throw new Error(`runs exceed mask size (${pos + run} > ${total})`);
    }
    if (value === 1) {
      data.fill(1, pos, pos + run);
    }
    pos += run;
    value ^= 1;
  }
  if (pos !== total) {
    throw new Error(`runs cover ${pos} pixels, expected ${total}`);
  }
  return { data, width, height };
}

/** Encode a flat 0/1 byte mask back to RLE (inverse of decodeRle). */
export function encodeRle(mask: DecodedMask): RleMaskData {
  const { data, width, height } = mask;
  if (data.length !== width * height) {
    throw new Error(`mask has ${data.length} pixels, expected ${width * height}`);
  }
  const counts: number[] = [];
  let value = 0;
  let run = 0;
  for (const pixel of data) {
    const bit = pixel === 0 ? 0 : 1;
    if (bit === value) {
      run += 1;
    } else {
      counts.push(run);
      value = bit;
      run = 1;
    }
  }
  counts.push(run);
  return { width, height, counts };
}

/** Number of 1 pixels in a decoded mask. */
export function maskArea(mask: DecodedMask): number {
  let area = 0;
  for (const pixel of mask.data) area += pixel;
  return area;
}
