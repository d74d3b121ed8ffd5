import { describe, expect, it } from "vitest";

import { BOUNDARY_ALPHA, FILL_ALPHA, MASK_PALETTE, renderOverlay } from "../dist/overlay.js";
import type { DecodedMask } from "../dist/rle.js";

function maskFromRows(rows: string[]): DecodedMask {
  const height = rows.length;
  const width = rows[0]!.length;
  const data = new Uint8Array(width * height);
  rows.forEach((row, y) => {
    for (let x = 0; x < width; x++) data[y * width + x] = row[x] === "#" ? 1 : 0;
  });
  return { data, width, height };
}

describe("renderOverlay", () => {
  it("fills interiors translucently and boundaries opaquely", () => {
    const mask = maskFromRows([
      ".....",
      ".###.",
      ".###.",
      ".###.",
      ".....",
    ]);
    const rgba = renderOverlay([mask], 5, 5);
    const alphaAt = (x: number, y: number) => rgba[(y * 5 + x) * 4 + 3];
    expect(alphaAt(2, 2)).toBe(FILL_ALPHA); // interior
    expect(alphaAt(1, 1)).toBe(BOUNDARY_ALPHA); // blob corner
    expect(alphaAt(3, 2)).toBe(BOUNDARY_ALPHA); // blob edge
    expect(alphaAt(0, 0)).toBe(0); // background untouched
    const [r, g, b] = MASK_PALETTE[0]!;
    expect([rgba[(1 * 5 + 1) * 4], rgba[(1 * 5 + 1) * 4 + 1], rgba[(1 * 5 + 1) * 4 + 2]]).toEqual([
      r,
      g,
      b,
    ]);
  });

  it("treats the image edge as a boundary", () => {
    const mask = maskFromRows(["##", "##"]);
    const rgba = renderOverlay([mask], 2, 2);
    for (let i = 0; i < 4; i++) expect(rgba[i * 4 + 3]).toBe(BOUNDARY_ALPHA);
  });

  it("paints pixels only where some mask is set", () => {
    const a = maskFromRows(["##..", "##..", "....", "...."]);
    const b = maskFromRows(["....", ".##.", ".##.", "...."]);
    const rgba = renderOverlay([a, b], 4, 4);
    for (let y = 0; y < 4; y++) {
      for (let x = 0; x < 4; x++) {
        const i = y * 4 + x;
        const painted = rgba[i * 4 + 3]! > 0;
        const covered = a.data[i] === 1 || b.data[i] === 1;
        expect(painted).toBe(covered);
      }
    }
  });

  it("lets later masks win overlapping pixels and cycles the palette", () => {
    const a = maskFromRows(["##", "##"]);
    const b = maskFromRows(["#.", ".."]);
    const rgba = renderOverlay([a, b], 2, 2);
    const second = MASK_PALETTE[1]!;
    expect([rgba[0], rgba[1], rgba[2]]).toEqual([second[0], second[1], second[2]]);
    const first = MASK_PALETTE[0]!;
    expect([rgba[4], rgba[5], rgba[6]]).toEqual([first[0], first[1], first[2]]);
    // palette wraps after its length
    const many = Array.from({ length: MASK_PALETTE.length + 1 }, () => maskFromRows(["#"]));
    const wrapped = renderOverlay(many, 1, 1);
    expect([wrapped[0], wrapped[1], wrapped[2]]).toEqual([first[0], first[1], first[2]]);
  });

  it("rejects masks whose size differs from the image", () => {
    const mask = maskFromRows(["##", "##"]);
    expect(() => renderOverlay([mask], 3, 2)).toThrow(/image is 3x2/);
  });
});
