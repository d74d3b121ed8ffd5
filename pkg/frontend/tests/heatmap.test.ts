import { describe, expect, it } from "vitest";

import { HEATMAP_STOPS, colorAt, renderHeatmap } from "../dist/heatmap.js";

describe("colorAt", () => {
  it("hits the ramp endpoints exactly", () => {
    expect(colorAt(0)).toEqual([...HEATMAP_STOPS[0]!]);
    expect(colorAt(1)).toEqual([...HEATMAP_STOPS[HEATMAP_STOPS.length - 1]!]);
  });

  it("clamps out-of-range inputs", () => {
    expect(colorAt(-3)).toEqual(colorAt(0));
    expect(colorAt(7)).toEqual(colorAt(1));
  });

  it("interpolates between stops", () => {
    const quarterStop = 1 / (HEATMAP_STOPS.length - 1) / 2;
    const [r0] = HEATMAP_STOPS[0]!;
    const [r1] = HEATMAP_STOPS[1]!;
    expect(colorAt(quarterStop)[0]).toBe(Math.round(r0 + (r1 - r0) * 0.5));
  });
});

describe("renderHeatmap", () => {
  it("maps the minimum and maximum to the ramp endpoints", () => {
    const rgba = renderHeatmap(Float32Array.from([-2, 0, 0, 5]), 2, 2, 200);
    const lo = colorAt(0);
    const hi = colorAt(1);
    expect([rgba[0], rgba[1], rgba[2], rgba[3]]).toEqual([...lo, 200]);
    expect([rgba[12], rgba[13], rgba[14], rgba[15]]).toEqual([...hi, 200]);
  });

  it("renders a constant map as the ramp midpoint", () => {
    const rgba = renderHeatmap(Float32Array.from([3, 3, 3, 3]), 4, 1);
    const mid = colorAt(0.5);
    for (let i = 0; i < 4; i++) {
      expect([rgba[i * 4], rgba[i * 4 + 1], rgba[i * 4 + 2]]).toEqual([...mid]);
      expect(rgba[i * 4 + 3]).toBe(180);
    }
  });

  it("rejects size mismatches", () => {
    expect(() => renderHeatmap(Float32Array.from([1, 2, 3]), 2, 2)).toThrow(/expected 4/);
  });
});
