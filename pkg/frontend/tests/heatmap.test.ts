import { describe, expect, it } from "vitest";

import { divergingColor, grayscaleImage, heatmapScale, signedHeatmap } from "../src/heatmap.js";
import { densityChart, linearScale } from "../src/charts.js";
import { parseDensityCsv, parsePlpcSingle } from "../src/api.js";

describe("signed heatmap", () => {
  it("maps zero to white", () => {
    expect(divergingColor(0, 1)).toEqual({ r: 255, g: 255, b: 255, a: 255 });
  });

  it("saturates at +-scale with a symmetric diverging map", () => {
    expect(divergingColor(1, 1)).toEqual({ r: 255, g: 0, b: 0, a: 255 });
    expect(divergingColor(-1, 1)).toEqual({ r: 0, g: 0, b: 255, a: 255 });
    for (const v of [0.2, 0.55, 0.9]) {
      const pos = divergingColor(v, 1);
      const neg = divergingColor(-v, 1);
      expect(pos.g).toBe(neg.g);
      expect(pos.b).toBe(neg.r);
      expect(pos.r).toBe(neg.b);
    }
  });

  it("scales by the largest absolute entry", () => {
    const values = new Float64Array([0.1, -0.4, 0.2]);
    expect(heatmapScale(values)).toBeCloseTo(0.4, 15);
    const rgba = signedHeatmap(values, 3, 1);
    // the -0.4 entry is fully saturated blue
    expect(rgba[4]).toBe(0);
    expect(rgba[6]).toBe(255);
  });

  it("validates the vector length", () => {
    expect(() => signedHeatmap(new Float64Array(5), 2, 2)).toThrow(/length/);
  });

  it("clamps grayscale frames to [0, 1] for display", () => {
    const rgba = grayscaleImage(new Float64Array([-0.5, 0.5, 1.5]), 3, 1);
    expect(rgba[0]).toBe(0);
    expect(rgba[4]).toBe(128);
    expect(rgba[8]).toBe(255);
  });
});

describe("density chart geometry", () => {
  it("places the slider marker on the chart abscissa it names", () => {
    const points: Array<[number, number]> = [];
    for (let i = 0; i <= 100; i++) {
      const x = -4 + (8 * i) / 100;
      points.push([x, Math.exp(-x * x)]);
    }
    const box = { width: 480, height: 220, padding: 28 };
    const chart = densityChart(points, box);
    const lam = 1.7;
    const alpha = Math.sqrt(lam);
    // the marker pixel equals the x-scale pixel of that abscissa
    expect(chart.markerX(alpha)).toBeCloseTo(chart.xScale.toPixel(alpha), 10);
  });

  it("counts interior peaks for bimodal curves", () => {
    const points: Array<[number, number]> = [];
    for (let i = 0; i <= 200; i++) {
      const x = -4 + (8 * i) / 200;
      points.push([x, Math.exp(-((x - 1.6) ** 2)) + Math.exp(-((x + 1.6) ** 2))]);
    }
    const chart = densityChart(points, { width: 480, height: 220, padding: 28 });
    expect(chart.peaks.length).toBe(2);
  });

  it("centers the abscissa on the projected mean", () => {
    const points: Array<[number, number]> = [
      [2.0, 0.1],
      [3.0, 0.4],
      [4.0, 0.1],
    ];
    const chart = densityChart(points, { width: 480, height: 220, padding: 28 }, 3.0);
    expect(chart.xScale.domain).toEqual([-1.0, 1.0]);
  });
});

describe("codecs", () => {
  it("parses density CSV", () => {
    expect(parseDensityCsv("x,p\n-1.5,0.25\n0.5,0.75\n")).toEqual([
      [-1.5, 0.25],
      [0.5, 0.75],
    ]);
  });

  it("parses a single-component PLPC container", () => {
    const d = 3;
    const buf = new ArrayBuffer(24 + 8 * (d + 1));
    const view = new DataView(buf);
    [0x50, 0x4c, 0x50, 0x43].forEach((b, i) => view.setUint8(i, b));
    view.setUint32(4, 1, true);
    view.setBigUint64(8, BigInt(d), true);
    view.setBigUint64(16, 1n, true);
    view.setFloat64(24, 2.5, true);
    [0.6, -0.8, 0.0].forEach((v, i) => view.setFloat64(32 + 8 * i, v, true));
    const parsed = parsePlpcSingle(buf);
    expect(parsed.eigenvalue).toBe(2.5);
    expect(Array.from(parsed.vector)).toEqual([0.6, -0.8, 0.0]);
  });

  it("rejects a bad magic", () => {
    const buf = new ArrayBuffer(40);
    expect(() => parsePlpcSingle(buf)).toThrow(/magic/);
  });

  it("linear scale maps domain ends to range ends", () => {
    const s = linearScale([-2, 2], [10, 110]);
    expect(s.toPixel(-2)).toBe(10);
    expect(s.toPixel(2)).toBe(110);
    expect(s.toPixel(0)).toBe(60);
  });
});
