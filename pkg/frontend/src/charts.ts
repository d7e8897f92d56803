/**
 * Chart geometry helpers: pure data-to-coordinates mapping, so the
 * alignment between the slider marker and the density abscissa is
 * testable without a DOM.
 */

export interface ChartBox {
  width: number;
  height: number;
  padding: number;
}

export interface LinearScale {
  toPixel(x: number): number;
  domain: [number, number];
}

export function linearScale(domain: [number, number], range: [number, number]): LinearScale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const slope = (r1 - r0) / (d1 - d0);
  return {
    domain,
    toPixel: (x: number) => r0 + (x - d0) * slope,
  };
}

export interface DensityChart {
  path: string;
  xScale: LinearScale;
  yScale: LinearScale;
  /** Pixel x of the slider marker at a given alpha offset from the mean. */
  markerX(alpha: number): number;
  peaks: number[]; // abscissae of interior local maxima
}

/**
 * Layout a density curve. The chart abscissa is the offset from the
 * projected posterior mean, so the slider's alpha and the chart share
 * one coordinate system: markerX(alpha) falls on the curve point whose
 * x equals alpha.
 */
export function densityChart(
  points: Array<[number, number]>,
  box: ChartBox,
  center = 0,
): DensityChart {
  if (points.length < 2) {
    throw new Error("density chart needs at least two points");
  }
  const xs = points.map((p) => p[0] - center);
  const ys = points.map((p) => p[1]);
  const xScale = linearScale(
    [xs[0], xs[xs.length - 1]],
    [box.padding, box.width - box.padding],
  );
  const yMax = Math.max(...ys);
  const yScale = linearScale([0, yMax], [box.height - box.padding, box.padding]);
  const path = xs
    .map((x, i) => `${i === 0 ? "M" : "L"}${xScale.toPixel(x).toFixed(2)},${yScale.toPixel(ys[i]).toFixed(2)}`)
    .join(" ");
  const peaks: number[] = [];
  for (let i = 1; i < ys.length - 1; i++) {
    if (ys[i] > ys[i - 1] && ys[i] > ys[i + 1]) {
      peaks.push(xs[i]);
    }
  }
  return {
    path,
    xScale,
    yScale,
    markerX: (alpha: number) => xScale.toPixel(alpha),
    peaks,
  };
}

/** Polyline for a convergence trace (iteration vs cosine). */
export function convergenceChart(
  points: Array<[number, number]>,
  box: ChartBox,
): { path: string; xScale: LinearScale; yScale: LinearScale } {
  if (points.length === 0) {
    return {
      path: "",
      xScale: linearScale([0, 1], [box.padding, box.width - box.padding]),
      yScale: linearScale([0, 1], [box.height - box.padding, box.padding]),
    };
  }
  const xScale = linearScale(
    [points[0][0], Math.max(points[points.length - 1][0], points[0][0] + 1)],
    [box.padding, box.width - box.padding],
  );
  const lo = Math.min(...points.map((p) => p[1]));
  const yScale = linearScale([Math.min(lo, 0.999), 1], [box.height - box.padding, box.padding]);
  const path = points
    .map(
      ([k, c], i) =>
        `${i === 0 ? "M" : "L"}${xScale.toPixel(k).toFixed(2)},${yScale.toPixel(c).toFixed(2)}`,
    )
    .join(" ");
  return { path, xScale, yScale };
}
