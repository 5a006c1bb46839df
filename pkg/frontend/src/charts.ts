/**
 * Dependency-free SVG chart builders.  Everything returns markup strings so
 * the functions stay pure and testable; the DOM layer assigns innerHTML.
 */

export interface ChartSpec {
  width: number;
  height: number;
  series: { points: number[]; color: string; label?: string }[];
  /** Horizontal reference band drawn between -value and +value, if set. */
  band?: number;
  yLabel?: string;
}

const MARGIN = { top: 8, right: 10, bottom: 18, left: 38 };

export function niceExtent(values: number[], pad = 0.08): [number, number] {
  let lo = Math.min(0, ...values);
  let hi = Math.max(0, ...values);
  if (hi === lo) {
    hi = lo + 1;
  }
  const span = hi - lo;
  return [lo - pad * span, hi + pad * span];
}

export function pathFor(
  points: number[],
  xOf: (i: number) => number,
  yOf: (v: number) => number,
): string {
  return points
    .map((v, i) => `${i === 0 ? "M" : "L"}${xOf(i).toFixed(1)},${yOf(v).toFixed(1)}`)
    .join(" ");
}

export function renderChart(spec: ChartSpec): string {
  const { width, height } = spec;
  const innerW = width - MARGIN.left - MARGIN.right;
  const innerH = height - MARGIN.top - MARGIN.bottom;
  const all = spec.series.flatMap((s) => s.points);
  if (spec.band !== undefined) {
    all.push(spec.band, -spec.band);
  }
  const [lo, hi] = niceExtent(all);
  const n = Math.max(2, ...spec.series.map((s) => s.points.length));
  const xOf = (i: number) => MARGIN.left + (i / (n - 1)) * innerW;
  const yOf = (v: number) => MARGIN.top + ((hi - v) / (hi - lo)) * innerH;

  const parts: string[] = [];
  parts.push(
    `<svg viewBox="0 0 ${width} ${height}" class="chart" role="img">`,
  );
  if (spec.band !== undefined) {
    const top = yOf(spec.band);
    const bottom = yOf(Math.max(lo, -spec.band));
    parts.push(
      `<rect x="${MARGIN.left}" y="${top.toFixed(1)}" width="${innerW}" ` +
        `height="${Math.max(0, bottom - top).toFixed(1)}" class="band"/>`,
    );
  }
  const zeroY = yOf(0);
  parts.push(
    `<line x1="${MARGIN.left}" y1="${zeroY.toFixed(1)}" ` +
      `x2="${MARGIN.left + innerW}" y2="${zeroY.toFixed(1)}" class="axis"/>`,
  );
  for (const s of spec.series) {
    parts.push(
      `<path d="${pathFor(s.points, xOf, yOf)}" fill="none" ` +
        `stroke="${s.color}" stroke-width="1.5"/>`,
    );
  }
  parts.push(
    `<text x="${MARGIN.left}" y="${height - 4}" class="tick">0</text>`,
    `<text x="${MARGIN.left + innerW - 8}" y="${height - 4}" class="tick">${n - 1}</text>`,
    `<text x="2" y="${MARGIN.top + 8}" class="tick">${hi.toPrecision(2)}</text>`,
    `<text x="2" y="${MARGIN.top + innerH}" class="tick">${lo.toPrecision(2)}</text>`,
  );
  if (spec.yLabel) {
    parts.push(
      `<text x="${MARGIN.left + 4}" y="${MARGIN.top + 10}" class="label">${spec.yLabel}</text>`,
    );
  }
  parts.push("</svg>");
  return parts.join("");
}

export function transpose(rows: number[][]): number[][] {
  if (rows.length === 0) {
    return [];
  }
  return rows[0].map((_, j) => rows.map((row) => row[j]));
}

/** First step index from which the output norm stays within the band. */
export function settlingIndex(norms: number[], epsilon: number): number {
  let last = -1;
  norms.forEach((v, i) => {
    if (v > epsilon) {
      last = i;
    }
  });
  return Math.min(last + 1, norms.length - 1);
}
